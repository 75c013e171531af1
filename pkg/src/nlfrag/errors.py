"""Exception hierarchy shared by all modules."""


class FragError(Exception):
    """Base class for package errors."""


class InvalidInputError(FragError, ValueError):
    """Non-finite or non-positive sizes, malformed arrays, mismatched dimensions."""


class ParameterError(FragError, ValueError):
    """A kernel, grid or solver parameter lies outside its admissible range."""


class DivergentIntegralError(ParameterError):
    """A requested moment of the breakage kernel does not exist."""


class HorizonExceededError(FragError):
    """Evaluation requested at or beyond a finite blow-up horizon."""


class StiffnessError(FragError):
    """The adaptive step size underflowed.

    ``state`` carries the last accepted state for diagnostics; drivers attach
    the partial ``trajectory`` when one exists.
    """

    def __init__(self, message, state=None, dt=None):
        super().__init__(message)
        self.state = state
        self.dt = dt
        self.trajectory = None


class BudgetError(FragError):
    """A run would exceed its memory or wall-clock budget."""


class ConfigError(FragError):
    """Configuration text failed validation.

    ``issues`` lists every problem found as ``(line, message)`` pairs; line is
    ``None`` for problems not tied to a single line.
    """

    def __init__(self, issues):
        self.issues = list(issues)
        lines = []
        for line, msg in self.issues:
            lines.append(f"line {line}: {msg}" if line is not None else msg)
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
