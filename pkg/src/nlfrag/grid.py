"""Sectional mesh on [0, n] and the fragment-allocation table.

The table stores, for every unordered cell pair ``i <= j`` with
``x_i + x_j < n``, the collision rate at the pivots and the number of
fragments assigned to each pivot. Rows are stored contiguously starting at
pivot 0 and ordered by row length (then ``i``, ``j``) so that rows of equal
length form dense blocks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import backend
from ._alloc import allocate_cloud
from .errors import BudgetError, InvalidInputError, ParameterError
from .kernels import CollisionKernel, collision_rate

logger = logging.getLogger(__name__)

#: pairs per accumulation chunk; fixed so results do not depend on thread count
CHUNK_PAIRS = 4096
#: refuse tables whose weight storage exceeds this many bytes
TABLE_BYTES_LIMIT = 2_000_000_000


@dataclass(frozen=True, eq=False)
class Grid:
    """Cells ``[e_k, e_{k+1})`` with pivots ``x_k`` strictly inside them."""

    edges: np.ndarray
    pivots: np.ndarray

    def __post_init__(self):
        e, x = self.edges, self.pivots
        if e.ndim != 1 or x.shape != (e.shape[0] - 1,):
            raise InvalidInputError("need len(pivots) == len(edges) - 1")
        if e[0] != 0.0 or np.any(np.diff(e) <= 0.0):
            raise ParameterError("edges must start at 0 and increase strictly")
        if np.any(x <= e[:-1]) or np.any(x >= e[1:]):
            raise ParameterError("every pivot must lie strictly inside its cell")
        e.flags.writeable = False
        x.flags.writeable = False

    @property
    def n(self) -> float:
        return float(self.edges[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def size(self) -> int:
        return self.pivots.shape[0]

    def locate(self, z):
        """Index of the cell containing ``z`` (``z = n`` maps to the last cell)."""
        z = np.asarray(z, dtype=float)
        if np.any(z < 0.0) or np.any(z > self.n):
            raise InvalidInputError(f"size outside [0, {self.n}]")
        idx = np.searchsorted(self.edges, z, side="right") - 1
        idx = np.minimum(idx, self.size - 1)
        return int(idx) if idx.ndim == 0 else idx

    def refined(self, factor: int) -> "Grid":
        """Same first edge and truncation with ``factor`` times as many geometric cells."""
        return make_geometric(float(self.edges[1]), self.n, (self.size - 1) * factor)


def make_geometric(x_min_positive_edge: float, n: float, cells: int) -> Grid:
    """Geometric cells from ``e1`` to ``n`` plus the leading cell ``[0, e1)``.

    ``cells`` counts the geometric cells, so the grid has ``cells + 1`` cells.
    Interior pivots are geometric means of the edges; the first pivot is
    ``e1 / 2``.
    """
    e1 = float(x_min_positive_edge)
    if not (math.isfinite(e1) and math.isfinite(n) and 0.0 < e1 < n):
        raise ParameterError(f"need 0 < e1 < n, got e1={e1}, n={n}")
    if int(cells) != cells or cells < 1:
        raise ParameterError(f"cells must be a positive integer, got {cells}")
    upper = np.geomspace(e1, n, int(cells) + 1)
    upper[0], upper[-1] = e1, n
    edges = np.concatenate(([0.0], upper))
    pivots = np.empty(int(cells) + 1)
    pivots[0] = 0.5 * e1
    pivots[1:] = np.sqrt(edges[1:-1] * edges[2:])
    return Grid(edges, pivots)


def locate(grid: Grid, z):
    return grid.locate(z)


@dataclass(frozen=True, eq=False)
class AllocationTable:
    """Pairwise collision rates and fragment allocations on a grid.

    Attributes
    ----------
    pair_i, pair_j : int32 arrays
        Cell indices of each stored pair (``i <= j``).
    rate : float array
        Truncated collision rate at the pivots of each pair.
    coef : float array
        ``rate`` times the pair multiplicity (1/2 on the diagonal).
    offsets, data :
        Row ``p`` is ``data[offsets[p]:offsets[p+1]]``, covering pivots
        ``0..len-1``.
    chunks :
        Fixed pair-range boundaries; no chunk mixes row lengths.
    rate_matrix : (K, K) array
        Symmetric truncated rate ``Phi_n(x_i, x_j)``; zero where ``x_i + x_j >= n``.
    number_defect : float
        Largest relative number mismatch (nonzero only when a cloud's mean
        fragment size lies below the first pivot).
    """

    grid: Grid
    collision: CollisionKernel
    breakage: object
    pair_i: np.ndarray
    pair_j: np.ndarray
    rate: np.ndarray
    coef: np.ndarray
    offsets: np.ndarray
    data: np.ndarray
    chunks: np.ndarray
    rate_matrix: np.ndarray
    number_defect: float

    @property
    def npairs(self) -> int:
        return self.pair_i.shape[0]

    def row(self, p: int) -> np.ndarray:
        out = np.zeros(self.grid.size)
        seg = self.data[self.offsets[p] : self.offsets[p + 1]]
        out[: seg.shape[0]] = seg
        return out

    def pair_index(self, i: int, j: int) -> int | None:
        i, j = min(i, j), max(i, j)
        hit = np.nonzero((self.pair_i == i) & (self.pair_j == j))[0]
        return int(hit[0]) if hit.size else None

    def weights(self, i: int, j: int) -> np.ndarray:
        p = self.pair_index(i, j)
        return np.zeros(self.grid.size) if p is None else self.row(p)

    def rate_of(self, i: int, j: int) -> float:
        return float(self.rate_matrix[i, j])

    def row_sums(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pair ``(sum_k w_k, sum_k x_k w_k)``."""
        lengths = np.diff(self.offsets)
        cols = np.arange(self.data.shape[0]) - np.repeat(self.offsets[:-1], lengths)
        owner = np.repeat(np.arange(self.npairs), lengths)
        number = np.bincount(owner, weights=self.data, minlength=self.npairs)
        mass = np.bincount(owner, weights=self.data * self.grid.pivots[cols], minlength=self.npairs)
        return number, mass


def rate_matrix(grid: Grid, collision: CollisionKernel) -> np.ndarray:
    x = grid.pivots
    phi = collision_rate(x[:, None], x[None, :], collision.kappa, collision.sigma1, collision.sigma2)
    phi = 0.5 * (phi + phi.T)  # exact symmetry
    phi[x[:, None] + x[None, :] >= grid.n] = 0.0
    return phi


def _pair_layout(grid: Grid):
    K = grid.size
    x = grid.pivots
    ii, jj = np.triu_indices(K)
    s = x[ii] + x[jj]
    keep = s < grid.n
    ii, jj, s = ii[keep], jj[keep], s[keep]
    last = np.minimum(np.searchsorted(grid.edges, s, side="left") - 1, K - 1)
    lengths = np.minimum(last + 2, K)
    order = np.lexsort((jj, ii, lengths))
    ii, jj, lengths = ii[order], jj[order], lengths[order]
    offsets = np.zeros(ii.shape[0] + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    # chunk boundaries: every CHUNK_PAIRS pairs and wherever the row length changes
    change = np.nonzero(np.diff(lengths))[0] + 1
    fixed = np.arange(0, ii.shape[0], CHUNK_PAIRS)
    chunks = np.union1d(np.union1d(fixed, change), [0, ii.shape[0]]).astype(np.int64)
    return ii.astype(np.int32), jj.astype(np.int32), offsets, chunks


def build_allocation_table(grid: Grid, collision: CollisionKernel, breakage, backend_name=None) -> AllocationTable:
    """Tabulate rates and fixed-pivot fragment allocations for all admissible pairs.

    Power-law and no-transfer kernels use the selected backend; other kernels
    go through the generic quadrature path cell by cell.
    """
    impl = backend.get(backend_name)
    pi, pj, offsets, chunks = _pair_layout(grid)
    nbytes = int(offsets[-1]) * 8
    if nbytes > TABLE_BYTES_LIMIT:
        raise BudgetError(f"allocation table needs {nbytes / 1e9:.2f} GB (limit {TABLE_BYTES_LIMIT / 1e9:.2f} GB)")
    phi = rate_matrix(grid, collision)
    rate = phi[pi, pj]
    coef = np.where(pi == pj, 0.5, 1.0) * rate
    data = np.zeros(int(offsets[-1]))
    kind = getattr(breakage, "kind", "custom")
    if kind in ("power_law", "no_transfer"):
        mode = 0 if kind == "power_law" else 1
        defect = impl.build_power_rows(grid.edges, grid.pivots, float(breakage.nu), mode, pi, pj, offsets, data)
    else:
        defect = _build_generic_rows(grid, breakage, pi, pj, offsets, data)
    if defect > 1e-12:
        logger.info("fragment allocation number defect up to %.3e (mass kept exact)", defect)
    return AllocationTable(grid, collision, breakage, pi, pj, rate, coef, offsets, data, chunks, phi, float(defect))


def _build_generic_rows(grid, breakage, pi, pj, offsets, data):
    K = grid.size
    w = np.zeros(K)
    worst = 0.0
    for p in range(pi.shape[0]):
        w[:] = 0.0
        d = 0.0
        for cloud in breakage.clouds(float(grid.pivots[pi[p]]), float(grid.pivots[pj[p]])):
            d += allocate_cloud(grid.edges, grid.pivots, cloud, w)
        worst = max(worst, d)
        data[offsets[p] : offsets[p + 1]] = w[: offsets[p + 1] - offsets[p]]
    return worst


def allocate_pair(grid: Grid, breakage, x: float, y: float) -> tuple[np.ndarray, float]:
    """Pivot allocation for a collision of arbitrary sizes ``x`` and ``y``."""
    if not (0.0 < x and 0.0 < y and x + y <= grid.n):
        raise InvalidInputError(f"need x, y > 0 and x + y <= n, got ({x}, {y})")
    w = np.zeros(grid.size)
    defect = sum(allocate_cloud(grid.edges, grid.pivots, c, w) for c in breakage.clouds(float(x), float(y)))
    return w, defect
