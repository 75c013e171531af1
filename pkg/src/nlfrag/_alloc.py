"""Fixed-pivot allocation of a fragment cloud onto grid pivots.

Each cell's fragments are collapsed to their mean size and split between the
two pivots bracketing that mean so that number and mass are both preserved.
Fragments whose mean lies outside the pivot range (below the first pivot or
above the last) are first assigned number-preservingly; the resulting mass
excess or deficit is then removed by shifting weight between adjacent pivots,
starting from the top of the cloud. If the cloud's mean fragment size itself
lies below the first pivot no nonnegative allocation can match both totals;
mass is then kept exact and the number defect is reported.
"""

from __future__ import annotations

import numpy as np


def split_cells(pivots, lo, number, mass, w):
    """Add the two-point splits of cells ``lo..lo+len(number)-1`` into ``w``.

    Returns the mass offset introduced by number-preserving assignments of
    means lying outside ``[pivots[0], pivots[-1]]``.
    """
    K = pivots.shape[0]
    offset = 0.0
    for q in range(number.shape[0]):
        nq = number[q]
        if nq <= 0.0:
            continue
        cell = lo + q
        mq = mass[q]
        zbar = mq / nq
        if cell == 0:
            k = 0
            if zbar < pivots[0]:
                w[0] += nq
                offset += nq * pivots[0] - mq
                continue
        else:
            k = cell if zbar >= pivots[cell] else cell - 1
        if k + 1 >= K:
            w[K - 1] += nq
            offset += nq * pivots[K - 1] - mq
            continue
        gap = pivots[k + 1] - pivots[k]
        up = (mq - pivots[k] * nq) / gap
        if up < 0.0:
            up = 0.0
        elif up > nq:
            up = nq
        w[k] += nq - up
        w[k + 1] += up
    return offset


def correct_mass(pivots, w, top, excess):
    """Shift weight between neighbouring pivots to remove ``excess`` mass.

    Works downwards from ``top``; number is unchanged. Returns the excess that
    could not be removed (zero when feasible).
    """
    if excess > 0.0:
        for q in range(top - 1, -1, -1):
            gap = pivots[q + 1] - pivots[q]
            avail = w[q + 1]
            if avail <= 0.0:
                continue
            d = excess / gap
            if d <= avail:
                w[q + 1] -= d
                w[q] += d
                return 0.0
            w[q + 1] = 0.0
            w[q] += avail
            excess -= avail * gap
    elif excess < 0.0:
        need = -excess
        for q in range(top - 1, -1, -1):
            gap = pivots[q + 1] - pivots[q]
            avail = w[q]
            if avail <= 0.0:
                continue
            d = need / gap
            if d <= avail:
                w[q] -= d
                w[q + 1] += d
                return 0.0
            w[q] = 0.0
            w[q + 1] += avail
            need -= avail * gap
        excess = -need
    return excess


def allocate_cloud(edges, pivots, cloud, w):
    """Add the allocation of ``cloud`` into ``w``; return the relative number defect."""
    K = pivots.shape[0]
    s = cloud.upper
    # cells 0..last intersect (0, s)
    last = min(int(np.searchsorted(edges, s, side="left")) - 1, K - 1)
    a = edges[: last + 1]
    b = np.minimum(edges[1 : last + 2], s)
    number, mass = cloud.cells(a, b)
    local = np.zeros(K)
    offset = split_cells(pivots, 0, np.asarray(number, dtype=float), np.asarray(mass, dtype=float), local)
    top = min(last + 1, K - 1)
    while top > 0 and local[top] == 0.0:
        top -= 1
    # the offset is recomputed from the weights so that split roundoff is absorbed too
    excess = float(np.dot(pivots[: top + 1], local[: top + 1])) - cloud.mass
    if offset == 0.0 and abs(excess) <= 1e-15 * cloud.mass:
        excess = 0.0
    defect = 0.0
    if excess != 0.0:
        rest = correct_mass(pivots, local, top, excess)
        if abs(rest) > 1e-13 * cloud.mass:
            before = local.sum()
            local *= cloud.mass / float(np.dot(pivots, local))
            defect = abs(before - local.sum()) / before
    w += local
    return defect
