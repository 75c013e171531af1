"""Pure numpy implementations of the compiled kernels.

Same signatures and contracts as ``_core``. Rows inside one chunk share a
length, so each chunk reduces to one dense matrix-vector product; partials are
merged in chunk order with compensated summation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ._alloc import allocate_cloud
from .kernels import power_cloud


def pair_rates(g, pi, pj, coef, out):
    np.multiply(coef, g[pi], out=out)
    out *= g[pj]


def _chunk_partial(r, offsets, data, p0, p1):
    start = offsets[p0]
    length = offsets[p0 + 1] - start
    block = data[start : offsets[p1]].reshape(p1 - p0, length)
    return r[p0:p1] @ block


def accumulate_gain(r, offsets, data, chunks, ncell, threads=1):
    bounds = list(zip(chunks[:-1].tolist(), chunks[1:].tolist()))
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(lambda b: _chunk_partial(r, offsets, data, *b), bounds))
    else:
        partials = [_chunk_partial(r, offsets, data, *b) for b in bounds]
    s = np.zeros(ncell)
    c = np.zeros(ncell)
    for part in partials:
        n = part.shape[0]
        head = s[:n]
        t = head + part
        c[:n] += np.where(np.abs(head) >= np.abs(part), (head - t) + part, (part - t) + head)
        s[:n] = t
    return s + c


def allocate_power_cloud(edges, pivots, nu, s):
    w = np.zeros(pivots.shape[0])
    defect = allocate_cloud(edges, pivots, power_cloud(nu, s), w)
    return w, defect


def build_power_rows(edges, pivots, nu, mode, pi, pj, offsets, data):
    K = pivots.shape[0]
    worst = 0.0
    w = np.zeros(K)
    for p in range(pi.shape[0]):
        w[:] = 0.0
        xi, xj = pivots[pi[p]], pivots[pj[p]]
        if mode == 0:
            d = allocate_cloud(edges, pivots, power_cloud(nu, xi + xj), w)
        else:
            d = allocate_cloud(edges, pivots, power_cloud(nu, xi), w)
            d += allocate_cloud(edges, pivots, power_cloud(nu, xj), w)
        worst = max(worst, d)
        start, stop = offsets[p], offsets[p + 1]
        data[start:stop] = w[: stop - start]
    return worst
