"""Compiled inner loops for the correlators.

All delays are formed as ``t_b - t_a`` in float64 and binned with the same
``searchsorted(edges, d, 'right') - 1`` rule the brute-force oracle uses, so
fast and exhaustive paths agree bin for bin. Every parallel loop writes to
disjoint output slots and integer partial sums are merged afterwards, so the
result does not depend on the thread count.
"""

import numba
import numpy as np
from numba import njit, prange

# prefer OpenMP; the bundled TBB is often too old and only produces a warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def set_threads(n=None):
    """Cap worker threads for the parallel kernels; ``None`` keeps the default."""
    if n is not None:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()


@njit(cache=True, nogil=True)
def _first_at_or_after(tb, ta_i, lo_delay, start):
    """First j >= start with tb[j] - ta_i >= lo_delay (monotone in tb)."""
    j = start
    n = tb.shape[0]
    while j < n and tb[j] - ta_i < lo_delay:
        j += 1
    return j


@njit(cache=True, nogil=True)
def _pair_hist_chunk(ta, tb, edges, i0, i1, out):
    lo = edges[0]
    hi = edges[-1]
    nb = tb.shape[0]
    if i0 >= i1:
        return
    # seed the pointer with a binary search, then correct on the exact delay rule
    j = np.searchsorted(tb, ta[i0] + lo)
    while j > 0 and tb[j - 1] - ta[i0] >= lo:
        j -= 1
    for i in range(i0, i1):
        t = ta[i]
        j = _first_at_or_after(tb, t, lo, j)
        k = j
        while k < nb:
            d = tb[k] - t
            if d >= hi:
                break
            b = np.searchsorted(edges, d, side="right") - 1
            out[b] += 1
            k += 1


@njit(cache=True, parallel=True)
def pair_histogram(ta, tb, edges, n_chunks):
    """Counts of pairs with ``tb - ta`` in each ``[edges[k], edges[k+1])``.

    ``ta`` and ``tb`` must be sorted. Work is split into ``n_chunks`` slices
    of ``ta`` with private histograms summed at the end.
    """
    nbins = edges.shape[0] - 1
    na = ta.shape[0]
    n_chunks = max(1, min(n_chunks, na))
    partial = np.zeros((n_chunks, nbins), dtype=np.int64)
    for c in prange(n_chunks):
        i0 = (na * c) // n_chunks
        i1 = (na * (c + 1)) // n_chunks
        _pair_hist_chunk(ta, tb, edges, i0, i1, partial[c])
    out = np.zeros(nbins, dtype=np.int64)
    for c in range(n_chunks):
        out += partial[c]
    return out


@njit(cache=True, nogil=True)
def _count_below(ta, tb, e):
    """Number of pairs (i, j) with tb[j] - ta[i] < e."""
    total = 0
    j = 0
    nb = tb.shape[0]
    for i in range(ta.shape[0]):
        t = ta[i]
        # pointer only moves forward: tb[j] - t shrinks as t grows
        while j < nb and tb[j] - t < e:
            j += 1
        total += j
    return total


@njit(cache=True, nogil=True)
def _count_at_or_below_neg(ta, tb, e):
    """Number of pairs (i, j) with tb[j] - ta[i] <= -e."""
    total = 0
    j = 0
    nb = tb.shape[0]
    for i in range(ta.shape[0]):
        t = ta[i]
        while j < nb and -(tb[j] - t) >= e:
            j += 1
        total += j
    return total


@njit(cache=True, parallel=True)
def folded_edge_counts(ta, tb, edges):
    """Exact counts of pairs with ``|tb - ta|`` in each bin of ``edges``.

    Uses one linear merge per edge and side, O((Na + Nb) * len(edges)).
    ``edges[0]`` must be positive so zero delays are never counted twice.
    """
    ne = edges.shape[0]
    below = np.zeros(ne, dtype=np.int64)
    neg = np.zeros(ne, dtype=np.int64)
    for k in prange(2 * ne):
        if k < ne:
            below[k] = _count_below(ta, tb, edges[k])
        else:
            neg[k - ne] = _count_at_or_below_neg(ta, tb, edges[k - ne])
    out = np.empty(ne - 1, dtype=np.int64)
    for k in range(ne - 1):
        out[k] = (below[k + 1] - below[k]) + (neg[k] - neg[k + 1])
    return out


@njit(cache=True, nogil=True)
def _weighted_lag_count(ca, wa, cb, cum_b, lag_lo, lag_hi):
    """Sum of wa[i] * wb[j] over pairs with lag_lo <= cb[j] - ca[i] <= lag_hi.

    ``cum_b[j]`` is the sum of weights of cb[:j].
    """
    total = 0
    jl = 0
    jh = 0
    nb = cb.shape[0]
    for i in range(ca.shape[0]):
        lo = ca[i] + lag_lo
        hi = ca[i] + lag_hi
        while jl < nb and cb[jl] < lo:
            jl += 1
        while jh < nb and cb[jh] <= hi:
            jh += 1
        if jh > jl:
            total += wa[i] * (cum_b[jh] - cum_b[jl])
    return total


@njit(cache=True, parallel=True)
def cascade_level_counts(ca, wa, cb, wb, ca_rev, wa_rev, cb_rev, wb_rev, lag_lo, lag_hi):
    """Coarse-lag coincidence counts for every bin of one cascade level.

    The forward arrays count ``B after A``; the ``_rev`` arrays (roles of the
    two channels swapped) count ``A after B`` for the folded histogram.
    """
    nbins = lag_lo.shape[0]
    cum = np.zeros(cb.shape[0] + 1, dtype=np.int64)
    for j in range(cb.shape[0]):
        cum[j + 1] = cum[j] + wb[j]
    cum_rev = np.zeros(cb_rev.shape[0] + 1, dtype=np.int64)
    for j in range(cb_rev.shape[0]):
        cum_rev[j + 1] = cum_rev[j] + wb_rev[j]
    fwd = np.zeros(nbins, dtype=np.int64)
    rev = np.zeros(nbins, dtype=np.int64)
    for k in prange(2 * nbins):
        if k < nbins:
            fwd[k] = _weighted_lag_count(ca, wa, cb, cum, lag_lo[k], lag_hi[k])
        else:
            m = k - nbins
            rev[m] = _weighted_lag_count(ca_rev, wa_rev, cb_rev, cum_rev, lag_lo[m], lag_hi[m])
    return fwd + rev


@njit(cache=True)
def brute_force_pairs(ta, tb, edges, fold):
    """Exhaustive O(Na * Nb) pair enumeration; the reference for the fast paths."""
    nbins = edges.shape[0] - 1
    out = np.zeros(nbins, dtype=np.int64)
    lo = edges[0]
    hi = edges[-1]
    for i in range(ta.shape[0]):
        for j in range(tb.shape[0]):
            d = tb[j] - ta[i]
            if fold:
                d = abs(d)
            if d >= lo and d < hi:
                # linear scan keeps this path independent of the binary searches above
                b = 0
                while edges[b + 1] <= d:
                    b += 1
                out[b] += 1
    return out


@njit(cache=True)
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@njit(cache=True)
def persistence_peaks(values):
    """Summit cells of a 2-D array with their topographic prominence.

    Cells are visited from high to low and merged into 8-connected components
    with union-find. When two components meet, the one whose summit is lower
    (or, on ties, was reached later) dies, with prominence ``summit - level``.
    Plateaus therefore count once. The global maximum gets ``inf``.
    Returns (flat summit indices, prominences).
    """
    ny, nx = values.shape
    n = ny * nx
    flat = values.ravel()
    order = np.argsort(-flat, kind="mergesort")
    rank = np.empty(n, dtype=np.int64)
    for r in range(n):
        rank[order[r]] = r
    parent = -np.ones(n, dtype=np.int64)
    summit = np.zeros(n, dtype=np.int64)
    peaks = np.empty(n, dtype=np.int64)
    prom = np.empty(n, dtype=np.float64)
    npk = 0
    for r in range(n):
        c = order[r]
        level = flat[c]
        parent[c] = c
        summit[c] = c
        y = c // nx
        x = c % nx
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                yy = y + dy
                xx = x + dx
                if (dy == 0 and dx == 0) or yy < 0 or yy >= ny or xx < 0 or xx >= nx:
                    continue
                nb = yy * nx + xx
                if parent[nb] < 0:
                    continue
                ra = _find(parent, c)
                rb = _find(parent, nb)
                if ra == rb:
                    continue
                sa = summit[ra]
                sb = summit[rb]
                if flat[sa] > flat[sb] or (flat[sa] == flat[sb] and rank[sa] < rank[sb]):
                    hi_root, lo_root = ra, rb
                else:
                    hi_root, lo_root = rb, ra
                lo_summit = summit[lo_root]
                if lo_summit != c:
                    peaks[npk] = lo_summit
                    prom[npk] = flat[lo_summit] - level
                    npk += 1
                parent[lo_root] = hi_root
    for c in range(n):
        if parent[c] == c:
            peaks[npk] = summit[c]
            prom[npk] = np.inf
            npk += 1
    return peaks[:npk], prom[:npk]


@njit(cache=True, parallel=True)
def kde_cell_mass(wx, wy):
    """``out[r, c] = sum_i wy[i, r] * wx[i, c]`` with a fixed summation order.

    Rows are independent, so the result does not depend on how rows are
    split between threads.
    """
    n, nx = wx.shape
    ny = wy.shape[1]
    out = np.zeros((ny, nx))
    for r in prange(ny):
        row = np.zeros(nx)
        for i in range(n):
            f = wy[i, r]
            if f != 0.0:
                for c in range(nx):
                    row[c] += f * wx[i, c]
        out[r, :] = row
    return out
