"""Loop-heavy kernels with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time. Set ``DPGWAVE_NUMBA=0`` to force
the numpy path (useful for debugging and for the backend benchmark).
"""

import os

import numpy as np

_FLAG = os.environ.get("DPGWAVE_NUMBA", "1").strip().lower()
USE_NUMBA = _FLAG not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# Legendre tables on [0, 1]
# ---------------------------------------------------------------------------

def _legendre_np(t, n):
    t = np.asarray(t, dtype=float)
    xi = 2.0 * t - 1.0
    val = np.zeros((t.size, n + 1))
    der = np.zeros((t.size, n + 1))
    val[:, 0] = 1.0
    if n >= 1:
        val[:, 1] = xi
        der[:, 1] = 1.0
    for k in range(1, n):
        val[:, k + 1] = ((2 * k + 1) * xi * val[:, k] - k * val[:, k - 1]) / (k + 1)
        der[:, k + 1] = der[:, k - 1] + (2 * k + 1) * val[:, k]
    # d/dt = 2 d/dxi
    return val, 2.0 * der


def _integrated_np(t, n):
    t = np.asarray(t, dtype=float)
    leg, _ = _legendre_np(t, n)
    val = np.zeros((t.size, n + 1))
    der = np.zeros((t.size, n + 1))
    val[:, 0] = 1.0 - t
    der[:, 0] = -1.0
    val[:, 1] = t
    der[:, 1] = 1.0
    for k in range(2, n + 1):
        # int_{-1}^{xi} P_{k-1} = (P_k - P_{k-2}) / (2k - 1)
        val[:, k] = (leg[:, k] - leg[:, k - 2]) / (2 * k - 1)
        der[:, k] = 2.0 * leg[:, k - 1]
    return val, der


if USE_NUMBA:

    @numba.njit(cache=True)
    def _legendre_nb(t, n):
        m = t.shape[0]
        val = np.zeros((m, n + 1))
        der = np.zeros((m, n + 1))
        for i in range(m):
            xi = 2.0 * t[i] - 1.0
            val[i, 0] = 1.0
            if n >= 1:
                val[i, 1] = xi
                der[i, 1] = 1.0
            for k in range(1, n):
                val[i, k + 1] = ((2 * k + 1) * xi * val[i, k] - k * val[i, k - 1]) / (k + 1)
                der[i, k + 1] = der[i, k - 1] + (2 * k + 1) * val[i, k]
            for k in range(n + 1):
                der[i, k] *= 2.0
        return val, der

    @numba.njit(cache=True)
    def _integrated_nb(t, n):
        m = t.shape[0]
        leg, _ = _legendre_nb(t, n + 1)
        val = np.zeros((m, n + 1))
        der = np.zeros((m, n + 1))
        for i in range(m):
            val[i, 0] = 1.0 - t[i]
            der[i, 0] = -1.0
            val[i, 1] = t[i]
            der[i, 1] = 1.0
            for k in range(2, n + 1):
                val[i, k] = (leg[i, k] - leg[i, k - 2]) / (2 * k - 1)
                der[i, k] = 2.0 * leg[i, k - 1]
        return val, der


def legendre_table(t, n):
    """Legendre polynomials P_0..P_n of (2t - 1) and their t-derivatives."""
    t = np.ascontiguousarray(np.atleast_1d(t), dtype=float)
    if USE_NUMBA:
        return _legendre_nb(t, int(n))
    return _legendre_np(t, int(n))


def integrated_legendre_table(t, n):
    """Hierarchical H1 basis on [0, 1]: two hats followed by n - 1 bubbles."""
    if n < 1:
        raise ValueError("integrated Legendre basis needs order >= 1")
    t = np.ascontiguousarray(np.atleast_1d(t), dtype=float)
    if USE_NUMBA:
        return _integrated_nb(t, int(n))
    return _integrated_np(t, int(n))


# ---------------------------------------------------------------------------
# Contiguous (orthogonal-cut) partitioning
# ---------------------------------------------------------------------------
#
# ``wtab[i, j]`` is the workload of a rank owning slabs i..j-1 (0 <= i < j <= n).
# It is not additive over slabs because degrees of freedom shared with a
# neighbouring rank are excluded, so the kernels only ever look it up.

def _bottleneck_np(wtab, n_ranks):
    n = wtab.shape[0] - 1
    inf = np.inf
    best = np.full((n_ranks + 1, n + 1), inf)
    best[0, 0] = 0.0
    for r in range(1, n_ranks + 1):
        for j in range(r, n - (n_ranks - r) + 1):
            i = np.arange(r - 1, j)
            cand = np.maximum(best[r - 1, i], wtab[i, j])
            best[r, j] = cand.min()
    return best[n_ranks, n]


def _min_migration_np(wtab, n_ranks, bound, cost):
    # cost[r, i, j]: number of elements in slabs i..j-1 not currently on rank r
    n = wtab.shape[0] - 1
    inf = np.inf
    best = np.full((n_ranks + 1, n + 1), inf)
    arg = np.full((n_ranks + 1, n + 1), -1, dtype=np.int64)
    best[0, 0] = 0.0
    for r in range(1, n_ranks + 1):
        for j in range(r, n - (n_ranks - r) + 1):
            for i in range(r - 1, j):
                if best[r - 1, i] == inf or wtab[i, j] > bound:
                    continue
                c = best[r - 1, i] + cost[r - 1, i, j]
                if c < best[r, j]:
                    best[r, j] = c
                    arg[r, j] = i
    cuts = np.zeros(n_ranks + 1, dtype=np.int64)
    cuts[n_ranks] = n
    j = n
    for r in range(n_ranks, 0, -1):
        j = arg[r, j]
        cuts[r - 1] = j
    return cuts, best[n_ranks, n]


def _max_sum_np(wtab, n_ranks, bound):
    # largest total workload with every rank workload <= bound
    n = wtab.shape[0] - 1
    best = np.full((n_ranks + 1, n + 1), -np.inf)
    arg = np.full((n_ranks + 1, n + 1), -1, dtype=np.int64)
    best[0, 0] = 0.0
    for r in range(1, n_ranks + 1):
        for j in range(r, n - (n_ranks - r) + 1):
            for i in range(r - 1, j):
                if best[r - 1, i] == -np.inf or wtab[i, j] > bound:
                    continue
                c = best[r - 1, i] + wtab[i, j]
                if c > best[r, j]:
                    best[r, j] = c
                    arg[r, j] = i
    cuts = np.zeros(n_ranks + 1, dtype=np.int64)
    cuts[n_ranks] = n
    if best[n_ranks, n] == -np.inf:
        return cuts, -np.inf
    j = n
    for r in range(n_ranks, 0, -1):
        j = arg[r, j]
        cuts[r - 1] = j
    return cuts, best[n_ranks, n]


def _exhaustive_np(wtab, n_ranks, incumbent):
    # depth-first search over all cut sets; branches that provably cannot
    # beat the incumbent imbalance are skipped
    n = wtab.shape[0] - 1
    best = incumbent
    best_cuts = np.zeros(n_ranks + 1, dtype=np.int64)
    best_cuts[n_ranks] = n
    found = False
    cuts = np.zeros(n_ranks + 1, dtype=np.int64)
    cuts[n_ranks] = n

    def visit(r, i, mx, sm):
        nonlocal best, found
        if r == n_ranks - 1:
            w = wtab[i, n]
            m2 = max(mx, w)
            s2 = sm + w
            if s2 > 0 and m2 * n_ranks / s2 < best:
                best = m2 * n_ranks / s2
                best_cuts[:] = cuts
                found = True
            return
        for j in range(i + 1, n - (n_ranks - 1 - r) + 1):
            w = wtab[i, j]
            m2 = max(mx, w)
            if sm + wtab[i, n] > 0 and m2 * n_ranks / (sm + wtab[i, n]) >= best:
                break
            cuts[r + 1] = j
            visit(r + 1, j, m2, sm + w)

    visit(0, 0, 0.0, 0.0)
    return best, best_cuts, found


if USE_NUMBA:

    @numba.njit(cache=True)
    def _bottleneck_nb(wtab, n_ranks):
        n = wtab.shape[0] - 1
        best = np.full((n_ranks + 1, n + 1), np.inf)
        best[0, 0] = 0.0
        for r in range(1, n_ranks + 1):
            for j in range(r, n - (n_ranks - r) + 1):
                b = np.inf
                for i in range(r - 1, j):
                    c = max(best[r - 1, i], wtab[i, j])
                    if c < b:
                        b = c
                best[r, j] = b
        return best[n_ranks, n]

    @numba.njit(cache=True)
    def _min_migration_nb(wtab, n_ranks, bound, cost):
        n = wtab.shape[0] - 1
        best = np.full((n_ranks + 1, n + 1), np.inf)
        arg = np.full((n_ranks + 1, n + 1), -1, dtype=np.int64)
        best[0, 0] = 0.0
        for r in range(1, n_ranks + 1):
            for j in range(r, n - (n_ranks - r) + 1):
                for i in range(r - 1, j):
                    if best[r - 1, i] == np.inf or wtab[i, j] > bound:
                        continue
                    c = best[r - 1, i] + cost[r - 1, i, j]
                    if c < best[r, j]:
                        best[r, j] = c
                        arg[r, j] = i
        cuts = np.zeros(n_ranks + 1, dtype=np.int64)
        cuts[n_ranks] = n
        j = n
        for r in range(n_ranks, 0, -1):
            j = arg[r, j]
            cuts[r - 1] = j
        return cuts, best[n_ranks, n]

    @numba.njit(cache=True)
    def _max_sum_nb(wtab, n_ranks, bound):
        n = wtab.shape[0] - 1
        best = np.full((n_ranks + 1, n + 1), -np.inf)
        arg = np.full((n_ranks + 1, n + 1), -1, dtype=np.int64)
        best[0, 0] = 0.0
        for r in range(1, n_ranks + 1):
            for j in range(r, n - (n_ranks - r) + 1):
                for i in range(r - 1, j):
                    if best[r - 1, i] == -np.inf or wtab[i, j] > bound:
                        continue
                    c = best[r - 1, i] + wtab[i, j]
                    if c > best[r, j]:
                        best[r, j] = c
                        arg[r, j] = i
        cuts = np.zeros(n_ranks + 1, dtype=np.int64)
        cuts[n_ranks] = n
        if best[n_ranks, n] == -np.inf:
            return cuts, -np.inf
        j = n
        for r in range(n_ranks, 0, -1):
            j = arg[r, j]
            cuts[r - 1] = j
        return cuts, best[n_ranks, n]

    @numba.njit(cache=True)
    def _exhaustive_nb(wtab, n_ranks, incumbent):
        # iterative depth-first search with the same pruning as the numpy path
        n = wtab.shape[0] - 1
        best = incumbent
        cuts = np.zeros(n_ranks + 1, dtype=np.int64)
        cuts[n_ranks] = n
        best_cuts = cuts.copy()
        found = False
        mx = np.zeros(n_ranks + 1)
        sm = np.zeros(n_ranks + 1)
        nxt = np.zeros(n_ranks + 1, dtype=np.int64)
        r = 0
        nxt[0] = 1
        while r >= 0:
            i = cuts[r]
            if r == n_ranks - 1:
                w = wtab[i, n]
                m2 = max(mx[r], w)
                s2 = sm[r] + w
                if s2 > 0 and m2 * n_ranks / s2 < best:
                    best = m2 * n_ranks / s2
                    best_cuts[:] = cuts
                    found = True
                r -= 1
                continue
            j = nxt[r]
            if j > n - (n_ranks - 1 - r):
                r -= 1
                continue
            w = wtab[i, j]
            m2 = max(mx[r], w)
            ub = sm[r] + wtab[i, n]
            if ub > 0 and m2 * n_ranks / ub >= best:
                r -= 1
                continue
            nxt[r] = j + 1
            cuts[r + 1] = j
            mx[r + 1] = m2
            sm[r + 1] = sm[r] + w
            r += 1
            nxt[r] = j + 1
        return best, best_cuts, found


def bottleneck_value(wtab, n_ranks):
    """Smallest achievable maximum rank workload over contiguous cuts."""
    wtab = np.ascontiguousarray(wtab, dtype=float)
    if USE_NUMBA:
        return float(_bottleneck_nb(wtab, int(n_ranks)))
    return float(_bottleneck_np(wtab, int(n_ranks)))


def min_migration_cuts(wtab, n_ranks, bound, cost):
    """Cut positions with every rank workload <= bound and least total cost."""
    wtab = np.ascontiguousarray(wtab, dtype=float)
    cost = np.ascontiguousarray(cost, dtype=float)
    if USE_NUMBA:
        cuts, c = _min_migration_nb(wtab, int(n_ranks), float(bound), cost)
    else:
        cuts, c = _min_migration_np(wtab, int(n_ranks), float(bound), cost)
    return cuts, float(c)


def max_sum_cuts(wtab, n_ranks, bound):
    """Cut positions maximizing the total workload with every rank <= bound.

    Returns ``(cuts, total)``; ``total`` is ``-inf`` when no placement fits.
    """
    wtab = np.ascontiguousarray(wtab, dtype=float)
    if USE_NUMBA:
        cuts, tot = _max_sum_nb(wtab, int(n_ranks), float(bound))
    else:
        cuts, tot = _max_sum_np(wtab, int(n_ranks), float(bound))
    return cuts, float(tot)


def imbalance_of(wtab, cuts):
    """max / mean of the rank workloads induced by ``cuts``."""
    w = np.array([wtab[a, b] for a, b in zip(cuts[:-1], cuts[1:])], dtype=float)
    if w.sum() <= 0:
        return np.inf
    return float(w.max() * len(w) / w.sum())


def exhaustive_cuts(wtab, n_ranks, incumbent=np.inf):
    """Exact search over every contiguous cut set for the least imbalance.

    Branches are skipped only when a bound proves they cannot beat the best
    imbalance seen so far (or ``incumbent``), so the result is the global
    optimum. Returns ``(imbalance, cuts)``; when nothing strictly below
    ``incumbent`` exists the returned imbalance is ``incumbent`` and ``cuts``
    is ``None``.
    """
    wtab = np.ascontiguousarray(wtab, dtype=float)
    n = wtab.shape[0] - 1
    if n_ranks < 1 or n_ranks > n:
        raise ValueError("need 1 <= n_ranks <= number of slabs")
    if USE_NUMBA:
        best, cuts, found = _exhaustive_nb(wtab, int(n_ranks), float(incumbent))
    else:
        best, cuts, found = _exhaustive_np(wtab, int(n_ranks), float(incumbent))
    return float(best), (cuts if found else None)
