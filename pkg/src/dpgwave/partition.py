"""Simulated domain partitioning and load balancing on adaptive meshes.

Nothing is distributed: a partition is an element to rank map, and the
quantities of interest are computed from the degree-of-freedom layout of the
mesh. A rank's workload is the number of degrees of freedom it owns
exclusively, namely the field unknowns of its elements plus the trace
unknowns used only by its elements. Trace unknowns used by elements of
several ranks form the interface.

Two rebalancers are provided. ``rebalance_orthogonal`` keeps cuts orthogonal
to the propagation axis and picks the optimal cut positions. ``rebalance_graph``
moves elements between ranks on the weighted element adjacency graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .mesh import Mesh
from .spaces import build_dof_map

# relative slack used when comparing floating point imbalances
_REL = 1e-12


class PartitionError(ValueError):
    pass


@dataclass
class PartitionState:
    """Element ownership together with the resulting workloads.

    ``cuts`` holds the z positions of the rank boundaries when the partition
    consists of orthogonal slabs, and is ``None`` otherwise.
    """

    n_ranks: int
    owner: dict[int, int]
    workloads: np.ndarray
    interface: int
    total: int
    cuts: np.ndarray | None = None
    mesh: Mesh | None = field(default=None, repr=False, compare=False)

    @property
    def imbalance(self) -> float:
        return imbalance(self.workloads)

    @property
    def max_workload(self) -> int:
        return int(self.workloads.max())

    def check(self, mesh: Mesh | None = None) -> None:
        """Raise if ownership or workload accounting is inconsistent."""
        mesh = mesh if mesh is not None else self.mesh
        if mesh is not None and sorted(self.owner) != sorted(mesh.active):
            raise PartitionError("ownership must cover exactly the active elements")
        ranks = np.fromiter(self.owner.values(), dtype=np.int64, count=len(self.owner))
        if ranks.size and (ranks.min() < 0 or ranks.max() >= self.n_ranks):
            raise PartitionError("rank id out of range")
        if int(self.workloads.sum()) + self.interface != self.total:
            raise PartitionError("workloads and interface do not add up to the total")


@dataclass(frozen=True)
class BalanceMetrics:
    imbalance: float
    migration: float
    interface: int
    max_workload: int
    total: int

    @property
    def speedup(self) -> float:
        """Modelled assembly speedup: total work over the busiest rank."""
        return self.total / self.max_workload if self.max_workload else 0.0


def imbalance(workloads) -> float:
    w = np.asarray(workloads, dtype=float)
    if w.size == 0 or w.sum() <= 0:
        return float("inf")
    return float(w.max() / w.mean())


# ---------------------------------------------------------------------------
# Degree-of-freedom layout
# ---------------------------------------------------------------------------

@dataclass
class DofLayout:
    """Which elements use which unknowns, for one mesh."""

    elements: np.ndarray          # active element ids
    field_counts: np.ndarray      # field unknowns per element
    trace_users: list[np.ndarray]  # element positions using each trace dof
    total: int


def dof_layout(mesh: Mesh) -> DofLayout:
    if "dof_layout" in mesh._cache:
        return mesh._cache["dof_layout"]
    dm = build_dof_map(mesh, mesh.p)
    elements = np.asarray(dm.elements, dtype=np.int64)
    pos = {int(e): k for k, e in enumerate(elements)}
    fc = np.array([dm.field_count(e) for e in elements], dtype=np.int64)
    users = [np.unique([pos[int(e)] for e in t]) for t in dm.touching()]
    lay = DofLayout(elements, fc, users, int(dm.n_field + dm.n_trace))
    mesh._cache["dof_layout"] = lay
    return lay


def evaluate(mesh: Mesh, owner: dict[int, int], n_ranks: int,
             cuts=None) -> PartitionState:
    """Workloads and interface size of an ownership map on ``mesh``."""
    lay = dof_layout(mesh)
    try:
        rank = np.array([owner[int(e)] for e in lay.elements], dtype=np.int64)
    except KeyError as exc:
        raise PartitionError(f"element {exc.args[0]} has no owner") from None
    if rank.size and (rank.min() < 0 or rank.max() >= n_ranks):
        raise PartitionError("rank id out of range")
    work = np.bincount(rank, weights=lay.field_counts, minlength=n_ranks).astype(np.int64)
    interface = 0
    for users in lay.trace_users:
        rs = np.unique(rank[users])
        if rs.size == 1:
            work[rs[0]] += 1
        else:
            interface += 1
    state = PartitionState(n_ranks, {int(e): int(r) for e, r in zip(lay.elements, rank)},
                           work, interface, lay.total,
                           None if cuts is None else np.asarray(cuts, dtype=float), mesh)
    state.check()
    return state


# ---------------------------------------------------------------------------
# Orthogonal slabs
# ---------------------------------------------------------------------------

@dataclass
class SlabTable:
    """Slabs between consecutive element z-boundaries.

    ``wtab[i, j]`` is the workload of a rank owning slabs ``i..j-1`` when
    the remaining slabs belong to other ranks.
    """

    bounds: np.ndarray            # z positions, n_slabs + 1
    slab_of: np.ndarray           # slab index per active element (layout order)
    wtab: np.ndarray

    @property
    def n_slabs(self) -> int:
        return len(self.bounds) - 1


def slab_table(mesh: Mesh) -> SlabTable:
    lay = dof_layout(mesh)
    b = mesh.boxes()
    pos = {e: k for k, e in enumerate(mesh.active)}
    idx = np.array([pos[int(e)] for e in lay.elements])
    z0, z1 = b[idx, 2], b[idx, 3]
    bounds = np.unique(np.round(np.concatenate([z0, z1]), 12))
    n = len(bounds) - 1
    slab = np.clip(np.searchsorted(bounds, 0.5 * (z0 + z1)) - 1, 0, n - 1)
    hist = np.zeros((n, n))
    np.add.at(hist, (slab, slab), lay.field_counts)
    lo = np.array([slab[u].min() for u in lay.trace_users], dtype=np.int64)
    hi = np.array([slab[u].max() for u in lay.trace_users], dtype=np.int64)
    np.add.at(hist, (lo, hi), 1.0)
    # wtab[i, j] = sum of hist[a, b] over i <= a and b < j
    acc = np.cumsum(np.cumsum(hist[::-1], axis=0)[::-1], axis=1)
    wtab = np.zeros((n + 1, n + 1))
    wtab[:n, 1:] = acc
    wtab[np.tril_indices(n + 1)] = 0.0
    return SlabTable(bounds, slab, wtab)


def optimal_cuts(wtab, n_ranks: int, cost=None) -> tuple[np.ndarray, float]:
    """Slab cuts with the least imbalance, ties broken by least ``cost``.

    ``cost[r, i, j]`` is the price of giving slabs ``i..j-1`` to rank ``r``.
    The imbalance max/mean is not decomposable over ranks because interface
    unknowns belong to nobody, so every candidate bottleneck value is tried
    with a dynamic program that maximizes the total owned work below it.
    """
    wtab = np.asarray(wtab, dtype=float)
    n = wtab.shape[0] - 1
    if not 1 <= n_ranks <= n:
        raise PartitionError(f"cannot cut {n} slabs into {n_ranks} ranks")
    b0 = _kernels.bottleneck_value(wtab, n_ranks)
    upper = wtab[0, n]
    vals = np.unique(wtab[np.triu_indices(n + 1, 1)])
    vals = vals[vals >= b0 * (1 - _REL)]
    best, best_cuts, best_bound = np.inf, None, None
    for bound in vals:
        if upper <= 0 or bound * n_ranks / upper >= best * (1 + _REL):
            break
        cuts, tot = _kernels.max_sum_cuts(wtab, n_ranks, bound)
        if tot == -np.inf:
            continue
        imb = _kernels.imbalance_of(wtab, cuts)
        if imb < best * (1 - _REL):
            best, best_cuts, best_bound = imb, cuts, bound
    if cost is not None:
        cand, _ = _kernels.min_migration_cuts(wtab, n_ranks, best_bound, cost)
        if _kernels.imbalance_of(wtab, cand) <= best * (1 + _REL):
            best_cuts = cand
    return np.asarray(best_cuts, dtype=np.int64), float(best)


def _owner_from_slabs(mesh: Mesh, table: SlabTable, cuts) -> dict[int, int]:
    lay = dof_layout(mesh)
    rank = np.searchsorted(np.asarray(cuts)[1:-1], table.slab_of, side="right")
    return {int(e): int(r) for e, r in zip(lay.elements, rank)}


def static_partition(mesh: Mesh, n_ranks: int) -> PartitionState:
    """Split the z-axis into ``n_ranks`` slabs with near-equal column counts.

    With ``n`` slabs the first ``n mod n_ranks`` ranks receive one extra
    slab.
    """
    if n_ranks < 1:
        raise PartitionError("n_ranks must be at least 1")
    table = slab_table(mesh)
    n = table.n_slabs
    if n_ranks > n:
        raise PartitionError(f"{n_ranks} ranks but only {n} element columns")
    sizes = np.full(n_ranks, n // n_ranks)
    sizes[: n % n_ranks] += 1
    cuts = np.concatenate([[0], np.cumsum(sizes)])
    owner = _owner_from_slabs(mesh, table, cuts)
    return evaluate(mesh, owner, n_ranks, table.bounds[cuts])


def inherited_owner(state: PartitionState, mesh: Mesh) -> dict[int, int]:
    """Ranks on ``mesh`` obtained by letting children keep their ancestor's rank."""
    out = {}
    for e in mesh.active:
        a = mesh.ancestor_in(e, state.owner)
        if a is None:
            raise PartitionError(f"element {e} does not descend from the partitioned mesh")
        out[e] = state.owner[a]
    return out


def carry_over(state: PartitionState, mesh: Mesh) -> PartitionState:
    """The unbalanced partition of a refined mesh: ownership is inherited."""
    return evaluate(mesh, inherited_owner(state, mesh), state.n_ranks, state.cuts)


def _migration_cost(table: SlabTable, prev_rank: np.ndarray, n_ranks: int) -> np.ndarray:
    n = table.n_slabs
    per = np.zeros((n_ranks, n))
    counts = np.bincount(table.slab_of, minlength=n).astype(float)
    for r in range(n_ranks):
        per[r] = counts - np.bincount(table.slab_of[prev_rank == r], minlength=n)
    pre = np.concatenate([np.zeros((n_ranks, 1)), np.cumsum(per, axis=1)], axis=1)
    return pre[:, None, :] - pre[:, :, None]


def rebalance_orthogonal(state: PartitionState, mesh: Mesh) -> PartitionState:
    """Optimal orthogonal cuts for ``mesh``, preferring little migration."""
    table = slab_table(mesh)
    if state.n_ranks > table.n_slabs:
        raise PartitionError("more ranks than slabs")
    lay = dof_layout(mesh)
    inh = inherited_owner(state, mesh)
    prev = np.array([inh[int(e)] for e in lay.elements], dtype=np.int64)
    cost = _migration_cost(table, prev, state.n_ranks)
    cuts, _ = optimal_cuts(table.wtab, state.n_ranks, cost)
    owner = _owner_from_slabs(mesh, table, cuts)
    return evaluate(mesh, owner, state.n_ranks, table.bounds[cuts])


# ---------------------------------------------------------------------------
# Graph rebalancing
# ---------------------------------------------------------------------------

@dataclass
class ElementGraph:
    elements: np.ndarray
    vertex_weights: np.ndarray
    edges: np.ndarray              # (m, 2) positions into ``elements``
    edge_weights: np.ndarray


def element_graph(mesh: Mesh) -> ElementGraph:
    """Facet adjacency graph of the active elements.

    A vertex weighs the element's field unknowns plus an equal share of every
    trace unknown it uses; an edge weighs the trace unknowns shared by two
    elements that meet across a facet.
    """
    lay = dof_layout(mesh)
    vw = lay.field_counts.astype(float)
    pairs: dict[tuple[int, int], int] = {}
    for users in lay.trace_users:
        vw[users] += 1.0 / users.size
        for a in range(users.size):
            for b in range(a + 1, users.size):
                key = (int(users[a]), int(users[b]))
                pairs[key] = pairs.get(key, 0) + 1
    pos = {int(e): k for k, e in enumerate(lay.elements)}
    adjacent = set()
    for f in mesh.facets:
        ids = f.element_ids()
        if len(ids) == 2:
            a, b = sorted((pos[ids[0]], pos[ids[1]]))
            adjacent.add((a, b))
    keys = sorted(k for k in pairs if k in adjacent)
    edges = np.array(keys, dtype=np.int64).reshape(-1, 2)
    ew = np.array([pairs[k] for k in keys], dtype=float)
    return ElementGraph(lay.elements, vw, edges, ew)


def partition_graph(vertex_weights, edges, edge_weights, n_ranks: int, init,
                    tol: float = 0.1, max_passes: int = 50, seed: int | None = None) -> np.ndarray:
    """Greedy boundary-move partitioner.

    Starting from ``init``, vertices are first moved off the heaviest rank
    until every rank is within ``1 + tol`` of the mean. Then passes of
    positive-gain boundary moves reduce the edge cut without leaving that
    window. Vertices are visited in index order, or in a permutation drawn
    from ``seed`` when one is given; either way the result is deterministic.
    """
    vw = np.asarray(vertex_weights, dtype=float)
    nv = vw.size
    part = np.array(init, dtype=np.int64).copy()
    if part.shape != (nv,):
        raise PartitionError("init must give one rank per vertex")
    if n_ranks < 1 or (nv and (part.min() < 0 or part.max() >= n_ranks)):
        raise PartitionError("init ranks out of range")
    nbrs: list[list[tuple[int, float]]] = [[] for _ in range(nv)]
    for (a, b), w in zip(np.asarray(edges, dtype=np.int64).reshape(-1, 2), edge_weights):
        nbrs[a].append((int(b), float(w)))
        nbrs[b].append((int(a), float(w)))
    visit = np.arange(nv) if seed is None else np.random.default_rng(seed).permutation(nv)
    rank_of = np.empty(nv, dtype=np.int64)
    rank_of[visit] = np.arange(nv)
    loads = np.bincount(part, weights=vw, minlength=n_ranks)
    target = (1.0 + tol) * vw.sum() / n_ranks

    def conn(v):
        c = np.zeros(n_ranks)
        for u, w in nbrs[v]:
            c[part[u]] += w
        return c

    def move(v, q):
        loads[part[v]] -= vw[v]
        loads[q] += vw[v]
        part[v] = q

    # balance phase
    for _ in range(nv * n_ranks + 1):
        h = int(np.argmax(loads))
        if loads[h] <= target * (1 + _REL):
            break
        best = None
        for v in visit[part[visit] == h]:
            c = conn(v)
            for q in range(n_ranks):
                if q == h or loads[q] + vw[v] >= loads[h]:
                    continue
                adjacent = c[q] > 0
                key = (not adjacent, -(c[q] - c[h]), loads[q], rank_of[v], q)
                if best is None or key < best[0]:
                    best = (key, v, q)
        if best is None:
            break
        move(best[1], best[2])

    # refinement phase: reduce the cut inside the balance window
    limit = max(target, loads.max())
    for _ in range(max_passes):
        moved = False
        for v in visit:
            c = conn(v)
            src = part[v]
            gains = c - c[src]
            order = sorted(range(n_ranks), key=lambda q: (-gains[q], q))
            for q in order:
                if q == src or gains[q] <= 0:
                    continue
                if loads[q] + vw[v] > limit * (1 + _REL):
                    continue
                move(v, q)
                moved = True
                break
        if not moved:
            break
    return part


def edge_cut(edges, edge_weights, part) -> float:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    w = np.asarray(edge_weights, dtype=float)
    return float(w[part[e[:, 0]] != part[e[:, 1]]].sum())


def rebalance_graph(state: PartitionState, mesh: Mesh, tol: float = 0.1,
                    seed: int | None = None) -> PartitionState:
    """Move elements between ranks on the weighted adjacency graph."""
    g = element_graph(mesh)
    inh = inherited_owner(state, mesh)
    init = np.array([inh[int(e)] for e in g.elements], dtype=np.int64)
    part = partition_graph(g.vertex_weights, g.edges, g.edge_weights, state.n_ranks, init, tol,
                           seed=seed)
    owner = {int(e): int(r) for e, r in zip(g.elements, part)}
    return evaluate(mesh, owner, state.n_ranks)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def balance_metrics(prev: PartitionState, nxt: PartitionState) -> BalanceMetrics:
    """Imbalance of ``nxt`` and the share of its elements that changed rank.

    Elements created by refinement after ``prev`` count as migrated when
    their rank differs from the rank of the ancestor they replace.
    """
    if prev.n_ranks != nxt.n_ranks:
        raise PartitionError("rank counts differ")
    if not nxt.owner:
        raise PartitionError("empty partition")
    moved = 0
    for e, r in nxt.owner.items():
        if e in prev.owner:
            old = prev.owner[e]
        else:
            if nxt.mesh is None:
                raise PartitionError(f"element {e} unknown to the previous state")
            a = nxt.mesh.ancestor_in(e, prev.owner)
            if a is None:
                raise PartitionError(f"element {e} unknown to the previous state")
            old = prev.owner[a]
        moved += old != r
    return BalanceMetrics(nxt.imbalance, moved / len(nxt.owner), nxt.interface,
                          nxt.max_workload, nxt.total)


POLICIES = ("none", "orthogonal", "graph")


def replay(meshes, n_ranks: int, policy: str = "none", tol: float = 0.1,
           seed: int | None = None):
    """Partition a sequence of refined meshes, one state per mesh.

    The first mesh gets the static slab partition. For each later mesh the
    previous ownership is inherited and then optionally rebalanced.
    Returns a list of ``(state, metrics)`` pairs.
    """
    if policy not in POLICIES:
        raise PartitionError(f"unknown policy {policy!r}")
    out = []
    prev = None
    for k, mesh in enumerate(meshes):
        if k == 0:
            state = static_partition(mesh, n_ranks)
            if policy == "graph":
                state = rebalance_graph(state, mesh, tol, seed)
            ref = state
        elif policy == "none":
            state = carry_over(prev, mesh)
            ref = prev
        elif policy == "orthogonal":
            state = rebalance_orthogonal(prev, mesh)
            ref = prev
        else:
            state = rebalance_graph(prev, mesh, tol, seed)
            ref = prev
        out.append((state, balance_metrics(ref, state)))
        prev = state
    return out
