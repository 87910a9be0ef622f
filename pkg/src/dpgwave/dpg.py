"""Practical DPG method for the ultraweak first-order wave system.

Each element carries a broken, enriched test space of order ``p + dp``. The
Gram matrix of the adjoint graph norm ``||A* psi||^2 + alpha ||psi||^2`` is
factored once per distinct element (same size, index and orders), which on
the structured waveguide meshes means a handful of factorizations per solve.

Writing ``G = L L^H`` and ``W = L^{-1} [B_f B_t]``, the DPG solution
minimizes ``sum_K ||L^{-1} l_K - W_K x_K||^2``. Field unknowns are
eliminated per element with a QR factorization of ``L^{-1} B_f``; what is
left is a Hermitian positive definite system in the trace unknowns only.
The element residual ``eta_K`` is the norm of the minimized local vector.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import physics
from .mesh import Mesh, MeshError
from .physics import TestNormConfig, WaveProblem
from .spaces import (DofMap, build_dof_map, gauss, integrated_legendre, legendre,
                     quad_points)

CHOL_FLOOR = 1e-14


class GramError(np.linalg.LinAlgError):
    pass


class SolveError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Element matrices
# ---------------------------------------------------------------------------

@dataclass
class ElementSystem:
    """Local matrices of one element (test rows, trial columns)."""

    G: np.ndarray
    Bf: np.ndarray
    Bt: np.ndarray
    lvec: np.ndarray


@dataclass(frozen=True)
class ElementKey:
    dim: int
    hx: float
    hz: float
    n: float
    ox: int
    oz: int
    pt: int        # trace order
    omega: float
    alpha: float
    dp: int


def _round(h):
    return float(f"{h:.12e}")


def _test_tables(dim, r, nq):
    t, w = gauss(nq)
    v, d = integrated_legendre(t, r)
    if dim == 1:
        return v, None, d, w
    val = np.einsum("ai,bj->abij", v, v).reshape(nq * nq, -1)
    dx = np.einsum("ai,bj->abij", d, v).reshape(nq * nq, -1)
    dz = np.einsum("ai,bj->abij", v, d).reshape(nq * nq, -1)
    return val, dx, dz, np.outer(w, w).ravel()


def _adjoint_columns(key: ElementKey, r, nq):
    """A* applied to every test basis function, per output component.

    Returns (components, weights, test values): ``components`` has shape
    (n_comp, n_quad, n_test) and lists the vector part first.
    """
    val, dx, dz, w = _test_tables(key.dim, r, nq)
    om, n2 = key.omega, key.n**2
    z = np.zeros_like(val)
    if key.dim == 1:
        dz = dz / key.hz
        wq = w * key.hz
        # test ordering [v, q]
        vec = np.hstack([-1j * om * val, -dz])
        sca = np.hstack([-dz, -1j * om * n2 * val])
        return np.stack([vec, sca]), wq, val
    dx = dx / key.hx
    dz = dz / key.hz
    wq = w * key.hx * key.hz
    # test ordering [v_x, v_z, q]
    vx = np.hstack([-1j * om * val, z, -dx])
    vz = np.hstack([z, -1j * om * val, -dz])
    sca = np.hstack([-dx, -dz, -1j * om * n2 * val])
    return np.stack([vx, vz, sca]), wq, val


def _gram(key: ElementKey, r, nq):
    comps, wq, val = _adjoint_columns(key, r, nq)
    g = np.einsum("cqi,q,cqj->ij", comps.conj(), wq, comps)
    mass = (val * wq[:, None]).T @ val
    ncomp = 2 if key.dim == 1 else 3
    g += key.alpha * np.kron(np.eye(ncomp), mass)
    return 0.5 * (g + g.conj().T), comps, wq


def _field_tables(dim, ox, oz, nq):
    t, _ = gauss(nq)
    fz, _ = legendre(t, oz)
    if dim == 1:
        return fz
    fx, _ = legendre(t, ox)
    return np.einsum("ai,bj->abij", fx, fz).reshape(nq * nq, -1)


def _field_stiffness(key: ElementKey, comps, wq, nq):
    f = _field_tables(key.dim, key.ox, key.oz, nq)
    ncomp = comps.shape[0]
    blocks = [comps[c].conj().T @ (wq[:, None] * f) for c in range(ncomp)]
    return np.hstack(blocks)


def _trace_stiffness(key: ElementKey, r, nq):
    """Test x local-trace pairing, local layout documented in ``spaces``."""
    pt = key.pt
    if key.dim == 1:
        ends = np.array([0.0, 1.0])
        v, _ = integrated_legendre(ends, r)
        nt = r + 1
        bt = np.zeros((2 * nt, 4))
        for side, sgn in ((0, -1.0), (1, 1.0)):
            # <p_hat, v n_K> and <s u_hat, q>
            bt[:nt, 2 * side] = sgn * v[side]
            bt[nt:, 2 * side + 1] = sgn * v[side]
        return bt
    t, w = gauss(nq)
    il, _ = integrated_legendre(t, r)            # test factor along the side
    sc, _ = integrated_legendre(t, pt)           # scalar trace
    fl, _ = legendre(t, pt)                      # flux trace
    end, _ = integrated_legendre(np.array([0.0, 1.0]), r)
    nt1 = r + 1
    nt = nt1 * nt1
    ntr = pt + 1
    bt = np.zeros((3 * nt, 8 * ntr))
    hx, hz = key.hx, key.hz
    for side in range(4):
        normal_x = side < 2
        hi = side % 2
        sgn = 1.0 if hi else -1.0
        h = hz if normal_x else hx
        ps = (il * (h * w)[:, None]).T @ sc       # (nt1, ntr) pairing along the side
        pf = (il * (h * w)[:, None]).T @ fl
        # test function restricted to the side: fixed factor is end[hi]
        if normal_x:
            # basis index i * nt1 + j, x-factor i fixed at the side
            rest = lambda m: np.einsum("i,jk->ijk", end[hi], m).reshape(nt, -1)
            vrow = slice(0, nt)
        else:
            rest = lambda m: np.einsum("j,ik->ijk", end[hi], m).reshape(nt, -1)
            vrow = slice(nt, 2 * nt)
        c0 = side * 2 * ntr
        bt[vrow, c0:c0 + ntr] = sgn * rest(ps)
        bt[2 * nt:, c0 + ntr:c0 + 2 * ntr] = sgn * rest(pf)
    return bt


@dataclass
class LocalOperator:
    """Factorized element data shared by all elements with the same key."""

    key: ElementKey
    r: int
    nq: int
    chol: np.ndarray          # lower Cholesky factor of G
    Wf: np.ndarray            # L^{-1} B_f
    Wt: np.ndarray            # L^{-1} B_t (local trace layout)
    Q: np.ndarray
    R: np.ndarray
    Wt_perp: np.ndarray       # (I - Q Q^H) Wt
    St: np.ndarray            # Wt_perp^H Wt_perp
    system: ElementSystem

    def project_out(self, w):
        return w - self.Q @ (self.Q.conj().T @ w)


def cholesky(G):
    """Lower Cholesky factor with a relative pivot floor."""
    n = G.shape[0]
    floor = CHOL_FLOOR * float(np.real(np.trace(G))) / n
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise GramError("Gram matrix is not positive definite") from exc
    if np.min(np.real(np.diag(L))) ** 2 < floor:
        raise GramError("Gram matrix pivot below floor")
    return L


def element_key(mesh: Mesh, eid: int, problem: WaveProblem, dofmap: DofMap) -> ElementKey:
    x0, x1, z0, z1 = mesh.box(eid)
    ox, oz = dofmap.field_orders[eid]
    return ElementKey(mesh.dim, _round(x1 - x0) if mesh.dim == 2 else 1.0, _round(z1 - z0),
                      float(problem.n_of(mesh.label_of(eid))), ox, oz, dofmap.p if mesh.dim == 2 else 0,
                      float(problem.omega), float(problem.norm.alpha), int(problem.dp))


_OP_CACHE: dict[ElementKey, LocalOperator] = {}


def local_operator(key: ElementKey) -> LocalOperator:
    op = _OP_CACHE.get(key)
    if op is not None:
        return op
    r = max(key.ox, key.oz) + key.dp
    nq = quad_points(max(key.ox, key.oz), key.dp)
    G, comps, wq = _gram(key, r, nq)
    Bf = _field_stiffness(key, comps, wq, nq)
    Bt = _trace_stiffness(key, r, nq)
    L = cholesky(G)
    Wf = sla.solve_triangular(L, Bf, lower=True)
    Wt = sla.solve_triangular(L, Bt.astype(complex), lower=True)
    Q, R = np.linalg.qr(Wf)
    Wp = Wt - Q @ (Q.conj().T @ Wt)
    St = Wp.conj().T @ Wp
    op = LocalOperator(key, r, nq, L, Wf, Wt, Q, R, Wp, 0.5 * (St + St.conj().T),
                       ElementSystem(G, Bf, Bt, np.zeros(G.shape[0], dtype=complex)))
    if len(_OP_CACHE) > 4096:
        _OP_CACHE.clear()
    _OP_CACHE[key] = op
    return op


def clear_cache():
    _OP_CACHE.clear()


def _element_load(mesh, eid, problem, op: LocalOperator):
    """Test load l(psi) = int f . conj(psi) for a volume source."""
    ntest = op.system.G.shape[0]
    if problem.source is None:
        return np.zeros(ntest, dtype=complex)
    x0, x1, z0, z1 = mesh.box(eid)
    val, _, _, w = _test_tables(mesh.dim, op.r, op.nq)
    t, _ = gauss(op.nq)
    if mesh.dim == 1:
        z = z0 + (z1 - z0) * t
        f = np.asarray(problem.source(np.zeros_like(z), z))
        wq = w * (z1 - z0)
    else:
        X, Z = np.meshgrid(x0 + (x1 - x0) * t, z0 + (z1 - z0) * t, indexing="ij")
        f = np.asarray(problem.source(X.ravel(), Z.ravel()))
        wq = w * (x1 - x0) * (z1 - z0)
    return np.concatenate([(val * wq[:, None]).T @ fc for fc in f])


def element_gram(mesh: Mesh, eid: int, problem: WaveProblem,
                 cfg: TestNormConfig | None = None, dofmap: DofMap | None = None) -> np.ndarray:
    """Hermitian positive definite Gram matrix of the element's enriched test space."""
    if cfg is not None and cfg != problem.norm:
        problem = _with_norm(problem, cfg)
    dofmap = dofmap or build_dof_map(mesh, problem.p, order_z=problem.order_z)
    return local_operator(element_key(mesh, eid, problem, dofmap)).system.G


def _with_norm(problem, cfg):
    from dataclasses import replace
    return replace(problem, norm=cfg)


def element_stiffness(mesh: Mesh, eid: int, problem: WaveProblem,
                      dofmap: DofMap | None = None) -> ElementSystem:
    """Gram, field stiffness, local trace stiffness and load of one element."""
    dofmap = dofmap or build_dof_map(mesh, problem.p, order_z=problem.order_z)
    op = local_operator(element_key(mesh, eid, problem, dofmap))
    s = op.system
    return ElementSystem(s.G, s.Bf, s.Bt, _element_load(mesh, eid, problem, op))


def condense(sys: ElementSystem) -> tuple[np.ndarray, np.ndarray]:
    """S = B^H G^{-1} B and f = B^H G^{-1} l for B = [B_f B_t]."""
    B = np.hstack([sys.Bf, sys.Bt]).astype(complex)
    L = cholesky(sys.G)
    W = sla.solve_triangular(L, B, lower=True)
    w = sla.solve_triangular(L, np.asarray(sys.lvec, dtype=complex), lower=True)
    S = W.conj().T @ W
    return 0.5 * (S + S.conj().T), W.conj().T @ w


# ---------------------------------------------------------------------------
# Global solve
# ---------------------------------------------------------------------------

@dataclass
class Solution:
    mesh: Mesh
    problem: WaveProblem
    dofmap: DofMap
    fields: np.ndarray
    traces: np.ndarray
    eta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residual: float = 0.0
    solve_time: float = 0.0

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_total

    @property
    def eta_by_element(self) -> dict[int, float]:
        return dict(zip(self.dofmap.elements, self.eta.tolist()))

    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.fields, self.traces])

    def field_coeffs(self, eid: int) -> np.ndarray:
        """Field coefficients of one element as (n_comp, n_x, n_z)."""
        dm = self.dofmap
        ox, oz = dm.field_orders[eid]
        off = dm.field_offsets[eid]
        if self.mesh.dim == 1:
            return self.fields[off:off + 2 * (oz + 1)].reshape(2, 1, oz + 1)
        n = (ox + 1) * (oz + 1)
        return self.fields[off:off + 3 * n].reshape(3, ox + 1, oz + 1)

    def reference_values(self, eid: int, tx, tz) -> np.ndarray:
        """Field components at reference points; (3, len(tx), len(tz)) in 2D, (2, len(tz)) in 1D."""
        c = self.field_coeffs(eid)
        lz, _ = legendre(np.asarray(tz, dtype=float), c.shape[2] - 1)
        if self.mesh.dim == 1:
            return np.einsum("ck,qk->cq", c[:, 0, :], lz)
        lx, _ = legendre(np.asarray(tx, dtype=float), c.shape[1] - 1)
        return np.einsum("cik,ai,bk->cab", c, lx, lz)

    def evaluate(self, x, z) -> np.ndarray:
        """Field components at physical points (slow; for diagnostics)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        ncomp = 2 if self.mesh.dim == 1 else 3
        out = np.zeros((ncomp, z.size), dtype=complex)
        boxes = self.mesh.boxes()
        act = self.mesh.active
        for k, (xx, zz) in enumerate(zip(np.broadcast_to(x, z.shape), z)):
            if self.mesh.dim == 1:
                hit = np.nonzero((boxes[:, 2] <= zz) & (zz <= boxes[:, 3]))[0]
            else:
                hit = np.nonzero((boxes[:, 0] <= xx) & (xx <= boxes[:, 1])
                                 & (boxes[:, 2] <= zz) & (zz <= boxes[:, 3]))[0]
            if not len(hit):
                raise ValueError(f"point ({xx}, {zz}) outside the mesh")
            eid = act[hit[0]]
            x0, x1, z0, z1 = boxes[hit[0]]
            tz = [(zz - z0) / (z1 - z0)]
            if self.mesh.dim == 1:
                out[:, k] = self.reference_values(eid, None, tz)[:, 0]
            else:
                out[:, k] = self.reference_values(eid, [(xx - x0) / (x1 - x0)], tz)[:, 0, 0]
        return out


def _dofmap_for(mesh, problem):
    pt = problem.p if problem.order_z is None else max(problem.p, problem.order_z)
    return build_dof_map(mesh, pt, bc_kinds=problem.bc_kinds,
                         impedance=problem.impedances, order_z=problem.order_z)


def _groups(mesh, problem, dofmap):
    """Active elements grouped by element key, preserving order."""
    groups: dict[ElementKey, list[int]] = {}
    for eid in dofmap.elements:
        groups.setdefault(element_key(mesh, eid, problem, dofmap), []).append(eid)
    return groups


def _assemble_traces(mesh, problem, dofmap, groups, loads):
    n = dofmap.n_trace
    rows, cols, vals = [], [], []
    rhs = np.zeros(n, dtype=complex)
    for key, eids in groups.items():
        op = local_operator(key)
        for eid in eids:
            M = dofmap.elem_map[eid]
            c = dofmap.elem_cols[eid]
            K = M.conj().T @ op.St @ M
            rows.append(np.repeat(c, len(c)))
            cols.append(np.tile(c, len(c)))
            vals.append(K.ravel())
            w = loads.get(eid)
            if w is not None:
                rhs[c] += M.conj().T @ (op.Wt_perp.conj().T @ op.project_out(w))
    if rows:
        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
    else:
        A = sp.csr_matrix((n, n), dtype=complex)
    return A, rhs


def _whitened_loads(mesh, problem, dofmap, groups):
    loads = {}
    if problem.source is None:
        return loads
    for key, eids in groups.items():
        op = local_operator(key)
        for eid in eids:
            lv = _element_load(mesh, eid, problem, op)
            loads[eid] = sla.solve_triangular(op.chol, lv, lower=True)
    return loads


def _sparse_solve(A, b):
    if A.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    A = A.tocsc()
    try:
        # Hermitian positive definite: symmetric ordering, no row pivoting
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise SolveError(f"singular global system: {exc}") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SolveError("non-finite solution")
    return x


def assemble_solve(mesh: Mesh, problem: WaveProblem, condense_fields: bool = True) -> Solution:
    """Solve the DPG normal equations and compute element residuals.

    ``condense_fields=False`` assembles and solves the larger system in field
    and trace unknowns together (used as a cross-check).
    """
    if not mesh.is_one_irregular():
        raise MeshError("mesh is not 1-irregular")
    t0 = time.perf_counter()
    dofmap = _dofmap_for(mesh, problem)
    groups = _groups(mesh, problem, dofmap)
    loads = _whitened_loads(mesh, problem, dofmap, groups)
    fixed = dofmap.fixed
    tfix = dofmap.fixed_values(mesh, problem.boundary_data())
    free = np.nonzero(~fixed)[0]

    if condense_fields:
        A, rhs = _assemble_traces(mesh, problem, dofmap, groups, loads)
        b = rhs[free] - A[free][:, np.nonzero(fixed)[0]] @ tfix[fixed]
        t = tfix.copy()
        t[free] = _sparse_solve(A[free][:, free], b)
        fields = _recover_fields(mesh, problem, dofmap, groups, loads, t)
    else:
        fields, t = _solve_full(mesh, problem, dofmap, groups, loads, tfix, free)
    sol = Solution(mesh, problem, dofmap, fields, t)
    eta = compute_residual(mesh, problem, sol, _groups_cache=(groups, loads))[0]
    sol.eta = eta
    sol.residual = float(np.sqrt(np.sum(eta**2)))
    sol.solve_time = time.perf_counter() - t0
    return sol


def _recover_fields(mesh, problem, dofmap, groups, loads, t):
    fields = np.zeros(dofmap.n_field, dtype=complex)
    for key, eids in groups.items():
        op = local_operator(key)
        for eid in eids:
            tl = dofmap.elem_map[eid] @ t[dofmap.elem_cols[eid]]
            rhs = -(op.Wt @ tl)
            w = loads.get(eid)
            if w is not None:
                rhs = rhs + w
            u = sla.solve_triangular(op.R, op.Q.conj().T @ rhs)
            off = dofmap.field_offsets[eid]
            fields[off:off + len(u)] = u
    return fields


def _solve_full(mesh, problem, dofmap, groups, loads, tfix, free):
    nf, nt = dofmap.n_field, dofmap.n_trace
    n = nf + nt
    rows, cols, vals = [], [], []
    rhs = np.zeros(n, dtype=complex)
    for key, eids in groups.items():
        op = local_operator(key)
        for eid in eids:
            M = dofmap.elem_map[eid]
            W = np.hstack([op.Wf, op.Wt @ M])
            off = dofmap.field_offsets[eid]
            idx = np.concatenate([np.arange(off, off + op.Wf.shape[1]),
                                  nf + dofmap.elem_cols[eid]])
            K = W.conj().T @ W
            rows.append(np.repeat(idx, len(idx)))
            cols.append(np.tile(idx, len(idx)))
            vals.append(K.ravel())
            w = loads.get(eid)
            if w is not None:
                rhs[idx] += W.conj().T @ w
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    keep = np.concatenate([np.arange(nf), nf + free])
    fix = nf + np.nonzero(dofmap.fixed)[0]
    b = rhs[keep] - A[keep][:, fix] @ tfix[dofmap.fixed]
    x = np.zeros(n, dtype=complex)
    x[nf:] = tfix
    x[keep] = _sparse_solve(A[keep][:, keep], b)
    return x[:nf], x[nf:]


def compute_residual(mesh: Mesh, problem: WaveProblem, solution: Solution,
                     fields=None, traces=None, _groups_cache=None):
    """Element residual norms eta_K and the total ||psi||_V.

    ``fields`` / ``traces`` override the solution coefficients, so the
    residual of any trial function can be evaluated.
    """
    dofmap = solution.dofmap
    if _groups_cache is None:
        groups = _groups(mesh, problem, dofmap)
        loads = _whitened_loads(mesh, problem, dofmap, groups)
    else:
        groups, loads = _groups_cache
    u_all = solution.fields if fields is None else fields
    t_all = solution.traces if traces is None else traces
    pos = {eid: i for i, eid in enumerate(dofmap.elements)}
    eta = np.zeros(len(dofmap.elements))
    for key, eids in groups.items():
        op = local_operator(key)
        nfl = op.Wf.shape[1]
        for eid in eids:
            off = dofmap.field_offsets[eid]
            tl = dofmap.elem_map[eid] @ t_all[dofmap.elem_cols[eid]]
            r = op.Wf @ u_all[off:off + nfl] + op.Wt @ tl
            w = loads.get(eid)
            if w is not None:
                r = w - r
            eta[pos[eid]] = np.linalg.norm(r)
    return eta, float(np.sqrt(np.sum(eta**2)))


def residual_vector(mesh, problem, solution, fields=None, traces=None):
    """Riesz representer psi_K of the residual for every element, keyed by id."""
    dofmap = solution.dofmap
    groups = _groups(mesh, problem, dofmap)
    loads = _whitened_loads(mesh, problem, dofmap, groups)
    u_all = solution.fields if fields is None else fields
    t_all = solution.traces if traces is None else traces
    out = {}
    for key, eids in groups.items():
        op = local_operator(key)
        nfl = op.Wf.shape[1]
        for eid in eids:
            off = dofmap.field_offsets[eid]
            tl = dofmap.elem_map[eid] @ t_all[dofmap.elem_cols[eid]]
            r = loads.get(eid, 0.0) - (op.Wf @ u_all[off:off + nfl] + op.Wt @ tl)
            # G psi = l - B u  <=>  L^H psi = L^{-1}(l - B u)
            out[eid] = sla.solve_triangular(op.chol, r, lower=True, trans="C")
    return out


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------

@dataclass
class StabilityReport:
    gamma_h: float
    M: float
    mesh_id: int
    n_dofs: int


MAX_DENSE = 2000


def _field_mass(mesh, dofmap):
    diag = np.zeros(dofmap.n_field)
    for eid in dofmap.elements:
        ox, oz = dofmap.field_orders[eid]
        off = dofmap.field_offsets[eid]
        wz = 1.0 / (2 * np.arange(oz + 1) + 1)
        if mesh.dim == 1:
            m = np.tile(wz, 2)
        else:
            wx = 1.0 / (2 * np.arange(ox + 1) + 1)
            m = np.tile(np.outer(wx, wz).ravel(), 3)
        diag[off:off + len(m)] = m * mesh.measure(eid)
    return diag


def estimate_infsup(mesh: Mesh, problem: WaveProblem) -> StabilityReport:
    """Extreme generalized singular values of the discrete DPG operator.

    Traces are minimized out, leaving the field block; its eigenvalues
    relative to the field L2 mass give gamma_h^2 (smallest) and M^2
    (largest). Boundary data is ignored: prescribed traces are held at zero.
    """
    dofmap = _dofmap_for(mesh, problem)
    if dofmap.n_total > MAX_DENSE:
        raise ValueError(f"estimate_infsup is limited to {MAX_DENSE} dofs, got {dofmap.n_total}")
    groups = _groups(mesh, problem, dofmap)
    nf = dofmap.n_field
    free = np.nonzero(~dofmap.fixed)[0]
    n = nf + dofmap.n_trace
    K = np.zeros((n, n), dtype=complex)
    for key, eids in groups.items():
        op = local_operator(key)
        for eid in eids:
            W = np.hstack([op.Wf, op.Wt @ dofmap.elem_map[eid]])
            off = dofmap.field_offsets[eid]
            idx = np.concatenate([np.arange(off, off + op.Wf.shape[1]),
                                  nf + dofmap.elem_cols[eid]])
            K[np.ix_(idx, idx)] += W.conj().T @ W
    f = np.arange(nf)
    t = nf + free
    Kff = K[np.ix_(f, f)]
    if len(t):
        Kft = K[np.ix_(f, t)]
        Ktt = K[np.ix_(t, t)]
        S = Kff - Kft @ np.linalg.solve(Ktt, Kft.conj().T)
    else:
        S = Kff
    S = 0.5 * (S + S.conj().T)
    m = _field_mass(mesh, dofmap)
    s = 1.0 / np.sqrt(m)
    lam = np.linalg.eigvalsh(S * np.outer(s, s))
    lam = np.clip(lam, 0.0, None)
    return StabilityReport(float(np.sqrt(lam[0])), float(np.sqrt(lam[-1])), mesh.uid,
                           dofmap.n_total)
