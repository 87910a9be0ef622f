"""Polynomial bases, quadrature and the global trace numbering.

Trial fields are discontinuous tensor Legendre polynomials. Test functions
are broken tensor polynomials in the hierarchical integrated-Legendre basis.
The skeleton carries two trace unknowns: a continuous scalar trace (vertex
values plus edge bubbles) and a facet-wise discontinuous normal-flux trace
(Legendre coefficients).

Each element sees its traces through a local layout: sides in the order
``x-low, x-high, z-low, z-high`` (1D: ``z-low, z-high``), and per side the
scalar block followed by the flux block. ``DofMap.elem_map[eid]`` converts
global trace values into that local layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .mesh import Mesh, MeshError

SPACE_TAGS = ("trial_field", "test_scalar", "test_flux", "trace_scalar", "trace_flux")

# trace unknown kinds
VERTEX, BUBBLE, FLUX = 0, 1, 2


@lru_cache(maxsize=None)
def gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def quad_points(order: int, dp: int = 1) -> int:
    # exact for degree 2(p + dp) + 2 per direction
    return order + dp + 2


def legendre(t, n):
    return _kernels.legendre_table(t, n)


def integrated_legendre(t, n):
    return _kernels.integrated_legendre_table(t, n)


def element_dof_counts(p: int, dp: int = 1, dim: int = 2) -> tuple[int, int, int]:
    """(trial field, test, trace per facet) counts for one element.

    1D: fields (u, p) of order p, tests (v, q) of order p + dp, and one value
    of each trace per facet point. 2D: three field components, three test
    components, and p + 1 coefficients of each trace per facet.
    """
    if p < 1 or dp < 1:
        raise ValueError("p and dp must be >= 1")
    r = p + dp
    if dim == 1:
        return 2 * (p + 1), 2 * (r + 1), 2
    if dim == 2:
        return 3 * (p + 1) ** 2, 3 * (r + 1) ** 2, 2 * (p + 1)
    raise ValueError("dim must be 1 or 2")


@dataclass
class BasisTable:
    element: int
    space: str
    order: int
    points: np.ndarray       # physical quadrature points, (nq, dim) or (nq,) on a side
    weights: np.ndarray      # physical weights
    values: np.ndarray       # (nq, nbasis)
    dx: np.ndarray | None    # physical derivatives, None where not defined
    dz: np.ndarray | None


def _tensor(vx, dxv, vz, dzv):
    """Tensor product tables, basis index i * nz + j for x-factor i, z-factor j."""
    nqx, nx = vx.shape
    nqz, nz = vz.shape
    val = np.einsum("ai,bj->abij", vx, vz).reshape(nqx * nqz, nx * nz)
    ddx = np.einsum("ai,bj->abij", dxv, vz).reshape(nqx * nqz, nx * nz)
    ddz = np.einsum("ai,bj->abij", vx, dzv).reshape(nqx * nqz, nx * nz)
    return val, ddx, ddz


def reference_tables(space: str, order, nq: int, dim: int):
    """Values and reference derivatives at the tensor Gauss points of [0,1]^dim.

    ``order`` may be an int or an ``(order_x, order_z)`` pair for the trial
    field. Points are ordered with x slowest.
    """
    if space not in SPACE_TAGS:
        raise ValueError(f"unsupported space tag {space!r}")
    ox, oz = (order, order) if np.isscalar(order) else order
    t, _ = gauss(nq)
    if space == "trial_field":
        fx, dfx = legendre(t, ox) if ox >= 0 else (np.ones((nq, 1)), np.zeros((nq, 1)))
        fz, dfz = legendre(t, oz)
    elif space in ("test_scalar", "test_flux"):
        fx, dfx = integrated_legendre(t, max(ox, 1))
        fz, dfz = integrated_legendre(t, max(oz, 1))
    elif space == "trace_scalar":
        v, d = integrated_legendre(t, max(oz, 1))
        return v, d, None
    else:
        v, d = legendre(t, oz)
        return v, d, None
    if dim == 1:
        return fz, None, dfz
    return _tensor(fx, dfx, fz, dfz)


def tabulate_basis(mesh: Mesh, eid: int, space: str, order, nq: int | None = None) -> BasisTable:
    """Basis values and physical first derivatives at the element quadrature points."""
    if space not in SPACE_TAGS:
        raise ValueError(f"unsupported space tag {space!r}")
    if np.isscalar(order) and order < 0:
        raise ValueError("order must be non-negative")
    if nq is None:
        nq = (order if np.isscalar(order) else max(order)) + 3
    x0, x1, z0, z1 = mesh.box(eid)
    hx, hz = x1 - x0, z1 - z0
    t, w = gauss(nq)
    if space in ("trace_scalar", "trace_flux"):
        v, d, _ = reference_tables(space, order, nq, mesh.dim)
        return BasisTable(eid, space, order, z0 + hz * t, hz * w, v, None, d / hz)
    v, dx, dz = reference_tables(space, order, nq, mesh.dim)
    if mesh.dim == 1:
        return BasisTable(eid, space, order, z0 + hz * t, hz * w, v, None, dz / hz)
    X, Z = np.meshgrid(x0 + hx * t, z0 + hz * t, indexing="ij")
    W = np.outer(hx * w, hz * w).ravel()
    pts = np.column_stack([X.ravel(), Z.ravel()])
    return BasisTable(eid, space, order, pts, W, v, dx / hx, dz / hz)


# ---------------------------------------------------------------------------
# 1D change-of-basis helpers on a facet parameter s in [0, 1]
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def restriction_matrix(kind: str, p: int, half: int) -> np.ndarray:
    """C with local_half = C @ local_full for a polynomial of order p.

    ``half`` 0 covers s in [0, 1/2], 1 covers [1/2, 1].
    """
    t = np.linspace(0.0, 1.0, 2 * p + 3)
    s = 0.5 * (t + half)
    f = integrated_legendre if kind == "scalar" else legendre
    full, _ = f(s, p)
    loc, _ = f(t, p)
    c, *_ = np.linalg.lstsq(loc, full, rcond=None)
    c[np.abs(c) < 1e-15] = 0.0
    return c


@lru_cache(maxsize=None)
def scalar_to_flux_matrix(p: int) -> np.ndarray:
    """Legendre coefficients of a polynomial given in the integrated basis."""
    t = np.linspace(0.0, 1.0, 2 * p + 3)
    il, _ = integrated_legendre(t, p)
    lg, _ = legendre(t, p)
    c, *_ = np.linalg.lstsq(lg, il, rcond=None)
    c[np.abs(c) < 1e-15] = 0.0
    return c


# ---------------------------------------------------------------------------
# Global trace numbering
# ---------------------------------------------------------------------------

@dataclass
class Segment:
    """A maximal piece of element boundary carrying one trace polynomial."""

    key: tuple
    normal: str
    line: int
    span: tuple[int, int]
    tag: str
    coarse: bool = False           # split into two facets by a hanging node
    scalar: list = field(default_factory=list)   # local scalar coeffs (dicts)
    flux: list = field(default_factory=list)     # local flux coeffs (dicts)


@dataclass
class DofMap:
    dim: int
    p: int
    elements: list[int]
    field_orders: dict[int, tuple[int, int]]
    field_offsets: dict[int, int]
    n_field: int
    n_trace: int
    kind: np.ndarray                 # VERTEX / BUBBLE / FLUX per trace dof
    position: np.ndarray             # (n_trace, 2) x, z location
    fixed: np.ndarray                # value prescribed by a boundary condition
    dirichlet: np.ndarray            # fixed scalar trace on the input boundary
    elem_cols: dict[int, np.ndarray]
    elem_map: dict[int, np.ndarray]  # (n_local_trace, len(cols))
    fixed_owner: dict[int, tuple]    # dof -> (segment, kind, local index)
    segments: list[Segment]
    hanging_nodes: list[tuple[int, int]]
    bc_kinds: dict[str, str]

    @property
    def n_total(self) -> int:
        return self.n_field + self.n_trace

    def field_count(self, eid: int) -> int:
        ox, oz = self.field_orders[eid]
        if self.dim == 1:
            return 2 * (oz + 1)
        return 3 * (ox + 1) * (oz + 1)

    @property
    def n_local_trace(self) -> int:
        return 4 if self.dim == 1 else 8 * (self.p + 1)

    def touching(self) -> list[np.ndarray]:
        """For every trace dof, the active elements whose local traces use it."""
        owners: list[list[int]] = [[] for _ in range(self.n_trace)]
        for eid in self.elements:
            for c in self.elem_cols[eid]:
                owners[c].append(eid)
        return [np.asarray(o, dtype=np.int64) for o in owners]

    def fixed_values(self, mesh: Mesh, data: dict) -> np.ndarray:
        """Values of the prescribed trace dofs.

        ``data[tag]`` is a callable ``g(x, z)`` giving the scalar trace on
        Dirichlet boundaries, or the normal flux on flux boundaries.
        """
        vals = np.zeros(self.n_trace, dtype=complex)
        cache = {}
        for dof, (seg, kind, loc) in self.fixed_owner.items():
            g = data.get(seg.tag)
            if g is None:
                continue
            if kind == VERTEX:
                x, z = self.position[dof]
                vals[dof] = g(np.array([x]), np.array([z]))[0]
                continue
            key = (seg.key, kind)
            if key not in cache:
                cache[key] = _project_on_segment(mesh, seg, g, self.p, kind)
            vals[dof] = cache[key][loc]
        return vals


def _segment_points(mesh: Mesh, seg: Segment, s):
    a, b = seg.span
    if seg.normal == "x":
        z = mesh.z_of(np.array([a, b]))
        zz = z[0] + (z[1] - z[0]) * s
        xx = np.full_like(zz, float(mesh.x_of(seg.line)))
        return xx, zz, z[1] - z[0]
    x = mesh.x_of(np.array([a, b]))
    xx = x[0] + (x[1] - x[0]) * s
    zz = np.full_like(xx, float(mesh.z_of(seg.line)))
    return xx, zz, x[1] - x[0]


def _project_on_segment(mesh, seg, g, p, kind):
    if mesh.dim == 1:
        z = float(mesh.z_of(seg.line))
        return np.array([g(np.array([0.0]), np.array([z]))[0]])
    t, w = gauss(p + 6)
    xx, zz, _ = _segment_points(mesh, seg, t)
    vals = np.asarray(g(xx, zz), dtype=complex)
    if kind == FLUX:
        lg, _ = legendre(t, p)
        norms = 1.0 / (2 * np.arange(p + 1) + 1)
        return (lg * w[:, None]).T @ vals / norms
    # scalar: interpolate ends, L2-project the rest onto the bubbles
    il, _ = integrated_legendre(t, p)
    e0, e1 = g(*_segment_points(mesh, seg, np.array([0.0, 1.0]))[:2])
    rest = vals - e0 * il[:, 0] - e1 * il[:, 1]
    out = np.zeros(p + 1, dtype=complex)
    out[0], out[1] = e0, e1
    if p >= 2:
        bub = il[:, 2:]
        m = (bub * w[:, None]).T @ bub
        out[2:] = np.linalg.solve(m, (bub * w[:, None]).T @ rest)
    return out


def _lin(coeffs, exprs):
    """sum_k coeffs[k] * exprs[k] for sparse dict expressions."""
    out: dict[int, complex] = {}
    for c, ex in zip(coeffs, exprs):
        if c == 0.0:
            continue
        for k, v in ex.items():
            out[k] = out.get(k, 0.0) + c * v
    return out


def _element_sides(e):
    """(normal, line, span, outward sign) for the four sides, in local order."""
    (x0, x1), (z0, z1) = e.ix, e.iz
    return [("x", x0, (z0, z1), -1), ("x", x1, (z0, z1), 1),
            ("z", z0, (x0, x1), -1), ("z", z1, (x0, x1), 1)]


# With no boundary conditions given, every boundary trace stays a free unknown.
DEFAULT_BC_KINDS: dict[str, str] = {}


def build_dof_map(mesh: Mesh, p: int | None = None, bc_kinds: dict | None = None,
                  impedance: dict | None = None, order_z: int | None = None) -> DofMap:
    """Number field and trace unknowns on a closed mesh.

    ``bc_kinds[tag]`` is ``dirichlet`` (scalar trace prescribed), ``flux``
    (normal flux prescribed) or ``impedance`` (flux eliminated as
    scalar / Z with ``Z = impedance[tag]``).
    """
    if not mesh.is_one_irregular():
        raise MeshError("mesh is not 1-irregular; close it first")
    p = mesh.p if p is None else p
    kinds = dict(DEFAULT_BC_KINDS)
    kinds.update(bc_kinds or {})
    imp = {"output": 1.0}
    imp.update(impedance or {})
    active = list(mesh.active)

    field_orders = {}
    offsets = {}
    n_field = 0
    for eid in active:
        pe = mesh.elements[eid].p
        field_orders[eid] = (pe, pe if order_z is None else order_z)
        offsets[eid] = n_field
        ox, oz = field_orders[eid]
        n_field += 2 * (oz + 1) if mesh.dim == 1 else 3 * (ox + 1) * (oz + 1)

    if mesh.dim == 1:
        return _build_1d(mesh, active, field_orders, offsets, n_field, kinds, imp)
    return _build_2d(mesh, active, p, field_orders, offsets, n_field, kinds, imp)


def _finish(mesh, p, active, field_orders, offsets, n_field, kinds, dof_kind, dof_pos,
            dof_fixed, dof_dir, fixed_owner, elem_rows, segments, hanging):
    """Renumber trace dofs along z and pack the element maps."""
    n = len(dof_kind)
    pos = np.asarray(dof_pos, dtype=float).reshape(n, 2)
    order = np.lexsort((np.asarray(dof_kind), pos[:, 0], pos[:, 1]))
    new = np.empty(n, dtype=np.int64)
    new[order] = np.arange(n)
    elem_cols, elem_map = {}, {}
    for eid in active:
        rows = elem_rows[eid]
        cols = sorted({new[k] for r in rows for k in r})
        idx = {c: j for j, c in enumerate(cols)}
        m = np.zeros((len(rows), len(cols)), dtype=complex)
        for i, r in enumerate(rows):
            for k, v in r.items():
                m[i, idx[new[k]]] += v
        elem_cols[eid] = np.asarray(cols, dtype=np.int64)
        elem_map[eid] = m
    owners = {int(new[k]): v for k, v in fixed_owner.items()}
    return DofMap(
        dim=mesh.dim, p=p, elements=active, field_orders=field_orders,
        field_offsets=offsets, n_field=n_field, n_trace=n,
        kind=np.asarray(dof_kind, dtype=np.int64)[order], position=pos[order],
        fixed=np.asarray(dof_fixed, dtype=bool)[order],
        dirichlet=np.asarray(dof_dir, dtype=bool)[order],
        elem_cols=elem_cols, elem_map=elem_map, fixed_owner=owners,
        segments=segments, hanging_nodes=hanging, bc_kinds=kinds)


def _build_1d(mesh, active, field_orders, offsets, n_field, kinds, imp):
    dof_kind, dof_pos, dof_fixed, dof_dir = [], [], [], []
    fixed_owner = {}
    segments = []
    node_seg = {}
    for f in mesh.facets:
        kind = kinds.get(f.tag) if f.boundary else None
        seg = Segment(("z", f.line), "z", f.line, (0, 0), f.tag)
        z = float(mesh.z_of(f.line))
        s = len(dof_kind)
        dof_kind.append(VERTEX)
        dof_pos.append((0.0, z))
        dof_fixed.append(kind == "dirichlet")
        dof_dir.append(kind == "dirichlet" and f.tag == "input")
        if kind == "dirichlet":
            fixed_owner[s] = (seg, VERTEX, 0)
        seg.scalar = [{s: 1.0}]
        if kind == "impedance":
            sign = 1.0 if f.tag == "output" else -1.0
            seg.flux = [{s: sign / imp[f.tag]}]
        else:
            u = len(dof_kind)
            dof_kind.append(FLUX)
            dof_pos.append((0.0, z))
            dof_fixed.append(kind == "flux")
            dof_dir.append(False)
            if kind == "flux":
                fixed_owner[u] = (seg, FLUX, 0)
            seg.flux = [{u: 1.0}]
        segments.append(seg)
        node_seg[f.line] = seg
    elem_rows = {}
    for eid in active:
        z0, z1 = mesh.elements[eid].iz
        rows = []
        for line in (z0, z1):
            seg = node_seg[line]
            rows += [seg.scalar[0], seg.flux[0]]
        elem_rows[eid] = rows
    return _finish(mesh, 0, active, field_orders, offsets, n_field, kinds, dof_kind,
                   dof_pos, dof_fixed, dof_dir, fixed_owner, elem_rows, segments, [])


def _build_2d(mesh, active, p, field_orders, offsets, n_field, kinds, imp):
    # map each element side to the facets it touches
    side_facets: dict[tuple, list] = {}
    for f in mesh.facets:
        for eid in f.element_ids():
            e = mesh.elements[eid]
            span = e.iz if f.normal == "x" else e.ix
            lst = side_facets.setdefault((f.normal, f.line, span[0], span[1]), [])
            if f not in lst:
                lst.append(f)

    def side_key(eid, f):
        e = mesh.elements[eid]
        span = e.iz if f.normal == "x" else e.ix
        return (f.normal, f.line, span[0], span[1])

    # classify sides: master segments and slave halves
    masters: dict[tuple, Segment] = {}
    slave_of: dict[tuple, tuple] = {}
    for key, fs in side_facets.items():
        normal, line, a, b = key
        if len(fs) == 2:
            masters[key] = Segment(key, normal, line, (a, b), "interior", coarse=True)
            continue
        if len(fs) != 1:
            raise MeshError("element side touches more than two facets")
        f = fs[0]
        if f.boundary:
            masters[key] = Segment(key, normal, line, (a, b), f.tag)
            continue
        if f.span != (a, b):
            raise MeshError("facet does not match an element side")
        keys = {side_key(eid, f) for eid in f.element_ids()}
        big = max(keys, key=lambda k: k[3] - k[2])
        if big[3] - big[2] > b - a:
            slave_of[key] = (big, 0 if a == big[2] else 1)
        else:
            masters[key] = Segment(key, normal, line, (a, b), "interior")
    for key, (big, _) in slave_of.items():
        if big not in masters:
            masters[big] = Segment(big, key[0], key[1], (big[2], big[3]), "interior",
                                   coarse=True)

    def node_of(seg, end):
        a, b = seg.span
        t = a if end == 0 else b
        return (seg.line, t) if seg.normal == "x" else (t, seg.line)

    hanging = {}
    for seg in masters.values():
        if seg.coarse:
            a, b = seg.span
            m = (a + b) // 2
            node = (seg.line, m) if seg.normal == "x" else (m, seg.line)
            hanging[node] = seg

    dof_kind, dof_pos, dof_fixed, dof_dir = [], [], [], []
    fixed_owner = {}

    def new_dof(kind, x, z, fixed, is_dir, owner=None):
        k = len(dof_kind)
        dof_kind.append(kind)
        dof_pos.append((x, z))
        dof_fixed.append(fixed)
        dof_dir.append(is_dir)
        if fixed:
            fixed_owner[k] = owner
        return k

    # vertex dofs: prescribed if any touching segment is Dirichlet
    node_bc: dict[tuple, Segment] = {}
    nodes = set()
    for seg in sorted(masters.values(), key=lambda s: s.key):
        for end in (0, 1):
            nd = node_of(seg, end)
            nodes.add(nd)
            if kinds.get(seg.tag) == "dirichlet":
                prev = node_bc.get(nd)
                if prev is None or (prev.tag != "input" and seg.tag == "input"):
                    node_bc[nd] = seg
    vertex = {}
    for nd in sorted(nodes, key=lambda n: (n[1], n[0])):
        if nd in hanging:
            continue
        seg = node_bc.get(nd)
        x, z = float(mesh.x_of(nd[0])), float(mesh.z_of(nd[1]))
        vertex[nd] = new_dof(VERTEX, x, z, seg is not None,
                             seg is not None and seg.tag == "input",
                             (seg, VERTEX, 0) if seg is not None else None)

    # bubbles and fluxes per master segment
    bubbles = {}
    for key in sorted(masters, key=lambda k: (k[1], k[2]) if k[0] == "z" else (k[2], k[1])):
        seg = masters[key]
        kind = kinds.get(seg.tag) if seg.tag != "interior" else None
        xs_, zs_, _ = _segment_points(mesh, seg, np.array([0.5]))
        x, z = float(xs_[0]), float(zs_[0])
        bubbles[key] = [new_dof(BUBBLE, x, z, kind == "dirichlet",
                                kind == "dirichlet" and seg.tag == "input",
                                (seg, BUBBLE, j + 2)) for j in range(p - 1)]
        if kind == "impedance":
            seg.flux = None
        else:
            seg.flux = [{new_dof(FLUX, x, z, kind == "flux", False, (seg, FLUX, j)): 1.0}
                        for j in range(p + 1)]

    # node expressions, resolving hanging nodes recursively
    expr_cache: dict[tuple, dict] = {}
    mid = integrated_legendre(np.array([0.5]), p)[0][0]

    def node_expr(nd, stack=()):
        if nd in expr_cache:
            return expr_cache[nd]
        if nd in vertex:
            ex = {vertex[nd]: 1.0}
        else:
            if nd in stack:
                raise MeshError("cyclic hanging-node constraints")
            seg = hanging[nd]
            parts = [node_expr(node_of(seg, 0), stack + (nd,)),
                     node_expr(node_of(seg, 1), stack + (nd,))]
            parts += [{b: 1.0} for b in bubbles[seg.key]]
            ex = _lin(mid, parts)
        expr_cache[nd] = ex
        return ex

    t2f = scalar_to_flux_matrix(p)
    for seg in masters.values():
        seg.scalar = [node_expr(node_of(seg, 0)), node_expr(node_of(seg, 1))]
        seg.scalar += [{b: 1.0} for b in bubbles[seg.key]]
        if seg.flux is None:
            # flux = scalar / Z measured along the outward normal
            end = (mesh.n_columns if seg.normal == "z" else mesh.n_layers) * (1 << 30)
            sign = 1.0 if seg.line == end else -1.0
            z_imp = imp[seg.tag]
            seg.flux = [_lin(t2f[j] * sign / z_imp, seg.scalar) for j in range(p + 1)]

    rs = [restriction_matrix("scalar", p, h) for h in (0, 1)]
    rf = [restriction_matrix("flux", p, h) for h in (0, 1)]
    elem_rows = {}
    for eid in active:
        rows = []
        for normal, line, span, _ in _element_sides(mesh.elements[eid]):
            key = (normal, line, span[0], span[1])
            if key in masters:
                seg = masters[key]
                rows += seg.scalar + seg.flux
            else:
                big, half = slave_of[key]
                seg = masters[big]
                rows += [_lin(rs[half][j], seg.scalar) for j in range(p + 1)]
                rows += [_lin(rf[half][j], seg.flux) for j in range(p + 1)]
        elem_rows[eid] = rows

    segs = sorted(masters.values(), key=lambda s: s.key)
    hang = sorted(hanging)
    return _finish(mesh, p, active, field_orders, offsets, n_field, kinds, dof_kind,
                   dof_pos, dof_fixed, dof_dir, fixed_owner, elem_rows, segs, hang)
