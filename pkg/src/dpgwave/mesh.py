"""Adaptive axis-aligned meshes for waveguide domains.

Elements live on a tensor grid of base cells (columns along the propagation
axis ``z``, transverse layers along ``x``) and are refined by dyadic splits.
Positions are kept as integer ticks so that neighbour and hanging-node
queries are exact; ``TICKS`` ticks span one base cell.
"""

from __future__ import annotations

import copy
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

TICKS = 1 << 30

FIBER_LABELS = ("core_inner", "core_outer", "cladding_inner", "cladding_outer")
REFINE_MODES = ("iso", "aniso_z", "aniso_x")
BOUNDARY_TAGS = ("input", "output", "wall", "axis")

_mesh_ids = itertools.count()


class MeshError(ValueError):
    pass


@dataclass
class Element:
    id: int
    ix: tuple[int, int]
    iz: tuple[int, int]
    level: tuple[int, int]
    p: int
    label: str = "bulk"
    parent: int | None = None
    children: tuple[int, ...] = ()
    split: str | None = None
    active: bool = True


@dataclass(frozen=True)
class Facet:
    """A piece of the skeleton separating at most two active elements.

    ``normal`` is the coordinate axis the facet is orthogonal to, ``line`` its
    tick position on that axis and ``span`` its tick extent along the other
    axis. ``elements`` holds the element below and above the facet (``None``
    on the boundary).
    """

    id: int
    normal: str
    line: int
    span: tuple[int, int]
    elements: tuple[int | None, int | None]
    tag: str = "interior"

    @property
    def boundary(self) -> bool:
        return self.tag != "interior"

    def element_ids(self) -> list[int]:
        return [e for e in self.elements if e is not None]


@dataclass
class MarkSet:
    modes: dict[int, str] = field(default_factory=dict)

    @classmethod
    def uniform(cls, ids, mode: str = "iso") -> "MarkSet":
        return cls({int(i): mode for i in ids})

    def __len__(self):
        return len(self.modes)

    def __contains__(self, eid):
        return eid in self.modes

    @property
    def ids(self) -> list[int]:
        return sorted(self.modes)


class Mesh:
    def __init__(self, dim, xs, zs, elements, symmetry_axis=False):
        if dim not in (1, 2):
            raise MeshError(f"dim must be 1 or 2, got {dim}")
        self.dim = dim
        self.xs = np.asarray(xs, dtype=float)
        self.zs = np.asarray(zs, dtype=float)
        self.elements: list[Element] = list(elements)
        self.symmetry_axis = symmetry_axis
        self.closure_refined: list[int] = []
        self.uid = next(_mesh_ids)
        self._cache = {}

    # -- geometry ---------------------------------------------------------

    @property
    def width(self) -> float:
        return float(self.xs[-1] - self.xs[0])

    @property
    def length(self) -> float:
        return float(self.zs[-1] - self.zs[0])

    @property
    def n_columns(self) -> int:
        return len(self.zs) - 1

    @property
    def n_layers(self) -> int:
        return len(self.xs) - 1 if self.dim == 2 else 0

    def x_of(self, ticks):
        return _tick_to_phys(ticks, self.xs)

    def z_of(self, ticks):
        return _tick_to_phys(ticks, self.zs)

    def box(self, eid: int) -> tuple[float, float, float, float]:
        e = self.elements[eid]
        x0, x1 = self.x_of(np.array(e.ix))
        z0, z1 = self.z_of(np.array(e.iz))
        return float(x0), float(x1), float(z0), float(z1)

    def measure(self, eid: int) -> float:
        x0, x1, z0, z1 = self.box(eid)
        if self.dim == 1:
            return z1 - z0
        return (x1 - x0) * (z1 - z0)

    def domain_measure(self) -> float:
        return self.length if self.dim == 1 else self.length * self.width

    @property
    def active(self) -> list[int]:
        if "active" not in self._cache:
            self._cache["active"] = [e.id for e in self.elements if e.active]
        return self._cache["active"]

    def boxes(self) -> np.ndarray:
        """(n_active, 4) array of [x0, x1, z0, z1] in ``active`` order."""
        if "boxes" not in self._cache:
            ix = np.array([self.elements[i].ix for i in self.active], dtype=np.int64)
            iz = np.array([self.elements[i].iz for i in self.active], dtype=np.int64)
            self._cache["boxes"] = np.column_stack(
                [self.x_of(ix[:, 0]), self.x_of(ix[:, 1]),
                 self.z_of(iz[:, 0]), self.z_of(iz[:, 1])])
        return self._cache["boxes"]

    @property
    def p(self) -> int:
        return max(self.elements[i].p for i in self.active)

    def label_of(self, eid: int) -> str:
        return self.elements[eid].label

    @property
    def labels(self) -> list[str]:
        seen = []
        for e in self.elements:
            if e.label not in seen:
                seen.append(e.label)
        return seen

    def elements_at_z(self, z: float) -> list[int]:
        """Active elements whose closed z-range contains ``z`` (one per cut piece)."""
        if not (self.zs[0] - 1e-12 <= z <= self.zs[-1] + 1e-12):
            raise MeshError(f"z={z} outside the domain [{self.zs[0]}, {self.zs[-1]}]")
        b = self.boxes()
        act = np.asarray(self.active)
        if z >= self.zs[-1]:
            sel = np.isclose(b[:, 3], self.zs[-1])
        else:
            sel = (b[:, 2] <= z) & (z < b[:, 3])
        return [int(i) for i in act[sel]]

    def ancestor_in(self, eid: int, ids) -> int | None:
        """Closest ancestor of ``eid`` (itself included) that is in ``ids``."""
        cur = eid
        while cur is not None:
            if cur in ids:
                return cur
            cur = self.elements[cur].parent
        return None

    def _invalidate(self):
        self._cache = {}
        self.uid = next(_mesh_ids)

    def copy(self) -> "Mesh":
        new = copy.deepcopy(self)
        new._invalidate()
        new.closure_refined = []
        return new

    # -- skeleton ---------------------------------------------------------

    @property
    def facets(self) -> list[Facet]:
        if "facets" not in self._cache:
            self._cache["facets"] = self._build_facets()
        return self._cache["facets"]

    def _boundary_tag(self, normal: str, line: int) -> str:
        if normal == "z":
            return "input" if line == 0 else "output"
        if line == 0 and self.symmetry_axis:
            return "axis"
        return "wall"

    def _build_facets(self) -> list[Facet]:
        zmax = self.n_columns * TICKS
        xmax = max(self.n_layers, 1) * TICKS
        out: list[Facet] = []
        if self.dim == 1:
            nodes: dict[int, list] = {}
            for eid in self.active:
                z0, z1 = self.elements[eid].iz
                nodes.setdefault(z0, [None, None])[1] = eid
                nodes.setdefault(z1, [None, None])[0] = eid
            for line in sorted(nodes):
                lo, hi = nodes[line]
                tag = "interior" if lo is not None and hi is not None else (
                    "input" if line == 0 else "output")
                out.append(Facet(len(out), "z", line, (0, TICKS), (lo, hi), tag))
            return out

        # group element sides by line: sides[(normal, line)] = (lo_list, hi_list)
        sides: dict[tuple[str, int], tuple[list, list]] = {}
        for eid in self.active:
            e = self.elements[eid]
            (x0, x1), (z0, z1) = e.ix, e.iz
            sides.setdefault(("x", x1), ([], []))[0].append((z0, z1, eid))
            sides.setdefault(("x", x0), ([], []))[1].append((z0, z1, eid))
            sides.setdefault(("z", z1), ([], []))[0].append((x0, x1, eid))
            sides.setdefault(("z", z0), ([], []))[1].append((x0, x1, eid))
        for (normal, line) in sorted(sides, key=lambda k: (k[1], k[0])):
            lo, hi = sides[(normal, line)]
            for a, b, elo, ehi in _sweep(sorted(lo), sorted(hi)):
                if elo is not None and ehi is not None:
                    tag = "interior"
                else:
                    end = zmax if normal == "z" else xmax
                    if line not in (0, end):
                        raise MeshError("mesh has a gap or overlap")
                    tag = self._boundary_tag(normal, line)
                out.append(Facet(len(out), normal, line, (a, b), (elo, ehi), tag))
        out.sort(key=lambda f: (self._facet_key(f)))
        return [Facet(i, f.normal, f.line, f.span, f.elements, f.tag) for i, f in enumerate(out)]

    def _facet_key(self, f: Facet):
        if f.normal == "z":
            return (f.line, 0, f.span[0])
        return (f.span[0], 1, f.line)

    def side_length(self, eid: int, normal: str) -> int:
        """Tick length of the element sides orthogonal to ``normal``."""
        e = self.elements[eid]
        a, b = e.iz if normal == "x" else e.ix
        return b - a

    def irregular_pairs(self) -> list[tuple[int, str]]:
        """Elements that must be split (and how) to restore 1-irregularity."""
        if self.dim == 1:
            return []
        need: dict[int, set] = {}
        for f in self.facets:
            if f.boundary:
                continue
            lo, hi = f.elements
            llo = self.side_length(lo, f.normal)
            lhi = self.side_length(hi, f.normal)
            axis = "aniso_z" if f.normal == "x" else "aniso_x"
            if llo >= 4 * lhi:
                need.setdefault(lo, set()).add(axis)
            elif lhi >= 4 * llo:
                need.setdefault(hi, set()).add(axis)
        out = []
        for eid in sorted(need):
            modes = need[eid]
            out.append((eid, "iso" if len(modes) > 1 else modes.pop()))
        return out

    def is_one_irregular(self) -> bool:
        return not self.irregular_pairs()

    # -- mutation (in place; public API returns copies) ---------------------

    def _split(self, eid: int, mode: str) -> list[int]:
        e = self.elements[eid]
        if not e.active:
            raise MeshError(f"element {eid} is not active")
        if self.dim == 1:
            mode = "aniso_z"
        if mode not in REFINE_MODES:
            raise MeshError(f"unknown refinement mode {mode!r}")
        (x0, x1), (z0, z1) = e.ix, e.iz
        lx, lz = e.level
        if (mode in ("iso", "aniso_x") and (x1 - x0) < 2) or (
                mode in ("iso", "aniso_z") and (z1 - z0) < 2):
            raise MeshError("maximum refinement depth reached")
        xm, zm = (x0 + x1) // 2, (z0 + z1) // 2
        if mode == "iso":
            boxes = [((x0, xm), (z0, zm)), ((xm, x1), (z0, zm)),
                     ((x0, xm), (zm, z1)), ((xm, x1), (zm, z1))]
            lev = (lx + 1, lz + 1)
        elif mode == "aniso_z":
            boxes = [((x0, x1), (z0, zm)), ((x0, x1), (zm, z1))]
            lev = (lx, lz + 1)
        else:
            boxes = [((x0, xm), (z0, z1)), ((xm, x1), (z0, z1))]
            lev = (lx + 1, lz)
        kids = []
        for bx, bz in boxes:
            cid = len(self.elements)
            self.elements.append(Element(cid, bx, bz, lev, e.p, e.label, parent=eid))
            kids.append(cid)
        e.children = tuple(kids)
        e.split = mode
        e.active = False
        self._invalidate()
        return kids

    def _close(self) -> list[int]:
        refined = []
        while True:
            todo = self.irregular_pairs()
            if not todo:
                return refined
            for eid, mode in todo:
                self._split(eid, mode)
                refined.append(eid)

    # -- export -----------------------------------------------------------

    def to_dict(self) -> dict:
        elems = []
        for eid, b in zip(self.active, self.boxes()):
            e = self.elements[eid]
            box = [b[2], b[3]] if self.dim == 1 else list(b)
            elems.append({"id": eid, "box": [float(v) for v in box],
                          "level": list(e.level) if self.dim == 2 else e.level[1],
                          "label": e.label, "p": e.p})
        facets = []
        for f in self.facets:
            if f.normal == "z":
                coord = float(self.z_of(f.line))
                span = [float(v) for v in self.x_of(np.array(f.span))]
            else:
                coord = float(self.x_of(f.line))
                span = [float(v) for v in self.z_of(np.array(f.span))]
            if self.dim == 1:
                span = []
            facets.append({"id": f.id, "normal": f.normal, "coordinate": coord,
                           "span": span, "elements": list(f.elements), "tag": f.tag})
        return {"dim": self.dim, "width": self.width, "length": self.length,
                "elements": elems, "facets": facets}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _tick_to_phys(ticks, grid):
    t = np.asarray(ticks, dtype=np.int64)
    ncell = len(grid) - 1
    cell = np.minimum(t // TICKS, ncell - 1)
    frac = (t - cell * TICKS) / TICKS
    return grid[cell] + frac * (grid[cell + 1] - grid[cell])


def _sweep(lo, hi):
    """Overlay two sorted interval lists on a line; yield merged pieces."""
    pts = sorted({a for a, _, _ in lo} | {b for _, b, _ in lo}
                 | {a for a, _, _ in hi} | {b for _, b, _ in hi})
    pieces = []
    i = j = 0
    for a, b in zip(pts[:-1], pts[1:]):
        while i < len(lo) and lo[i][1] <= a:
            i += 1
        while j < len(hi) and hi[j][1] <= a:
            j += 1
        elo = lo[i][2] if i < len(lo) and lo[i][0] <= a else None
        ehi = hi[j][2] if j < len(hi) and hi[j][0] <= a else None
        if elo is None and ehi is None:
            continue
        if pieces and pieces[-1][2] == elo and pieces[-1][3] == ehi and pieces[-1][1] == a:
            pieces[-1] = (pieces[-1][0], b, elo, ehi)
        else:
            pieces.append((a, b, elo, ehi))
    return pieces


def build_waveguide_mesh(length_wavelengths, elems_per_wavelength, transverse_layers, p,
                         layer_boundaries=None, wavelength=1.0, width=1.0,
                         labels=None, symmetry_axis=False) -> Mesh:
    """Structured mesh of (0, width) x (0, L), or (0, L) when there are no layers.

    ``L = length_wavelengths * wavelength``. With four layers and explicit
    ``layer_boundaries`` the layers are labelled, from x = 0 outwards, as the
    fiber domains ``FIBER_LABELS``; otherwise every element is ``bulk``.
    """
    if int(length_wavelengths) < 1 or length_wavelengths != int(length_wavelengths):
        raise MeshError("length_wavelengths must be a positive integer")
    if int(elems_per_wavelength) < 1:
        raise MeshError("elems_per_wavelength must be a positive integer")
    if transverse_layers < 0:
        raise MeshError("transverse_layers must be non-negative")
    if p < 1:
        raise MeshError("polynomial order must be >= 1")
    ncol = int(length_wavelengths) * int(elems_per_wavelength)
    zs = np.linspace(0.0, float(length_wavelengths) * wavelength, ncol + 1)
    if transverse_layers == 0:
        elems = [Element(c, (0, TICKS), (c * TICKS, (c + 1) * TICKS), (0, 0), p)
                 for c in range(ncol)]
        return Mesh(1, [0.0, 1.0], zs, elems)

    if layer_boundaries is not None:
        bnd = [float(b) for b in layer_boundaries]
        if len(bnd) != transverse_layers - 1:
            raise MeshError("need transverse_layers - 1 layer boundaries")
        if any(b <= 0.0 or b >= width for b in bnd):
            raise MeshError("layer boundary outside (0, width)")
        if any(b1 <= b0 for b0, b1 in zip(bnd[:-1], bnd[1:])):
            raise MeshError("layer boundaries must be strictly increasing")
        xs = np.array([0.0] + bnd + [width])
        if labels is None and transverse_layers == len(FIBER_LABELS):
            labels = FIBER_LABELS
    else:
        xs = np.linspace(0.0, width, transverse_layers + 1)
    if labels is None:
        labels = ["bulk"] * transverse_layers
    if len(labels) != transverse_layers:
        raise MeshError("one label per layer required")

    elems = []
    for c in range(ncol):
        for r in range(transverse_layers):
            elems.append(Element(len(elems), (r * TICKS, (r + 1) * TICKS),
                                 (c * TICKS, (c + 1) * TICKS), (0, 0), p, labels[r]))
    return Mesh(2, xs, zs, elems, symmetry_axis=symmetry_axis)


def refine(mesh: Mesh, marks: MarkSet) -> Mesh:
    """Split every marked element, then close the mesh.

    The returned mesh records the elements split only to restore
    1-irregularity in ``closure_refined``.
    """
    for eid, mode in marks.modes.items():
        if eid >= len(mesh.elements) or not mesh.elements[eid].active:
            raise MeshError(f"cannot refine inactive element {eid}")
        if mode not in REFINE_MODES:
            raise MeshError(f"unknown refinement mode {mode!r}")
    new = mesh.copy()
    for eid in sorted(marks.modes):
        new._split(eid, marks.modes[eid])
    new.closure_refined = new._close()
    return new


def close_mesh(mesh: Mesh) -> Mesh:
    new = mesh.copy()
    new.closure_refined = new._close()
    return new
