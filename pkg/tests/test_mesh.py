import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dpgwave.mesh import (FIBER_LABELS, MarkSet, MeshError, build_waveguide_mesh, close_mesh,
                          refine)


def facet_levels_ok(mesh):
    """Independent 1-irregularity check: neighbouring side lengths differ by at most 2x."""
    for f in mesh.facets:
        if f.boundary:
            continue
        lo, hi = f.elements
        a, b = mesh.side_length(lo, f.normal), mesh.side_length(hi, f.normal)
        if max(a, b) > 2 * min(a, b):
            return False
    return True


def check_invariants(mesh):
    total = sum(mesh.measure(e) for e in mesh.active)
    assert abs(total - mesh.domain_measure()) <= 1e-12 * mesh.domain_measure()
    assert all(mesh.measure(e) > 0 for e in mesh.active)
    assert mesh.is_one_irregular() and facet_levels_ok(mesh)
    active = set(mesh.active)
    for f in mesh.facets:
        ids = f.element_ids()
        assert set(ids) <= active
        assert len(ids) == (1 if f.boundary else 2)


def test_1d_mesh_counts():
    mesh = build_waveguide_mesh(4, 4, 0, 3)
    assert mesh.dim == 1 and len(mesh.active) == 16
    check_invariants(mesh)


def test_2d_mesh_counts():
    mesh = build_waveguide_mesh(2, 4, 2, 2)
    assert mesh.dim == 2 and len(mesh.active) == 16
    assert mesh.n_columns == 8 and mesh.n_layers == 2


def test_fiber_labels():
    mesh = build_waveguide_mesh(1, 2, 4, 2, layer_boundaries=[0.25, 0.5, 0.75])
    labels = [mesh.label_of(e) for e in mesh.active]
    assert len(labels) == 8
    assert {lab: labels.count(lab) for lab in FIBER_LABELS} == dict.fromkeys(FIBER_LABELS, 2)
    # labels follow x: the core is nearest the axis
    for e in mesh.active:
        x0, x1, _, _ = mesh.box(e)
        k = int(np.searchsorted([0.25, 0.5, 0.75], 0.5 * (x0 + x1)))
        assert mesh.label_of(e) == FIBER_LABELS[k]


@pytest.mark.parametrize("kwargs", [dict(length_wavelengths=0), dict(layer_boundaries=[0.5, 1.5, 0.75])])
def test_build_errors(kwargs):
    base = dict(length_wavelengths=1, elems_per_wavelength=2, transverse_layers=4, p=2,
                layer_boundaries=[0.25, 0.5, 0.75])
    base.update(kwargs)
    with pytest.raises(MeshError):
        build_waveguide_mesh(**base)


def test_iso_and_aniso_children():
    mesh = build_waveguide_mesh(1, 1, 1, 2)
    iso = refine(mesh, MarkSet({0: "iso"}))
    assert len(iso.active) == 4
    az = refine(mesh, MarkSet({0: "aniso_z"}))
    boxes = az.boxes()
    assert len(az.active) == 2
    assert np.allclose(boxes[:, 0], 0.0) and np.allclose(boxes[:, 1], 1.0)
    assert sorted(boxes[:, 2]) == [0.0, 0.5]


def test_1d_split():
    mesh = build_waveguide_mesh(1, 2, 0, 2)
    new = refine(mesh, MarkSet({0: "iso"}))
    assert len(new.active) == 3
    check_invariants(new)


def test_refine_inactive_raises():
    mesh = refine(build_waveguide_mesh(1, 1, 1, 2), MarkSet({0: "iso"}))
    with pytest.raises(MeshError):
        refine(mesh, MarkSet({0: "iso"}))


def test_closure_refines_neighbour_once():
    mesh = build_waveguide_mesh(1, 2, 1, 2)        # two columns, one layer
    m1 = refine(mesh, MarkSet({0: "iso"}))
    upper = [e for e in m1.active if m1.box(e)[3] == pytest.approx(0.5)
             and m1.elements[e].parent == 0]
    m2 = refine(m1, MarkSet({upper[0]: "iso"}))
    assert m2.closure_refined == [1]
    assert not m2.elements[1].active
    check_invariants(m2)


def test_close_mesh_idempotent_on_regular_mesh():
    mesh = refine(build_waveguide_mesh(2, 2, 2, 2), MarkSet({0: "iso", 3: "aniso_x"}))
    again = close_mesh(mesh)
    assert again.active == mesh.active and again.closure_refined == []
    uniform = build_waveguide_mesh(2, 2, 2, 2)
    assert close_mesh(uniform).active == uniform.active


@given(st.lists(st.tuples(st.integers(0, 10_000), st.sampled_from(["iso", "aniso_x", "aniso_z"])),
                min_size=1, max_size=5))
def test_random_refinement_invariants(steps):
    mesh = build_waveguide_mesh(2, 2, 2, 2)
    for pick, mode in steps:
        act = mesh.active
        mesh = refine(mesh, MarkSet({act[pick % len(act)]: mode}))
        check_invariants(mesh)


def test_json_export():
    mesh = refine(build_waveguide_mesh(1, 2, 2, 2), MarkSet({0: "iso"}))
    data = json.loads(mesh.to_json())
    assert data["dim"] == 2
    assert len(data["elements"]) == len(mesh.active)
    assert len(data["facets"]) == len(mesh.facets)
    tags = {f["tag"] for f in data["facets"]}
    assert {"input", "output", "wall", "interior"} <= tags
    area = sum((b[1] - b[0]) * (b[3] - b[2]) for b in (e["box"] for e in data["elements"]))
    assert area == pytest.approx(mesh.domain_measure())
