import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import polynomial_problem
from dpgwave.adapt import AdaptConfig, adapt_loop, domain_histogram, dorfler_mark
from dpgwave.experiments import rect_mode_problem
from dpgwave.mesh import FIBER_LABELS, MarkSet, build_waveguide_mesh


def test_dorfler_single_dominant():
    assert dorfler_mark(enumerate([3.0, 2.0, 1.0]), 0.5).ids == [0]


def test_dorfler_kappa_near_one_marks_all():
    assert dorfler_mark(enumerate([3.0, 2.0, 1.0]), 1 - 1e-9).ids == [0, 1, 2]


def test_dorfler_equal_residuals():
    assert dorfler_mark(enumerate([1.0] * 4), 0.5).ids == [0, 1]


def test_dorfler_tie_break_by_id():
    assert dorfler_mark([(7, 1.0), (3, 1.0), (5, 0.5)], 0.3).ids == [3]


def test_dorfler_errors():
    with pytest.raises(ValueError):
        dorfler_mark([], 0.5)
    with pytest.raises(ValueError):
        dorfler_mark([(0, -1.0)], 0.5)


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=30), st.floats(0.01, 0.99))
def test_dorfler_fraction_and_minimality(eta, kappa):
    eta = np.array(eta)
    marks = dorfler_mark(enumerate(eta), kappa).ids
    total = np.sum(eta**2)
    got = np.sum(eta[marks] ** 2)
    assert got >= kappa * total * (1 - 1e-12)
    # dropping the smallest marked residual loses the fraction
    if len(marks) > 1:
        smallest = min(eta[marks])
        assert got - smallest**2 < kappa * total * (1 + 1e-12)


def test_marks_carry_strategy():
    assert set(dorfler_mark(enumerate([1.0, 2.0]), 0.5, "aniso_x").modes.values()) == {"aniso_x"}


def test_histogram():
    mesh = build_waveguide_mesh(1, 2, 4, 2, layer_boundaries=[0.25, 0.5, 0.75])
    assert domain_histogram(MarkSet(), mesh) == dict.fromkeys(FIBER_LABELS, 0)
    core = [e for e in mesh.active if mesh.label_of(e) == "core_inner"]
    h = domain_histogram(MarkSet.uniform(core), mesh)
    assert h["core_inner"] == 2 and sum(h.values()) == 2


def test_config_validation():
    with pytest.raises(ValueError):
        AdaptConfig(kappa=1.0)
    with pytest.raises(ValueError):
        AdaptConfig(strategy="bogus")


def test_small_kappa_marks_one_element_per_step():
    prob = rect_mode_problem(2 * np.pi, 2)
    mesh = build_waveguide_mesh(1, 2, 2, 2, wavelength=prob.mode.wavelength)
    trace = adapt_loop(mesh, prob, AdaptConfig(0.01, "iso", 3), exact=prob.exact)
    assert [len(s.marked) for s in trace.steps] == [1, 1, 1, 0]
    assert np.all(np.diff(trace.dofs) > 0)
    assert [s.step for s in trace.steps] == [0, 1, 2, 3]
    assert all(s.rel_error is not None for s in trace.steps)


def test_tolerance_stops_early():
    prob = polynomial_problem()
    mesh = build_waveguide_mesh(1, 2, 1, 2)
    trace = adapt_loop(mesh, prob, AdaptConfig(0.5, "iso", 5, tol=1e-8))
    assert len(trace.steps) == 1 and trace.steps[0].marked == []
