from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from dpgwave import physics as ph
from dpgwave.dpg import assemble_solve
from dpgwave.experiments import plane_wave_problem, rect_mode_problem
from dpgwave.mesh import build_waveguide_mesh
from dpgwave.spaces import gauss
from oracles import saddle_point_oracle

TWO_PI = 2 * np.pi


def test_adjoint_of_constant_q():
    vec, sca = ph.adjoint_apply([0.0], 2.0, [0.0], 0.0, omega=3.0)
    assert vec == pytest.approx([0.0]) and sca == pytest.approx(-6j)


def test_adjoint_static_is_derivative_only():
    vec, sca = ph.adjoint_apply([1.5], 2.0, [0.7], -0.4, omega=0.0)
    assert vec == pytest.approx([-0.7]) and sca == pytest.approx(0.4)


def test_integration_by_parts_on_one_element():
    """<A(u,p), (v,q)> = <(u,p), A*(v,q)> + [p conj(v) n + u n conj(q)] on [a, b]."""
    a, b, om, n = 0.3, 1.7, 2.3, 1.2
    t, w = gauss(20)
    z = a + (b - a) * t
    w = (b - a) * w
    u, du = np.exp(1j * z) * z, np.exp(1j * z) * (1 + 1j * z)
    p, dp = np.cos(2 * z) + 1j * z**2, -2 * np.sin(2 * z) + 2j * z
    v, dv = z**3 - 1j, 3 * z**2
    q, dq = np.exp(-z) * (1 + 1j), -np.exp(-z) * (1 + 1j)
    Au, Ap = ph.apply_operator(u, p, dp, du, om, n)
    Av, Aq = ph.adjoint_apply(v, q, dq, dv, om, n)
    lhs = np.sum(w * (Au * np.conj(v) + Ap * np.conj(q)))
    rhs = np.sum(w * (u * np.conj(Av) + p * np.conj(Aq)))

    def at(f, x):
        return f(np.array([x]))[0]
    F = dict(u=lambda x: np.exp(1j * x) * x, p=lambda x: np.cos(2 * x) + 1j * x**2,
             v=lambda x: x**3 - 1j, q=lambda x: np.exp(-x) * (1 + 1j))
    bnd = sum(s * (at(F["p"], x) * np.conj(at(F["v"], x)) + at(F["u"], x) * np.conj(at(F["q"], x)))
              for x, s in ((a, -1.0), (b, 1.0)))
    assert abs(lhs - rhs - bnd) < 1e-10


def test_rect_mode_wavenumbers():
    assert ph.rectangular_mode(1, np.pi).kz == 0
    assert ph.rectangular_mode(1, TWO_PI).kz.real == pytest.approx(np.pi * np.sqrt(3))
    ev = ph.rectangular_mode(2, TWO_PI * 0.8)
    assert ev.kz.real == 0 and not ev.propagating
    z = np.array([0.0, 1.0, 2.0])
    amp = np.abs(np.exp(-1j * ev.kz * z))
    assert np.all(np.diff(amp) < 0)


def test_rect_modes_orthonormal():
    t, w = gauss(40)
    phis = [ph.rectangular_mode(m, 20.0).profile(t) for m in (1, 2, 3)]
    gram = np.array([[np.sum(w * a * b) for b in phis] for a in phis])
    np.testing.assert_allclose(gram, np.eye(3), atol=1e-12)


def test_exact_rect_fields_solve_the_system():
    mode = ph.rectangular_mode(1, TWO_PI)
    x, z, h = 0.37, 0.81, 1e-5
    ux, uz, p = mode.fields(np.array([x]), np.array([z]))

    def pfun(x, z):
        return mode.fields(np.array([x]), np.array([z]))[2][0]
    px = (pfun(x + h, z) - pfun(x - h, z)) / (2 * h)
    pz = (pfun(x, z + h) - pfun(x, z - h)) / (2 * h)
    div = ((mode.fields(np.array([x + h]), np.array([z]))[0][0]
            - mode.fields(np.array([x - h]), np.array([z]))[0][0])
           + (mode.fields(np.array([x]), np.array([z + h]))[1][0]
              - mode.fields(np.array([x]), np.array([z - h]))[1][0])) / (2 * h)
    om = mode.omega
    assert abs(1j * om * ux[0] + px) < 1e-6
    assert abs(1j * om * uz[0] + pz) < 1e-6
    assert abs(1j * om * p[0] + div) < 1e-5


def test_v_number():
    assert ph.v_number(1.064, 12.7, 0.059) == pytest.approx(4.43, abs=0.01)
    assert ph.v_number(1.064, 12.7, 0.0) == 0.0
    assert ph.v_number(TWO_PI * 3.0 * 0.2, 3.0, 0.2) == pytest.approx(1.0)


def test_single_mode_below_first_odd_cutoff():
    assert len(ph.slab_modes(1.2)) == 1
    assert len(ph.slab_modes(1.2, wall=1.0)) == 1


def test_mode_count_non_decreasing():
    counts = [len(ph.slab_modes(v, wall=1.0)) for v in np.linspace(0.3, 8.0, 40)]
    assert all(b >= a for a, b in zip(counts[:-1], counts[1:]))


def _finite_difference_modes(v, wall, d=0.25, n_core=1.4512, n_clad=1.45, n=4000):
    """Guided propagation constants from a dense finite-difference eigen-solve."""
    omega = v / (d * ph.numerical_aperture(n_core, n_clad))
    x = np.linspace(-wall, wall, n + 2)[1:-1]
    h = x[1] - x[0]
    nx = np.where(np.abs(x) < d, n_core, n_clad)
    diag = 2 / h**2 - (omega * nx) ** 2
    off = -np.ones(n - 1) / h**2
    lam = sla.eigh_tridiagonal(diag, off, eigvals_only=True, select="v",
                               select_range=(-np.inf, -(omega * n_clad) ** 2))
    return np.sqrt(-lam)


def test_four_mode_slab_matches_finite_differences():
    modes = ph.slab_modes(5.0, wall=1.0)
    assert len(modes) == 4
    assert all(ph.slab_dispersion_residual(m, wall=1.0) < 1e-10 for m in modes)
    kz = np.array([m.kz.real for m in modes])
    ref = np.sort(_finite_difference_modes(5.0, 1.0))[::-1]
    assert len(ref) == 4
    np.testing.assert_allclose(kz, ref, rtol=1e-6)


def test_slab_modes_orthonormal():
    modes = ph.slab_modes(5.0, wall=1.0)
    pts = np.concatenate([0.25 * gauss(60)[0], 0.25 + 0.75 * gauss(60)[0]])
    wts = np.concatenate([0.25 * gauss(60)[1], 0.75 * gauss(60)[1]])
    for a in modes:
        for b in modes:
            if a.parity != b.parity:
                continue                     # orthogonal by symmetry
            val = 2 * np.sum(wts * a.profile(pts) * b.profile(pts))
            assert val == pytest.approx(float(a.m == b.m), abs=1e-10)


def test_confinement():
    rect = ph.rectangular_mode(1, TWO_PI)
    assert ph.confinement(rect, (0.0, 1.0), (0.0, 1.0)) == pytest.approx(1.0)
    modes = ph.slab_modes(5.0, wall=1.0)
    conf = [ph.confinement(m, (0.0, 0.25)) for m in modes]
    assert all(conf[0] > c for c in conf[1:])
    scaled = replace(modes[1], profile=lambda x: 3.7 * modes[1].profile(x))
    assert ph.confinement(scaled, (0.0, 0.25)) == pytest.approx(conf[1], rel=1e-12)


def test_exact_power_flux():
    prop = ph.rectangular_mode(1, TWO_PI)
    assert ph.exact_power_flux(prop, 0.0) == pytest.approx(ph.exact_power_flux(prop, 3.3), rel=1e-12)
    ev = ph.rectangular_mode(2, TWO_PI * 0.8)
    assert abs(ph.exact_power_flux(ev, 0.4)) < 1e-12


def test_discrete_power_conserved_when_resolved():
    prob = rect_mode_problem(TWO_PI, 4)
    mesh = build_waveguide_mesh(4, 4, 2, 4, wavelength=prob.mode.wavelength)
    sol = assemble_solve(mesh, prob)
    f0, f1 = ph.power_flux(sol, 0.0), ph.power_flux(sol, mesh.length)
    assert abs(f0 - f1) / f0 < 0.01
    assert f0 == pytest.approx(ph.exact_power_flux(prob.mode, 0.0), rel=0.01)


def test_high_order_short_guide_loses_almost_no_power():
    prob = rect_mode_problem(TWO_PI, 6)
    mesh = build_waveguide_mesh(1, 2, 2, 6, wavelength=prob.mode.wavelength)
    assert abs(ph.power_loss(assemble_solve(mesh, prob))) < 0.005


def test_relative_error_matches_dense_oracle():
    prob = plane_wave_problem(TWO_PI, 2)
    mesh = build_waveguide_mesh(1, 4, 0, 2, wavelength=prob.mode.wavelength)
    sol = assemble_solve(mesh, prob)
    nodes = np.asarray(mesh.zs)
    oracle = saddle_point_oracle(TWO_PI, 2, 1, 1.0, nodes)
    t, w = np.polynomial.legendre.leggauss(12)
    num = den = 0.0
    for a, b in zip(nodes[:-1], nodes[1:]):
        z = 0.5 * (a + b) + 0.5 * (b - a) * t
        uh = np.array([oracle(zz) for zz in z]).T
        ex = prob.exact(np.zeros_like(z), z)
        num += np.sum(0.5 * (b - a) * w * np.abs(uh - ex) ** 2)
        den += np.sum(0.5 * (b - a) * w * np.abs(ex) ** 2)
    assert ph.relative_l2_error(sol) == pytest.approx(100 * np.sqrt(num / den), rel=1e-10)


def test_relative_error_quadrature_saturated(guide_problem):
    mesh, prob = guide_problem
    sol = assemble_solve(mesh, prob)
    a, b = ph.relative_l2_error(sol, extra=2), ph.relative_l2_error(sol, extra=8)
    assert abs(a - b) / b < 1e-8


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_modal_amplitudes_of_superposition(a, b):
    t, w = gauss(30)
    m1, m2 = ph.rectangular_mode(1, 20.0), ph.rectangular_mode(2, 20.0)
    data = a * m1.profile(t) + b * m2.profile(t)
    assert ph.modal_amplitudes(data, t, w, m1) == pytest.approx(a, abs=1e-12)
    assert ph.modal_amplitudes(data, t, w, m2) == pytest.approx(b, abs=1e-12)


def test_mode_overlap_of_resolved_solution():
    prob = rect_mode_problem(TWO_PI, 4)
    mesh = build_waveguide_mesh(1, 4, 2, 4, wavelength=prob.mode.wavelength)
    sol = assemble_solve(mesh, prob)
    assert ph.relative_l2_error(sol) < 0.1
    c1 = ph.mode_overlap(sol, prob.mode, 0.0)
    c2 = ph.mode_overlap(sol, ph.rectangular_mode(2, prob.omega), 0.0)
    assert abs(c1 - 1) < 1e-3 and abs(c2) < 1e-3
    assert abs(ph.reflection_coefficient(sol, prob.mode)) < 1e-3


def test_problem_validation():
    with pytest.raises(ValueError):
        ph.TestNormConfig(0.0)
    with pytest.raises(ValueError):
        ph.BoundaryCondition("robin")
    with pytest.raises(ValueError):
        ph.WaveProblem(1.0, {}, index={"bulk": 0.5})
