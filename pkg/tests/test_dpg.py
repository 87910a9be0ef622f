from dataclasses import replace

import numpy as np
import pytest

from conftest import hanging_mesh, polynomial_problem
from dpgwave import physics as ph
from dpgwave.dpg import (ElementSystem, GramError, assemble_solve, cholesky, compute_residual,
                         condense, element_gram, element_stiffness, estimate_infsup,
                         residual_vector)
from dpgwave.experiments import plane_wave_problem
from dpgwave.mesh import build_waveguide_mesh
from dpgwave.spaces import build_dof_map, element_dof_counts


def unit_line(omega, p=2):
    bcs = {t: ph.BoundaryCondition("dirichlet", lambda x, z: 0 * z) for t in ("input", "output")}
    prob = ph.WaveProblem(omega, bcs, p=p)
    return build_waveguide_mesh(1, 1, 0, p, wavelength=1.0), prob


def constant_v(p, dp=1):
    """Test coefficients of (v, q) = (1, 0): the two hats sum to one."""
    r = p + dp
    c = np.zeros(2 * (r + 1))
    c[:2] = 1.0
    return c


@pytest.mark.parametrize("omega,expected", [(1.0, 2.0), (0.0, 1.0)])
def test_gram_constant_entry(omega, expected):
    mesh, prob = unit_line(omega)
    G = element_gram(mesh, 0, prob)
    c = constant_v(2)
    assert np.real(c @ G @ c) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("dim", [1, 2])
def test_gram_hermitian_positive(dim):
    if dim == 1:
        prob = plane_wave_problem(5.0, 3)
        mesh = build_waveguide_mesh(1, 2, 0, 3)
    else:
        mesh, prob = hanging_mesh(p=2), polynomial_problem()
    for eid in mesh.active:
        G = element_gram(mesh, eid, prob)
        assert np.array_equal(G, G.conj().T)
        assert np.linalg.eigvalsh(G).min() > 0


def test_constant_field_against_constant_q_has_no_derivative_term():
    mesh, prob = unit_line(0.0, p=1)
    s = element_stiffness(mesh, 0, prob)
    r = 2 + 1
    q_const = np.zeros(2 * r)
    q_const[r:r + 2] = 1.0
    # field layout [u block, p block]; the constant p is the first Legendre mode
    p_const = np.zeros(s.Bf.shape[1])
    p_const[2] = 1.0
    assert abs(q_const @ s.Bf @ p_const) < 1e-14


def test_interior_trace_signs_flip():
    prob = plane_wave_problem(3.0, 2)
    mesh = build_waveguide_mesh(1, 2, 0, 2)
    c = constant_v(2)
    left = element_stiffness(mesh, 0, prob).Bt
    right = element_stiffness(mesh, 1, prob).Bt
    # p_hat at the shared node: side 1 of the left element, side 0 of the right one
    assert c @ left[:, 2] == pytest.approx(1.0)
    assert c @ right[:, 0] == pytest.approx(-1.0)


def test_condense_trivial_cases():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(6, 4)) + 1j * rng.normal(size=(6, 4))
    l = rng.normal(size=6)
    S, f = condense(ElementSystem(np.eye(6), np.zeros((6, 2)), np.zeros((6, 2)), l))
    assert np.all(S == 0) and np.allclose(f, 0)
    S, f = condense(ElementSystem(np.eye(6), B[:, :2], B[:, 2:], l))
    np.testing.assert_allclose(S, B.conj().T @ B, atol=1e-13)


def test_condense_matches_explicit_inverse():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(7, 7)) + 1j * rng.normal(size=(7, 7))
    G = A @ A.conj().T + 7 * np.eye(7)
    B = rng.normal(size=(7, 5)) + 1j * rng.normal(size=(7, 5))
    l = rng.normal(size=7) + 1j * rng.normal(size=7)
    S, f = condense(ElementSystem(G, B[:, :3], B[:, 3:], l))
    Gi = np.linalg.inv(G)
    np.testing.assert_allclose(S, B.conj().T @ Gi @ B, atol=1e-12)
    np.testing.assert_allclose(f, B.conj().T @ Gi @ l, atol=1e-12)


def test_cholesky_rejects_indefinite():
    with pytest.raises(GramError):
        cholesky(np.diag([1.0, -1.0]))
    with pytest.raises(GramError):
        cholesky(np.diag([1.0, 1e-20]))


@pytest.mark.parametrize("marks", [[{0: "iso"}], [{0: "iso"}, {7: "iso"}], [{1: "aniso_z"}]])
def test_manufactured_polynomial_reproduced(marks):
    mesh = hanging_mesh(p=2, marks=marks)
    prob = polynomial_problem(n_of=None)
    sol = assemble_solve(mesh, prob)
    assert ph.relative_l2_error(sol) < 1e-8          # percent, i.e. 1e-10 relative
    assert sol.eta.max() < 1e-10


def test_manufactured_1d_exact():
    def exact(x, z):
        return np.array([z * z - 1j, 1 + 2 * z])

    def source(x, z):
        u, p = exact(x, z)
        return np.array([2.0 * 1j * u + 2.0 + 0 * z, 2.0 * 1j * p + 2 * z])

    bcs = {t: ph.BoundaryCondition("dirichlet", lambda x, z: 1 + 2 * z) for t in ("input", "output")}
    prob = ph.WaveProblem(2.0, bcs, p=2, exact=exact, source=source)
    mesh = build_waveguide_mesh(3, 1, 0, 2)
    sol = assemble_solve(mesh, prob)
    assert ph.relative_l2_error(sol) < 1e-8


def test_zero_data_gives_zero_solution(guide_problem):
    mesh, prob = guide_problem
    zero = lambda x, z: 0 * x
    bcs = dict(prob.bcs)
    bcs["input"] = ph.BoundaryCondition("dirichlet", zero)
    sol = assemble_solve(mesh, replace(prob, bcs=bcs))
    assert np.abs(sol.coefficients()).max() == 0.0 and sol.residual == 0.0


def test_condensed_and_full_solve_agree(guide_problem):
    mesh, prob = guide_problem
    a = assemble_solve(mesh, prob)
    b = assemble_solve(mesh, prob, condense_fields=False)
    np.testing.assert_allclose(a.coefficients(), b.coefficients(), atol=1e-9)
    assert a.residual == pytest.approx(b.residual, rel=1e-8)


def test_residual_identity_on_line(line_problem):
    mesh, prob = line_problem
    sol = assemble_solve(mesh, prob)
    psi = residual_vector(mesh, prob, sol)
    n2 = sum(float(np.real(v.conj() @ element_gram(mesh, e, prob) @ v)) for e, v in psi.items())
    assert n2 == pytest.approx(sol.residual**2, rel=1e-12)
    eta, total = compute_residual(mesh, prob, sol)
    assert total == pytest.approx(sol.residual, rel=1e-14)


def test_galerkin_orthogonality(guide_problem):
    mesh, prob = guide_problem
    sol = assemble_solve(mesh, prob)
    dm = sol.dofmap
    psi = residual_vector(mesh, prob, sol)
    g = np.zeros(dm.n_total, dtype=complex)
    tnorm2 = np.zeros(dm.n_total)
    for e in dm.elements:
        s = element_stiffness(mesh, e, prob, dm)
        B = np.hstack([s.Bf, s.Bt @ dm.elem_map[e]])
        idx = np.concatenate([dm.field_offsets[e] + np.arange(s.Bf.shape[1]),
                              dm.n_field + dm.elem_cols[e]])
        g[idx] += B.conj().T @ psi[e]
        tnorm2[idx] += np.real(np.einsum("ij,ij->j", B.conj(), np.linalg.solve(s.G, B)))
    free = np.concatenate([np.arange(dm.n_field), dm.n_field + np.flatnonzero(~dm.fixed)])
    bound = 1e-9 * sol.residual * np.sqrt(tnorm2[free])
    assert np.all(np.abs(g[free]) <= bound)


def test_residual_tracks_energy_error():
    """The dp = 2 residual matches a strongly enriched reference within 5%."""
    prob = plane_wave_problem(2 * np.pi, 2, dp=2)
    mesh = build_waveguide_mesh(2, 3, 0, 2, wavelength=prob.mode.wavelength)
    sol = assemble_solve(mesh, prob)
    _, ref = compute_residual(mesh, replace(prob, dp=8), sol)
    assert abs(sol.residual - ref) / ref < 0.05


def test_stability_constants():
    prob = plane_wave_problem(2 * np.pi, 2)
    gam = []
    for epw in (2, 4, 8):
        mesh = build_waveguide_mesh(1, epw, 0, 2, wavelength=prob.mode.wavelength)
        rep = estimate_infsup(mesh, prob)
        assert 0 < rep.gamma_h <= rep.M
        gam.append(rep.gamma_h)
    assert (max(gam) - min(gam)) / max(gam) < 0.25
    mesh = build_waveguide_mesh(1, 8, 0, 2)
    g1 = estimate_infsup(mesh, plane_wave_problem(1.0, 2)).gamma_h
    g10 = estimate_infsup(mesh, plane_wave_problem(10.0, 2)).gamma_h
    assert 0.1 < g1 / g10 < 10


def test_stability_size_limit():
    mesh = build_waveguide_mesh(40, 8, 2, 3)
    with pytest.raises(ValueError):
        estimate_infsup(mesh, plane_wave_problem(1.0, 3))


def test_test_space_larger_than_trial():
    trial, test, _ = element_dof_counts(3, 1, 2)
    mesh = hanging_mesh(p=3)
    s = element_stiffness(mesh, mesh.active[0], polynomial_problem(p=3))
    assert s.G.shape == (test, test) and s.Bf.shape == (test, trial)
    assert build_dof_map(mesh, 3).n_local_trace == s.Bt.shape[1]
