import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dpgwave import physics as ph
from dpgwave.experiments import plane_wave_problem, rect_mode_problem
from dpgwave.mesh import MarkSet, build_waveguide_mesh, refine

settings.register_profile("dpgwave", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dpgwave")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def line_problem():
    """1D forward wave on two wavelengths, p = 2."""
    prob = plane_wave_problem(2 * np.pi, 2)
    mesh = build_waveguide_mesh(2, 3, 0, 2, wavelength=prob.mode.wavelength)
    return mesh, prob


@pytest.fixture
def guide_problem():
    """2D hard-wall guide, fundamental mode, p = 2."""
    prob = rect_mode_problem(2 * np.pi, 2)
    mesh = build_waveguide_mesh(2, 3, 2, 2, wavelength=prob.mode.wavelength)
    return mesh, prob


def hanging_mesh(p=2, layers=2, cols=3, marks=None):
    """Small 2D mesh with hanging nodes from one or more local refinements."""
    mesh = build_waveguide_mesh(cols, 1, layers, p, wavelength=1.0)
    if marks is None:
        marks = [{0: "iso"}]
    for m in marks:
        mesh = refine(mesh, MarkSet(dict(m)))
    return mesh


def polynomial_problem(omega=3.0, p=2, n_of=None, alpha=1.0, dp=1, labels=("bulk",)):
    """Manufactured problem whose exact solution lies in the order-2 trial space."""
    def nfun(x):
        return np.ones_like(np.asarray(x, dtype=float)) if n_of is None else n_of(x)

    def P(x, z):
        return 1 + x * x * z - 0.5 * z * z + 0.3j * x

    def U(x, z):
        return x * z + 1j * z * z, x * x - z + 0.2

    def exact(x, z):
        ux, uz = U(x, z)
        return np.array([ux, uz, P(x, z)])

    def source(x, z):
        ux, uz = U(x, z)
        px, pz = 2 * x * z + 0.3j, x * x - z
        div = z - 1 + 0 * x
        return np.array([1j * omega * ux + px, 1j * omega * uz + pz,
                         1j * omega * nfun(x) ** 2 * P(x, z) + div])

    bcs = {t: ph.BoundaryCondition("dirichlet", P) for t in ("input", "output", "wall")}
    index = {lab: 1.0 for lab in labels}
    return ph.WaveProblem(omega, bcs, index, p=p, dp=dp, exact=exact, source=source,
                          norm=ph.TestNormConfig(alpha))
