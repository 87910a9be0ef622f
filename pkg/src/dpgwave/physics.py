"""First-order time-harmonic wave system, guided modes and observables.

The model is the acoustic / TE reduction

    i w u + grad p = f_u,      i w n^2 p + div u = f_p,

with time dependence exp(+i w t), so a forward-travelling mode behaves like
exp(-i k_z z). Coordinates are ``x`` (transverse, width ``a``) and ``z``
(propagation). In 1D only ``z`` remains and ``u`` is a scalar.

For a transverse profile phi(x) solving phi'' + (w^2 n^2 - k_z^2) phi = 0 the
exact fields are

    p   = A phi(x) exp(-i k_z z)
    u_x = (i / w) A phi'(x) exp(-i k_z z)
    u_z = (k_z / w) p

and the mode impedance is Z = p / u_z = w / k_z.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .spaces import gauss

BC_KINDS = ("dirichlet", "flux", "impedance")


@dataclass(frozen=True)
class TestNormConfig:
    """Scaling of the L2 term in the adjoint graph test norm."""

    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass
class BoundaryCondition:
    """Boundary data for one boundary tag.

    ``dirichlet`` prescribes the scalar trace, ``flux`` the normal flux
    (along the outward normal), ``impedance`` ties the flux to the scalar
    trace through ``flux = trace / impedance``.
    """

    kind: str
    data: Callable | None = None
    impedance: float | None = None

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")
        if self.kind == "impedance" and not self.impedance:
            raise ValueError("impedance condition needs a nonzero impedance")


@dataclass
class ModeSpec:
    """A transverse eigenmode and its propagation data."""

    m: int
    omega: float
    kz: complex
    profile: Callable
    dprofile: Callable
    index: float = 1.0          # refractive index seen by the z-dependence in 1D
    parity: str = "odd"         # symmetry about x = 0 ("even" or "odd")
    width: float = 1.0

    @property
    def impedance(self) -> complex:
        return self.omega / self.kz

    @property
    def cutoff(self) -> bool:
        return abs(self.kz.real) < 1e-14 * max(1.0, self.omega)

    @property
    def propagating(self) -> bool:
        return self.kz.real > 0 and abs(self.kz.imag) <= 1e-14 * abs(self.kz)

    @property
    def wavelength(self) -> float:
        return 2 * np.pi / self.kz.real

    def fields(self, x, z, amplitude=1.0):
        """Exact (u_x, u_z, p) of the forward mode at points (x, z)."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        ph = amplitude * np.exp(-1j * self.kz * z)
        p = self.profile(x) * ph
        ux = 1j / self.omega * self.dprofile(x) * ph
        uz = self.kz / self.omega * p
        return ux, uz, p


@dataclass
class WaveProblem:
    """Everything needed to assemble one time-harmonic solve.

    ``index`` maps element labels to refractive indices. ``bcs`` maps the
    boundary tags present in the mesh to boundary conditions. ``exact`` is an
    optional callable ``(x, z) -> (u_x, u_z, p)`` (1D: ``(u, p)`` with
    ``x`` ignored) used for error measurement; ``source`` is an optional
    volume load with the same signature.
    """

    omega: float
    bcs: dict[str, BoundaryCondition]
    index: dict[str, float] = field(default_factory=lambda: {"bulk": 1.0})
    p: int = 2
    dp: int = 1
    norm: TestNormConfig = field(default_factory=TestNormConfig)
    mode: ModeSpec | None = None
    exact: Callable | None = None
    source: Callable | None = None
    order_z: int | None = None

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be non-negative")
        if any(n < 1.0 for n in self.index.values()):
            raise ValueError("refractive index must be >= 1")
        if self.p < 1 or self.dp < 1:
            raise ValueError("p and dp must be >= 1")

    def n_of(self, label: str) -> float:
        try:
            return self.index[label]
        except KeyError:
            return self.index.get("bulk", 1.0)

    @property
    def bc_kinds(self) -> dict[str, str]:
        return {tag: bc.kind for tag, bc in self.bcs.items()}

    @property
    def impedances(self) -> dict[str, float]:
        return {tag: bc.impedance for tag, bc in self.bcs.items() if bc.kind == "impedance"}

    def boundary_data(self) -> dict[str, Callable]:
        return {tag: bc.data for tag, bc in self.bcs.items() if bc.data is not None}


def adjoint_apply(v, q, grad_q, div_v, omega, n=1.0):
    """Formal adjoint of the first-order operator applied to a test pair.

    Returns the vector and scalar components ``(-i w v - grad q,
    -i w n^2 q - div v)``. ``v`` and ``grad_q`` carry the vector index on
    their first axis (length 1 in 1D, 2 in 2D).
    """
    v = np.asarray(v)
    vec = -1j * omega * v - np.asarray(grad_q)
    sca = -1j * omega * n**2 * np.asarray(q) - np.asarray(div_v)
    return vec, sca


def apply_operator(u, p, grad_p, div_u, omega, n=1.0):
    """The first-order operator itself, ``(i w u + grad p, i w n^2 p + div u)``."""
    return 1j * omega * np.asarray(u) + np.asarray(grad_p), \
        1j * omega * n**2 * np.asarray(p) + np.asarray(div_u)


# ---------------------------------------------------------------------------
# Modes
# ---------------------------------------------------------------------------

def rectangular_mode(m: int, omega: float, a: float = 1.0, n: float = 1.0) -> ModeSpec:
    """Hard-wall mode sqrt(2/a) sin(m pi x / a) of a guide of width a."""
    if m < 1:
        raise ValueError("mode index must be >= 1")
    if omega <= 0 or a <= 0:
        raise ValueError("omega and a must be positive")
    kt = m * np.pi / a
    val = (omega * n) ** 2 - kt**2
    kz = complex(np.sqrt(val)) if val >= 0 else complex(0.0, -np.sqrt(-val))
    c = np.sqrt(2.0 / a)
    return ModeSpec(
        m=m, omega=omega, kz=kz, width=a, index=n,
        profile=lambda x: c * np.sin(kt * np.asarray(x)),
        dprofile=lambda x: c * kt * np.cos(kt * np.asarray(x)),
        parity="odd" if m % 2 == 1 else "even")


def plane_wave_1d(omega: float, n: float = 1.0) -> ModeSpec:
    """The 1D forward wave p = exp(-i w n z), u = n p."""
    one = lambda x: np.ones_like(np.asarray(x, dtype=float))
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    return ModeSpec(m=0, omega=omega, kz=complex(omega * n), profile=one,
                    dprofile=zero, index=n, parity="even")


def v_number(wavelength: float, r_core: float, na: float) -> float:
    """Normalized frequency 2 pi r NA / lambda of a step-index guide."""
    return 2 * np.pi * r_core * na / wavelength


def numerical_aperture(n_core: float, n_clad: float) -> float:
    return float(np.sqrt(n_core**2 - n_clad**2))


@dataclass
class SlabMode(ModeSpec):
    u: float = 0.0               # kappa * d
    w: float = 0.0               # gamma * d
    half_width: float = 0.0      # core half-width d
    n_core: float = 1.0
    n_clad: float = 1.0

    @property
    def effective_index(self) -> float:
        return self.kz.real / self.omega


def _wall_factor(w, c):
    # w * coth(w c), or w for the open slab (c = inf); continuous at w -> 0
    if c is None:
        return w
    if w * c < 1e-8:
        return 1.0 / c + w * w * c / 3.0
    return w / np.tanh(w * c)


def _dispersion(u, v, parity, c):
    w = np.sqrt(max(v * v - u * u, 0.0))
    rhs = _wall_factor(w, c)
    if parity == "even":
        return u * np.tan(u) - rhs
    return -u / np.tan(u) - rhs


def slab_dispersion_residual(mode: "SlabMode", wall: float | None = None) -> float:
    """Residual of the dispersion relation at the mode's root, scaled by V."""
    v = np.hypot(mode.u, mode.w)
    c = None if wall is None else (wall - mode.half_width) / mode.half_width
    return abs(_dispersion(mode.u, v, mode.parity, c)) / max(v, 1.0)


def slab_modes(v_number: float, n_core: float = 1.4512, n_clad: float = 1.45,
               half_width: float = 0.25, wall: float | None = None) -> list[SlabMode]:
    """Guided modes of a symmetric step-index slab, by decreasing effective index.

    The core occupies |x| < d with d = ``half_width``. With ``wall`` set the
    cladding ends at |x| = wall with a hard (p = 0) wall; otherwise it is
    unbounded. The frequency follows from V = w d NA. Profiles are normalized
    to unit L2 norm over the full symmetric cross-section and returned as
    functions of x >= 0.
    """
    if v_number <= 0:
        raise ValueError("V-number must be positive")
    if wall is not None and wall <= half_width:
        raise ValueError("wall must lie outside the core")
    na = numerical_aperture(n_core, n_clad)
    d = half_width
    omega = v_number / (d * na)
    c = None if wall is None else (wall - d) / d
    v = v_number
    roots = []
    j = 0
    while j * np.pi / 2 < v:
        parity = "even" if j % 2 == 0 else "odd"
        lo = j * np.pi / 2
        hi = min((j + 1) * np.pi / 2, v)
        eps = 1e-13 * max(1.0, v)
        a_, b_ = lo + eps, hi - eps
        if b_ > a_:
            fa = _dispersion(a_, v, parity, c)
            fb = _dispersion(b_, v, parity, c)
            if np.sign(fa) != np.sign(fb):
                u = brentq(_dispersion, a_, b_, args=(v, parity, c), xtol=1e-15,
                           rtol=4 * np.finfo(float).eps, maxiter=500)
                roots.append((u, parity))
        j += 1
    modes = []
    for m, (u, parity) in enumerate(roots):
        w = np.sqrt(v * v - u * u)
        kappa, gamma = u / d, w / d
        kz = np.sqrt((omega * n_core) ** 2 - kappa**2)
        prof, dprof = _slab_profile(kappa, gamma, d, parity, wall)
        scale = 1.0 / np.sqrt(2.0 * _half_norm2(prof, d, wall, gamma))
        mode = SlabMode(
            m=m, omega=omega, kz=complex(kz),
            profile=(lambda f, s: lambda x: s * f(x))(prof, scale),
            dprofile=(lambda f, s: lambda x: s * f(x))(dprof, scale),
            parity=parity, width=wall if wall is not None else np.inf,
            u=u, w=w, half_width=d, n_core=n_core, n_clad=n_clad)
        modes.append(mode)
    return modes


def _slab_profile(kappa, gamma, d, parity, wall):
    core = np.cos if parity == "even" else np.sin
    dcore = (lambda t: -np.sin(t)) if parity == "even" else np.cos
    c0 = core(kappa * d)
    if wall is None:
        s = lambda x: np.exp(-gamma * (x - d))
        ds = lambda x: -gamma * np.exp(-gamma * (x - d))
    else:
        sd = np.sinh(gamma * (wall - d))
        s = lambda x: np.sinh(gamma * (wall - x)) / sd
        ds = lambda x: -gamma * np.cosh(gamma * (wall - x)) / sd

    def prof(x):
        x = np.abs(np.asarray(x, dtype=float))
        return np.where(x < d, core(kappa * x), c0 * s(np.maximum(x, d)))

    def dprof(x):
        x = np.asarray(x, dtype=float)
        sgn = np.where(x < 0, -1.0 if parity == "even" else 1.0, 1.0)
        ax = np.abs(x)
        return sgn * np.where(ax < d, kappa * dcore(kappa * ax), c0 * ds(np.maximum(ax, d)))

    return prof, dprof


def _half_norm2(prof, d, wall, gamma):
    t, w = gauss(60)
    core = np.sum(w * d * prof(d * t) ** 2)
    if wall is None:
        # exponential tail integrates in closed form
        return core + prof(np.array([d]))[0] ** 2 / (2 * gamma)
    clad = np.sum(w * (wall - d) * prof(d + (wall - d) * t) ** 2)
    return core + clad


def confinement(mode: ModeSpec, core: tuple[float, float], domain: tuple[float, float] | None = None,
                n_quad: int = 400) -> float:
    """Fraction of |phi|^2 inside ``core`` relative to ``domain`` (both x-intervals)."""
    if domain is None:
        w = mode.width if np.isfinite(mode.width) else 60 * getattr(mode, "half_width", 1.0)
        domain = (0.0, w)

    def integral(lo, hi):
        t, wq = gauss(n_quad)
        x = lo + (hi - lo) * t
        return float(np.sum(wq * (hi - lo) * np.abs(mode.profile(x)) ** 2))

    # split the domain at the core ends so the integrand is smooth per piece
    pts = sorted({domain[0], domain[1], *[c for c in core if domain[0] < c < domain[1]]})
    total = sum(integral(a, b) for a, b in zip(pts[:-1], pts[1:]))
    inside = integral(max(core[0], domain[0]), min(core[1], domain[1]))
    return inside / total


# ---------------------------------------------------------------------------
# Observables of a discrete solution
# ---------------------------------------------------------------------------

def _cut_quadrature(solution, z, nq=None):
    """Points, weights and field values of the solution along the cut z = const."""
    mesh = solution.mesh
    eids = mesh.elements_at_z(z)
    xs, ws, vals = [], [], []
    for eid in eids:
        x0, x1, z0, z1 = mesh.box(eid)
        tz = np.array([(z - z0) / (z1 - z0)])
        if mesh.dim == 1:
            f = solution.reference_values(eid, None, tz)
            xs.append(np.array([0.0]))
            ws.append(np.array([1.0]))
        else:
            n = nq or solution.problem.p + solution.problem.dp + 3
            t, w = gauss(n)
            f = solution.reference_values(eid, t, tz)
            xs.append(x0 + (x1 - x0) * t)
            ws.append((x1 - x0) * w)
        vals.append(f[..., 0] if f.ndim == 3 else f)
    return np.concatenate(xs), np.concatenate(ws), np.concatenate(vals, axis=1)


def power_flux(solution, z: float) -> float:
    """Time-averaged power Re int p conj(u_z) dx / 2 through the cross-section z."""
    _, w, f = _cut_quadrature(solution, z)
    return float(0.5 * np.real(np.sum(w * f[-1] * np.conj(f[-2]))))


def exact_power_flux(mode: ModeSpec, z: float, a: float = 1.0, amplitude=1.0, nq=200) -> float:
    t, w = gauss(nq)
    x = a * t
    _, uz, p = mode.fields(x, np.full_like(x, z), amplitude)
    return float(0.5 * np.real(np.sum(a * w * p * np.conj(uz))))


def power_loss(solution) -> float:
    """Percentage of input power lost between the input and output cross-sections."""
    mesh = solution.mesh
    f0 = power_flux(solution, float(mesh.zs[0]))
    f1 = power_flux(solution, float(mesh.zs[-1]))
    if f0 == 0.0:
        raise ZeroDivisionError("zero power flux at the input")
    return 100.0 * (1.0 - f1 / f0)


def relative_l2_error(solution, exact: Callable | ModeSpec | None = None, extra: int = 2) -> float:
    """100 * ||u_h - u|| / ||u|| over all field components."""
    if exact is None:
        exact = solution.problem.exact
    if isinstance(exact, ModeSpec):
        exact = exact_fields(exact, solution.mesh.dim)
    num = den = 0.0
    mesh = solution.mesh
    nq = solution.problem.p + solution.problem.dp + 2 + extra
    t, w = gauss(nq)
    for eid in mesh.active:
        x0, x1, z0, z1 = mesh.box(eid)
        if mesh.dim == 1:
            f = solution.reference_values(eid, None, t)          # (2, nq)
            z = z0 + (z1 - z0) * t
            ex = np.asarray(exact(np.zeros_like(z), z))
            wt = (z1 - z0) * w
        else:
            f = solution.reference_values(eid, t, t)             # (3, nq, nq)
            X, Z = np.meshgrid(x0 + (x1 - x0) * t, z0 + (z1 - z0) * t, indexing="ij")
            ex = np.asarray(exact(X, Z))
            wt = np.outer((x1 - x0) * w, (z1 - z0) * w)
        num += float(np.sum(wt * np.abs(f - ex) ** 2))
        den += float(np.sum(wt * np.abs(ex) ** 2))
    return 100.0 * np.sqrt(num / den)


def exact_fields(mode: ModeSpec, dim: int, amplitude=1.0):
    """Callable returning the exact field components in solver order."""
    if dim == 1:
        def f1(x, z):
            p = amplitude * np.exp(-1j * mode.kz * np.asarray(z))
            return np.array([mode.kz / mode.omega * p, p])
        return f1

    def f2(x, z):
        return np.array(mode.fields(x, z, amplitude))
    return f2


def mode_overlap(solution, mode: ModeSpec, z: float) -> complex:
    """Modal coefficient int p(x, z) phi_m(x) dx of the discrete scalar field."""
    x, w, f = _cut_quadrature(solution, z)
    if solution.mesh.dim == 1:
        return complex(f[-1][0])
    return complex(np.sum(w * f[-1] * mode.profile(x)))


def modal_amplitudes(p_vals, x, w, mode: ModeSpec):
    """Modal coefficient of sampled scalar data on a cut (quadrature already given)."""
    return complex(np.sum(w * p_vals * mode.profile(x)))


def reflection_coefficient(solution, mode: ModeSpec, z: float | None = None) -> complex:
    """Backward/forward amplitude ratio of ``mode`` at cross-section z.

    Splits the projected scalar and flux coefficients c_p, c_u into forward
    and backward parts using c_u = (c_f - c_b) / Z, c_p = c_f + c_b.
    """
    mesh = solution.mesh
    z = float(mesh.zs[0]) if z is None else z
    x, w, f = _cut_quadrature(solution, z)
    if mesh.dim == 1:
        cp, cu = complex(f[-1][0]), complex(f[-2][0])
    else:
        phi = mode.profile(x)
        cp = complex(np.sum(w * f[-1] * phi))
        cu = complex(np.sum(w * f[-2] * phi))
    zm = mode.impedance
    fwd = 0.5 * (cp + zm * cu)
    bwd = 0.5 * (cp - zm * cu)
    return bwd / fwd
