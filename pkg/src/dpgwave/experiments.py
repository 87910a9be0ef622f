"""Problem factories and sweep drivers behind the command line harness.

Every driver takes an :class:`ExperimentConfig` and returns a
:class:`SweepResult` holding one or more named tables. Rows are produced in
grid order regardless of how many worker threads ran the solves, so equal
configurations give equal tables apart from the ``wall_time`` column.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterable

import numpy as np

from . import physics as ph
from .adapt import STRATEGIES, AdaptConfig, adapt_loop
from .dpg import assemble_solve, estimate_infsup
from .mesh import FIBER_LABELS, MarkSet, Mesh, build_waveguide_mesh, refine
from .partition import POLICIES, replay

EXPERIMENTS = ("pollution", "aniso", "adapt", "partition", "convergence", "stability")

POLLUTION_COLUMNS = ("dim", "length", "p", "epw", "rel_error_pct", "power_loss_pct",
                     "dofs", "wall_time")
ANISO_COLUMNS = ("kind", "refinement", "length", "p", "pz", "epw", "epw_z", "layers",
                 "rel_error_pct", "power_loss_pct", "dofs", "wall_time")
ADAPT_COLUMNS = ("step", "total_residual", "n_dofs") + tuple(f"marks_{d}" for d in FIBER_LABELS)
HISTOGRAM_COLUMNS = ("step", "domain", "marks")
PARTITION_COLUMNS = ("step", "rank", "workload", "imbalance", "migration", "interface_dofs")
CONVERGENCE_COLUMNS = ("p", "level", "h", "length", "epw", "layers", "rel_error_pct",
                       "residual", "dofs", "wall_time")
STABILITY_COLUMNS = ("level", "n_elements", "gamma_h", "M", "dofs", "wall_time")

# Slab geometry used by the adaptivity and partition studies: core half-width
# and hard wall position, in the same length unit as the wavelength.
SLAB_HALF_WIDTH = 0.25
SLAB_WALL = 1.0


class ConfigError(ValueError):
    """An experiment configuration that cannot be run."""


@dataclass
class ExperimentConfig:
    """Parameters of one harness run; unused fields are ignored by a driver."""

    experiment: str = "pollution"
    dim: int = 2
    lengths: tuple[int, ...] = (4, 8, 16, 32, 64)
    p_values: tuple[int, ...] = (2,)
    epw: int = 4
    dp: int = 1
    alpha: float = 1.0
    omega: float = 2 * math.pi
    layers: int = 2
    # anisotropic sweep: the z-only axis ("p" varies pz, "h" varies epw_z)
    aniso_axis: str = "p"
    z_values: tuple[int, ...] = (2, 3, 4, 5, 6)
    # slab adaptivity and partitioning
    v_number: float = 5.0
    modes: tuple[int, ...] = (0, 1, 2, 3)
    strategies: tuple[str, ...] = ("iso", "aniso_x")
    kappa: float = 0.5
    steps: int = 4
    core_layers: int = 2
    clad_inner_layers: int = 1
    clad_outer_layers: int = 1
    n_ranks: int = 8
    policies: tuple[str, ...] = POLICIES
    balance_tol: float = 0.1
    # convergence and stability
    levels: int = 3
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.dim not in (1, 2):
            raise ConfigError("dim must be 1 or 2")
        if any(int(v) != v or v < 1 for v in self.lengths):
            raise ConfigError("lengths must be positive integers")
        if any(v < 1 for v in self.p_values) or any(v < 1 for v in self.z_values):
            raise ConfigError("polynomial orders must be >= 1")
        for name in ("epw", "dp", "layers", "core_layers", "clad_inner_layers",
                     "clad_outer_layers", "n_ranks", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.steps < 0 or self.levels < 0:
            raise ConfigError("steps and levels must be non-negative")
        if not (self.alpha > 0 and self.omega > 0 and self.v_number > 0):
            raise ConfigError("alpha, omega and v_number must be positive")
        if not 0.0 < self.kappa < 1.0:
            raise ConfigError("kappa must lie in (0, 1)")
        if self.aniso_axis not in ("p", "h"):
            raise ConfigError("aniso_axis must be 'p' or 'h'")
        if bad := [s for s in self.strategies if s not in STRATEGIES]:
            raise ConfigError(f"unknown strategies {bad}")
        if bad := [s for s in self.policies if s not in POLICIES]:
            raise ConfigError(f"unknown policies {bad}")
        if any(m < 0 for m in self.modes):
            raise ConfigError("mode indices must be non-negative")

    def params(self) -> dict:
        """The parameter tuple echoed into every table row."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = " ".join(map(str, v)) if isinstance(v, tuple) else v
        return out


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)


@dataclass
class SweepResult:
    """Named output tables plus the number of grid points that failed."""

    tables: dict[str, Table] = field(default_factory=dict)
    failures: int = 0
    meshes: dict[str, Mesh] = field(default_factory=dict)

    def table(self, name: str, columns) -> Table:
        if name not in self.tables:
            self.tables[name] = Table(tuple(columns))
        return self.tables[name]


# ---------------------------------------------------------------------------
# Problem factories
# ---------------------------------------------------------------------------

def _zero(x, z):
    return np.zeros_like(np.asarray(x, dtype=float))


def plane_wave_problem(omega: float, p: int, dp: int = 1, alpha: float = 1.0,
                       n: float = 1.0, order_z: int | None = None) -> ph.WaveProblem:
    """1D forward wave driven at z = 0 and absorbed by an impedance end."""
    mode = ph.plane_wave_1d(omega, n)
    bcs = {"input": ph.BoundaryCondition("dirichlet", lambda x, z: np.exp(-1j * mode.kz * z)),
           "output": ph.BoundaryCondition("impedance", impedance=mode.impedance)}
    return ph.WaveProblem(omega, bcs, {"bulk": n}, p=p, dp=dp, mode=mode,
                          exact=ph.exact_fields(mode, 1), norm=ph.TestNormConfig(alpha),
                          order_z=order_z)


def rect_mode_problem(omega: float, p: int, dp: int = 1, alpha: float = 1.0, m: int = 1,
                      width: float = 1.0, order_z: int | None = None) -> ph.WaveProblem:
    """Hard-wall guide driven by mode ``m`` at the input and terminated by its impedance."""
    mode = ph.rectangular_mode(m, omega, width)
    if not mode.propagating:
        raise ConfigError(f"mode {m} does not propagate at omega = {omega}")
    bcs = {"input": ph.BoundaryCondition("dirichlet", lambda x, z: mode.fields(x, z)[2]),
           "wall": ph.BoundaryCondition("dirichlet", _zero),
           "output": ph.BoundaryCondition("impedance", impedance=mode.impedance)}
    return ph.WaveProblem(omega, bcs, p=p, dp=dp, mode=mode, exact=ph.exact_fields(mode, 2),
                          norm=ph.TestNormConfig(alpha), order_z=order_z)


def slab_index(n_core: float = 1.4512, n_clad: float = 1.45) -> dict[str, float]:
    return {"core_inner": n_core, "core_outer": n_core,
            "cladding_inner": n_clad, "cladding_outer": n_clad}


def slab_problem(mode: ph.SlabMode, p: int, dp: int = 1, alpha: float = 1.0) -> ph.WaveProblem:
    """Half slab x in (0, wall) with the symmetry plane at x = 0.

    Even modes get a zero-flux condition on the symmetry plane and odd modes
    a zero scalar trace. The input carries the exact mode, the wall is hard
    and the output is terminated by the modal impedance.
    """
    if mode.parity == "even":
        axis = ph.BoundaryCondition("flux", _zero)
    else:
        axis = ph.BoundaryCondition("dirichlet", _zero)
    bcs = {"input": ph.BoundaryCondition("dirichlet", lambda x, z: mode.fields(x, z)[2]),
           "wall": ph.BoundaryCondition("dirichlet", _zero),
           "output": ph.BoundaryCondition("impedance", impedance=mode.impedance),
           "axis": axis}
    return ph.WaveProblem(mode.omega, bcs, slab_index(mode.n_core, mode.n_clad), p=p, dp=dp,
                          mode=mode, exact=ph.exact_fields(mode, 2),
                          norm=ph.TestNormConfig(alpha))


def slab_mesh(mode: ph.SlabMode, length: int, epw: int, p: int, core_layers: int = 2,
              clad_inner_layers: int = 1, clad_outer_layers: int = 1,
              half_width: float = SLAB_HALF_WIDTH, wall: float = SLAB_WALL) -> Mesh:
    """Labelled slab mesh.

    The core (0, d) is split into ``2 * core_layers`` equal layers, the
    inner half labelled ``core_inner``; the cladding has ``clad_inner_layers``
    layers on (d, 2d) and ``clad_outer_layers`` layers on (2d, wall).
    """
    d = half_width
    if wall <= 2 * d:
        raise ConfigError("the wall must lie beyond twice the core half-width")
    core = np.linspace(0.0, d, 2 * core_layers + 1)[1:]
    inner = np.linspace(d, 2 * d, clad_inner_layers + 1)[1:]
    outer = np.linspace(2 * d, wall, clad_outer_layers + 1)[1:]
    xs = np.concatenate([core, inner, outer])[:-1]
    labels = (["core_inner"] * core_layers + ["core_outer"] * core_layers
              + ["cladding_inner"] * clad_inner_layers + ["cladding_outer"] * clad_outer_layers)
    return build_waveguide_mesh(length, epw, len(labels), p, layer_boundaries=xs,
                                wavelength=mode.wavelength, width=wall, labels=labels,
                                symmetry_axis=True)


def slab_modes_for(cfg: ExperimentConfig) -> list[ph.SlabMode]:
    modes = ph.slab_modes(cfg.v_number, half_width=SLAB_HALF_WIDTH, wall=SLAB_WALL)
    if bad := [m for m in cfg.modes if m >= len(modes)]:
        raise ConfigError(f"V = {cfg.v_number} supports {len(modes)} modes; no mode {bad}")
    return modes


# ---------------------------------------------------------------------------
# Grid execution
# ---------------------------------------------------------------------------

def run_grid(tasks: Iterable[Callable[[], dict]], threads: int = 1) -> list[dict | Exception]:
    """Run independent tasks, returning results (or the raised error) in task order."""
    tasks = list(tasks)

    def guarded(task):
        try:
            return task()
        except Exception as exc:    # recorded per row; the sweep goes on
            return exc

    if threads <= 1 or len(tasks) <= 1:
        return [guarded(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, tasks))


def _emit(result: SweepResult, name: str, columns, outcome, base: dict, echo: dict,
          count: bool = True) -> None:
    table = result.table(name, tuple(columns) + tuple(echo) + ("status",))
    if isinstance(outcome, Exception):
        result.failures += count
        row = dict.fromkeys(columns, "")
        row.update(base)
        row.update(echo)
        row["status"] = f"error: {type(outcome).__name__}: {outcome}"
        table.rows.append(row)
        return
    row = dict(outcome)
    row.update(echo)
    row["status"] = "ok"
    table.rows.append(row)


def _echo(cfg: ExperimentConfig, keys) -> dict:
    p = cfg.params()
    return {k: p[k] for k in keys}


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------

def _solve_guide(dim, length, p, epw, cfg, order_z=None, epw_z=None, layers=None):
    t0 = time.perf_counter()
    if dim == 1:
        prob = plane_wave_problem(cfg.omega, p, cfg.dp, cfg.alpha, order_z=order_z)
        mesh = build_waveguide_mesh(length, epw_z or epw, 0, p, wavelength=prob.mode.wavelength)
    else:
        prob = rect_mode_problem(cfg.omega, p, cfg.dp, cfg.alpha, order_z=order_z)
        mesh = build_waveguide_mesh(length, epw_z or epw, cfg.layers if layers is None else layers,
                                    p, wavelength=prob.mode.wavelength, width=prob.mode.width)
    sol = assemble_solve(mesh, prob)
    return sol, time.perf_counter() - t0


def run_pollution_sweep(cfg: ExperimentConfig) -> SweepResult:
    """One fundamental-mode solve per (p, length) grid point."""
    result = SweepResult()
    result.table("pollution", POLLUTION_COLUMNS + ("omega", "dp", "alpha", "layers", "seed",
                                                    "status"))
    grid = [(p, L) for p in cfg.p_values for L in cfg.lengths]

    def task(p, L):
        def go():
            sol, wall = _solve_guide(cfg.dim, L, p, cfg.epw, cfg)
            return {"dim": cfg.dim, "length": L, "p": p, "epw": cfg.epw,
                    "rel_error_pct": ph.relative_l2_error(sol),
                    "power_loss_pct": ph.power_loss(sol), "dofs": sol.n_dofs,
                    "wall_time": wall}
        return go

    outs = run_grid([task(p, L) for p, L in grid], cfg.threads)
    echo = _echo(cfg, ("omega", "dp", "alpha", "layers", "seed"))
    for (p, L), out in zip(grid, outs):
        base = {"dim": cfg.dim, "length": L, "p": p, "epw": cfg.epw}
        _emit(result, "pollution", POLLUTION_COLUMNS, out, base, echo)
    return result


def run_aniso_sweep(cfg: ExperimentConfig) -> SweepResult:
    """z-only enrichment at fixed transverse resolution, with an isotropic control.

    With ``aniso_axis = p`` the z order runs over ``z_values`` while the x
    order stays at the first entry of ``p_values``; the control raises both.
    With ``aniso_axis = h`` the elements per wavelength along z run over
    ``z_values`` at ``layers`` transverse layers; the control scales the
    layer count by the same factor.
    """
    result = SweepResult()
    result.table("aniso", ANISO_COLUMNS + ("dim", "omega", "dp", "alpha", "seed", "status"))
    p0 = cfg.p_values[0]
    L = cfg.lengths[0]
    grid = []
    for kind in ("aniso", "iso"):
        for v in cfg.z_values:
            if cfg.aniso_axis == "p":
                p, pz, epw_z, layers = (p0, v, cfg.epw, cfg.layers) if kind == "aniso" \
                    else (v, v, cfg.epw, cfg.layers)
            else:
                scale = v / cfg.z_values[0]
                layers = cfg.layers if kind == "aniso" else max(1, round(cfg.layers * scale))
                p, pz, epw_z = p0, p0, v
            grid.append((kind, p, pz, epw_z, layers))

    def task(kind, p, pz, epw_z, layers):
        def go():
            sol, wall = _solve_guide(2, L, p, cfg.epw, cfg, order_z=pz if pz != p else None,
                                     epw_z=epw_z, layers=layers)
            return {"kind": kind, "refinement": cfg.aniso_axis, "length": L, "p": p, "pz": pz,
                    "epw": cfg.epw, "epw_z": epw_z, "layers": layers,
                    "rel_error_pct": ph.relative_l2_error(sol),
                    "power_loss_pct": ph.power_loss(sol), "dofs": sol.n_dofs,
                    "wall_time": wall}
        return go

    outs = run_grid([task(*g) for g in grid], cfg.threads)
    echo = {"dim": 2, **_echo(cfg, ("omega", "dp", "alpha", "seed"))}
    for (kind, p, pz, epw_z, layers), out in zip(grid, outs):
        base = {"kind": kind, "refinement": cfg.aniso_axis, "length": L, "p": p, "pz": pz,
                "epw": cfg.epw, "epw_z": epw_z, "layers": layers}
        _emit(result, "aniso", ANISO_COLUMNS, out, base, echo)
    return result


def slab_adapt(cfg: ExperimentConfig, mode_index: int, strategy: str, length: int,
               keep_meshes: bool = False):
    """Adaptive run of one slab mode; returns the trace."""
    mode = slab_modes_for(cfg)[mode_index]
    p = cfg.p_values[0]
    mesh = slab_mesh(mode, length, cfg.epw, p, cfg.core_layers, cfg.clad_inner_layers,
                     cfg.clad_outer_layers)
    prob = slab_problem(mode, p, cfg.dp, cfg.alpha)
    return adapt_loop(mesh, prob, AdaptConfig(cfg.kappa, strategy, cfg.steps),
                      keep_meshes=keep_meshes)


def run_adapt_study(cfg: ExperimentConfig) -> SweepResult:
    """Adaptive refinement of each slab mode under each strategy.

    Produces ``adapt_m<mode>_<strategy>`` with one row per step and
    ``hist_m<mode>_<strategy>`` with one row per (step, domain).
    """
    slab_modes_for(cfg)
    result = SweepResult()
    L = cfg.lengths[0]
    grid = [(m, s) for m in cfg.modes for s in cfg.strategies]
    outs = run_grid([lambda m=m, s=s: slab_adapt(cfg, m, s, L, keep_meshes=True)
                     for m, s in grid], cfg.threads)
    echo_keys = ("v_number", "kappa", "p_values", "epw", "dp", "alpha", "core_layers",
                 "clad_inner_layers", "clad_outer_layers", "seed")
    for (m, s), trace in zip(grid, outs):
        echo = {"mode": m, "strategy": s, "length": L, **_echo(cfg, echo_keys)}
        name, hname = f"adapt_m{m}_{s}", f"hist_m{m}_{s}"
        if isinstance(trace, Exception):
            _emit(result, name, ADAPT_COLUMNS, trace, {}, echo)
            _emit(result, hname, HISTOGRAM_COLUMNS, trace, {}, echo, count=False)
            continue
        result.meshes[f"mesh_m{m}_{s}"] = trace.steps[-1].mesh
        for st in trace.steps:
            row = {"step": st.step, "total_residual": st.total_residual, "n_dofs": st.n_dofs}
            row.update({f"marks_{d}": st.marks_per_domain.get(d, 0) for d in FIBER_LABELS})
            _emit(result, name, ADAPT_COLUMNS, row, {}, echo)
            for d in FIBER_LABELS:
                _emit(result, hname, HISTOGRAM_COLUMNS,
                      {"step": st.step, "domain": d, "marks": st.marks_per_domain.get(d, 0)},
                      {}, echo)
    return result


def run_partition_study(cfg: ExperimentConfig) -> SweepResult:
    """Replay an isotropic adaptive trace through every partitioning policy."""
    slab_modes_for(cfg)
    result = SweepResult()
    m = cfg.modes[-1]
    L = cfg.lengths[0]
    echo_keys = ("v_number", "kappa", "p_values", "epw", "dp", "alpha", "n_ranks",
                 "balance_tol", "seed")
    try:
        trace = slab_adapt(cfg, m, "iso", L, keep_meshes=True)
    except Exception as exc:
        for pol in cfg.policies:
            _emit(result, f"partition_{pol}", PARTITION_COLUMNS, exc, {},
                  {"policy": pol, "mode": m, "length": L, **_echo(cfg, echo_keys)})
        return result
    meshes = [s.mesh for s in trace.steps]
    result.meshes = {f"mesh_step{k}": msh for k, msh in enumerate(meshes)}
    outs = run_grid([lambda pol=pol: replay(meshes, cfg.n_ranks, pol, cfg.balance_tol, cfg.seed)
                     for pol in cfg.policies], cfg.threads)
    for pol, out in zip(cfg.policies, outs):
        echo = {"policy": pol, "mode": m, "length": L, **_echo(cfg, echo_keys)}
        name = f"partition_{pol}"
        if isinstance(out, Exception):
            _emit(result, name, PARTITION_COLUMNS, out, {}, echo)
            continue
        for k, (state, met) in enumerate(out):
            for r in range(state.n_ranks):
                _emit(result, name, PARTITION_COLUMNS,
                      {"step": k, "rank": r, "workload": int(state.workloads[r]),
                       "imbalance": met.imbalance, "migration": met.migration,
                       "interface_dofs": int(state.interface)}, {}, echo)
    return result


def run_convergence(cfg: ExperimentConfig) -> SweepResult:
    """Uniform h-refinement of the 2D fundamental mode for every p."""
    result = SweepResult()
    L = cfg.lengths[0]
    grid = [(p, k) for p in cfg.p_values for k in range(cfg.levels + 1)]

    def task(p, k):
        def go():
            epw, layers = cfg.epw * 2**k, cfg.layers * 2**k
            sol, wall = _solve_guide(2, L, p, epw, cfg, layers=layers)
            return {"p": p, "level": k, "h": 1.0 / layers, "length": L, "epw": epw,
                    "layers": layers, "rel_error_pct": ph.relative_l2_error(sol),
                    "residual": sol.residual, "dofs": sol.n_dofs, "wall_time": wall}
        return go

    outs = run_grid([task(p, k) for p, k in grid], cfg.threads)
    echo = _echo(cfg, ("omega", "dp", "alpha", "seed"))
    for (p, k), out in zip(grid, outs):
        base = {"p": p, "level": k, "length": L, "epw": cfg.epw * 2**k,
                "layers": cfg.layers * 2**k}
        _emit(result, "convergence", CONVERGENCE_COLUMNS, out, base, echo)
    return result


def run_stability(cfg: ExperimentConfig) -> SweepResult:
    """Discrete inf-sup constant of a 1D problem under uniform refinement."""
    result = SweepResult()
    L = cfg.lengths[0]
    p = cfg.p_values[0]
    prob = plane_wave_problem(cfg.omega, p, cfg.dp, cfg.alpha)
    echo = _echo(cfg, ("omega", "dp", "alpha", "p_values", "lengths", "epw", "seed"))
    mesh = build_waveguide_mesh(L, cfg.epw, 0, p, wavelength=prob.mode.wavelength)
    for k in range(cfg.levels + 1):
        t0 = time.perf_counter()
        try:
            rep = estimate_infsup(mesh, prob)
            out = {"level": k, "n_elements": len(mesh.active), "gamma_h": rep.gamma_h,
                   "M": rep.M, "dofs": rep.n_dofs, "wall_time": time.perf_counter() - t0}
        except Exception as exc:
            out = exc
        _emit(result, "stability", STABILITY_COLUMNS, out,
              {"level": k, "n_elements": len(mesh.active)}, echo)
        mesh = refine(mesh, MarkSet.uniform(mesh.active, "iso"))
    return result


DRIVERS = {
    "pollution": run_pollution_sweep,
    "aniso": run_aniso_sweep,
    "adapt": run_adapt_study,
    "partition": run_partition_study,
    "convergence": run_convergence,
    "stability": run_stability,
}


# Grids whose first entry a driver needs; the pollution sweep accepts any grid.
_REQUIRED = {
    "aniso": ("lengths", "p_values", "z_values"),
    "adapt": ("lengths", "p_values", "modes", "strategies"),
    "partition": ("lengths", "p_values", "modes"),
    "convergence": ("lengths",),
    "stability": ("lengths", "p_values"),
}


def run_experiment(cfg: ExperimentConfig) -> SweepResult:
    if empty := [k for k in _REQUIRED.get(cfg.experiment, ()) if not getattr(cfg, k)]:
        raise ConfigError(f"{cfg.experiment} needs non-empty {', '.join(empty)}")
    return DRIVERS[cfg.experiment](cfg)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)
