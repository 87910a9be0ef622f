"""Dörfler marking and the solve / estimate / mark / refine loop."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dpg import Solution, assemble_solve
from .mesh import FIBER_LABELS, MarkSet, Mesh, refine
from .physics import WaveProblem, relative_l2_error

STRATEGIES = ("iso", "aniso_x", "aniso_z")


@dataclass
class AdaptConfig:
    """Marking fraction, refinement strategy and stopping rules."""

    kappa: float = 0.5
    strategy: str = "iso"
    max_steps: int = 4
    tol: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")


def dorfler_mark(residuals, kappa: float, mode: str = "iso") -> MarkSet:
    """Smallest set of largest residuals carrying a fraction kappa of the total.

    ``residuals`` is a sequence of ``(element id, eta)`` pairs. Elements are
    taken in descending order of eta, ties going to the smaller id, until
    the accumulated eta^2 reaches kappa times the total.
    """
    items = [(int(e), float(r)) for e, r in residuals]
    if not items:
        raise ValueError("empty residual list")
    if any(r < 0 for _, r in items):
        raise ValueError("residuals must be non-negative")
    items.sort(key=lambda t: (-t[1], t[0]))
    total = sum(r * r for _, r in items)
    target = kappa * total
    acc = 0.0
    marked = []
    for eid, r in items:
        if marked and acc >= target:
            break
        marked.append(eid)
        acc += r * r
    return MarkSet.uniform(marked, mode)


def domain_histogram(marks: MarkSet, mesh: Mesh, labels=None) -> dict[str, int]:
    """Number of marked elements per domain label."""
    if labels is None:
        labels = FIBER_LABELS if set(mesh.labels) <= set(FIBER_LABELS) else mesh.labels
    counts = Counter(mesh.label_of(e) for e in marks.ids)
    return {lab: int(counts.get(lab, 0)) for lab in labels}


@dataclass
class AdaptStep:
    step: int
    total_residual: float
    n_dofs: int
    n_elements: int
    marked: list[int]
    marks_per_domain: dict[str, int]
    closure_refined: int
    rel_error: float | None = None
    mesh: Mesh | None = None


@dataclass
class AdaptTrace:
    strategy: str
    kappa: float
    steps: list[AdaptStep] = field(default_factory=list)

    @property
    def residuals(self) -> np.ndarray:
        return np.array([s.total_residual for s in self.steps])

    @property
    def dofs(self) -> np.ndarray:
        return np.array([s.n_dofs for s in self.steps])

    def core_fraction(self, core=("core_inner", "core_outer")) -> np.ndarray:
        """Per step, the fraction of marked elements that lie in the core."""
        out = []
        for s in self.steps:
            n = sum(s.marks_per_domain.values())
            if n == 0:
                out.append(np.nan)
            else:
                out.append(sum(s.marks_per_domain.get(c, 0) for c in core) / n)
        return np.array(out)


def adapt_loop(mesh: Mesh, problem: WaveProblem, cfg: AdaptConfig,
               exact: Callable | None = None, keep_meshes: bool = True,
               on_step: Callable[[AdaptStep, Solution], None] | None = None) -> AdaptTrace:
    """Alternate solve, estimate, mark and refine.

    Step k records the solve on the k-th mesh and the marks made from it; the
    last recorded step (k = max_steps) is a solve without further refinement.
    """
    trace = AdaptTrace(cfg.strategy, cfg.kappa)
    cur = mesh
    closure = 0
    for k in range(cfg.max_steps + 1):
        sol = assemble_solve(cur, problem)
        err = relative_l2_error(sol, exact) if exact is not None else None
        last = k == cfg.max_steps or sol.residual <= cfg.tol
        if last:
            marks = MarkSet()
        else:
            marks = dorfler_mark(zip(sol.dofmap.elements, sol.eta), cfg.kappa, cfg.strategy)
        step = AdaptStep(k, sol.residual, sol.n_dofs, len(cur.active), marks.ids,
                         domain_histogram(marks, cur), closure, err,
                         cur if keep_meshes else None)
        trace.steps.append(step)
        if on_step is not None:
            on_step(step, sol)
        if last:
            break
        cur = refine(cur, marks)
        closure = len(cur.closure_refined)
    return trace
