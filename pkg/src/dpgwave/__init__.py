"""Ultraweak DPG discretization of first-order time-harmonic guided waves."""

from .adapt import AdaptConfig, AdaptTrace, adapt_loop, domain_histogram, dorfler_mark
from .dpg import Solution, assemble_solve, compute_residual, estimate_infsup
from .mesh import MarkSet, Mesh, build_waveguide_mesh, refine
from .partition import (BalanceMetrics, PartitionState, balance_metrics, rebalance_graph,
                        rebalance_orthogonal, replay, static_partition)
from .physics import (BoundaryCondition, TestNormConfig, WaveProblem, plane_wave_1d,
                      rectangular_mode, slab_modes)

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig", "AdaptTrace", "adapt_loop", "domain_histogram", "dorfler_mark",
    "Solution", "assemble_solve", "compute_residual", "estimate_infsup",
    "MarkSet", "Mesh", "build_waveguide_mesh", "refine",
    "BalanceMetrics", "PartitionState", "balance_metrics", "rebalance_graph",
    "rebalance_orthogonal", "replay", "static_partition",
    "BoundaryCondition", "TestNormConfig", "WaveProblem", "plane_wave_1d",
    "rectangular_mode", "slab_modes",
]
