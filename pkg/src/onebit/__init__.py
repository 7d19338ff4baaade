"""One-bit signal recovery with randomized Kaczmarz feasibility solvers."""

from . import analysis, feasibility, orka, sensing, structured
from .estimators import OrkaRegressor
from .feasibility import (
    SOLVERS,
    ConvergenceTrace,
    SolverConfig,
    block_skm_solve,
    prskm_solve,
    quantile_rka_solve,
    rka_solve,
    skm_solve,
)
from .orka import (
    AdaptiveConfig,
    OneBitPolyhedron,
    adaptive_threshold_solve,
    build_polyhedron,
    consistency_check,
    orka_solve,
)
from .sensing import DitherConfig, NoiseConfig, OneBitMeasurements, quantize
from .structured import (
    MatrixSensingProblem,
    SparseProblem,
    StructuredConfig,
    factorized_orka_solve,
    ht_orka_solve,
    st_orka_solve,
    svp_orka_solve,
)

__version__ = "0.1.0"

__all__ = [
    "analysis",
    "feasibility",
    "orka",
    "sensing",
    "structured",
    "OrkaRegressor",
    "SOLVERS",
    "ConvergenceTrace",
    "SolverConfig",
    "rka_solve",
    "skm_solve",
    "prskm_solve",
    "block_skm_solve",
    "quantile_rka_solve",
    "AdaptiveConfig",
    "OneBitPolyhedron",
    "adaptive_threshold_solve",
    "build_polyhedron",
    "consistency_check",
    "orka_solve",
    "DitherConfig",
    "NoiseConfig",
    "OneBitMeasurements",
    "quantize",
    "MatrixSensingProblem",
    "SparseProblem",
    "StructuredConfig",
    "factorized_orka_solve",
    "ht_orka_solve",
    "st_orka_solve",
    "svp_orka_solve",
]
