"""Point-structure estimation from uncertain distance constraints.

Gaussian constraints are handled by iterated Kalman measurement updates;
Gaussian-mixture constraints by fanning into unimodal branches and
recombining them by moment matching.
"""
from .ekf import ConvergenceTrace, kalman_update, reheat, reorder_constraints, solve_unimodal
from .estimator import ConstraintStructureEstimator
from .exceptions import (
    AlignmentError,
    DegenerateGeometryError,
    GenerationError,
    InvalidArgumentError,
    NumericalFailureError,
    ProbStructError,
)
from .metrics import component_identification_rate, ellipsoids, error_summary, rmsd_superposed
from .mixture import (
    multicomponent_error,
    posterior_weights,
    recombine,
    run_pipeline,
    solve_multicomponent,
    warm_start,
)
from .model import (
    GaussianComponent,
    MixtureConstraint,
    SolverConfig,
    StateEstimate,
    collapse_mixture,
    distance_h,
    distance_jacobian,
)
from .synth import (
    ExperimentSpec,
    GroundTruth,
    generate_ground_truth,
    random_start,
    synthesize_constraints,
)

__version__ = "0.1.0"
