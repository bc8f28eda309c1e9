"""Bregman proximal methods for structured matrix factorization.

The library implements a stochastic Bregman proximal gradient solver with
inertial extrapolation and a safeguard step, variance-reduced gradient
estimators over column subsamples, closed-form Bregman proximal updates for
three factorization models (graph-regularized NMF, weakly convex sparse MF,
doubly sparse NMF), and a benchmark harness with a command line front-end.
"""

from .estimators import (
    SAGA,
    SARAH,
    DecayReport,
    FullGradient,
    GradientEstimator,
    MinibatchSGD,
    VarianceAudit,
    check_geometric_decay,
    estimate_sample_lipschitz,
    make_estimator,
)
from .harness import (
    ClusteringConfig,
    ConfigError,
    DataConfig,
    ExperimentConfig,
    LaplacianConfig,
    MatrixParseError,
    ProblemConfig,
    SyntheticSpec,
    basis_images,
    generate_synthetic,
    init_point,
    kmeans_accuracy,
    load_matrix,
    run_audit,
    run_compare,
    run_experiment,
    run_gen,
    save_matrix,
    write_pgm,
)
from .kernels import (
    FactorPair,
    KernelSpec,
    SmoothAdaptabilityReport,
    bregman_distance,
    check_smooth_adaptable,
    kernel_gradient,
    kernel_value,
)
from .numeric import (
    ConvergenceWarning,
    cubic_root,
    hard_threshold,
    make_rng,
    project_nonneg,
    soft_threshold,
    spectral_norm,
)
from .problems import (
    GraphRegularizedNMF,
    Problem,
    SparseNMF,
    WeaklyConvexMF,
    build_knn_laplacian,
    build_problem,
)
from .solver import (
    AuditRecord,
    IterationTrace,
    RateCheckReport,
    RunResult,
    SolverConfig,
    extrapolate,
    lyapunov,
    rate_check,
    run,
    stationarity_witness,
    step_size,
)

__version__ = "0.1.0"

__all__ = [
    "AuditRecord",
    "ClusteringConfig",
    "ConfigError",
    "ConvergenceWarning",
    "DataConfig",
    "DecayReport",
    "ExperimentConfig",
    "FactorPair",
    "FullGradient",
    "GradientEstimator",
    "GraphRegularizedNMF",
    "IterationTrace",
    "KernelSpec",
    "LaplacianConfig",
    "MatrixParseError",
    "MinibatchSGD",
    "Problem",
    "ProblemConfig",
    "RateCheckReport",
    "RunResult",
    "SAGA",
    "SARAH",
    "SmoothAdaptabilityReport",
    "SolverConfig",
    "SparseNMF",
    "SyntheticSpec",
    "VarianceAudit",
    "WeaklyConvexMF",
    "basis_images",
    "bregman_distance",
    "build_knn_laplacian",
    "build_problem",
    "check_geometric_decay",
    "check_smooth_adaptable",
    "cubic_root",
    "estimate_sample_lipschitz",
    "extrapolate",
    "generate_synthetic",
    "hard_threshold",
    "init_point",
    "kernel_gradient",
    "kernel_value",
    "kmeans_accuracy",
    "load_matrix",
    "lyapunov",
    "make_estimator",
    "make_rng",
    "project_nonneg",
    "rate_check",
    "run",
    "run_audit",
    "run_compare",
    "run_experiment",
    "run_gen",
    "save_matrix",
    "soft_threshold",
    "spectral_norm",
    "stationarity_witness",
    "step_size",
    "write_pgm",
]
