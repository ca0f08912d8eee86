"""Gridless LASSO direction-of-arrival estimation with first-order performance analysis.

Modules
-------
manifold         array manifolds, sparse representations, noise and data generation
grid_lasso       group LASSO on a fixed grid with a KKT certificate
class_estimator  continuous (gridless) LASSO estimate and its certificate
perturbation     first-order expansion of the estimate around the truth
consistency      noiseless consistency test and resolution threshold
performance      optimal regularization, its moments, bias and covariance
baselines        maximum-likelihood (NLLS) and beamforming estimators
experiments      seeded Monte Carlo harness and figure datasets
"""

from __future__ import annotations

from .baselines import BaselineEstimate, cbf_estimate, nlls_ml_estimate
from .class_estimator import (
    CertificationError,
    ClassCertificate,
    ClassOptions,
    ClassSolution,
    grid_fineness,
    properness_max_count,
    reduce_representation,
    set_distance,
    solve_class,
    solve_class_for_order,
    verify_class_optimality,
)
from .consistency import (
    asymptotic_consistency_test,
    asymptotic_kernels,
    check_consistency,
    resolution_threshold_search,
)
from .grid_lasso import Grid, kkt_check, lambda_max, solve_group_lasso, solve_noiseless_bp
from .manifold import (
    NoiseModel,
    Observation,
    PlanarArrayManifold,
    SparseRepresentation,
    UlaManifold,
    generate_observation,
    load_geometry,
    steering_derivative,
    steering_vector,
)
from .performance import (
    LambdaMoments,
    PerformancePrediction,
    extreme_value_moments,
    lambda_approx,
    optimal_lambda_exact,
    predict_performance,
)
from .perturbation import (
    PerturbationExpansion,
    build_expansion,
    delta_from_noise,
    predicted_amplitude_shift,
    predicted_theta_shift,
)

__version__ = "0.1.0"
