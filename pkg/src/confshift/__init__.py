"""Subspace learning for domain adaptation under confounded concept shift.

A linear structural causal model with a confounder whose variance changes
between a labeled source and an unlabeled target environment, a
stability-penalized subspace regression fitted by Riemannian gradient
descent on the Stiefel manifold, and numerical checks of the accompanying
risk bounds.
"""

__version__ = "0.1.0"

from .analysis import (
    BoundReport,
    SweepResult,
    alignment_bound_check,
    eigenvalue_lemma_check,
    improvement_region_scan,
    population_pair,
    stability_bound_check,
    surrogate_bound_check,
    sweep,
)
from .moments import DatasetSchema, dataset_recipe, estimate_moments, ingest_csv, standardize
from .objective import MomentPair, RegParams, reduced_objective, riemannian_gradient
from .optimizer import FitResult, OptimizerOptions, minimize
from .scm import (
    CovariateMoments,
    Dataset,
    EnvironmentMoments,
    ScmParams,
    best_linear,
    canonical_params,
    population_moments,
    random_params,
    risk,
    risk_gap_identity,
    sample,
    subspace_oracle,
    toy_params,
)
from .stiefel import StiefelPoint, project_tangent, retract_polar
