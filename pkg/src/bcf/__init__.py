"""Boosted control functions: invariant prediction under confounded shifts."""

from .estimator import (
    BcfConfig,
    BcfModel,
    ImpOracle,
    RiskDecomposition,
    UnsupportedOracleError,
    control_twicing,
    fit_bcf,
    fit_constant_baseline,
    fit_delta,
    fit_ls,
    imp_oracle_predict,
    imp_oracle_risk,
    risk_decomposition_check,
    structural_oracle,
)
from .experiments import ExperimentConfig, ResultRow, emit_results, read_results, run_experiment
from .learners import LearnerConfig, fit_learner
from .linalg import ZeroMap, haar_orthonormal, null_space_basis, projection_matrix, subspace_distance
from .rankreg import RankDeficientDesignError, RankRegConfig, RankRegFit
from .simdg import (
    Dataset,
    GaussianNoiseSpec,
    SimdgSpec,
    TreeFunction,
    encode_categorical,
    evaluate_tree,
    generate,
    sample_m0,
    sample_noise_spec,
    sample_tree_function,
)

__all__ = [
    "BcfConfig",
    "BcfModel",
    "Dataset",
    "ExperimentConfig",
    "GaussianNoiseSpec",
    "ImpOracle",
    "LearnerConfig",
    "RankDeficientDesignError",
    "RankRegConfig",
    "RankRegFit",
    "ResultRow",
    "RiskDecomposition",
    "SimdgSpec",
    "TreeFunction",
    "UnsupportedOracleError",
    "ZeroMap",
    "control_twicing",
    "emit_results",
    "encode_categorical",
    "evaluate_tree",
    "fit_bcf",
    "fit_constant_baseline",
    "fit_delta",
    "fit_learner",
    "fit_ls",
    "generate",
    "haar_orthonormal",
    "imp_oracle_predict",
    "imp_oracle_risk",
    "null_space_basis",
    "projection_matrix",
    "read_results",
    "risk_decomposition_check",
    "run_experiment",
    "sample_m0",
    "sample_noise_spec",
    "sample_tree_function",
    "structural_oracle",
    "subspace_distance",
]

__version__ = "0.1.0"
