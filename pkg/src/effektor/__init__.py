"""Global feature effect estimation with a full error decomposition.

Estimate partial-dependence and accumulated-local-effects curves for
arbitrary prediction functions on a shared theoretical-quantile grid, and
decompose their estimation error into model bias, estimation bias, model
variance and estimation variance across estimation strategies (training
data, a holdout split, or k-fold cross-validation).
"""

from .dgp import (
    Dataset,
    DgpSpec,
    NoiseCalibration,
    analytic_ale,
    analytic_pd,
    calibrate_noise,
    feynman12916,
    friedman1,
    ground_truth,
    ground_truth_values,
    make_spec,
    sample_dataset,
    sample_features,
    simple_normal_correlated,
    theoretical_quantile,
)
from .decomp import (
    CurveEnsemble,
    ErrorReport,
    aggregate,
    bias_hat,
    build_error_report,
    check_variance_bounds,
    mse_hat,
    split_variance,
    var_est_hat,
    var_hat,
)
from .effects import (
    ALE,
    PD,
    BinPartition,
    EffectCurve,
    EffectGrid,
    binned_population_ale,
    build_grid,
    center_curve,
    estimate_ale,
    estimate_ground_truth_effect,
    estimate_ice,
    estimate_pd,
    explicit_grid,
    make_bins,
)
from .harness import ExperimentConfig, parse_config, run_rq1, run_rq2, run_rq3, write_results
from .models import (
    Fitter,
    GroundTruthModel,
    LearnerConfig,
    PredictionModel,
    default_learner_config,
    empirical_risk,
    fit_boosted_trees,
    fit_linear,
    fit_ridge_basis,
    predict,
)
from .strategies import StrategySpec, run_strategy, split_folds

__version__ = "0.1.0"
