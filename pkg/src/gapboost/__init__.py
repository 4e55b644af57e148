"""Selection-bias-corrected gradient boosting for audit-based gap estimation.

Library layout:

- ``data``: immutable columnar datasets, CSV I/O, cleaning and sampling
- ``tree``: weighted depth-limited CART base learners
- ``boost``: gradient boosting, losses, importance, grid tuning
- ``selection``: inclusion probabilities, inverse weights, 2-step pipeline
- ``heckman``: probit + inverse-Mills two-step baseline
- ``uncertainty``: bootstrap ensembles, intervals, coverage
- ``metrics``: AUC, MSE, paired R² variants, propensity aggregates
- ``synth``: seeded generators and the cutoff selection protocol
- ``cli``: prepare / generate / fit / bootstrap / propensity / compare
"""

from .boost import (
    BoostConfig,
    BoostModel,
    Holdout,
    KFold,
    fit_gbm,
    make_grid,
    predict_gbm,
    predict_proba,
    tune_grid,
    variable_importance,
)
from .data import (
    Column,
    Dataset,
    TaxTriple,
    categorical_column,
    filter_outliers_log,
    impute_mean,
    load_csv,
    log_transform,
    numeric_column,
    stratified_undersample,
    train_test_split,
    write_csv,
)
from .heckman import (
    HeckmanFit,
    ProbitFit,
    design_matrix,
    fit_heckman_two_step,
    fit_probit,
    inverse_mills,
    predict_heckman,
)
from .metrics import auc, mse, propensity_report, r2
from .selection import (
    TwoStepModel,
    check_bias_correction,
    estimate_inclusion_probabilities,
    fit_two_step,
    inverse_weights,
    predict_two_step,
)
from .synth import SyntheticDgp, cutoff_selection, generate, generate_with_truth
from .tree import Tree, fit_tree, predict_tree
from .uncertainty import BootstrapEnsemble, bootstrap_fit_predict, coverage, interval

__all__ = [
    "BoostConfig",
    "BoostModel",
    "BootstrapEnsemble",
    "Column",
    "Dataset",
    "HeckmanFit",
    "Holdout",
    "KFold",
    "ProbitFit",
    "SyntheticDgp",
    "TaxTriple",
    "Tree",
    "TwoStepModel",
    "auc",
    "bootstrap_fit_predict",
    "categorical_column",
    "check_bias_correction",
    "coverage",
    "cutoff_selection",
    "design_matrix",
    "estimate_inclusion_probabilities",
    "filter_outliers_log",
    "fit_gbm",
    "fit_heckman_two_step",
    "fit_probit",
    "fit_tree",
    "fit_two_step",
    "generate",
    "generate_with_truth",
    "impute_mean",
    "interval",
    "inverse_mills",
    "inverse_weights",
    "load_csv",
    "log_transform",
    "make_grid",
    "mse",
    "numeric_column",
    "predict_gbm",
    "predict_heckman",
    "predict_proba",
    "predict_tree",
    "predict_two_step",
    "propensity_report",
    "r2",
    "stratified_undersample",
    "train_test_split",
    "tune_grid",
    "variable_importance",
    "write_csv",
]

__version__ = "0.1.0"
