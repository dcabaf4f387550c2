"""Stage one: uplift estimation and ranking evaluation."""
from .learners import (
    CateModel,
    UpliftEstimates,
    fit_cate,
    fit_s_learner,
    fit_t_learner,
    fit_x_learner,
    load_model,
    predict_cate,
    save_model,
)
from .metrics import (
    BucketUplift,
    UpliftCurve,
    bucket_true_uplift,
    cumulative_uplift_curve,
    permutation_null_auc,
    random_ranking_auc,
    uplift_auc,
)
from .tree import RegressionTree, TreeParams, fit_tree

__all__ = [
    "BucketUplift", "CateModel", "RegressionTree", "TreeParams", "UpliftCurve",
    "UpliftEstimates", "bucket_true_uplift", "cumulative_uplift_curve", "fit_cate",
    "fit_s_learner", "fit_t_learner", "fit_tree", "fit_x_learner", "load_model",
    "permutation_null_auc", "predict_cate", "random_ranking_auc", "save_model",
    "uplift_auc",
]
