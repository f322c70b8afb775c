"""Demographic-parity fair regression by post-processing group-wise models."""

from .barycenter import GroupSpec, qtilde_closed_form, qtilde_pointwise
from .base_learners import GroupModels, LinearModel, fit_groupwise, fit_linear
from .data import Dataset, read_csv
from .isotonic import StepFunction, eval_step, fit_isotonic
from .losses import LossKind, LossSpec, block_minimizer, loss_subgrad, loss_value
from .metrics import MetricsReport, evaluate, ks_distance
from .pipeline import (
    CVConfig,
    FairModel,
    QClassConfig,
    SplitMode,
    ecdf_value,
    fit_fair,
    predict_fair,
    select_cv,
)
from .splines import (
    SplineBasisConfig,
    SplineFit,
    eval_spline,
    fit_ispline,
    ispline_basis,
    mspline_basis,
)

__version__ = "0.1.0"
