"""Long-format TMLE for dynamic treatment regimes on coarsened person-time data."""
__version__ = "0.1.0"

from .coarsen import (CoarsenConfig, DailyCohort, DailyEventStream, coarsen, coarsen_dataset,
                      read_daily_csv, write_daily_csv)
from .data_model import (CensCause, LongDataset, PersonTimeRow, SummaryMap, build_summary, read_csv,
                         require_valid, validate, write_csv)
from .errors import LongTmleError, PositivityError, SchemaError, StateSpaceError
from .inference import EicVector, EstimateReport, WaldResult, eic, risk_difference, wald
from .ipw import IpwFit, ipw_estimate
from .learners import LearnerSpec, default_g_library, default_q_library, expand_grid
from .propensity import GConfig, GModel, WeightTable, compute_weights, fit_g, weight_summary
from .regimes import DEFAULT_THETAS, Regime, rule_path
from .superlearner import CvPlan, DslResult, dsl_fit
from .tmle import FailedFit, FluctuationWarning, QConfig, TmleFit, survival_curve, tmle_estimate

__all__ = [
    "CensCause", "CoarsenConfig", "CvPlan", "DEFAULT_THETAS", "DailyCohort", "DailyEventStream",
    "DslResult", "EicVector", "EstimateReport", "FailedFit", "FluctuationWarning", "GConfig", "GModel",
    "IpwFit", "LearnerSpec", "LongDataset", "LongTmleError", "PersonTimeRow", "PositivityError", "QConfig",
    "Regime", "SchemaError", "StateSpaceError", "SummaryMap", "TmleFit", "WaldResult", "WeightTable",
    "build_summary", "coarsen", "coarsen_dataset", "compute_weights", "default_g_library",
    "default_q_library", "dsl_fit", "eic", "expand_grid", "fit_g", "ipw_estimate", "read_csv",
    "read_daily_csv", "require_valid", "risk_difference", "rule_path", "survival_curve", "tmle_estimate",
    "validate", "wald", "weight_summary", "write_csv", "write_daily_csv",
]
