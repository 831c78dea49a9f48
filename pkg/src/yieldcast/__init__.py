"""Municipality-level crop yield forecasting with a dual-path LSTM."""

__version__ = "0.1.0"

from .calendars import CalendarTable, CropKind, feature_window, load_calendar
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import (SplitDataset, SynthConfig, assemble, ingest_yields, split_by_year,
                      synthesize)
from .estimator import LSTMYieldRegressor
from .features import GddConfig, MinMaxFeatureScaler, accumulate_gdd, build_dynamic, monthly_gdd
from .metrics import EvalResult, RunReport, mape, pearson, rmse
from .nn import Network, NetworkArch, backward, forward, grad_check, init_params, predict
from .training import TrainConfig, fit_network, run_ablation, run_experiment, train

__all__ = [
    "CalendarTable", "Checkpoint", "CropKind", "EvalResult", "GddConfig", "LSTMYieldRegressor",
    "MinMaxFeatureScaler", "Network", "NetworkArch", "RunReport", "SplitDataset", "SynthConfig",
    "TrainConfig", "accumulate_gdd", "assemble", "backward", "build_dynamic", "feature_window",
    "fit_network", "forward", "grad_check", "ingest_yields", "init_params", "load_calendar",
    "load_checkpoint", "mape", "monthly_gdd", "pearson", "predict", "rmse", "run_ablation",
    "run_experiment", "save_checkpoint", "split_by_year", "synthesize", "train",
]
