"""Sequence forecasting with an encoder-decoder transformer and recurrent baselines.

Everything runs on a small float64 autodiff engine (:mod:`deepcast.tensor`).
"""
from .data import NormalizationParams, build_dataset, ingest, make_windows, split
from .experiment import ExperimentConfig, compare_models, run_sweep, run_trial
from .metrics import aggregate, mape
from .models import (
    DeepTransformer,
    LSTMForecaster,
    RecurrentConfig,
    RNNForecaster,
    TransformerConfig,
    build_model,
    predict_multistep,
)
from .nn import NormPlacement
from .optim import Optimizer, OptimizerSpec, SchedulerSpec, lr_at
from .tensor import Tensor, make_rng

__version__ = "0.1.0"
