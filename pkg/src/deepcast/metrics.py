"""Forecast error and aggregation across repeated trials."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError


def mape(actual, predicted) -> float:
    """Mean absolute percentage error, in percent.

    Zero actual values raise :class:`NumericError`; no epsilon is added.
    """
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if a.shape != p.shape:
        raise DimensionError(f"mape: {a.size} actual values vs {p.size} predictions")
    if a.size == 0:
        raise ContractError("mape of an empty series")
    if np.any(a == 0):
        raise NumericError(f"mape undefined: actual value is zero at index {int(np.flatnonzero(a == 0)[0])}")
    return float(np.mean(np.abs((a - p) / a)) * 100.0)


@dataclass
class EvalReport:
    dates: list[dt.date]
    actual: np.ndarray
    predicted: np.ndarray
    mape: float
    trial_id: int = 0
    seed: int = 0
    history: list[dict] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.actual = np.asarray(self.actual, dtype=np.float64)
        self.predicted = np.asarray(self.predicted, dtype=np.float64)
        if self.actual.shape != self.predicted.shape:
            raise DimensionError("actual and predicted lengths differ")
        if len(self.dates) != len(self.actual):
            raise DimensionError("dates and values lengths differ")

    @classmethod
    def from_predictions(cls, dates, actual, predicted, trial_id=0, seed=0, history=None):
        return cls(list(dates), actual, predicted, mape(actual, predicted), trial_id, seed, history or [])


@dataclass
class AggregateReport:
    reports: list[EvalReport]
    mean_mape: float
    std_mape: float
    n_trials: int
    mean_pred: np.ndarray
    min_pred: np.ndarray
    max_pred: np.ndarray

    @property
    def best(self) -> EvalReport:
        return min(self.reports, key=lambda r: r.mape)

    @property
    def dates(self):
        return self.reports[0].dates

    @property
    def actual(self) -> np.ndarray:
        return self.reports[0].actual


def aggregate(reports: Sequence[EvalReport], ddof: int = 0) -> AggregateReport:
    """Mean and standard deviation of trial MAPEs plus a per-day prediction band.

    ``ddof=0`` gives the population standard deviation; pass 1 for the
    sample estimate.
    """
    reports = list(reports)
    if not reports:
        raise ContractError("aggregate needs at least one report")
    n = len(reports[0].actual)
    if any(len(r.actual) != n for r in reports):
        raise DimensionError("reports cover different numbers of days")
    mapes = np.array([r.mape for r in reports])
    preds = np.stack([r.predicted for r in reports])
    if np.all(mapes == mapes[0]):
        # identical trials: avoid rounding noise in mean and std
        mean, std = float(mapes[0]), 0.0
    else:
        mean = float(mapes.mean())
        std = float(mapes.std(ddof=ddof)) if len(reports) > ddof else 0.0
    lo, hi = preds.min(axis=0), preds.max(axis=0)
    return AggregateReport(
        reports=reports,
        mean_mape=mean,
        std_mape=std,
        n_trials=len(reports),
        # rounding in the mean can step just outside the band
        mean_pred=np.clip(preds.mean(axis=0), lo, hi),
        min_pred=lo,
        max_pred=hi,
    )
