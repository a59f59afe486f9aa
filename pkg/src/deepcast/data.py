"""Daily case-count series: ingestion, min-max scaling, splitting and windowing.

Accepted file layouts
---------------------
JSON
    a top-level array of ``{"date": "YYYY-MM-DD", "positive": int,
    "deaths": int, "recovered": int}`` objects, one per day.
CSV
    UTF-8 with the header ``date,positive,deaths,recovered`` and one row per day.

Records must be in strictly increasing date order without gaps.  The daily
array of the covid.go.id ``update.json`` feed maps onto this layout by taking
``key_as_string[:10]`` as ``date`` and the ``jumlah_positif``,
``jumlah_meninggal`` and ``jumlah_sembuh`` values as the three counts.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DataError, IntegrityError, NumericError, SchemaError

FIELDS = ("date", "positive", "deaths", "recovered")
FEATURES = ("positive", "deaths", "recovered")


@dataclass(frozen=True)
class DailyRecord:
    date: dt.date
    positive: int
    deaths: int
    recovered: int

    def features(self, n: int) -> tuple[int, ...]:
        return tuple(getattr(self, name) for name in FEATURES[:n])


class SeriesTooShortError(ContractError, DataError):
    """The series cannot hold the requested split or window."""


def _parse_record(raw: dict, where: str) -> DailyRecord:
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: expected an object, got {type(raw).__name__}")
    for name in FIELDS:
        if name not in raw or raw[name] in (None, ""):
            raise SchemaError(f"{where}: missing field {name!r}")
    try:
        date = dt.date.fromisoformat(str(raw["date"]).strip())
    except ValueError as exc:
        raise SchemaError(f"{where}: bad date {raw['date']!r}") from exc
    counts = []
    for name in FEATURES:
        value = raw[name]
        try:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            count = int(str(value).strip()) if not isinstance(value, (int, float)) else int(value)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: field {name!r} is not an integer: {value!r}") from exc
        if isinstance(value, bool) or count < 0:
            raise SchemaError(f"{where}: field {name!r} must be a non-negative integer, got {value!r}")
        counts.append(count)
    return DailyRecord(date, *counts)


def check_integrity(records: Sequence[DailyRecord]) -> None:
    for prev, cur in zip(records, records[1:]):
        gap = (cur.date - prev.date).days
        if gap == 0:
            raise IntegrityError(f"duplicated date {cur.date.isoformat()}")
        if gap < 0:
            raise IntegrityError(f"date {cur.date.isoformat()} follows {prev.date.isoformat()}")
        if gap > 1:
            raise IntegrityError(
                f"missing {gap - 1} day(s) between {prev.date.isoformat()} and {cur.date.isoformat()}"
            )


def ingest(path, format: str | None = None) -> list[DailyRecord]:
    """Load and validate a daily series from a JSON or CSV file."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("json", "csv"):
        raise SchemaError(f"{path}: unknown format {fmt!r} (expected json or csv)")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc

    records: list[DailyRecord] = []
    if fmt == "json":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(payload, list):
            raise SchemaError(f"{path}: top level must be an array of records")
        for i, raw in enumerate(payload):
            records.append(_parse_record(raw, f"{path}: record {i}"))
    else:
        reader = csv.DictReader(text.splitlines())
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != list(FIELDS):
            raise SchemaError(f"{path}: header must be {','.join(FIELDS)}, got {reader.fieldnames}")
        for row in reader:
            records.append(_parse_record(row, f"{path}: line {reader.line_num}"))
    check_integrity(records)
    return records


def write_records(records: Sequence[DailyRecord], path) -> Path:
    """Write records in the CSV or JSON layout chosen by the file suffix."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        rows = [{"date": r.date.isoformat(), "positive": r.positive,
                 "deaths": r.deaths, "recovered": r.recovered} for r in records]
        path.write_text(json.dumps(rows, indent=1) + "\n", encoding="utf-8")
    else:
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FIELDS)
            for r in records:
                w.writerow([r.date.isoformat(), r.positive, r.deaths, r.recovered])
    return path


def to_matrix(records: Sequence[DailyRecord], n_features: int = 1) -> np.ndarray:
    if not 1 <= n_features <= len(FEATURES):
        raise ContractError(f"n_features must be between 1 and {len(FEATURES)}, got {n_features}")
    return np.array([r.features(n_features) for r in records], dtype=np.float64).reshape(-1, n_features)


# ---------------------------------------------------------------------------
# min-max scaling


@dataclass
class NormalizationParams:
    """Per-feature affine map from ``[min, max]`` onto ``[lower, upper]``."""

    min: np.ndarray
    max: np.ndarray
    lower: float = -1.0
    upper: float = 1.0

    def __post_init__(self):
        self.min = np.atleast_1d(np.asarray(self.min, dtype=np.float64))
        self.max = np.atleast_1d(np.asarray(self.max, dtype=np.float64))
        if self.min.shape != self.max.shape:
            raise ContractError("min and max must have the same number of features")
        if np.any(self.max <= self.min):
            bad = np.flatnonzero(self.max <= self.min).tolist()
            raise NumericError(f"degenerate range (max <= min) for feature(s) {bad}")

    @classmethod
    def fit(cls, values, lower: float = -1.0, upper: float = 1.0) -> NormalizationParams:
        values = np.asarray(values, dtype=np.float64)
        values = values.reshape(len(values), -1)
        return cls(values.min(axis=0), values.max(axis=0), lower, upper)

    def _select(self, feature):
        if feature is None:
            return self.min, self.max
        return self.min[feature], self.max[feature]

    def normalize(self, x, feature: int | None = None) -> np.ndarray:
        lo, hi = self._select(feature)
        return (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) * (self.upper - self.lower) + self.lower

    def denormalize(self, x, feature: int | None = None) -> np.ndarray:
        lo, hi = self._select(feature)
        return (np.asarray(x, dtype=np.float64) - self.lower) / (self.upper - self.lower) * (hi - lo) + lo

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist(),
                "lower": self.lower, "upper": self.upper}

    @classmethod
    def from_dict(cls, d: dict) -> NormalizationParams:
        return cls(d["min"], d["max"], d.get("lower", -1.0), d.get("upper", 1.0))


def normalize(x, p: NormalizationParams, feature: int | None = None) -> np.ndarray:
    return p.normalize(x, feature)


def denormalize(x, p: NormalizationParams, feature: int | None = None) -> np.ndarray:
    return p.denormalize(x, feature)


# ---------------------------------------------------------------------------
# splitting and windowing


def split_lengths(n: int, test_days: int = 60, train_frac: float = 0.70) -> tuple[int, int, int]:
    """Lengths of the (train, eval, test) segments for a series of ``n`` days."""
    if not 0.0 < train_frac < 1.0:
        raise ContractError(f"train_frac must be in (0, 1), got {train_frac}")
    if test_days < 1 or n <= test_days:
        raise SeriesTooShortError(f"series of {n} days cannot hold a {test_days}-day test segment")
    rest = n - test_days
    n_train = int(round(rest * train_frac))
    return n_train, rest - n_train, test_days


def split(series, test_days: int = 60, train_frac: float = 0.70, lag: int = 0, horizon: int = 0):
    """Cut ``series`` into contiguous (train, eval, test) segments.

    Test is the final ``test_days`` entries; the remainder is split
    ``train_frac`` / ``1 - train_frac`` front to back.
    """
    n = len(series)
    if n <= test_days + lag + horizon:
        raise SeriesTooShortError(
            f"series of {n} days is too short: need more than {test_days + lag + horizon}"
        )
    n_train, n_eval, _ = split_lengths(n, test_days, train_frac)
    return series[:n_train], series[n_train:n_train + n_eval], series[n_train + n_eval:]


def make_windows(values, lag: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Slide over ``values`` (``(L, F)`` or ``(L,)``) producing inputs and first-feature targets.

    Returns ``X`` of shape ``(L - lag - horizon + 1, lag, F)`` and ``Y`` of
    shape ``(L - lag - horizon + 1, horizon)``; window ``k`` reads days
    ``k .. k+lag-1`` and targets days ``k+lag .. k+lag+horizon-1``.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if lag < 1 or horizon < 1:
        raise ContractError(f"lag and horizon must be >= 1, got lag={lag}, horizon={horizon}")
    n = len(values) - lag - horizon + 1
    if n < 1:
        raise SeriesTooShortError(
            f"segment of {len(values)} days is too short for lag={lag}, horizon={horizon}: "
            f"need at least {lag + horizon}"
        )
    idx = np.arange(n)[:, None]
    X = values[idx + np.arange(lag)]
    Y = values[idx + lag + np.arange(horizon), 0]
    return X, Y


@dataclass
class WindowedDataset:
    """Everything a trial needs: normalised windows for each split and the raw test truth.

    Test inputs are anchored every ``horizon`` days from the first test day,
    so each test day is forecast exactly once; their lag context may reach
    back into the eval segment.  The final block is cut at the end of the
    series.
    """

    train_x: np.ndarray
    train_y: np.ndarray
    eval_x: np.ndarray
    eval_y: np.ndarray
    test_x: np.ndarray
    test_dates: list[dt.date]
    test_actual: np.ndarray
    norm: NormalizationParams
    boundaries: tuple[int, int, int]
    lag: int
    horizon: int
    n_features: int
    raw: np.ndarray = field(repr=False)

    @property
    def test_block_starts(self) -> np.ndarray:
        start = self.boundaries[0] + self.boundaries[1]
        return np.arange(start, len(self.raw), self.horizon)

    def assemble(self, block_predictions: np.ndarray) -> np.ndarray:
        """Flatten ``(n_blocks, horizon)`` forecasts onto the test days, dropping the overhang."""
        flat = np.asarray(block_predictions).reshape(-1)
        return flat[: len(self.test_actual)]


def build_dataset(records: Sequence[DailyRecord], lag: int = 7, horizon: int = 1,
                  n_features: int = 1, test_days: int = 60, train_frac: float = 0.70) -> WindowedDataset:
    raw = to_matrix(records, n_features)
    split(raw, test_days, train_frac, lag, horizon)
    n_train, n_eval, n_test = split_lengths(len(raw), test_days, train_frac)
    if n_train < lag + horizon or n_eval < lag + horizon:
        raise SeriesTooShortError(
            f"train ({n_train}) and eval ({n_eval}) segments each need at least "
            f"{lag + horizon} days for lag={lag}, horizon={horizon}"
        )
    norm = NormalizationParams.fit(raw[:n_train])
    scaled = norm.normalize(raw)
    train_x, train_y = make_windows(scaled[:n_train], lag, horizon)
    eval_x, eval_y = make_windows(scaled[n_train:n_train + n_eval], lag, horizon)
    start = n_train + n_eval
    starts = np.arange(start, len(raw), horizon)
    test_x = np.stack([scaled[s - lag:s] for s in starts])
    return WindowedDataset(
        train_x=train_x, train_y=train_y, eval_x=eval_x, eval_y=eval_y, test_x=test_x,
        test_dates=[r.date for r in records[start:]], test_actual=raw[start:, 0].copy(),
        norm=norm, boundaries=(n_train, n_eval, n_test), lag=lag, horizon=horizon,
        n_features=n_features, raw=raw,
    )


def synthetic_records(n: int = 750, seed: int = 0, start: str = "2020-03-02",
                      noise: float = 0.05) -> list[DailyRecord]:
    """A positive, wave-shaped daily series with multiplicative noise.

    Two epidemic-like waves plus a weekly reporting cycle and a slowly
    wandering level; deaths and recovered are lagged fractions of positive.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64)
    waves = (
        4000.0 * np.exp(-0.5 * ((t - 0.45 * n) / (0.06 * n)) ** 2)
        + 2500.0 * np.exp(-0.5 * ((t - 0.8 * n) / (0.05 * n)) ** 2)
    )
    level = 800.0 + 300.0 * np.sin(2 * np.pi * t / 90.0)
    weekly = 1.0 + 0.08 * np.sin(2 * np.pi * t / 7.0)
    drift = np.exp(np.cumsum(rng.normal(0.0, 0.02, n)))
    positive = (level + waves) * weekly * drift * (1.0 + noise * rng.standard_normal(n))
    positive = np.maximum(np.rint(positive), 1.0)
    deaths = np.maximum(np.rint(0.03 * np.roll(positive, 10) * (1 + 0.1 * rng.standard_normal(n))), 0)
    recovered = np.maximum(np.rint(0.9 * np.roll(positive, 14) * (1 + 0.1 * rng.standard_normal(n))), 0)
    day0 = dt.date.fromisoformat(start)
    return [
        DailyRecord(day0 + dt.timedelta(days=i), int(positive[i]), int(deaths[i]), int(recovered[i]))
        for i in range(n)
    ]
