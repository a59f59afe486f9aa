import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepcast.errors import ContractError, DimensionError, NumericError
from deepcast.metrics import EvalReport, aggregate, mape


def report(pred, actual=(100.0, 200.0), trial=0):
    dates = [dt.date(2022, 1, 1) + dt.timedelta(days=i) for i in range(len(actual))]
    return EvalReport.from_predictions(dates, actual, pred, trial_id=trial, seed=trial)


def test_mape_examples():
    assert mape([3.0, 4.0], [3.0, 4.0]) == 0.0
    assert mape([100.0, 200.0], [110.0, 180.0]) == 10.0
    assert mape([50.0], [0.0]) == 100.0


def test_mape_errors():
    with pytest.raises(NumericError):
        mape([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(DimensionError):
        mape([1.0, 2.0], [1.0])
    with pytest.raises(ContractError):
        mape([], [])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(1.0, 1e5), st.floats(0.0, 1e5)), min_size=1, max_size=30),
       st.floats(1e-3, 1e3))
def test_mape_scale_invariant(pairs, c):
    a = np.array([p[0] for p in pairs])
    p = np.array([p[1] for p in pairs])
    m = mape(a, p)
    assert m >= 0
    assert abs(mape(c * a, c * p) - m) <= 1e-12 * max(1.0, m)


def test_aggregate_examples():
    one = aggregate([report([110.0, 180.0])])
    assert (one.mean_mape, one.std_mape, one.n_trials) == (10.0, 0.0, 1)
    two = aggregate([report([110.0, 180.0]), report([120.0, 160.0], trial=1)])
    assert two.mean_mape == 15.0 and two.std_mape == 5.0
    assert two.best.trial_id == 0
    assert aggregate([report([110.0, 180.0]), report([120.0, 160.0])], ddof=1).std_mape == pytest.approx(
        np.std([10.0, 20.0], ddof=1))
    with pytest.raises(ContractError):
        aggregate([])


def test_aggregate_of_copies_has_zero_std():
    r = report([101.3, 177.7])
    agg = aggregate([r] * 7)
    assert agg.std_mape == 0.0 and agg.mean_mape == r.mape
    assert np.array_equal(agg.mean_pred, r.predicted)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.floats(0.0, 1e4), min_size=5, max_size=5), min_size=1, max_size=10))
def test_band_contains_mean(preds):
    actual = (10.0, 20.0, 30.0, 40.0, 50.0)
    agg = aggregate([report(p, actual, i) for i, p in enumerate(preds)])
    assert np.all(agg.min_pred <= agg.mean_pred) and np.all(agg.mean_pred <= agg.max_pred)
    assert min(r.mape for r in agg.reports) <= agg.mean_mape + 1e-9


def test_report_length_checks():
    with pytest.raises(DimensionError):
        EvalReport([dt.date(2022, 1, 1)], [1.0, 2.0], [1.0, 2.0], 0.0)
