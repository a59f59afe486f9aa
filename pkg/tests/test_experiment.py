import csv
import math

import numpy as np
import pytest

from deepcast import experiment
from deepcast.cli import main
from deepcast.data import synthetic_records, write_records
from deepcast.errors import ConfigError, DivergedError
from deepcast.experiment import (
    ExperimentConfig, compare_models, parse_axis_values, parse_config_text, run_sweep, run_trial,
)
from deepcast.report import emit_outputs, read_sweep_csv, table_rows

TINY = dict(d_model="8", d_ff="8", d_prelayer="6", d_postlayer="6", epochs="2", warmup_steps="10",
            baseline_epochs="2", hidden_size="4")


@pytest.fixture(scope="module")
def records():
    return synthetic_records(200, seed=2)


@pytest.fixture(scope="module")
def data_file(tmp_path_factory, records):
    return write_records(records, tmp_path_factory.mktemp("data") / "series.csv")


def tiny(**kw):
    values = dict(TINY)
    values.update({k: str(v) for k, v in kw.items()})
    return ExperimentConfig.from_mapping(values)


def test_config_text_and_precedence(tmp_path):
    path = tmp_path / "a.conf"
    path.write_text("# comment\nd_model = 32   # trailing\n\nepochs=5\nplot = no\nlr = none\n")
    assert parse_config_text(path.read_text()) == {"d_model": "32", "epochs": "5", "plot": "no", "lr": "none"}
    cfg = ExperimentConfig.from_file(path, {"epochs": "7"})
    assert (cfg.d_model, cfg.epochs, cfg.plot, cfg.lr, cfg.n_heads) == (32, 7, False, None, 1)
    with pytest.raises(ConfigError, match="unknown config key"):
        ExperimentConfig.from_mapping({"d_modle": "4"})
    with pytest.raises(ConfigError, match="line|expected"):
        parse_config_text("just words")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"d_model": "sixty"})


def test_epoch_defaults_and_validation():
    cfg = ExperimentConfig()
    assert cfg.epochs_for("transformer") == 300 and cfg.epochs_for("lstm") == 2000
    assert cfg.optimizer_spec("transformer").base_lr == 1.0
    assert cfg.optimizer_spec("rnn").base_lr == 0.01
    assert cfg.scheduler_spec("transformer").kind == "WarmupInvSqrt"
    assert cfg.scheduler_spec("lstm").kind == "Constant"
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"epochs": "0"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"trials": "0"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"sweep_axis": "colour"})


def test_axis_values():
    assert parse_axis_values("d_model", "32, 64,128,256") == [32, 64, 128, 256]
    assert parse_axis_values("enc_dec_blocks", "1-1,2-4") == [(1, 1), (2, 4)]
    assert parse_axis_values("dims", "100/50/50") == [(100, 50, 50)]
    assert parse_axis_values("optimizer", "adam,ADAMAX") == ["Adam", "Adamax"]
    assert parse_axis_values("horizon", "1,2,4,7") == [1, 2, 4, 7]
    for axis, bad in [("d_model", "32,x"), ("enc_dec_blocks", "2"), ("dims", "1/2"), ("optimizer", "Lion"),
                      ("model", "gru")]:
        with pytest.raises(ConfigError):
            parse_axis_values(axis, bad)


def test_run_trial_is_deterministic(records):
    cfg = tiny()
    a, b = run_trial(cfg, 5, records=records), run_trial(cfg, 5, records=records)
    assert np.array_equal(a.predicted, b.predicted) and a.mape == b.mape
    assert a.history == b.history
    assert len(a.history) == 2 and "eval_loss" in a.history[0]
    c = run_trial(cfg, 6, records=records)
    assert not np.array_equal(a.predicted, c.predicted)


def test_run_trial_scores_denormalised_test_days(records):
    report = run_trial(tiny(), 0, records=records)
    assert len(report.dates) == 60 and report.dates[0] == records[140].date
    actual = np.array([r.positive for r in records[140:]], dtype=float)
    assert np.array_equal(report.actual, actual)
    assert math.isfinite(report.mape) and report.mape > 0
    # the pipeline MAPE equals MAPE on raw units
    assert report.mape == pytest.approx(np.mean(np.abs((actual - report.predicted) / actual)) * 100, rel=1e-12)


def test_default_architecture_runs_end_to_end():
    recs = synthetic_records(750, seed=0)
    cfg = ExperimentConfig(epochs=3)
    report = run_trial(cfg, 0, records=recs)
    assert math.isfinite(report.mape)


def test_invalid_axis_value_fails_before_training(records, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("training started")

    monkeypatch.setattr(experiment, "train_model", boom)
    with pytest.raises(ConfigError):
        run_sweep(tiny(sweep_axis="d_model", sweep_values="8,7"), records=records)
    with pytest.raises(ConfigError):
        run_sweep(tiny(sweep_axis="time_lag", sweep_values="4,100"), records=records)
    with pytest.raises(ConfigError):
        run_sweep(tiny(sweep_axis="d_model", sweep_values="8,12", n_heads=8), records=records)


def test_sweep_cells_and_table(records):
    cfg = tiny(sweep_axis="enc_dec_blocks", sweep_values="1-1,2-1", placements="PreLN,PostLN", trials=2)
    result = run_sweep(cfg, records=records)
    assert [(c.label, c.placement) for c in result.cells] == [
        ("1-1", "PreLN"), ("1-1", "PostLN"), ("2-1", "PreLN"), ("2-1", "PostLN")]
    assert all([o.seed for o in c.outcomes] == [0, 1] for c in result.cells)
    header, rows = table_rows(result)
    assert header == ["value", "PreLN_mean", "PreLN_std", "PreLN_best", "PostLN_mean", "PostLN_std",
                      "PostLN_best", "mean", "best"]
    assert [r[0] for r in rows] == ["1-1", "2-1"]
    for r in rows:
        assert float(r[7]) == pytest.approx((float(r[1]) + float(r[4])) / 2, rel=1e-15)
    assert sum(r[-1] for r in rows) == 1


def test_diverged_trial_is_kept_as_a_row(records, monkeypatch, tmp_path):
    real = experiment.train_model

    def flaky(cfg, seed, dataset):
        if cfg.d_model == 12:
            raise DivergedError(7, float("nan"))
        return real(cfg, seed, dataset)

    monkeypatch.setattr(experiment, "train_model", flaky)
    result = run_sweep(tiny(sweep_axis="d_model", sweep_values="8,12"), records=records)
    emit_outputs(result, tmp_path, plot=False)
    rows = read_sweep_csv(tmp_path / "sweep.csv")
    assert [r["status"] for r in rows] == ["ok", "diverged@7"]
    assert rows[1]["mape"] == "nan"
    assert result.best_label() == "8"


def test_parallel_matches_serial(records):
    cfg = tiny(sweep_axis="d_model", sweep_values="8,12", trials=2)
    serial = run_sweep(cfg, records=records)
    parallel = run_sweep(tiny(sweep_axis="d_model", sweep_values="8,12", trials=2, jobs=2), records=records)
    for a, b in zip(serial.cells, parallel.cells):
        assert [o.mape for o in a.outcomes] == [o.mape for o in b.outcomes]


def test_compare_models(records):
    result = compare_models(tiny(best_of=3), records=records)
    assert [c.label for c in result.cells] == ["transformer", "lstm", "rnn"]
    assert result.protocol == "best"
    for c in result.cells:
        assert len(c.outcomes) == 3
        assert c.best_mape <= c.mean_mape
    assert result.cell("lstm").outcomes[0].epochs == 2


def test_best_protocol_sweep(records):
    result = run_sweep(tiny(sweep_axis="n_features", sweep_values="1,3", protocol="best", best_of=2),
                       records=records)
    assert result.protocol == "best"
    assert all(len(c.outcomes) == 2 for c in result.cells)
    assert result.score("1") == result.cell("1").best_mape


def test_outputs(records, tmp_path):
    result = run_sweep(tiny(sweep_axis="time_lag", sweep_values="4,7", trials=3), records=records)
    files = emit_outputs(result, tmp_path)
    names = sorted(p.name for p in files)
    assert names == ["plot_time_lag-4-PreLN.svg", "plot_time_lag-7-PreLN.svg",
                     "predictions_time_lag-4-PreLN.csv", "predictions_time_lag-7-PreLN.csv",
                     "sweep.csv", "table.csv"]
    rows = read_sweep_csv(tmp_path / "sweep.csv")
    assert list(rows[0]) == ["axis", "value", "placement", "trial", "seed", "mape", "mean_mape",
                             "std_mape", "epochs", "wall_ms", "status"]
    assert len(rows) == 6
    for row, (cell, o) in zip(rows, [(c, o) for c in result.cells for o in c.outcomes]):
        assert float(row["mape"]) == o.mape and float(row["mean_mape"]) == cell.mean_mape
    with (tmp_path / "predictions_time_lag-7-PreLN.csv").open() as fh:
        pred = list(csv.DictReader(fh))
    assert len(pred) == 60
    cell = result.cell("7")
    assert [float(r["mean_pred"]) for r in pred] == cell.summary.mean_pred.tolist()
    for r in pred:
        assert float(r["min_pred"]) <= float(r["mean_pred"]) <= float(r["max_pred"])
    svg = (tmp_path / "plot_time_lag-7-PreLN.svg").read_text()
    assert svg.startswith("<svg") and "polygon" in svg


def test_outputs_report_unwritable_path(records, tmp_path):
    result = run_sweep(tiny(), records=records)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_outputs(result, blocker / "sub")


# ---------------------------------------------------------------------------
# command line


def cli(*args):
    return main([str(a) for a in args])


def tiny_flags():
    out = []
    for k, v in TINY.items():
        out += ["--set", f"{k}={v}"]
    return out


def strip_wall(path):
    rows = read_sweep_csv(path)
    for r in rows:
        r.pop("wall_ms")
    return rows


def test_cli_sweep_is_reproducible(data_file, tmp_path, capsys):
    for run in ("a", "b"):
        code = cli("sweep", "--data", data_file, "--out", tmp_path / run, "--seed", 3, "--trials", 2,
                   "--set", "sweep_axis=d_model", "--set", "sweep_values=8,12", "--set", "placements=PreLN,PostLN",
                   *tiny_flags())
        assert code == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert strip_wall(a / "sweep.csv") == strip_wall(b / "sweep.csv")
    assert [r["seed"] for r in strip_wall(a / "sweep.csv")][:2] == ["3", "4"]
    for p in a.iterdir():
        if p.name != "sweep.csv":
            assert p.read_bytes() == (b / p.name).read_bytes(), p.name
    assert "d_model=8" in capsys.readouterr().out


def test_cli_train_and_predict(data_file, tmp_path):
    out = tmp_path / "train"
    assert cli("train", "--data", data_file, "--out", out, "--seed", 1, *tiny_flags()) == 0
    ckpt = out / "model_seed1.npz"
    assert ckpt.exists() and (out / "table.csv").exists()
    trained = read_sweep_csv(out / "sweep.csv")[0]
    pout = tmp_path / "pred"
    assert cli("predict", "--data", data_file, "--out", pout, "--checkpoint", ckpt) == 0
    with (pout / "predictions.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 60
    actual = np.array([float(r["actual"]) for r in rows])
    pred = np.array([float(r["predicted"]) for r in rows])
    assert np.mean(np.abs((actual - pred) / actual)) * 100 == pytest.approx(float(trained["mape"]), rel=1e-12)


def test_cli_compare(data_file, tmp_path):
    out = tmp_path / "cmp"
    assert cli("compare", "--data", data_file, "--out", out, "--trials", 2, *tiny_flags()) == 0
    with (out / "table.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["value"] for r in rows] == ["transformer", "lstm", "rnn"]
    assert all(r["n_trials"] == "2" for r in rows)
    assert all(float(r["best_mape"]) <= float(r["mean_mape"]) for r in rows)
    assert sorted(p.name for p in out.glob("best_*.csv")) == [
        "best_model-lstm.csv", "best_model-rnn.csv", "best_model-transformer-PreLN.csv"]


def test_cli_exit_codes(data_file, tmp_path, capsys):
    assert cli("train", "--data", data_file, "--out", tmp_path, "--set", "d_model=7") == 2
    assert cli("train", "--data", tmp_path / "missing.csv", "--out", tmp_path) == 3
    assert cli("train", "--config", tmp_path / "missing.conf") == 2
    assert cli("sweep", "--data", data_file, "--out", tmp_path, "--set", "sweep_axis=d_model",
               "--set", "sweep_values=8,x") == 2
    gap = tmp_path / "gap.csv"
    gap.write_text("date,positive,deaths,recovered\n2021-01-01,5,0,1\n2021-01-03,7,1,2\n")
    assert cli("train", "--data", gap, "--out", tmp_path) == 3
    short = write_records(synthetic_records(50), tmp_path / "short.csv")
    assert cli("train", "--data", short, "--out", tmp_path) == 3
    code = cli("train", "--data", data_file, "--out", tmp_path / "div", "--set", "family=rnn",
               "--set", "optimizer=SGD", "--set", "lr=1e200", "--set", "epochs=20", "--set", "hidden_size=4")
    assert code == 4
    err = capsys.readouterr().err
    assert "config error" in err and "data error" in err and "diverged" in err
