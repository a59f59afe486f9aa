"""CSV tables and SVG charts for sweep results.

Files written by :func:`emit_outputs`:

``sweep.csv``
    one row per trial:
    ``axis,value,placement,trial,seed,mape,mean_mape,std_mape,epochs,wall_ms,status``
``table.csv``
    the published table layout: per axis value either ``<placement>_mean/_std/_best``
    column groups plus the across-placement ``mean``, or (one placement) flat
    ``mean_mape,std_mape,best_mape`` columns; both end with a ``best`` flag.
``predictions_<run>.csv``
    ``date,actual,mean_pred,min_pred,max_pred`` for each cell.
``best_<run>.csv``
    ``date,actual,predicted`` of the best trial (best-of-k protocol only).
``plot_<run>.svg``
    actual vs mean forecast with the min/max band.

Floats are written with ``repr`` so every file round-trips exactly and, apart
from ``wall_ms``, is a pure function of the configuration and seed.
"""
from __future__ import annotations

import csv
import math
import re
from pathlib import Path
from typing import Sequence

import numpy as np

from .experiment import SweepCell, SweepResult

SWEEP_COLUMNS = ("axis", "value", "placement", "trial", "seed", "mape", "mean_mape",
                 "std_mape", "epochs", "wall_ms", "status")
PREDICTION_COLUMNS = ("date", "actual", "mean_pred", "min_pred", "max_pred")


def fmt(x: float) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def run_name(result: SweepResult, cell: SweepCell) -> str:
    parts = [result.axis, cell.label] + ([cell.placement] if cell.placement != "-" else [])
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", "-".join(parts))


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def sweep_rows(result: SweepResult):
    for cell in result.cells:
        for o in cell.outcomes:
            yield [result.axis, cell.label, cell.placement, o.trial, o.seed, fmt(o.mape),
                   fmt(cell.mean_mape), fmt(cell.std_mape), o.epochs, o.wall_ms, o.status]


def table_rows(result: SweepResult) -> tuple[list[str], list[list]]:
    """Pivot cells into the published table layout.

    With several placements per value there is a column group per placement
    and an across-placement ``mean``; otherwise one flat row per cell.
    """
    placements = result.placements()
    best = result.best_label()
    rows = []
    if all(sum(c.label == lbl for c in result.cells) == 1 for lbl in result.labels()):
        header = ["value", "placement", "mean_mape", "std_mape", "best_mape", "n_trials", "best"]
        for c in result.cells:
            n_ok = c.summary.n_trials if c.summary else 0
            rows.append([c.label, c.placement, fmt(c.mean_mape), fmt(c.std_mape), fmt(c.best_mape),
                         n_ok, int(c.label == best)])
        return header, rows
    header = ["value"]
    for pl in placements:
        header += [f"{pl}_mean", f"{pl}_std", f"{pl}_best"]
    header += ["mean", "best"]
    for label in result.labels():
        row = [label]
        for pl in placements:
            match = [c for c in result.cells if c.label == label and c.placement == pl]
            row += ([fmt(match[0].mean_mape), fmt(match[0].std_mape), fmt(match[0].best_mape)]
                    if match else ["", "", ""])
        row += [fmt(result.score(label)), int(label == best)]
        rows.append(row)
    return header, rows


def prediction_rows(cell: SweepCell):
    s = cell.summary
    for d, a, m, lo, hi in zip(s.dates, s.actual, s.mean_pred, s.min_pred, s.max_pred):
        yield [d.isoformat(), fmt(a), fmt(m), fmt(lo), fmt(hi)]


def render_svg(dates, actual, mean_pred, min_pred, max_pred, title: str = "",
               width: int = 800, height: int = 320) -> str:
    """Line chart of actual vs mean forecast over a shaded min/max band."""
    actual, mean_pred = np.asarray(actual, float), np.asarray(mean_pred, float)
    min_pred, max_pred = np.asarray(min_pred, float), np.asarray(max_pred, float)
    n = len(actual)
    pad_l, pad_r, pad_t, pad_b = 60, 20, 30, 40
    lo = float(min(actual.min(), min_pred.min()))
    hi = float(max(actual.max(), max_pred.max()))
    if hi == lo:
        hi = lo + 1.0
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(i):
        return pad_l + (pw * i / (n - 1) if n > 1 else pw / 2)

    def py(v):
        return pad_t + ph * (1.0 - (v - lo) / (hi - lo))

    def pts(ys):
        return " ".join(f"{px(i):.2f},{py(v):.2f}" for i, v in enumerate(ys))

    band = pts(max_pred) + " " + " ".join(
        f"{px(i):.2f},{py(v):.2f}" for i, v in reversed(list(enumerate(min_pred))))
    ticks = []
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        ticks.append(f'<text x="{pad_l - 6}" y="{py(v) + 4:.2f}" text-anchor="end">{v:.0f}</text>')
    labels = []
    if n:
        for i in sorted({0, n // 2, n - 1}):
            labels.append(f'<text x="{px(i):.2f}" y="{height - pad_b + 18}" text-anchor="middle">'
                          f"{dates[i].isoformat()}</text>")
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{height - pad_b}" stroke="black"/>',
        f'<line x1="{pad_l}" y1="{height - pad_b}" x2="{width - pad_r}" y2="{height - pad_b}" stroke="black"/>',
        *ticks, *labels,
        f'<polygon points="{band}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>',
        f'<polyline points="{pts(actual)}" fill="none" stroke="black" stroke-width="1.5"/>',
        f'<polyline points="{pts(mean_pred)}" fill="none" stroke="#3182bd" stroke-width="1.5"/>',
        "</svg>",
        "",
    ])


def emit_outputs(result: SweepResult, outdir, plot: bool = True) -> list[Path]:
    """Write every output file for ``result`` under ``outdir`` and return their paths."""
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {outdir}: {exc.strerror or exc}") from exc
    written = [_write_csv(outdir / "sweep.csv", SWEEP_COLUMNS, sweep_rows(result))]
    header, rows = table_rows(result)
    written.append(_write_csv(outdir / "table.csv", header, rows))
    for cell in result.cells:
        if cell.summary is None:
            continue
        name = run_name(result, cell)
        written.append(_write_csv(outdir / f"predictions_{name}.csv", PREDICTION_COLUMNS,
                                  prediction_rows(cell)))
        if result.protocol == "best":
            b = cell.summary.best
            written.append(_write_csv(
                outdir / f"best_{name}.csv", ("date", "actual", "predicted"),
                ([d.isoformat(), fmt(a), fmt(p)] for d, a, p in zip(b.dates, b.actual, b.predicted))))
        if plot:
            s = cell.summary
            title = f"{result.axis}={cell.label} {'' if cell.placement == '-' else cell.placement}".strip()
            svg = render_svg(s.dates, s.actual, s.mean_pred, s.min_pred, s.max_pred, title=title)
            path = outdir / f"plot_{name}.svg"
            path.write_text(svg, encoding="utf-8")
            written.append(path)
    return written


def read_sweep_csv(path) -> list[dict]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
