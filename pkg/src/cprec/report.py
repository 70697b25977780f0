"""Evaluation report files.

A report is line-oriented text: the first line is the versioned header
``# cprec-report v1``; every following line is one JSON object with a
``type`` of ``meta``, ``accuracy`` (dataset, model, MAE, RMSE, n) or
``conformal`` (dataset, model, mode, epsilon, avg_width, ecp, tau, n_cal,
n_test). Keys are sorted and floats written with ``repr`` so identical runs
give identical bytes.

Plot data is CSV with columns ``dataset,model,metric,value``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

HEADER = "# cprec-report v1"


@dataclass
class EvalReport:
    meta: list[dict] = field(default_factory=list)
    accuracy: list[dict] = field(default_factory=list)
    conformal: list[dict] = field(default_factory=list)

    def add_accuracy(self, dataset: str, model: str, mae: float, rmse: float, n: int) -> dict:
        row = {"type": "accuracy", "dataset": dataset, "model": model, "mae": float(mae), "rmse": float(rmse), "n": int(n)}
        _check_row(row)
        self.accuracy.append(row)
        return row

    def add_conformal(self, dataset: str, model: str, result) -> dict:
        row = {
            "type": "conformal",
            "dataset": dataset,
            "model": model,
            "mode": result.mode,
            "epsilon": result.epsilon,
            "avg_width": result.avg_width,
            "ecp": result.ecp,
            "tau": result.tau if math.isfinite(result.tau) else "inf",
            "n_cal": result.n_cal,
            "n_test": result.n_test,
        }
        _check_row(row)
        self.conformal.append(row)
        return row

    def rows(self) -> list[dict]:
        return self.meta + self.accuracy + self.conformal


def _check_row(row: dict) -> None:
    if row["type"] == "accuracy":
        # MAE <= RMSE holds exactly in real arithmetic; allow round-off
        if row["mae"] > row["rmse"] * (1 + 1e-12) + 1e-15:
            raise DataError(f"report row violates MAE <= RMSE: {row}")
    elif row["type"] == "conformal":
        if not 0.0 <= row["ecp"] <= 1.0:
            raise DataError(f"report row has ECP outside [0, 1]: {row}")


def _dump(row: dict) -> str:
    return json.dumps(row, sort_keys=True)


def append_rows(path, rows: list[dict], meta: dict | None = None) -> None:
    """Append rows, creating the file (header plus ``meta`` line) if needed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists()
    with path.open("a", encoding="utf-8", newline="\n") as fh:
        if new:
            fh.write(HEADER + "\n")
            if meta is not None:
                fh.write(_dump({"type": "meta", **meta}) + "\n")
        for row in rows:
            fh.write(_dump(row) + "\n")


def read_report(path) -> EvalReport:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc}") from None
    if not lines or lines[0].strip() != HEADER:
        raise DataError(f"{path}: not a cprec report (missing '{HEADER}' header)")
    report = EvalReport()
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            kind = row["type"]
            if kind == "accuracy":
                _check_row(row)
                report.accuracy.append(row)
            elif kind == "conformal":
                _check_row(row)
                report.conformal.append(row)
            elif kind == "meta":
                report.meta.append(row)
            else:
                raise KeyError(kind)
        except (ValueError, KeyError, TypeError, DataError) as exc:
            raise DataError(f"{path}: line {n}: invalid report row ({exc})") from None
    return report


def merge_reports(paths) -> EvalReport:
    merged = EvalReport()
    for p in paths:
        r = read_report(p)
        merged.meta += r.meta
        merged.accuracy += r.accuracy
        merged.conformal += r.conformal
    merged.accuracy.sort(key=lambda r: (r["dataset"], r["model"]))
    merged.conformal.sort(key=lambda r: (r["dataset"], r["model"], r["mode"], -r["epsilon"]))
    return merged


def format_table(report: EvalReport) -> str:
    out = []
    if report.accuracy:
        out.append(f"{'dataset':<16} {'model':<12} {'MAE':>10} {'RMSE':>10} {'n':>7}")
        for r in report.accuracy:
            out.append(f"{r['dataset']:<16} {r['model']:<12} {r['mae']:>10.6f} {r['rmse']:>10.6f} {r['n']:>7d}")
    if report.conformal:
        if out:
            out.append("")
        out.append(f"{'dataset':<16} {'model':<12} {'mode':<15} {'eps':>6} {'width':>8} {'ECP':>7}")
        for r in report.conformal:
            out.append(
                f"{r['dataset']:<16} {r['model']:<12} {r['mode']:<15} {r['epsilon']:>6.3f} "
                f"{r['avg_width']:>8.4f} {r['ecp']:>7.4f}"
            )
    return "\n".join(out)


def plot_records(report: EvalReport) -> list[tuple[str, str, str, float]]:
    recs = []
    for r in report.accuracy:
        recs.append((r["dataset"], r["model"], "MAE", r["mae"]))
        recs.append((r["dataset"], r["model"], "RMSE", r["rmse"]))
    for r in report.conformal:
        tag = f"{r['mode']}@{r['epsilon']!r}"
        recs.append((r["dataset"], r["model"], f"width[{tag}]", r["avg_width"]))
        recs.append((r["dataset"], r["model"], f"ECP[{tag}]", r["ecp"]))
    return recs


def write_plot_data(report: EvalReport, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "model", "metric", "value"])
    for rec in plot_records(report):
        w.writerow([rec[0], rec[1], rec[2], repr(float(rec[3]))])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")
