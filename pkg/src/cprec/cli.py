"""Command-line front end.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training
divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .conformal import CalibrationState, compute_conformity_scores, conformal_evaluate, make_interval
from .config import ExperimentConfig, load_config
from .dataset import ContextSchema, encode_context, synth_generate, write_csv
from .errors import ConfigError, CprecError, DataError
from .metrics import metric_mae, metric_rmse
from .models import TrainedModel, train_model
from .report import EvalReport, append_rows, format_table, merge_reports, write_plot_data

log = logging.getLogger("cprec")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _config(args) -> ExperimentConfig:
    return load_config(args.config, args.set)


def _model_path(args, cfg: ExperimentConfig | None) -> Path:
    if getattr(args, "model", None):
        return Path(args.model)
    if cfg is None:
        raise ConfigError("--model is required without --config")
    return cfg.output_path("model")


def _report_meta(cfg: ExperimentConfig, model_kind: str, wall: float | None) -> dict:
    meta = {
        "dataset": cfg.dataset_name,
        "model": model_kind,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "version": __version__,
    }
    if cfg.raw["output"].get("record_wall_time") and wall is not None:
        meta["wall_time_s"] = round(wall, 3)
    return meta


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_ingest_check(args) -> int:
    cfg = _config(args)
    data = cfg.load_dataset()
    summary = data.summary()
    summary["schema"] = data.schema.to_dict()
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    data, planted = synth_generate(
        args.users, args.items, args.context_features, args.interactions, args.seed,
        rank=args.rank, noise=args.noise, bias_scale=args.bias_scale, context_scale=args.context_scale,
        discrete=args.discrete,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(data, out)
    schema_path = out.with_suffix(".schema.yaml")
    schema_path.write_text(yaml.safe_dump({"schema": data.schema.to_dict()}, sort_keys=False), encoding="utf-8")
    print(f"wrote {len(data)} interactions to {out} (schema: {schema_path}; clipped rows: {planted.n_clipped})")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    start = time.perf_counter()
    train, cal, _ = cfg.load_splits()
    log.info("training %s on %s (%d train / %d cal rows)", cfg.model_kind, cfg.dataset_name, len(train), len(cal))
    model = train_model(cfg.model_kind, train, cal, cfg.hyperparams, cfg.seed)
    path = _model_path(args, cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    log_path = path.with_suffix(".log.jsonl")
    hist = model.history
    with log_path.open("w", encoding="utf-8") as fh:
        for e, loss in enumerate(hist.get("train_loss", [])):
            rec = {"epoch": e, "train_loss": loss}
            if e < len(hist.get("cal_rmse", [])):
                rec["cal_rmse"] = hist["cal_rmse"][e]
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    log.info("saved %s in %.1fs (training log: %s)", path, time.perf_counter() - start, log_path)
    print(path)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    start = time.perf_counter()
    model = TrainedModel.load(_model_path(args, cfg))
    _, _, test = cfg.load_splits()
    pred = np.clip(model.predict_dataset(test), *model.rating_scale)
    report = EvalReport()
    row = report.add_accuracy(
        cfg.dataset_name, model.kind, metric_mae(pred, test.ratings), metric_rmse(pred, test.ratings), len(test)
    )
    report_path = Path(args.report) if args.report else cfg.output_path("report")
    append_rows(report_path, report.rows(), _report_meta(cfg, model.kind, time.perf_counter() - start))
    print(f"{row['dataset']} {row['model']}: MAE {row['mae']:.6f} RMSE {row['rmse']:.6f} (n={row['n']})")
    return 0


def cmd_conformal_eval(args) -> int:
    cfg = _config(args)
    start = time.perf_counter()
    model = TrainedModel.load(_model_path(args, cfg))
    _, cal, test = cfg.load_splits()
    conf = cfg.conformal
    modes = [conf["mode"]] if not args.all_modes else (["residual", "reconstruction"] if model.has_autoencoder else ["residual"])
    report = EvalReport()
    for mode in modes:
        for res in conformal_evaluate(model, cal, test, cfg.epsilons, mode, conf.get("window")):
            report.add_conformal(cfg.dataset_name, model.kind, res)
            print(f"{cfg.dataset_name} {model.kind} {mode} eps={res.epsilon}: width {res.avg_width:.4f} ECP {res.ecp:.4f}")
    report_path = Path(args.report) if args.report else cfg.output_path("report")
    append_rows(report_path, report.rows(), _report_meta(cfg, model.kind, time.perf_counter() - start))
    return 0


def _parse_context(schema: ContextSchema, pairs) -> dict:
    raw = {}
    for p in pairs or ():
        if "=" not in p:
            raise DataError(f"context {p!r} is not of the form feature=value")
        k, v = p.split("=", 1)
        raw[k.strip()] = v.strip()
    return raw


def cmd_predict(args) -> int:
    cfg = load_config(args.config, args.set) if args.config else None
    model = TrainedModel.load(_model_path(args, cfg))
    try:
        u = model.user_ids.index(str(args.user))
    except ValueError:
        raise DataError(f"unknown user {args.user!r}; run 'cprec ingest-check' to list the vocabulary sizes") from None
    try:
        i = model.item_ids.index(str(args.item))
    except ValueError:
        raise DataError(f"unknown item {args.item!r}; run 'cprec ingest-check' to list the vocabulary sizes") from None
    c = encode_context(model.schema, _parse_context(model.schema, args.context))
    y = float(model.predict([u], [i], c[None, :])[0])
    lo, hi = model.rating_scale
    out = {"user": args.user, "item": args.item, "prediction": float(np.clip(y, lo, hi))}
    if args.epsilon is not None:
        if cfg is None:
            raise ConfigError("--epsilon needs --config to rebuild the calibration split")
        _, cal, _ = cfg.load_splits()
        mode = cfg.conformal["mode"]
        state = CalibrationState(args.epsilon, mode, cfg.conformal.get("window"), compute_conformity_scores(model, cal, mode))
        iv = make_interval(y, state.tau, args.epsilon, model.rating_scale)
        out["epsilon"] = args.epsilon
        out["interval"] = list(iv.clipped())
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    merged = merge_reports(args.reports)
    print(format_table(merged))
    if args.plot_data:
        write_plot_data(merged, args.plot_data)
    return 0


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cprec", description="Context-aware rating models with conformal prediction intervals.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    p.add_argument("--version", action="version", version=f"cprec {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp, required=True):
        sp.add_argument("-c", "--config", required=required, help="experiment config (YAML)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")

    sp = sub.add_parser("ingest-check", help="load a dataset and print its statistics")
    with_config(sp)
    sp.set_defaults(func=cmd_ingest_check)

    sp = sub.add_parser("synth", help="write a planted synthetic dataset as CSV")
    sp.add_argument("--out", required=True)
    sp.add_argument("--users", type=int, default=97)
    sp.add_argument("--items", type=int, default=79)
    sp.add_argument("--context-features", type=int, default=3)
    sp.add_argument("--interactions", type=int, default=5043)
    sp.add_argument("--rank", type=int, default=2)
    sp.add_argument("--noise", type=float, default=0.5)
    sp.add_argument("--bias-scale", type=float, default=0.5)
    sp.add_argument("--context-scale", type=float, default=0.5)
    sp.add_argument("--discrete", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train the configured model and save it")
    with_config(sp)
    sp.add_argument("--model", help="output model file (default: output.dir/output.model)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="MAE/RMSE on the test split")
    with_config(sp)
    sp.add_argument("--model")
    sp.add_argument("--report", help="report file to append to")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("conformal-eval", help="interval width and coverage per epsilon")
    with_config(sp)
    sp.add_argument("--model")
    sp.add_argument("--report")
    sp.add_argument("--all-modes", action="store_true", help="also run reconstruction mode when available")
    sp.set_defaults(func=cmd_conformal_eval)

    sp = sub.add_parser("predict", help="predict one rating (and interval)")
    with_config(sp, required=False)
    sp.add_argument("--model")
    sp.add_argument("--user", required=True)
    sp.add_argument("--item", required=True)
    sp.add_argument("--context", nargs="*", default=[], metavar="FEATURE=VALUE")
    sp.add_argument("--epsilon", type=float)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("report", help="merge report files into one table")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--plot-data", help="write plot-data CSV here")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CprecError as exc:
        print(f"cprec: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
