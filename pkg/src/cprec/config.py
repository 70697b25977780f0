"""Experiment configuration (YAML).

Keys::

    seed: 42                       # root of every random sub-stream
    dataset:
      name: DepaulMovie            # label used in reports
      path: data/depaul.csv        # relative to the config file
      format: depaul               # depaul | tripadvisor | comoda | generic
      rating_scale: [1, 5]
      columns: {user: userid, item: itemid, rating: rating}   # optional
      schema:                      # optional; format preset otherwise
        - {name: Time, kind: nominal, values: [Weekday, Weekend]}
        - {name: Hour, kind: quantitative, bounds: [0, 23]}
      missing: ["", NA]            # optional tokens meaning "feature absent"
      synthetic: {...}             # instead of path: synth_generate arguments
    split: {train: 0.7, cal: 0.15, test: 0.15}
    model:
      kind: proposed
      hyperparams: {epochs: 100}
    conformal:
      mode: residual               # residual | reconstruction
      epsilons: [0.1, 0.05, 0.01]
      window: null                 # sliding-window capacity; null = batch
    output:
      dir: runs/depaul             # relative to the config file
      model: model.npz
      report: report.txt
      plot_data: plot.csv
      record_wall_time: false
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .conformal import MODES
from .dataset import FORMATS, ContextSchema, RatingsDataset, SplitSpec, load_interactions, split, synth_generate
from .errors import ConfigError, DataError
from .models import MODEL_KINDS

DEFAULTS: dict[str, Any] = {
    "seed": 42,
    "dataset": {"name": None, "format": "generic", "rating_scale": [1, 5]},
    "split": {"train": 0.7, "cal": 0.15, "test": 0.15},
    "model": {"kind": "biasedmf", "hyperparams": {}},
    "conformal": {"mode": "residual", "epsilons": [0.1, 0.05, 0.01], "window": None},
    "output": {
        "dir": ".",
        "model": "model.npz",
        "report": "report.txt",
        "plot_data": "plot.csv",
        "record_wall_time": False,
    },
}

SYNTH_KEYS = {
    "n_users", "n_items", "n_context_features", "n_interactions", "seed", "rank", "levels", "noise",
    "bias_scale", "context_scale", "user_context_scale", "discrete", "rating_scale",
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_override(raw: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` override; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, value = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {assignment!r} has an empty key")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r}: {p!r} is not a section")
    try:
        node[parts[-1]] = yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: {exc}") from None


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    # -- accessors ---------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def dataset(self) -> dict:
        return self.raw["dataset"]

    @property
    def dataset_name(self) -> str:
        ds = self.dataset
        if ds.get("name"):
            return str(ds["name"])
        if ds.get("path"):
            return Path(ds["path"]).stem
        return "synthetic"

    @property
    def model_kind(self) -> str:
        return self.raw["model"]["kind"]

    @property
    def hyperparams(self) -> dict:
        return dict(self.raw["model"].get("hyperparams") or {})

    @property
    def conformal(self) -> dict:
        return self.raw["conformal"]

    @property
    def epsilons(self) -> list[float]:
        return [float(e) for e in self.conformal["epsilons"]]

    @property
    def split_spec(self) -> SplitSpec:
        s = self.raw["split"]
        return SplitSpec(float(s["train"]), float(s["cal"]), float(s["test"]), self.seed)

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.raw["output"]["dir"])

    def output_path(self, key: str) -> Path:
        return self.output_dir / self.raw["output"][key]

    def hash(self) -> str:
        """Digest of the effective configuration, independent of where it lives."""
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    # -- validation ----------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        raw = self.raw
        for section in ("dataset", "split", "model", "conformal", "output"):
            if not isinstance(raw.get(section), dict):
                raise ConfigError(f"config section {section!r} must be a mapping")
        try:
            int(raw["seed"])
        except (TypeError, ValueError):
            raise ConfigError(f"seed must be an integer, got {raw['seed']!r}") from None
        ds = self.dataset
        if ds.get("synthetic") is None and not ds.get("path"):
            raise ConfigError("dataset needs either 'path' or 'synthetic'")
        if ds.get("synthetic") is not None:
            unknown = set(ds["synthetic"]) - SYNTH_KEYS
            if unknown:
                raise ConfigError(f"unknown synthetic dataset keys: {sorted(unknown)}")
        else:
            path = self.resolve(ds["path"])
            if not path.exists():
                raise ConfigError(f"dataset path does not exist: {path}")
            if ds.get("format", "generic") not in FORMATS:
                raise ConfigError(f"unknown dataset format {ds.get('format')!r}; expected one of {sorted(FORMATS)}")
        scale = ds.get("rating_scale", [1, 5])
        if not (isinstance(scale, (list, tuple)) and len(scale) == 2 and float(scale[0]) < float(scale[1])):
            raise ConfigError(f"rating_scale must be [min, max] with min < max, got {scale!r}")
        if ds.get("schema") is not None:
            try:
                ContextSchema.from_dict(ds["schema"])
            except (DataError, KeyError, TypeError) as exc:
                raise ConfigError(f"invalid context schema: {exc}") from None
        try:
            self.split_spec
        except (DataError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid split: {exc}") from None
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}; expected one of {MODEL_KINDS}")
        if not isinstance(raw["model"].get("hyperparams") or {}, dict):
            raise ConfigError("model.hyperparams must be a mapping")
        conf = self.conformal
        if conf.get("mode") not in MODES:
            raise ConfigError(f"conformal.mode must be one of {MODES}, got {conf.get('mode')!r}")
        eps = conf.get("epsilons")
        if not isinstance(eps, (list, tuple)) or not eps:
            raise ConfigError("conformal.epsilons must be a non-empty list")
        for e in eps:
            if not isinstance(e, (int, float)) or not 0.0 < float(e) < 1.0:
                raise ConfigError(f"epsilon {e!r} outside (0, 1)")
        window = conf.get("window")
        if window is not None and (not isinstance(window, int) or window <= 0):
            raise ConfigError(f"conformal.window must be a positive integer or null, got {window!r}")
        return self

    # -- data ----------------------------------------------------------------

    def load_dataset(self) -> RatingsDataset:
        ds = self.dataset
        scale = (float(ds.get("rating_scale", [1, 5])[0]), float(ds.get("rating_scale", [1, 5])[1]))
        if ds.get("synthetic") is not None:
            kwargs = dict(ds["synthetic"])
            kwargs.setdefault("seed", self.seed)
            kwargs.setdefault("rating_scale", scale)
            data, _ = synth_generate(**kwargs)
            return data
        schema = ContextSchema.from_dict(ds["schema"]) if ds.get("schema") is not None else None
        return load_interactions(
            self.resolve(ds["path"]),
            ds.get("format", "generic"),
            schema=schema,
            columns=ds.get("columns"),
            rating_scale=scale,
            missing=ds.get("missing"),
            name=self.dataset_name,
        )

    def load_splits(self):
        return split(self.load_dataset(), self.split_spec)


def load_config(path=None, overrides=(), raw: dict | None = None) -> ExperimentConfig:
    """Read, merge with defaults, apply overrides and validate."""
    base_dir = Path.cwd()
    user: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            user = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base_dir = path.resolve().parent
    if raw is not None:
        user = _merge(user, raw)
    merged = _merge(DEFAULTS, user)
    for o in overrides:
        apply_override(merged, o)
    return ExperimentConfig(merged, base_dir).validate()
