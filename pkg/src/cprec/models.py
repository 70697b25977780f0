"""Uniform predict/persist contract over every model kind.

A saved model is a single ``.npz`` archive: every parameter array under its
block name, plus a ``__meta__`` entry holding UTF-8 JSON with the format
version, kind tag, hyperparameters, context schema, vocabularies and rating
scale. Arrays are loaded without pickling.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    FACTORIZED_KINDS,
    CAMFCParams,
    FactorizedHyperparams,
    KNNModel,
    MFParams,
    biasedmf_predict,
    camfc_predict,
    fit_knn,
    knn_predict,
    mf_predict,
    train_factorized,
)
from .dataset import ContextSchema, RatingsDataset
from .deepmodels import AUTOREC_KINDS, CONTEXTUAL_KINDS, AutoRecModel, ContextualNet, DeepHyperparams, train_contextual
from .errors import DataError

FORMAT_VERSION = 1
KNN_KINDS = ("itemknn", "userknn")
MODEL_KINDS = ("global_mean",) + KNN_KINDS + FACTORIZED_KINDS + CONTEXTUAL_KINDS + AUTOREC_KINDS


class GlobalMeanModel:
    kind = "global_mean"

    def __init__(self, mean: float):
        self.mean = float(mean)

    def predict(self, users, items, contexts=None):
        return np.full(len(np.atleast_1d(users)), self.mean)

    def state(self):
        return {"mean": self.mean}, {}

    @classmethod
    def from_state(cls, kind, meta, arrays, hp):
        return cls(meta["mean"])


class FactorizedModel:
    def __init__(self, kind: str, params: MFParams):
        self.kind = kind
        self.params = params

    def predict(self, users, items, contexts=None):
        users = np.atleast_1d(users)
        items = np.atleast_1d(items)
        if self.kind == "mf":
            return mf_predict(self.params, users, items)
        if self.kind == "biasedmf":
            return biasedmf_predict(self.params, users, items)
        return camfc_predict(self.params, users, items, np.asarray(contexts).reshape(len(users), -1))

    def state(self):
        p = self.params
        arrays = {
            "user_factors": p.user_factors,
            "item_factors": p.item_factors,
            "user_bias": p.user_bias,
            "item_bias": p.item_bias,
        }
        if isinstance(p, CAMFCParams):
            arrays["context_bias"] = p.context_bias
        return {"global_mean": p.global_mean}, arrays

    @classmethod
    def from_state(cls, kind, meta, arrays, hp):
        fields = {k: arrays[k] for k in ("user_factors", "item_factors", "user_bias", "item_bias")}
        if kind == "camfc":
            return cls(kind, CAMFCParams(global_mean=meta["global_mean"], context_bias=arrays["context_bias"], **fields))
        return cls(kind, MFParams(global_mean=meta["global_mean"], **fields))


class KNNWrapper:
    def __init__(self, kind: str, model: KNNModel):
        self.kind = kind
        self.model = model

    def predict(self, users, items, contexts=None):
        return knn_predict(self.model, np.atleast_1d(users), np.atleast_1d(items))

    def state(self):
        m = self.model
        meta = {"mode": m.mode, "k": m.k, "global_mean": m.global_mean, "shrinkage": m.shrinkage}
        return meta, {"similarity": m.similarity, "ratings": m.ratings, "mask": m.mask}

    @classmethod
    def from_state(cls, kind, meta, arrays, hp):
        return cls(
            kind,
            KNNModel(meta["mode"], meta["k"], arrays["similarity"], arrays["ratings"], arrays["mask"].astype(bool),
                     meta["global_mean"], meta["shrinkage"]),
        )


def _deep_from_state(kind, meta, arrays, hp):
    if kind in AUTOREC_KINDS:
        return AutoRecModel.from_state(kind, meta, arrays)
    return ContextualNet.from_state(kind, meta, arrays, DeepHyperparams.from_dict(hp))


_LOADERS = {"global_mean": GlobalMeanModel.from_state}
_LOADERS.update({k: KNNWrapper.from_state for k in KNN_KINDS})
_LOADERS.update({k: FactorizedModel.from_state for k in FACTORIZED_KINDS})
_LOADERS.update({k: _deep_from_state for k in CONTEXTUAL_KINDS + AUTOREC_KINDS})


@dataclass
class TrainedModel:
    """A model kind tag, its predictor and the data context it was trained in.

    :meth:`predict` returns raw (unclipped) estimates; :meth:`predict_clipped`
    clips to the rating scale for reporting.
    """

    kind: str
    predictor: object
    schema: ContextSchema
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    rating_scale: tuple[float, float]
    hyperparams: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def has_autoencoder(self) -> bool:
        return getattr(self.predictor, "ae", None) is not None

    def predict(self, users, items, contexts) -> np.ndarray:
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        contexts = np.asarray(contexts, dtype=np.float64).reshape(len(users), self.schema.dimension)
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise DataError(f"user index out of range [0, {self.n_users})")
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise DataError(f"item index out of range [0, {self.n_items})")
        return np.asarray(self.predictor.predict(users, items, contexts), dtype=np.float64)

    def predict_clipped(self, users, items, contexts) -> np.ndarray:
        return np.clip(self.predict(users, items, contexts), *self.rating_scale)

    def predict_dataset(self, data: RatingsDataset) -> np.ndarray:
        self.check_compatible(data)
        return self.predict(data.users, data.items, data.contexts)

    def reconstruction_error(self, users, items, contexts) -> np.ndarray:
        if not self.has_autoencoder:
            raise DataError(f"model {self.kind!r} has no autoencoder; reconstruction scores need one")
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        contexts = np.asarray(contexts, dtype=np.float64).reshape(len(users), self.schema.dimension)
        return self.predictor.reconstruction_error(users, np.atleast_1d(items), contexts)

    def check_compatible(self, data: RatingsDataset) -> None:
        if data.schema != self.schema:
            raise DataError(f"dataset schema does not match the schema model {self.kind!r} was trained with")
        if data.user_ids != self.user_ids or data.item_ids != self.item_ids:
            raise DataError("dataset vocabularies differ from the model's training vocabularies")
        if tuple(data.rating_scale) != tuple(self.rating_scale):
            raise DataError(f"dataset rating scale {data.rating_scale} differs from model's {self.rating_scale}")

    # persistence -------------------------------------------------------

    def to_bytes(self) -> bytes:
        meta, arrays = self.predictor.state()
        header = {
            "format": "cprec-model",
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "model": meta,
            "hyperparams": self.hyperparams,
            "schema": self.schema.to_dict(),
            "user_ids": list(self.user_ids),
            "item_ids": list(self.item_ids),
            "rating_scale": list(self.rating_scale),
            "history": self.history,
            "blocks": {k: list(np.shape(v)) for k, v in arrays.items()},
        }
        payload = {k: np.asarray(v) for k, v in arrays.items()}
        payload["__meta__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
        buf = io.BytesIO()
        np.savez(buf, **payload)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "TrainedModel":
        try:
            npz = np.load(io.BytesIO(data), allow_pickle=False)
            header = json.loads(bytes(npz["__meta__"]).decode("utf-8"))
        except Exception as exc:  # noqa: BLE001 - any decode failure is a data error
            raise DataError(f"not a model file: {exc}") from None
        if header.get("format") != "cprec-model" or header.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported model file format {header.get('format')!r} v{header.get('version')}")
        kind = header["kind"]
        arrays = {k: npz[k] for k in header["blocks"]}
        for k, shape in header["blocks"].items():
            if list(arrays[k].shape) != shape:
                raise DataError(f"block {k} has shape {arrays[k].shape}, header says {shape}")
        predictor = _LOADERS[kind](kind, header["model"], arrays, header["hyperparams"])
        return cls(
            kind,
            predictor,
            ContextSchema.from_dict(header["schema"]),
            tuple(header["user_ids"]),
            tuple(header["item_ids"]),
            tuple(header["rating_scale"]),
            header["hyperparams"],
            header.get("history", {}),
        )

    @classmethod
    def load(cls, path) -> "TrainedModel":
        path = Path(path)
        if not path.exists():
            raise DataError(f"model file not found: {path}")
        return cls.from_bytes(path.read_bytes())


def train_model(
    kind: str,
    train: RatingsDataset,
    cal: RatingsDataset | None = None,
    hyperparams: dict | None = None,
    seed: int = 0,
) -> TrainedModel:
    """Train any supported kind and wrap it in a :class:`TrainedModel`."""
    hyperparams = dict(hyperparams or {})
    if kind not in MODEL_KINDS:
        raise DataError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    history: dict = {}
    if kind == "global_mean":
        predictor = GlobalMeanModel(train.global_mean)
    elif kind in KNN_KINDS:
        hp = {"k": 20, "shrinkage": 10.0}
        unknown = set(hyperparams) - set(hp)
        if unknown:
            raise DataError(f"unknown KNN hyperparameters: {sorted(unknown)}")
        hp.update(hyperparams)
        hyperparams = hp
        predictor = KNNWrapper(kind, fit_knn(train, "item" if kind == "itemknn" else "user", int(hp["k"]), float(hp["shrinkage"])))
    elif kind in FACTORIZED_KINDS:
        hp = FactorizedHyperparams.from_dict(hyperparams)
        params, hist = train_factorized(kind, train, hp, seed, cal)
        predictor = FactorizedModel(kind, params)
        hyperparams, history = vars(hp).copy(), hist.to_dict()
    else:
        hp = DeepHyperparams.from_dict(hyperparams)
        predictor, hist = train_contextual(kind, train, cal, hp, seed)
        hyperparams, history = hp.to_dict(), hist.to_dict()
    return TrainedModel(
        kind, predictor, train.schema, train.user_ids, train.item_ids, train.rating_scale, hyperparams, history
    )
