"""Non-deep reference predictors: global mean, user/item KNN, plain MF,
biased MF and CAMF-C (biased MF plus one additive bias per contextual
condition)."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import RatingsDataset, rating_matrix
from .errors import DataError, DivergenceError
from .numerics import FLOAT, Optimizer, ParamBlock, named_rng

log = logging.getLogger(__name__)

FACTORIZED_KINDS = ("mf", "biasedmf", "camfc")


@dataclass
class MFParams:
    user_factors: np.ndarray
    item_factors: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_mean: float = 0.0

    def __post_init__(self):
        if self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise DataError("user and item factor dimensions disagree")


@dataclass
class CAMFCParams(MFParams):
    context_bias: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _check_indices(params: MFParams, users, items):
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    n_u, n_i = len(params.user_factors), len(params.item_factors)
    if users.size and (users.min() < 0 or users.max() >= n_u):
        raise DataError(f"user index out of range [0, {n_u})")
    if items.size and (items.min() < 0 or items.max() >= n_i):
        raise DataError(f"item index out of range [0, {n_i})")
    return users, items


def mf_predict(params: MFParams, u, i):
    """Dot product of user and item factors. Scalar or vectorised indices."""
    users, items = _check_indices(params, u, i)
    out = np.sum(params.user_factors[users] * params.item_factors[items], axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def biasedmf_predict(params: MFParams, u, i):
    users, items = _check_indices(params, u, i)
    out = (
        params.global_mean
        + params.user_bias[users]
        + params.item_bias[items]
        + np.sum(params.user_factors[users] * params.item_factors[items], axis=-1)
    )
    return float(out) if np.ndim(out) == 0 else out


def camfc_predict(params: CAMFCParams, u, i, c):
    c = np.asarray(c, dtype=FLOAT)
    if c.shape[-1] != len(params.context_bias):
        raise DataError(f"context has dimension {c.shape[-1]}, model expects {len(params.context_bias)}")
    base = biasedmf_predict(params, u, i)
    out = base + c @ params.context_bias
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class FactorizedHyperparams:
    factors: int = 16
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.01
    reg: float = 0.02
    optimizer: str = "adam"
    init_std: float = 0.1
    patience: int = 10
    freeze_context: bool = False

    @classmethod
    def from_dict(cls, d: dict | None) -> "FactorizedHyperparams":
        d = dict(d or {})
        known = {k: d.pop(k) for k in list(d) if k in cls.__dataclass_fields__}
        if d:
            raise DataError(f"unknown factorization hyperparameters: {sorted(d)}")
        return cls(**known)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    cal_rmse: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


class FactorizedObjective:
    """Per-sample squared error plus L2 on every parameter the sample touches,
    averaged over the batch."""

    def __init__(self, kind: str, blocks: dict[str, ParamBlock], global_mean: float, reg: float):
        self.kind = kind
        self.blocks = blocks
        self.global_mean = global_mean
        self.reg = reg

    def predict(self, users, items, contexts):
        P = self.blocks["user_factors"].value[users]
        Q = self.blocks["item_factors"].value[items]
        out = np.sum(P * Q, axis=1)
        if self.kind != "mf":
            out = out + self.global_mean + self.blocks["user_bias"].value[users] + self.blocks["item_bias"].value[items]
        if self.kind == "camfc":
            out = out + contexts @ self.blocks["context_bias"].value
        return out

    def loss(self, users, items, contexts, ratings, grad: bool = True) -> float:
        b = self.blocks
        P = b["user_factors"].value[users]
        Q = b["item_factors"].value[items]
        err = self.predict(users, items, contexts) - ratings
        n = len(ratings)
        reg_terms = np.sum(P * P, axis=1) + np.sum(Q * Q, axis=1)
        if self.kind != "mf":
            reg_terms = reg_terms + b["user_bias"].value[users] ** 2 + b["item_bias"].value[items] ** 2
        if self.kind == "camfc":
            reg_terms = reg_terms + contexts @ (b["context_bias"].value ** 2)
        loss = float(np.sum(err * err + self.reg * reg_terms) / n)
        if not grad:
            return loss
        e = (2.0 / n) * err
        r = 2.0 * self.reg / n
        np.add.at(b["user_factors"].grad, users, e[:, None] * Q + r * P)
        np.add.at(b["item_factors"].grad, items, e[:, None] * P + r * Q)
        if self.kind != "mf":
            np.add.at(b["user_bias"].grad, users, e + r * b["user_bias"].value[users])
            np.add.at(b["item_bias"].grad, items, e + r * b["item_bias"].value[items])
        if self.kind == "camfc":
            b["context_bias"].grad += contexts.T @ e + r * b["context_bias"].value * contexts.sum(axis=0)
        return loss


def init_factorized_blocks(kind: str, n_users: int, n_items: int, context_dim: int, hp: FactorizedHyperparams, seed: int):
    rng = named_rng(seed, "init")
    k = hp.factors
    blocks = {
        "user_factors": ParamBlock("user_factors", rng.normal(0.0, hp.init_std, size=(n_users, k)), decay=False),
        "item_factors": ParamBlock("item_factors", rng.normal(0.0, hp.init_std, size=(n_items, k)), decay=False),
    }
    if kind != "mf":
        blocks["user_bias"] = ParamBlock("user_bias", np.zeros(n_users), decay=False)
        blocks["item_bias"] = ParamBlock("item_bias", np.zeros(n_items), decay=False)
    if kind == "camfc":
        blocks["context_bias"] = ParamBlock("context_bias", np.zeros(context_dim), decay=False)
    return blocks


def _rmse(pred, truth) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred) - np.asarray(truth)) ** 2)))


def train_factorized(
    kind: str,
    train: RatingsDataset,
    hyperparams: FactorizedHyperparams | dict | None = None,
    seed: int = 0,
    cal: RatingsDataset | None = None,
) -> tuple[MFParams, TrainHistory]:
    """Minibatch gradient descent on the factorization objective.

    With ``cal`` given, training stops once calibration RMSE has not improved
    for ``patience`` epochs and the best parameters are restored.
    """
    if kind not in FACTORIZED_KINDS:
        raise DataError(f"unknown factorized model {kind!r}; expected one of {FACTORIZED_KINDS}")
    if len(train) == 0:
        raise DataError("cannot train on an empty dataset")
    hp = hyperparams if isinstance(hyperparams, FactorizedHyperparams) else FactorizedHyperparams.from_dict(hyperparams)
    global_mean = train.global_mean if kind != "mf" else 0.0
    blocks = init_factorized_blocks(kind, train.n_users, train.n_items, train.schema.dimension, hp, seed)
    objective = FactorizedObjective(kind, blocks, global_mean, hp.reg)
    trainable = [p for name, p in blocks.items() if not (name == "context_bias" and hp.freeze_context)]
    opt = Optimizer(hp.optimizer, hp.learning_rate, weight_decay=0.0)
    shuffle = named_rng(seed, "shuffle")
    users, items, contexts, ratings = train.users, train.items, train.contexts, train.ratings
    n = len(train)
    history = TrainHistory()
    best = None
    best_rmse = math.inf
    stale = 0
    for epoch in range(hp.epochs):
        order = shuffle.permutation(n)
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                objective.loss(users[idx], items[idx], contexts[idx], ratings[idx])
            try:
                opt.step(trainable)
            except DivergenceError as exc:
                raise DivergenceError(f"{kind} training diverged at epoch {epoch} ({exc}); try a lower learning rate") from None
        for p in blocks.values():
            p.zero_grad()
        with np.errstate(over="ignore", invalid="ignore"):
            loss = objective.loss(users, items, contexts, ratings, grad=False)
        if not math.isfinite(loss):
            raise DivergenceError(
                f"{kind} training diverged at epoch {epoch} (loss={loss}); try a lower learning rate"
            )
        history.train_loss.append(loss)
        if cal is not None and len(cal):
            rmse = _rmse(objective.predict(cal.users, cal.items, cal.contexts), cal.ratings)
            history.cal_rmse.append(rmse)
            log.debug("%s epoch %d loss %.6f cal_rmse %.6f", kind, epoch, loss, rmse)
            if rmse < best_rmse:
                best_rmse, stale = rmse, 0
                best = {k: p.value.copy() for k, p in blocks.items()}
                history.best_epoch = epoch
            else:
                stale += 1
                if stale >= hp.patience:
                    break
        else:
            log.debug("%s epoch %d loss %.6f", kind, epoch, loss)
    if best is not None:
        for k, p in blocks.items():
            p.value[...] = best[k]
    else:
        history.best_epoch = len(history.train_loss) - 1

    k = hp.factors
    zeros_u, zeros_i = np.zeros(train.n_users), np.zeros(train.n_items)
    fields = dict(
        user_factors=blocks["user_factors"].value.reshape(train.n_users, k),
        item_factors=blocks["item_factors"].value.reshape(train.n_items, k),
        user_bias=blocks["user_bias"].value if "user_bias" in blocks else zeros_u,
        item_bias=blocks["item_bias"].value if "item_bias" in blocks else zeros_i,
        global_mean=global_mean,
    )
    if kind == "camfc":
        return CAMFCParams(context_bias=blocks["context_bias"].value, **fields), history
    return MFParams(**fields), history


# --------------------------------------------------------------------------
# neighbourhood models
# --------------------------------------------------------------------------


@dataclass
class KNNModel:
    """Cosine KNN over mean-rating vectors with co-rating shrinkage.

    ``ratings``/``mask`` are stored user-major regardless of ``mode``;
    ``similarity`` is over items (``mode="item"``) or users (``mode="user"``)
    with a zeroed diagonal.
    """

    mode: str
    k: int
    similarity: np.ndarray
    ratings: np.ndarray
    mask: np.ndarray
    global_mean: float
    shrinkage: float = 10.0


def similarity_matrix(vectors: np.ndarray, mask: np.ndarray, shrinkage: float = 10.0) -> np.ndarray:
    """Row-vs-row cosine similarity scaled by ``n_co / (n_co + shrinkage)``.

    Rows with zero norm get similarity 0 to everything.
    """
    vectors = np.asarray(vectors, dtype=FLOAT)
    m = mask.astype(FLOAT)
    norms = np.linalg.norm(vectors, axis=1)
    dots = vectors @ vectors.T
    denom = np.outer(norms, norms)
    sim = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
    co = m @ m.T
    sim *= co / (co + shrinkage)
    np.fill_diagonal(sim, 0.0)
    return sim


def fit_knn(train: RatingsDataset, mode: str = "item", k: int = 20, shrinkage: float = 10.0) -> KNNModel:
    if mode not in ("item", "user"):
        raise DataError(f"KNN mode must be 'item' or 'user', got {mode!r}")
    if k <= 0:
        raise DataError("KNN needs k > 0")
    matrix, mask = rating_matrix(train, by="user")
    if mode == "item":
        sim = similarity_matrix(matrix.T, mask.T, shrinkage)
    else:
        sim = similarity_matrix(matrix, mask, shrinkage)
    return KNNModel(mode, int(k), sim, matrix, mask, train.global_mean, float(shrinkage))


def knn_predict(model: KNNModel, u, i):
    """Similarity-weighted mean of the ``k`` most similar neighbours that
    rated the target; global mean when none qualifies."""
    users = np.atleast_1d(np.asarray(u, dtype=np.int64))
    items = np.atleast_1d(np.asarray(i, dtype=np.int64))
    out = np.empty(len(users), dtype=FLOAT)
    for n, (uu, ii) in enumerate(zip(users, items)):
        if model.mode == "item":
            sims = model.similarity[ii]
            observed = model.mask[uu]
            values = model.ratings[uu]
        else:
            sims = model.similarity[uu]
            observed = model.mask[:, ii]
            values = model.ratings[:, ii]
        cand = np.flatnonzero(observed & (sims > 0))
        if cand.size == 0:
            out[n] = model.global_mean
            continue
        if cand.size > model.k:
            # stable tie-break on index keeps predictions deterministic
            order = np.lexsort((cand, -sims[cand]))
            cand = cand[order[: model.k]]
        w = sims[cand]
        out[n] = float(w @ values[cand] / w.sum())
    return float(out[0]) if np.ndim(u) == 0 else out
