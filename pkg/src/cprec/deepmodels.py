"""Autoencoder-based and neural contextual rating models.

* :class:`Autoencoder`: encoder/decoder stack; a single hidden layer is
  AutoRec, deeper stacks are trained with optional dense refeeding.
* :class:`AutoRecModel`: U-/I-AutoRec and the deep autoencoder over
  per-user (or per-item) mean-rating vectors.
* :class:`ContextualNet`: user/item embedding tables, a context projection,
  an optional autoencoder bottleneck over the concatenated one-hot input, an
  MLP tower and an optional user-item elementwise-product branch. The
  ``proposed`` kind uses the bottleneck; ``neucmf0i`` uses the product branch
  without it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .dataset import RatingsDataset, denormalize_rating, normalize_rating, rating_matrix
from .errors import DataError, DivergenceError
from .numerics import FLOAT, MLP, Dense, Optimizer, ParamBlock, named_rng

log = logging.getLogger(__name__)

CONTEXTUAL_KINDS = ("proposed", "neucmf0i")
AUTOREC_KINDS = ("autorec_u", "autorec_i", "deep_ae")
DEEP_KINDS = CONTEXTUAL_KINDS + AUTOREC_KINDS


# --------------------------------------------------------------------------
# masked reconstruction loss
# --------------------------------------------------------------------------


def mmse_loss(target, reconstruction, mask=None, weights: Sequence[ParamBlock] = (), lam: float = 0.0):
    """Masked squared reconstruction error plus ``lam/2`` times the squared
    Frobenius norm of ``weights`` (biases are never passed in).

    Returns ``(loss, grad_reconstruction, weight_grads)``; the gradient is
    zero outside the mask and ``weight_grads[k] = lam * weights[k].value``.
    """
    target = np.asarray(target, dtype=FLOAT)
    reconstruction = np.asarray(reconstruction, dtype=FLOAT)
    if target.shape != reconstruction.shape:
        raise DataError(f"target {target.shape} and reconstruction {reconstruction.shape} differ in shape")
    if mask is None:
        mask = np.ones(target.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != target.shape:
        raise DataError(f"mask shape {mask.shape} does not match target {target.shape}")
    if not mask.any():
        raise DataError("mmse_loss: empty mask, no observed entries")
    diff = np.where(mask, reconstruction - target, 0.0)
    loss = float(np.sum(diff * diff))
    penalty = 0.5 * lam * sum(float(np.sum(w.value * w.value)) for w in weights)
    return loss + penalty, 2.0 * diff, [lam * w.value for w in weights]


# --------------------------------------------------------------------------
# autoencoder
# --------------------------------------------------------------------------


class Autoencoder:
    """Encoder ``input -> hidden[0] -> ... -> hidden[-1]`` (the bottleneck) and a
    mirrored decoder back to ``input``. Hidden layers use ``activation``; the
    final decoder layer uses ``output_activation``."""

    def __init__(
        self,
        input_dim: int,
        hidden: Sequence[int],
        activation: str = "sigmoid",
        output_activation: str = "identity",
        lam: float = 0.0,
        rng=None,
        name: str = "ae",
    ):
        hidden = [int(h) for h in hidden]
        if not hidden:
            raise DataError("autoencoder needs at least one hidden layer")
        self.input_dim = int(input_dim)
        self.hidden = hidden
        self.activation = activation
        self.output_activation = output_activation
        self.lam = float(lam)
        self.encoder = MLP(f"{name}.enc", [self.input_dim] + hidden, activation, activation, rng=rng)
        dec_dims = hidden[::-1] + [self.input_dim]
        self.decoder = MLP(f"{name}.dec", dec_dims, activation, output_activation, rng=rng)

    @property
    def bottleneck_dim(self) -> int:
        return self.hidden[-1]

    def params(self) -> list[ParamBlock]:
        return self.encoder.params() + self.decoder.params()

    def weights(self) -> list[ParamBlock]:
        return self.encoder.weights() + self.decoder.weights()

    def _check(self, x):
        x = np.asarray(x, dtype=FLOAT)
        if x.shape[-1] != self.input_dim:
            raise DataError(f"autoencoder expects input dimension {self.input_dim}, got {x.shape[-1]}")
        return x

    def encode(self, x) -> np.ndarray:
        return self.encoder(self._check(x))

    def __call__(self, x) -> np.ndarray:
        return self.decoder(self.encoder(self._check(x)))

    def forward(self, x) -> np.ndarray:
        return self.decoder.forward(self.encoder.forward(self._check(x)))

    def backward(self, upstream) -> np.ndarray:
        return self.encoder.backward(self.decoder.backward(upstream))

    def loss_and_backward(self, target, recon, mask) -> float:
        loss, g, wgrads = mmse_loss(target, recon, mask, self.weights(), self.lam)
        self.backward(g)
        for w, wg in zip(self.weights(), wgrads):
            w.grad += wg
        return loss


def autorec_forward(params: Autoencoder, r) -> np.ndarray:
    """Reconstruction ``h(r)`` of a rating vector (or batch of vectors)."""
    return params(r)


def encode_bottleneck(params: Autoencoder, x) -> np.ndarray:
    return params.encode(x)


class RefeedStep(NamedTuple):
    loss_first: float
    loss_second: float
    refed: np.ndarray


def dense_refeed_step(ae: Autoencoder, x, optimizer: Optimizer, mask=None) -> RefeedStep:
    """One dense-refeeding update.

    1. forward ``f(x)``, masked loss on the observed entries of ``x``;
    2. backward and update;
    3. feed the (now dense) first-pass output ``f(x)`` back in, forward
       ``f(f(x))`` and score it against ``f(x)`` with every entry observed;
    4. backward and update again.
    """
    x = np.asarray(x, dtype=FLOAT)
    if mask is None:
        mask = x != 0
    params = ae.params()
    recon = ae.forward(x)
    loss_first = ae.loss_and_backward(x, recon, mask)
    optimizer.step(params)
    refed = recon.copy()
    recon2 = ae.forward(refed)
    loss_second = ae.loss_and_backward(refed, recon2, np.ones(refed.shape, dtype=bool))
    optimizer.step(params)
    return RefeedStep(loss_first, loss_second, refed)


# --------------------------------------------------------------------------
# input construction
# --------------------------------------------------------------------------


def build_input_vector(u: int, i: int, c, n_users: int, n_items: int, rating_normalized: float | None = None):
    """``one_hot(u) ⊕ one_hot(i) ⊕ c ⊕ [rating]``; the rating slot is 0 when
    the rating is unknown (prediction time)."""
    return build_input_batch([u], [i], np.atleast_2d(np.asarray(c, dtype=FLOAT)), n_users, n_items,
                             None if rating_normalized is None else [rating_normalized])[0]


def build_input_batch(users, items, contexts, n_users: int, n_items: int, ratings_normalized=None) -> np.ndarray:
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    contexts = np.asarray(contexts, dtype=FLOAT).reshape(len(users), -1)
    if users.size and (users.min() < 0 or users.max() >= n_users):
        raise DataError(f"user index out of range [0, {n_users})")
    if items.size and (items.min() < 0 or items.max() >= n_items):
        raise DataError(f"item index out of range [0, {n_items})")
    n, d = len(users), contexts.shape[1]
    x = np.zeros((n, n_users + n_items + d + 1), dtype=FLOAT)
    rows = np.arange(n)
    x[rows, users] = 1.0
    x[rows, n_users + items] = 1.0
    x[:, n_users + n_items : n_users + n_items + d] = contexts
    if ratings_normalized is not None:
        x[:, -1] = ratings_normalized
    return x


def ui_tower(e_u, e_i) -> np.ndarray:
    e_u = np.asarray(e_u, dtype=FLOAT)
    e_i = np.asarray(e_i, dtype=FLOAT)
    if e_u.shape != e_i.shape:
        raise DataError(f"UI tower needs equal embedding shapes, got {e_u.shape} and {e_i.shape}")
    return e_u * e_i


# --------------------------------------------------------------------------
# hyperparameters and history
# --------------------------------------------------------------------------


@dataclass
class DeepHyperparams:
    embed_dim: int = 16
    context_embed_dim: int = 8
    bottleneck: int = 16
    ae_hidden: list[int] = field(default_factory=lambda: [128, 64])
    head_hidden: list[int] = field(default_factory=lambda: [64, 32])
    ae_activation: str = "sigmoid"
    hidden_activation: str = "relu"
    autorec_hidden: int = 64
    epochs: int = 100
    ae_epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    ae_learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    ae_lambda: float = 1e-4
    optimizer: str = "adam"
    patience: int = 10
    refeed: bool = True
    ui_branch: bool | None = None
    finetune_encoder: bool = False
    rating_normalization: str = "minmax"

    @classmethod
    def from_dict(cls, d: dict | None) -> "DeepHyperparams":
        d = dict(d or {})
        known = {k: d.pop(k) for k in list(d) if k in cls.__dataclass_fields__}
        if d:
            raise DataError(f"unknown deep-model hyperparameters: {sorted(d)}")
        return cls(**known)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DeepHistory:
    ae_loss: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    cal_rmse: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


def _check_finite(loss: float, kind: str, epoch: int, phase: str):
    if not math.isfinite(loss):
        raise DivergenceError(f"{kind} {phase} diverged at epoch {epoch} (loss={loss}); try a lower learning rate")


def _rmse(pred, truth) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred) - np.asarray(truth)) ** 2)))


class _EarlyStopper:
    def __init__(self, patience: int, params: list[ParamBlock]):
        self.patience = patience
        self.params = params
        self.best = math.inf
        self.best_epoch = -1
        self.snapshot = None
        self.stale = 0

    def update(self, epoch: int, rmse: float) -> bool:
        """Record ``rmse``; True when training should stop."""
        if rmse < self.best:
            self.best, self.best_epoch, self.stale = rmse, epoch, 0
            self.snapshot = [p.value.copy() for p in self.params]
            return False
        self.stale += 1
        return self.stale >= self.patience

    def restore(self):
        if self.snapshot is not None:
            for p, v in zip(self.params, self.snapshot):
                p.value[...] = v


# --------------------------------------------------------------------------
# AutoRec / deep autoencoder over rating vectors
# --------------------------------------------------------------------------


class AutoRecModel:
    """Predicts ``h(r)[j]`` where ``r`` is the training rating vector of the
    user (``by="user"``) or item (``by="item"``) and ``j`` the other index."""

    def __init__(self, kind: str, ae: Autoencoder, matrix: np.ndarray, mask: np.ndarray):
        self.kind = kind
        self.by = "item" if kind == "autorec_i" else "user"
        self.ae = ae
        self.matrix = np.asarray(matrix, dtype=FLOAT)
        self.mask = np.asarray(mask, dtype=bool)

    def _rows_cols(self, users, items):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        return (users, items) if self.by == "user" else (items, users)

    def predict(self, users, items, contexts=None) -> np.ndarray:
        rows, cols = self._rows_cols(users, items)
        uniq, inv = np.unique(rows, return_inverse=True)
        recon = self.ae(self.matrix[uniq])
        return recon[inv, cols]

    def reconstruction_input(self, users, items, contexts=None) -> np.ndarray:
        rows, _ = self._rows_cols(users, items)
        return self.matrix[rows]

    def reconstruction_error(self, users, items, contexts=None) -> np.ndarray:
        x = self.reconstruction_input(users, items, contexts)
        diff = x - self.ae(x)
        return np.sum(diff * diff, axis=1)

    def state(self) -> tuple[dict, dict]:
        meta = {
            "hidden": self.ae.hidden,
            "activation": self.ae.activation,
            "output_activation": self.ae.output_activation,
            "lam": self.ae.lam,
        }
        arrays = {p.name: p.value for p in self.ae.params()}
        arrays["rating_matrix"] = self.matrix
        arrays["rating_mask"] = self.mask
        return meta, arrays

    @classmethod
    def from_state(cls, kind: str, meta: dict, arrays: dict) -> "AutoRecModel":
        matrix = arrays["rating_matrix"]
        ae = Autoencoder(matrix.shape[1], meta["hidden"], meta["activation"], meta["output_activation"], meta["lam"])
        for p in ae.params():
            p.value[...] = arrays[p.name]
        return cls(kind, ae, matrix, arrays["rating_mask"].astype(bool))


def train_autorec(kind, train: RatingsDataset, cal: RatingsDataset | None, hp: DeepHyperparams, seed: int):
    matrix, mask = rating_matrix(train, by="item" if kind == "autorec_i" else "user")
    if kind == "deep_ae":
        hidden = list(hp.ae_hidden) + [hp.bottleneck]
    else:
        hidden = [hp.autorec_hidden]
    ae = Autoencoder(matrix.shape[1], hidden, hp.ae_activation, "identity", hp.ae_lambda, rng=named_rng(seed, "init"))
    model = AutoRecModel(kind, ae, matrix, mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        raise DataError("no observed ratings to train on")
    params = ae.params()
    opt = Optimizer(hp.optimizer, hp.learning_rate, weight_decay=0.0)
    shuffle = named_rng(seed, "shuffle")
    history = DeepHistory()
    stopper = _EarlyStopper(hp.patience, params)
    refeed = hp.refeed and kind == "deep_ae"
    for epoch in range(hp.epochs):
        order = rows[shuffle.permutation(rows.size)]
        for start in range(0, order.size, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            if refeed:
                dense_refeed_step(ae, matrix[idx], opt, mask[idx])
            else:
                ae.loss_and_backward(matrix[idx], ae.forward(matrix[idx]), mask[idx])
                opt.step(params)
        loss, _, _ = mmse_loss(matrix[rows], ae(matrix[rows]), mask[rows], ae.weights(), ae.lam)
        _check_finite(loss, kind, epoch, "training")
        history.train_loss.append(loss)
        if cal is not None and len(cal):
            rmse = _rmse(model.predict(cal.users, cal.items), cal.ratings)
            history.cal_rmse.append(rmse)
            log.debug("%s epoch %d loss %.6f cal_rmse %.6f", kind, epoch, loss, rmse)
            if stopper.update(epoch, rmse):
                break
    stopper.restore()
    history.best_epoch = stopper.best_epoch if stopper.snapshot is not None else len(history.train_loss) - 1
    return model, history


# --------------------------------------------------------------------------
# contextual network
# --------------------------------------------------------------------------


class ContextualNet:
    """Embeddings + (optional) autoencoder bottleneck + MLP tower + head.

    Tower input is ``e_u ⊕ e_i ⊕ e_c ⊕ z``; the final linear layer sees the
    tower output, concatenated with ``e_u ⊙ e_i`` when ``ui_branch``. Output
    is on the normalized rating scale.
    """

    def __init__(
        self,
        kind: str,
        n_users: int,
        n_items: int,
        context_dim: int,
        hp: DeepHyperparams,
        rating_scale=(1.0, 5.0),
        rng=None,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        self.kind = kind
        self.n_users, self.n_items, self.context_dim = int(n_users), int(n_items), int(context_dim)
        self.rating_scale = tuple(float(s) for s in rating_scale)
        self.normalization = hp.rating_normalization
        self.use_ae = kind == "proposed"
        self.ui_branch = bool(hp.ui_branch) if hp.ui_branch is not None else kind == "neucmf0i"
        self.finetune_encoder = bool(hp.finetune_encoder)
        d = int(hp.embed_dim)
        self.user_table = ParamBlock("emb.user", rng.normal(0.0, 0.1, size=(self.n_users, d)))
        self.item_table = ParamBlock("emb.item", rng.normal(0.0, 0.1, size=(self.n_items, d)))
        self.ctx = Dense("emb.ctx", self.context_dim, hp.context_embed_dim, "tanh", rng=rng) if self.context_dim else None
        d_c = hp.context_embed_dim if self.ctx is not None else 0
        self.ae = None
        d_z = 0
        if self.use_ae:
            self.ae = Autoencoder(
                self.input_dim, list(hp.ae_hidden) + [hp.bottleneck], hp.ae_activation, "identity", hp.ae_lambda,
                rng=rng, name="ae",
            )
            d_z = hp.bottleneck
        tower_dims = [2 * d + d_c + d_z] + list(hp.head_hidden)
        self.tower = MLP("tower", tower_dims, hp.hidden_activation, hp.hidden_activation, rng=rng) if hp.head_hidden else None
        head_in = (tower_dims[-1]) + (d if self.ui_branch else 0)
        self.head = Dense("head", head_in, 1, "identity", rng=rng)
        self._cache = None

    @property
    def input_dim(self) -> int:
        return self.n_users + self.n_items + self.context_dim + 1

    @property
    def embed_dim(self) -> int:
        return self.user_table.value.shape[1]

    def head_params(self) -> list[ParamBlock]:
        ps = [self.user_table, self.item_table]
        if self.ctx is not None:
            ps += self.ctx.params()
        if self.tower is not None:
            ps += self.tower.params()
        ps += self.head.params()
        if self.finetune_encoder and self.ae is not None:
            ps += self.ae.encoder.params()
        return ps

    def all_params(self) -> list[ParamBlock]:
        ps = [self.user_table, self.item_table]
        if self.ctx is not None:
            ps += self.ctx.params()
        if self.ae is not None:
            ps += self.ae.params()
        if self.tower is not None:
            ps += self.tower.params()
        return ps + self.head.params()

    def inputs(self, users, items, contexts, ratings_normalized=None) -> np.ndarray:
        return build_input_batch(users, items, contexts, self.n_users, self.n_items, ratings_normalized)

    def bottleneck(self, users, items, contexts) -> np.ndarray:
        """``z`` for the prediction-time input (rating slot 0)."""
        return self.ae.encode(self.inputs(users, items, contexts))

    def _check(self, users, items, contexts):
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        items = np.asarray(items, dtype=np.int64).reshape(-1)
        contexts = np.asarray(contexts, dtype=FLOAT).reshape(len(users), -1)
        if contexts.shape[1] != self.context_dim:
            raise DataError(f"context has dimension {contexts.shape[1]}, model expects {self.context_dim}")
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise DataError(f"user index out of range [0, {self.n_users})")
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise DataError(f"item index out of range [0, {self.n_items})")
        return users, items, contexts

    def forward(self, users, items, contexts, z=None, train: bool = False) -> np.ndarray:
        """Normalized-scale output. ``z`` may be passed precomputed when the
        encoder is frozen; with ``train`` the call caches for :meth:`backward`."""
        users, items, contexts = self._check(users, items, contexts)
        eu = self.user_table.value[users]
        ei = self.item_table.value[items]
        parts = [eu, ei]
        if self.ctx is not None:
            parts.append(self.ctx.forward(contexts) if train else self.ctx(contexts))
        if self.use_ae:
            if z is None:
                x0 = self.inputs(users, items, contexts)
                z = self.ae.encoder.forward(x0) if (train and self.finetune_encoder) else self.ae.encode(x0)
            parts.append(z)
        h = np.concatenate(parts, axis=1)
        if self.tower is not None:
            h = self.tower.forward(h) if train else self.tower(h)
        if self.ui_branch:
            h = np.concatenate([h, ui_tower(eu, ei)], axis=1)
        out = self.head.forward(h) if train else self.head(h)
        if train:
            self._cache = (users, items, eu, ei, [p.shape[1] for p in parts])
        return out[:, 0]

    def backward(self, d_out) -> None:
        users, items, eu, ei, widths = self._cache
        self._cache = None
        dh = self.head.backward(np.asarray(d_out, dtype=FLOAT)[:, None])
        d = self.embed_dim
        deu = np.zeros_like(eu)
        dei = np.zeros_like(ei)
        if self.ui_branch:
            dg = dh[:, -d:]
            dh = dh[:, :-d]
            deu += dg * ei
            dei += dg * eu
        if self.tower is not None:
            dh = self.tower.backward(dh)
        pos = np.cumsum([0] + widths)
        deu += dh[:, pos[0] : pos[1]]
        dei += dh[:, pos[1] : pos[2]]
        k = 2
        if self.ctx is not None:
            self.ctx.backward(dh[:, pos[k] : pos[k + 1]])
            k += 1
        if self.use_ae and self.finetune_encoder:
            self.ae.encoder.backward(dh[:, pos[k] : pos[k + 1]])
        np.add.at(self.user_table.grad, users, deu)
        np.add.at(self.item_table.grad, items, dei)

    def loss(self, users, items, contexts, targets_normalized, z=None) -> float:
        """Mean squared error on the normalized scale; accumulates gradients."""
        y = self.forward(users, items, contexts, z=z, train=True)
        err = y - np.asarray(targets_normalized, dtype=FLOAT)
        self.backward(2.0 * err / len(err))
        return float(np.mean(err * err))

    def predict(self, users, items, contexts) -> np.ndarray:
        return denormalize_rating(self.forward(users, items, contexts), self.rating_scale, self.normalization)

    def reconstruction_input(self, users, items, contexts) -> np.ndarray:
        if self.ae is None:
            raise DataError(f"model {self.kind!r} has no autoencoder component")
        users, items, contexts = self._check(users, items, contexts)
        return self.inputs(users, items, contexts)

    def reconstruction_error(self, users, items, contexts) -> np.ndarray:
        x = self.reconstruction_input(users, items, contexts)
        diff = x - self.ae(x)
        return np.sum(diff * diff, axis=1)

    def state(self) -> tuple[dict, dict]:
        meta = {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "context_dim": self.context_dim,
            "rating_scale": list(self.rating_scale),
        }
        return meta, {p.name: p.value for p in self.all_params()}

    @classmethod
    def from_state(cls, kind: str, meta: dict, arrays: dict, hp: DeepHyperparams) -> "ContextualNet":
        net = cls(kind, meta["n_users"], meta["n_items"], meta["context_dim"], hp, meta["rating_scale"])
        for p in net.all_params():
            if arrays[p.name].shape != p.value.shape:
                raise DataError(f"stored block {p.name} has shape {arrays[p.name].shape}, expected {p.value.shape}")
            p.value[...] = arrays[p.name]
        return net


def pretrain_autoencoder(net: ContextualNet, train: RatingsDataset, hp: DeepHyperparams, seed: int, history: DeepHistory):
    """Reconstruction pretraining over the concatenated training inputs
    (rating slot filled), with dense refeeding when ``hp.refeed``."""
    ae = net.ae
    targets = normalize_rating(train.ratings, train.rating_scale, hp.rating_normalization)
    X = net.inputs(train.users, train.items, train.contexts, targets)
    full = np.ones((1, X.shape[1]), dtype=bool)
    params = ae.params()
    opt = Optimizer(hp.optimizer, hp.ae_learning_rate, weight_decay=0.0)
    shuffle = named_rng(seed, "ae-shuffle")
    for epoch in range(hp.ae_epochs):
        order = shuffle.permutation(len(X))
        for start in range(0, len(X), hp.batch_size):
            xb = X[order[start : start + hp.batch_size]]
            mask = np.broadcast_to(full, xb.shape)
            if hp.refeed:
                dense_refeed_step(ae, xb, opt, mask)
            else:
                ae.loss_and_backward(xb, ae.forward(xb), mask)
                opt.step(params)
        loss = float(np.mean(np.sum((X - ae(X)) ** 2, axis=1)))
        _check_finite(loss, net.kind, epoch, "autoencoder pretraining")
        history.ae_loss.append(loss)
        log.debug("%s ae epoch %d recon %.6f", net.kind, epoch, loss)


def train_contextual_net(kind: str, train: RatingsDataset, cal: RatingsDataset | None, hp: DeepHyperparams, seed: int):
    net = ContextualNet(
        kind, train.n_users, train.n_items, train.schema.dimension, hp, train.rating_scale, rng=named_rng(seed, "init")
    )
    # start the output at the training mean so early epochs are not spent on the offset
    targets = normalize_rating(train.ratings, train.rating_scale, hp.rating_normalization)
    net.head.b.value[...] = float(np.mean(targets))
    history = DeepHistory()
    if net.use_ae:
        pretrain_autoencoder(net, train, hp, seed, history)
    z_train = None
    if net.use_ae and not net.finetune_encoder:
        z_train = net.bottleneck(train.users, train.items, train.contexts)
    params = net.head_params()
    opt = Optimizer(hp.optimizer, hp.learning_rate, hp.weight_decay)
    shuffle = named_rng(seed, "shuffle")
    stopper = _EarlyStopper(hp.patience, params)
    n = len(train)
    for epoch in range(hp.epochs):
        order = shuffle.permutation(n)
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            net.loss(
                train.users[idx], train.items[idx], train.contexts[idx], targets[idx],
                z=None if z_train is None else z_train[idx],
            )
            opt.step(params)
        pred = net.forward(train.users, train.items, train.contexts, z=z_train)
        loss = float(np.mean((pred - targets) ** 2))
        _check_finite(loss, kind, epoch, "training")
        history.train_loss.append(loss)
        if cal is not None and len(cal):
            rmse = _rmse(net.predict(cal.users, cal.items, cal.contexts), cal.ratings)
            history.cal_rmse.append(rmse)
            log.debug("%s epoch %d loss %.6f cal_rmse %.6f", kind, epoch, loss, rmse)
            if stopper.update(epoch, rmse):
                break
    stopper.restore()
    history.best_epoch = stopper.best_epoch if stopper.snapshot is not None else len(history.train_loss) - 1
    return net, history


def train_contextual(kind: str, train: RatingsDataset, cal: RatingsDataset | None = None, hyperparams=None, seed: int = 0):
    """Train any deep model kind. Returns ``(model, history)``."""
    if kind not in DEEP_KINDS:
        raise DataError(f"unknown deep model {kind!r}; expected one of {DEEP_KINDS}")
    if len(train) == 0:
        raise DataError("cannot train on an empty dataset")
    if cal is not None and cal.schema != train.schema:
        raise DataError("calibration split schema differs from the training schema")
    hp = hyperparams if isinstance(hyperparams, DeepHyperparams) else DeepHyperparams.from_dict(hyperparams)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            if kind in AUTOREC_KINDS:
                return train_autorec(kind, train, cal, hp, seed)
            return train_contextual_net(kind, train, cal, hp, seed)
    except DivergenceError as exc:
        if "learning rate" in str(exc):
            raise
        raise DivergenceError(f"{kind} training diverged ({exc}); try a lower learning rate") from None
