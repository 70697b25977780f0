"""Small dense-layer kernel: affine maps, activations, init, optimizers and a
finite-difference gradient checker.

Everything is float64 numpy. Layers are hand-paired forward/backward; there
is no autodiff. Batched inputs are row-major ``(n, features)`` and gradients
are *summed* over the batch, so a batch of one gives the single-sample
gradient exactly.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DataError, DivergenceError

FLOAT = np.float64


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named sub-stream of ``seed``.

    Sub-streams (``"split"``, ``"init"``, ``"shuffle"``, ...) never share state,
    so adding draws to one stage leaves the others untouched.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


# --------------------------------------------------------------------------
# affine map
# --------------------------------------------------------------------------


class AffineCache(NamedTuple):
    W: np.ndarray
    b: np.ndarray
    x: np.ndarray


def affine_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, AffineCache]:
    """Return ``(W @ x + b, cache)``. ``x`` may be a vector or an ``(n, in)`` batch."""
    W = np.asarray(W, dtype=FLOAT)
    b = np.asarray(b, dtype=FLOAT)
    x = np.asarray(x, dtype=FLOAT)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise DataError(
            f"affine shape mismatch: W{W.shape}, b{b.shape}, x{x.shape}"
        )
    return x @ W.T + b, AffineCache(W, b, x)


def affine_backward(cache: AffineCache, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients ``(dW, db, dx)`` of the affine map given ``dL/dy``."""
    W, _, x = cache
    upstream = np.asarray(upstream, dtype=FLOAT)
    expected = x.shape[:-1] + (W.shape[0],)
    if upstream.shape != expected:
        raise DataError(
            f"upstream gradient shape {upstream.shape} does not match cached output {expected}"
        )
    if x.ndim == 1:
        return np.outer(upstream, x), upstream.copy(), upstream @ W
    return upstream.T @ x, upstream.sum(axis=0), upstream @ W


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=FLOAT)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_FORWARD: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda x: x.copy(),
    "sigmoid": _sigmoid,
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
}

# derivative expressed through (input, output)
_DERIV: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "identity": lambda x, y: np.ones_like(x),
    "sigmoid": lambda x, y: y * (1.0 - y),
    "relu": lambda x, y: (x > 0).astype(FLOAT),
    "tanh": lambda x, y: 1.0 - y * y,
}

ACTIVATIONS = tuple(_FORWARD)


def activation(kind: str, x) -> np.ndarray:
    try:
        fn = _FORWARD[kind]
    except KeyError:
        raise DataError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}") from None
    return fn(np.asarray(x, dtype=FLOAT))


def activation_backward(kind: str, x, y, upstream) -> np.ndarray:
    """``dL/dx`` for ``y = activation(kind, x)``."""
    return np.asarray(upstream, dtype=FLOAT) * _DERIV[kind](np.asarray(x, dtype=FLOAT), np.asarray(y, dtype=FLOAT))


def cosine_similarity(p, q) -> float:
    p = np.asarray(p, dtype=FLOAT)
    q = np.asarray(q, dtype=FLOAT)
    if p.shape != q.shape:
        raise DataError(f"cosine similarity needs equal shapes, got {p.shape} and {q.shape}")
    norm_p = np.linalg.norm(p)
    norm_q = np.linalg.norm(q)
    if norm_p == 0.0 or norm_q == 0.0:
        raise DataError("cosine similarity undefined for a zero-norm vector")
    return float(np.clip(p @ q / (norm_p * norm_q), -1.0, 1.0))


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


def init_params(shape: Sequence[int], scheme: str = "uniform_scaled", seed=0) -> np.ndarray:
    """Initial weight matrix. ``seed`` may be an int or a ``np.random.Generator``.

    ``uniform_scaled`` draws from U(-a, a) with ``a = sqrt(6 / (fan_in + fan_out))``
    where the shape is ``(fan_out, fan_in)``.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise DataError(f"init_params needs positive dimensions, got {shape}")
    if scheme == "zeros":
        return np.zeros(shape, dtype=FLOAT)
    if scheme != "uniform_scaled":
        raise DataError(f"unknown init scheme {scheme!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    fan_out = shape[0]
    fan_in = shape[1] if len(shape) > 1 else shape[0]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass(eq=False)
class ParamBlock:
    """A named trainable array with its gradient accumulator.

    ``decay`` marks whether optimizer weight decay applies to this block.
    """

    name: str
    value: np.ndarray
    grad: np.ndarray = None  # type: ignore[assignment]
    decay: bool = True

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=FLOAT)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise DataError(f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}")

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


@dataclass
class Optimizer:
    """SGD or Adam with coupled L2 weight decay.

    SGD:  ``w <- w - lr * (grad + weight_decay * w)``.
    Adam: the same decayed gradient fed through the usual bias-corrected
    first/second moment recursion.
    """

    kind: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    moments: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise DataError(f"unknown optimizer {self.kind!r}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise DataError("learning_rate and weight_decay must be non-negative")

    def step(self, params: Iterable[ParamBlock]) -> None:
        params = list(params)
        for p in params:
            if not np.all(np.isfinite(p.grad)):
                raise DivergenceError(f"non-finite gradient in parameter block {p.name!r}")
        self.step_count += 1
        t = self.step_count
        for p in params:
            g = p.grad + self.weight_decay * p.value if (p.decay and self.weight_decay) else p.grad
            if self.kind == "sgd":
                p.value -= self.learning_rate * g
            else:
                m, v = self.moments.get(p.name, (None, None))
                if m is None or m.shape != p.value.shape:
                    m = np.zeros_like(p.value)
                    v = np.zeros_like(p.value)
                m = self.beta1 * m + (1.0 - self.beta1) * g
                v = self.beta2 * v + (1.0 - self.beta2) * g * g
                self.moments[p.name] = (m, v)
                m_hat = m / (1.0 - self.beta1**t)
                v_hat = v / (1.0 - self.beta2**t)
                p.value -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
            p.zero_grad()


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------


class Dense:
    """Affine map followed by an elementwise activation."""

    def __init__(self, name: str, n_in: int, n_out: int, act: str = "identity", rng=None, scheme="uniform_scaled"):
        if act not in _FORWARD:
            raise DataError(f"unknown activation {act!r}")
        self.act = act
        self.W = ParamBlock(f"{name}.W", init_params((n_out, n_in), scheme, rng if rng is not None else 0))
        self.b = ParamBlock(f"{name}.b", np.zeros(n_out), decay=False)
        self._cache = None

    @property
    def n_in(self) -> int:
        return self.W.value.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.value.shape[0]

    def params(self) -> list[ParamBlock]:
        return [self.W, self.b]

    def __call__(self, x):
        pre, _ = affine_forward(self.W.value, self.b.value, x)
        return activation(self.act, pre)

    def forward(self, x):
        pre, cache = affine_forward(self.W.value, self.b.value, x)
        out = activation(self.act, pre)
        self._cache = (cache, pre, out)
        return out

    def backward(self, upstream):
        if self._cache is None:
            raise DataError(f"{self.W.name}: backward called without a matching forward")
        cache, pre, out = self._cache
        self._cache = None
        d_pre = activation_backward(self.act, pre, out, upstream)
        dW, db, dx = affine_backward(cache, d_pre)
        self.W.grad += dW
        self.b.grad += db
        return dx


class MLP:
    """A stack of :class:`Dense` layers."""

    def __init__(self, name: str, dims: Sequence[int], hidden_act="relu", out_act="identity", rng=None):
        if len(dims) < 2:
            raise DataError("MLP needs at least input and output dimensions")
        n = len(dims) - 1
        self.layers = [
            Dense(f"{name}.{k}", dims[k], dims[k + 1], hidden_act if k < n - 1 else out_act, rng=rng)
            for k in range(n)
        ]

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def params(self) -> list[ParamBlock]:
        return [p for layer in self.layers for p in layer.params()]

    def weights(self) -> list[ParamBlock]:
        return [layer.W for layer in self.layers]

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, upstream):
        for layer in reversed(self.layers):
            upstream = layer.backward(upstream)
        return upstream


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------


def relative_error(analytic, numeric, floor: float = 1e-3) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients
    from turning round-off into huge relative errors."""
    a = np.asarray(analytic, dtype=FLOAT)
    n = np.asarray(numeric, dtype=FLOAT)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_diff_check(
    loss_fn: Callable[[], float],
    params: Sequence[ParamBlock],
    epsilon: float = 1e-5,
    max_entries: int | None = None,
    rng=None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    The default step is close to the cube root of machine epsilon, which
    balances truncation against round-off for central differences.

    ``loss_fn()`` must return the scalar loss and *accumulate* the analytic
    gradient into each block's ``grad``. Grads are zeroed before the analytic
    call and after the check. With ``max_entries`` set, a random subset of
    entries per block is probed.
    """
    for p in params:
        p.zero_grad()
    loss_fn()
    analytic = [p.grad.copy() for p in params]
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + epsilon
            hi = flat[k]
            up = loss_fn()
            flat[k] = orig - epsilon
            lo = flat[k]
            down = loss_fn()
            flat[k] = orig
            # divide by the step actually taken, not the nominal one
            numeric = (up - down) / (hi - lo)
            worst = max(worst, float(relative_error(grad.reshape(-1)[k], numeric)))
    for p in params:
        p.zero_grad()
    return worst
