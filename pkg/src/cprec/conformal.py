"""Split conformal prediction intervals over any trained rating model.

Two nonconformity scores are supported:

``residual``
    ``|y - ŷ|`` in rating units. Intervals ``[ŷ - τ, ŷ + τ]`` then carry the
    usual finite-sample coverage guarantee under exchangeability.
``reconstruction``
    ``‖x - Dec(Enc(x))‖²`` of the model's autoencoder input. This score is
    not in rating units; intervals are still formed as ``ŷ ± τ``.

τ is the ``ceil((n + 1)(1 - ε))``-th smallest calibration score, or ``+inf``
when that rank exceeds ``n`` (the interval is then the whole rating scale).
"""

from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .dataset import Interaction, RatingsDataset
from .errors import DataError
from .models import TrainedModel

MODES = ("reconstruction", "residual")


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise DataError(f"unknown nonconformity mode {mode!r}; expected one of {MODES}")
    return mode


def nonconformity_scores(model: TrainedModel, users, items, contexts, ratings, mode: str = "residual") -> np.ndarray:
    """Vectorised scores, one per row."""
    _check_mode(mode)
    if mode == "residual":
        pred = model.predict(users, items, contexts)
        return np.abs(np.asarray(ratings, dtype=np.float64) - pred)
    return model.reconstruction_error(users, items, contexts)


def nonconformity_score(model: TrainedModel, example: Interaction, mode: str = "residual") -> float:
    return float(
        nonconformity_scores(
            model, [example.user_index], [example.item_index], np.atleast_2d(example.context), [example.rating], mode
        )[0]
    )


def compute_conformity_scores(model: TrainedModel, cal: RatingsDataset, mode: str = "residual") -> np.ndarray:
    """Scores for every calibration row, in dataset order."""
    if len(cal) == 0:
        raise DataError("calibration set is empty")
    model.check_compatible(cal)
    scores = nonconformity_scores(model, cal.users, cal.items, cal.contexts, cal.ratings, mode)
    bad = np.flatnonzero(~np.isfinite(scores) | (scores < 0))
    if bad.size:
        raise DataError(f"invalid nonconformity score {scores[bad[0]]} at calibration example {bad[0]}")
    return scores


def quantile_rank(n: int, epsilon: float) -> int:
    """``ceil((n + 1)(1 - ε))`` computed exactly on the decimal value of ε."""
    eps = Fraction(repr(float(epsilon)))
    return math.ceil((n + 1) * (1 - eps))


def calibrate(scores: Sequence[float], epsilon: float) -> float:
    """Finite-sample corrected ``(1 - ε)`` quantile of ``scores``."""
    if not 0.0 < epsilon < 1.0:
        raise DataError(f"epsilon must lie in (0, 1), got {epsilon}")
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    if n == 0:
        raise DataError("cannot calibrate on an empty score set")
    k = quantile_rank(n, epsilon)
    if k > n:
        return math.inf
    return float(np.partition(scores, k - 1)[k - 1])


class CalibrationState:
    """Calibration scores with derived threshold τ.

    ``capacity=None`` is batch mode (unbounded); otherwise a FIFO sliding
    window of the most recent ``capacity`` scores. Updates and reads are
    serialised by a lock so τ is never read from a half-updated window.
    """

    def __init__(self, epsilon: float, mode: str = "residual", capacity: int | None = None, scores: Iterable[float] = ()):
        if not 0.0 < epsilon < 1.0:
            raise DataError(f"epsilon must lie in (0, 1), got {epsilon}")
        if capacity is not None and capacity <= 0:
            raise DataError("window capacity must be positive")
        self.epsilon = float(epsilon)
        self.mode = _check_mode(mode)
        self.capacity = capacity
        self._scores: deque[float] = deque(maxlen=capacity)
        self._tau: float | None = None
        self._lock = threading.Lock()
        for s in scores:
            self._push(s)
        if self._scores:
            self._tau = calibrate(self._scores, self.epsilon)

    def _push(self, score: float) -> None:
        score = float(score)
        if not math.isfinite(score):
            raise DataError(f"non-finite nonconformity score {score}")
        if score < 0:
            raise DataError(f"negative nonconformity score {score}")
        self._scores.append(score)

    def update(self, score: float) -> "CalibrationState":
        with self._lock:
            self._push(score)
            self._tau = calibrate(self._scores, self.epsilon)
        return self

    @property
    def scores(self) -> list[float]:
        with self._lock:
            return list(self._scores)

    @property
    def tau(self) -> float:
        with self._lock:
            if self._tau is None:
                raise DataError("calibration state has no scores; calibrate before predicting intervals")
            return self._tau

    @property
    def calibrated(self) -> bool:
        return self._tau is not None

    def __len__(self) -> int:
        return len(self._scores)


def window_update(state: CalibrationState, new_score: float) -> CalibrationState:
    return state.update(new_score)


@dataclass(frozen=True)
class PredictionInterval:
    center: float
    lower: float
    upper: float
    epsilon: float
    scale: tuple[float, float]

    @property
    def tau(self) -> float:
        return self.upper - self.center

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.lower) or math.isinf(self.upper)

    @property
    def width(self) -> float:
        """Raw width; an unbounded (sentinel) interval spans the rating scale."""
        if self.unbounded:
            return self.scale[1] - self.scale[0]
        return self.upper - self.lower

    def contains(self, y: float) -> bool:
        return self.lower <= y <= self.upper

    def clipped(self) -> tuple[float, float]:
        lo, hi = self.scale
        return (min(max(self.lower, lo), hi), max(min(self.upper, hi), lo))


def make_interval(center: float, tau: float, epsilon: float, scale) -> PredictionInterval:
    center = float(center)
    return PredictionInterval(center, center - tau, center + tau, float(epsilon), tuple(scale))


def predict_interval(model: TrainedModel, u: int, i: int, c, state: CalibrationState) -> PredictionInterval:
    if not state.calibrated:
        raise DataError("calibration state has no scores; calibrate before predicting intervals")
    y_hat = model.predict([u], [i], np.atleast_2d(c))[0]
    return make_interval(y_hat, state.tau, state.epsilon, model.rating_scale)


def empirical_coverage(intervals: Sequence[PredictionInterval], truths: Sequence[float]) -> float:
    """Fraction of truths inside their closed, unclipped intervals."""
    if len(intervals) != len(truths):
        raise DataError(f"{len(intervals)} intervals but {len(truths)} truths")
    if not intervals:
        raise DataError("empirical coverage needs at least one interval")
    return sum(iv.contains(float(y)) for iv, y in zip(intervals, truths)) / len(intervals)


def average_width(intervals: Sequence[PredictionInterval]) -> float:
    if not intervals:
        raise DataError("average width of an empty interval list")
    return float(np.mean([iv.width for iv in intervals]))


@dataclass(frozen=True)
class ConformalResult:
    mode: str
    epsilon: float
    avg_width: float
    ecp: float
    tau: float
    n_cal: int
    n_test: int


def conformal_evaluate(
    model: TrainedModel,
    cal: RatingsDataset,
    test: RatingsDataset,
    epsilons: Sequence[float],
    mode: str = "residual",
    capacity: int | None = None,
) -> list[ConformalResult]:
    """Calibrate on ``cal``, form intervals on ``test`` for each ε.

    In batch mode (``capacity=None``) one τ serves every test row. With a
    finite capacity the window starts with the most recent calibration scores
    and, after each test interval is formed, absorbs that test row's score.
    """
    if len(test) == 0:
        raise DataError("test set is empty")
    model.check_compatible(test)
    cal_scores = compute_conformity_scores(model, cal, mode)
    preds = model.predict(test.users, test.items, test.contexts)
    test_scores = None
    if capacity is not None:
        test_scores = nonconformity_scores(model, test.users, test.items, test.contexts, test.ratings, mode)
    out = []
    for eps in epsilons:
        state = CalibrationState(eps, mode, capacity, cal_scores)
        if capacity is None:
            tau = state.tau
            intervals = [make_interval(p, tau, eps, model.rating_scale) for p in preds]
        else:
            intervals = []
            for p, s in zip(preds, test_scores):
                intervals.append(make_interval(p, state.tau, eps, model.rating_scale))
                state.update(s)
            tau = state.tau
        out.append(
            ConformalResult(
                mode, float(eps), average_width(intervals), empirical_coverage(intervals, test.ratings),
                float(tau), len(cal), len(test),
            )
        )
    return out
