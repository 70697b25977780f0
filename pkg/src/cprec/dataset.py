"""Interaction logs with contextual features: schema, encoding, CSV ingestion,
splitting and a planted synthetic generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .numerics import FLOAT, named_rng

KINDS = ("nominal", "ordinal", "quantitative")


@dataclass(frozen=True)
class ContextFeature:
    """One contextual feature.

    Nominal features carry a finite ``values`` domain (``None`` means "infer
    from the data at load time"). Ordinal features carry ordered ``values``
    (level names) and numeric ``bounds`` over rank positions; quantitative
    features carry numeric ``bounds`` only.
    """

    name: str
    kind: str = "nominal"
    values: tuple[str, ...] | None = None
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.values is not None:
            object.__setattr__(self, "values", tuple(str(v) for v in self.values))
        if self.kind == "nominal":
            if self.values is not None and len(self.values) == 0:
                raise DataError(f"feature {self.name!r}: nominal domain is empty")
            if self.values is not None and len(set(self.values)) != len(self.values):
                raise DataError(f"feature {self.name!r}: duplicate nominal values")
            return
        bounds = self.bounds
        if bounds is None:
            if self.kind == "ordinal" and self.values:
                bounds = (0.0, float(len(self.values) - 1))
            else:
                raise DataError(f"feature {self.name!r}: {self.kind} feature needs bounds")
        lo, hi = float(bounds[0]), float(bounds[1])
        if not lo < hi:
            raise DataError(f"feature {self.name!r}: bounds need min < max, got {bounds}")
        object.__setattr__(self, "bounds", (lo, hi))

    @property
    def width(self) -> int:
        return len(self.values) if self.kind == "nominal" else 1

    @property
    def resolved(self) -> bool:
        return self.kind != "nominal" or self.values is not None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.values is not None:
            out["values"] = list(self.values)
        if self.kind != "nominal":
            out["bounds"] = list(self.bounds)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "ContextFeature":
        values = d.get("values")
        if values == "auto":
            values = None
        bounds = d.get("bounds")
        return cls(
            name=str(d["name"]),
            kind=str(d.get("kind", "nominal")),
            values=tuple(values) if values is not None else None,
            bounds=tuple(bounds) if bounds is not None else None,
        )


@dataclass(frozen=True)
class ContextSchema:
    features: tuple[ContextFeature, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate context feature names in {names}")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def dimension(self) -> int:
        return sum(f.width for f in self.features)

    @property
    def resolved(self) -> bool:
        return all(f.resolved for f in self.features)

    def feature(self, name: str) -> ContextFeature:
        for f in self.features:
            if f.name == name:
                return f
        raise DataError(f"unknown context feature {name!r}; schema has {self.names}")

    def offsets(self) -> dict[str, slice]:
        out, pos = {}, 0
        for f in self.features:
            out[f.name] = slice(pos, pos + f.width)
            pos += f.width
        return out

    def column_labels(self) -> list[str]:
        """One label per context-vector column (``feature=value`` for nominal)."""
        labels = []
        for f in self.features:
            if f.kind == "nominal":
                labels.extend(f"{f.name}={v}" for v in f.values)
            else:
                labels.append(f.name)
        return labels

    def to_dict(self) -> list[dict]:
        return [f.to_dict() for f in self.features]

    @classmethod
    def from_dict(cls, items: Iterable[Mapping]) -> "ContextSchema":
        return cls(tuple(ContextFeature.from_dict(d) for d in items))


# --------------------------------------------------------------------------
# encoding
# --------------------------------------------------------------------------


def one_hot_index(index: int, dimension: int) -> np.ndarray:
    if not 0 <= index < dimension:
        raise DataError(f"one-hot index {index} outside [0, {dimension})")
    v = np.zeros(dimension, dtype=FLOAT)
    v[index] = 1.0
    return v


def _scalar_component(f: ContextFeature, raw) -> float:
    if f.kind == "ordinal" and f.values is not None and str(raw) in f.values:
        value = float(f.values.index(str(raw)))
    else:
        try:
            value = float(raw)
        except (TypeError, ValueError):
            raise DataError(f"feature {f.name!r}: cannot interpret {raw!r} as a {f.kind} value") from None
    lo, hi = f.bounds
    if not (lo <= value <= hi) or math.isnan(value):
        raise DataError(f"feature {f.name!r}: value {raw!r} outside bounds [{lo}, {hi}]")
    return (value - lo) / (hi - lo)


def encode_context(schema: ContextSchema, raw: Mapping[str, Any]) -> np.ndarray:
    """Context vector: one-hot blocks for nominal features, min-max scaled
    scalars otherwise. Missing (absent or ``None``) features give zero blocks."""
    known = set(schema.names)
    for name in raw:
        if name not in known:
            raise DataError(f"unknown context feature {name!r}; schema has {schema.names}")
    out = np.zeros(schema.dimension, dtype=FLOAT)
    for f, sl in zip(schema.features, schema.offsets().values()):
        value = raw.get(f.name)
        if value is None:
            continue
        if f.kind == "nominal":
            if f.values is None:
                raise DataError(f"feature {f.name!r}: nominal domain not resolved")
            try:
                pos = f.values.index(str(value))
            except ValueError:
                raise DataError(
                    f"feature {f.name!r}: unknown value {value!r}; domain is {list(f.values)}"
                ) from None
            out[sl.start + pos] = 1.0
        else:
            out[sl.start] = _scalar_component(f, value)
    return out


def decode_context(schema: ContextSchema, vector) -> dict[str, Any]:
    """Inverse of :func:`encode_context`; zero nominal blocks decode to ``None``.

    Scalar features decode to their numeric value (ordinal ones to the level
    name when the rank is a whole number). A zero scalar is ambiguous and is
    decoded as the lower bound.
    """
    vector = np.asarray(vector, dtype=FLOAT)
    if vector.shape != (schema.dimension,):
        raise DataError(f"context vector has shape {vector.shape}, schema needs ({schema.dimension},)")
    out: dict[str, Any] = {}
    for f, sl in zip(schema.features, schema.offsets().values()):
        block = vector[sl]
        if f.kind == "nominal":
            out[f.name] = f.values[int(np.argmax(block))] if block.sum() > 0 else None
            continue
        lo, hi = f.bounds
        value = lo + float(block[0]) * (hi - lo)
        if f.kind == "ordinal" and f.values is not None:
            rank = round(value)
            if abs(rank - value) < 1e-9 and 0 <= rank < len(f.values):
                out[f.name] = f.values[rank]
                continue
        out[f.name] = value
    return out


def normalize_rating(rating, scale: tuple[float, float], convention: str = "minmax"):
    lo, hi = scale
    if convention == "minmax":
        return (np.asarray(rating, dtype=FLOAT) - lo) / (hi - lo)
    if convention == "max":
        return np.asarray(rating, dtype=FLOAT) / hi
    raise DataError(f"unknown rating normalization {convention!r}")


def denormalize_rating(value, scale: tuple[float, float], convention: str = "minmax"):
    lo, hi = scale
    if convention == "minmax":
        return np.asarray(value, dtype=FLOAT) * (hi - lo) + lo
    if convention == "max":
        return np.asarray(value, dtype=FLOAT) * hi
    raise DataError(f"unknown rating normalization {convention!r}")


# --------------------------------------------------------------------------
# dataset
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Interaction:
    user_index: int
    item_index: int
    context: np.ndarray
    rating: float
    rating_normalized: float


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class RatingsDataset:
    """Immutable bag of (user, item, context, rating) interactions.

    Column arrays are read-only. Subsets produced by :meth:`subset` and
    :func:`split` share vocabularies, schema and rating scale with the parent.
    """

    def __init__(
        self,
        users,
        items,
        contexts,
        ratings,
        user_ids: Sequence[str],
        item_ids: Sequence[str],
        schema: ContextSchema,
        rating_scale: tuple[float, float] = (1.0, 5.0),
        name: str = "dataset",
    ):
        self.user_ids = tuple(str(u) for u in user_ids)
        self.item_ids = tuple(str(i) for i in item_ids)
        self.schema = schema
        self.rating_scale = (float(rating_scale[0]), float(rating_scale[1]))
        self.name = name
        self.users = _frozen(users, np.int64)
        self.items = _frozen(items, np.int64)
        n = len(self.users)
        self.contexts = _frozen(np.asarray(contexts, dtype=FLOAT).reshape(n, schema.dimension), FLOAT)
        self.ratings = _frozen(ratings, FLOAT)
        if not (len(self.items) == len(self.ratings) == n):
            raise DataError("interaction columns have different lengths")
        if n and (self.users.min() < 0 or self.users.max() >= len(self.user_ids)):
            raise DataError("user index outside vocabulary")
        if n and (self.items.min() < 0 or self.items.max() >= len(self.item_ids)):
            raise DataError("item index outside vocabulary")
        lo, hi = self.rating_scale
        if not lo < hi:
            raise DataError(f"rating scale needs min < max, got {rating_scale}")
        if n and (self.ratings.min() < lo or self.ratings.max() > hi):
            raise DataError(f"ratings outside scale {self.rating_scale}")
        self._user_lookup = {u: k for k, u in enumerate(self.user_ids)}
        self._item_lookup = {i: k for k, i in enumerate(self.item_ids)}

    def __len__(self) -> int:
        return len(self.ratings)

    def __getitem__(self, k: int) -> Interaction:
        return Interaction(
            int(self.users[k]),
            int(self.items[k]),
            self.contexts[k],
            float(self.ratings[k]),
            float(self.ratings_normalized[k]),
        )

    def __repr__(self) -> str:
        return (
            f"RatingsDataset({self.name!r}, users={self.n_users}, items={self.n_items}, "
            f"interactions={len(self)}, context_dim={self.schema.dimension})"
        )

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def ratings_normalized(self) -> np.ndarray:
        return normalize_rating(self.ratings, self.rating_scale)

    @property
    def global_mean(self) -> float:
        if len(self) == 0:
            return float(sum(self.rating_scale) / 2)
        return float(self.ratings.mean())

    def user_index(self, user_id) -> int:
        try:
            return self._user_lookup[str(user_id)]
        except KeyError:
            raise DataError(f"unknown user {user_id!r}") from None

    def item_index(self, item_id) -> int:
        try:
            return self._item_lookup[str(item_id)]
        except KeyError:
            raise DataError(f"unknown item {item_id!r}") from None

    def subset(self, indices) -> "RatingsDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return RatingsDataset(
            self.users[idx],
            self.items[idx],
            self.contexts[idx],
            self.ratings[idx],
            self.user_ids,
            self.item_ids,
            self.schema,
            self.rating_scale,
            self.name,
        )

    def n_distinct_contexts(self) -> int:
        if len(self) == 0:
            return 0
        return len(np.unique(self.contexts, axis=0))

    def density_pair(self) -> float:
        """Interactions per (user, item) cell."""
        cells = self.n_users * self.n_items
        return len(self) / cells if cells else 0.0

    def density_triple(self) -> float:
        """Interactions per (user, item, observed context) cell."""
        cells = self.n_users * self.n_items * self.n_distinct_contexts()
        return len(self) / cells if cells else 0.0

    def summary(self) -> dict:
        return {
            "name": self.name,
            "users": self.n_users,
            "items": self.n_items,
            "interactions": len(self),
            "context_features": len(self.schema.features),
            "context_dimension": self.schema.dimension,
            "distinct_contexts": self.n_distinct_contexts(),
            "rating_scale": list(self.rating_scale),
            "density_pair": self.density_pair(),
            "density_triple": self.density_triple(),
        }


def rating_matrix(dataset: RatingsDataset, by: str = "user") -> tuple[np.ndarray, np.ndarray]:
    """Dense ``(n_users, n_items)`` matrix of mean ratings over contexts and its
    observation mask; transposed when ``by == "item"``."""
    sums = np.zeros((dataset.n_users, dataset.n_items), dtype=FLOAT)
    counts = np.zeros_like(sums)
    np.add.at(sums, (dataset.users, dataset.items), dataset.ratings)
    np.add.at(counts, (dataset.users, dataset.items), 1.0)
    mask = counts > 0
    matrix = np.divide(sums, counts, out=np.zeros_like(sums), where=mask)
    if by == "item":
        return matrix.T.copy(), mask.T.copy()
    if by != "user":
        raise DataError(f"rating_matrix: 'by' must be 'user' or 'item', got {by!r}")
    return matrix, mask


def user_rating_vector(dataset: RatingsDataset, user_index: int) -> tuple[np.ndarray, np.ndarray]:
    """``(vector, observed_item_indices)`` for one user; multiple ratings of the
    same item across contexts are averaged, unobserved items are 0."""
    if not 0 <= user_index < dataset.n_users:
        raise DataError(f"user index {user_index} outside [0, {dataset.n_users})")
    sel = dataset.users == user_index
    items = dataset.items[sel]
    sums = np.bincount(items, weights=dataset.ratings[sel], minlength=dataset.n_items)
    counts = np.bincount(items, minlength=dataset.n_items)
    vec = np.divide(sums, counts, out=np.zeros(dataset.n_items, dtype=FLOAT), where=counts > 0)
    return vec, np.flatnonzero(counts)


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FormatPreset:
    user: str
    item: str
    rating: str
    schema: ContextSchema
    missing: tuple[str, ...] = ("", "NA", "N/A", "na", "nan", "NaN")


def _nominal(name, *values):
    return ContextFeature(name, "nominal", tuple(values) if values else None)


# Default layouts for the public CARS datasets. All are overridable from the
# experiment config, since distributions of these files differ in headers.
FORMATS: dict[str, FormatPreset] = {
    "generic": FormatPreset("user", "item", "rating", ContextSchema()),
    "depaul": FormatPreset(
        "userid",
        "itemid",
        "rating",
        ContextSchema(
            (
                _nominal("Time", "Weekday", "Weekend"),
                _nominal("Location", "Home", "Cinema"),
                _nominal("Companion", "Alone", "Partner", "Family"),
            )
        ),
    ),
    "tripadvisor": FormatPreset(
        "userid",
        "itemid",
        "rating",
        ContextSchema((_nominal("TripType", "Business", "Couples", "Family", "Friends", "Solo"),)),
    ),
    "comoda": FormatPreset(
        "userid",
        "itemid",
        "rating",
        ContextSchema(
            tuple(
                _nominal(n)
                for n in (
                    "time", "daytype", "season", "location", "weather", "social",
                    "endEmo", "dominantEmo", "mood", "physical", "decision", "interaction",
                )
            )
        ),
        missing=("", "NA", "-1"),
    ),
}


def _resolve_columns(header: list[str], wanted: Mapping[str, str], path) -> dict[str, int]:
    """Map logical names to header positions; exact match first, then case-insensitive."""
    exact = {h: k for k, h in enumerate(header)}
    folded = {h.strip().lower(): k for k, h in enumerate(header)}
    out = {}
    for logical, column in wanted.items():
        if column in exact:
            out[logical] = exact[column]
        elif column.strip().lower() in folded:
            out[logical] = folded[column.strip().lower()]
        else:
            raise DataError(f"{path}: missing column {column!r} (header: {header})")
    return out


def load_interactions(
    path,
    format: str = "generic",
    schema: ContextSchema | None = None,
    columns: Mapping[str, str] | None = None,
    rating_scale: tuple[float, float] = (1.0, 5.0),
    missing: Sequence[str] | None = None,
    name: str | None = None,
) -> RatingsDataset:
    """Read a comma-separated interaction log with a header row.

    ``columns`` maps ``user``/``item``/``rating`` and each context feature
    name onto header names; unmapped names default to themselves. Nominal
    features without a declared domain get one inferred (sorted distinct
    values). Duplicate (user, item, context) rows keep the last occurrence.
    """
    try:
        preset = FORMATS[format]
    except KeyError:
        raise DataError(f"unknown dataset format {format!r}; expected one of {sorted(FORMATS)}") from None
    schema = preset.schema if schema is None else schema
    missing_tokens = set(preset.missing if missing is None else missing)
    columns = dict(columns or {})
    wanted = {
        "user": columns.get("user", preset.user),
        "item": columns.get("item", preset.item),
        "rating": columns.get("rating", preset.rating),
    }
    for f in schema.features:
        wanted[f"ctx:{f.name}"] = columns.get(f.name, f.name)
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    lo, hi = float(rating_scale[0]), float(rating_scale[1])

    rows = []
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file (no header)") from None
        pos = _resolve_columns(header, wanted, path)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
            try:
                rating = float(row[pos["rating"]])
            except ValueError:
                raise DataError(f"{path}: line {line}: rating {row[pos['rating']]!r} is not a number") from None
            if not lo <= rating <= hi:
                raise DataError(f"{path}: line {line}: rating {rating} outside scale [{lo}, {hi}]")
            raw = {}
            for f in schema.features:
                cell = row[pos[f"ctx:{f.name}"]].strip()
                raw[f.name] = None if cell in missing_tokens else cell
            rows.append((line, row[pos["user"]].strip(), row[pos["item"]].strip(), raw, rating))

    # resolve inferred nominal domains
    features = []
    for f in schema.features:
        if f.resolved:
            features.append(f)
            continue
        seen = sorted({r[3][f.name] for r in rows if r[3][f.name] is not None}, key=_natural_key)
        if not seen:
            raise DataError(f"feature {f.name!r}: cannot infer a domain, no observed values")
        features.append(ContextFeature(f.name, "nominal", tuple(seen)))
    schema = ContextSchema(tuple(features))

    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    latest: dict[tuple, int] = {}
    encoded = []
    for k, (line, user, item, raw, rating) in enumerate(rows):
        try:
            ctx = encode_context(schema, raw)
        except DataError as exc:
            raise DataError(f"{path}: line {line}: {exc}") from None
        u = user_ids.setdefault(user, len(user_ids))
        i = item_ids.setdefault(item, len(item_ids))
        latest[(u, i, ctx.tobytes())] = k
        encoded.append((u, i, ctx, rating))
    keep = sorted(latest.values())
    dim = schema.dimension
    return RatingsDataset(
        [encoded[k][0] for k in keep],
        [encoded[k][1] for k in keep],
        np.array([encoded[k][2] for k in keep], dtype=FLOAT).reshape(len(keep), dim),
        [encoded[k][3] for k in keep],
        list(user_ids),
        list(item_ids),
        schema,
        (lo, hi),
        name or path.stem,
    )


def _natural_key(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def write_csv(dataset: RatingsDataset, path) -> None:
    """Write ``dataset`` in the ``generic`` layout (raw context values)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "item", "rating"] + dataset.schema.names)
        for k in range(len(dataset)):
            raw = decode_context(dataset.schema, dataset.contexts[k])
            w.writerow(
                [dataset.user_ids[dataset.users[k]], dataset.item_ids[dataset.items[k]], repr(float(dataset.ratings[k]))]
                + ["NA" if raw[n] is None else raw[n] for n in dataset.schema.names]
            )


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    cal_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 42

    def __post_init__(self):
        fr = (self.train_fraction, self.cal_fraction, self.test_fraction)
        if any(f <= 0 for f in fr):
            raise DataError(f"split fractions must be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise DataError(f"split fractions must sum to 1, got {sum(fr)}")
        if self.train_fraction < 0.5:
            raise DataError("train fraction must be at least 0.5")


def split(dataset: RatingsDataset, spec: SplitSpec) -> tuple[RatingsDataset, RatingsDataset, RatingsDataset]:
    """Seeded random partition. Calibration and test shares are
    ``floor(fraction * n)`` rows; the remainder goes to training."""
    n = len(dataset)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    n_cal = math.floor(spec.cal_fraction * n)
    n_test = math.floor(spec.test_fraction * n)
    n_train = n - n_cal - n_test
    if min(n_cal, n_test, n_train) < 1:
        raise DataError(
            f"dataset of {n} rows too small for fractions "
            f"({spec.train_fraction}, {spec.cal_fraction}, {spec.test_fraction}): a share would be empty"
        )
    perm = named_rng(spec.seed, "split").permutation(n)
    return (
        dataset.subset(np.sort(perm[:n_train])),
        dataset.subset(np.sort(perm[n_train : n_train + n_cal])),
        dataset.subset(np.sort(perm[n_train + n_cal :])),
    )


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------


@dataclass
class PlantedModel:
    """Ground-truth parameters behind a synthetic dataset.

    ``expected(u, i, c)`` is the noiseless rating before clipping.
    """

    user_factors: np.ndarray
    item_factors: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    context_bias: np.ndarray
    user_context: np.ndarray
    noise: float
    rating_scale: tuple[float, float]
    n_clipped: int = 0
    extra: dict = field(default_factory=dict)

    def expected(self, users, items, contexts) -> np.ndarray:
        users = np.asarray(users)
        items = np.asarray(items)
        contexts = np.asarray(contexts, dtype=FLOAT)
        return (
            np.einsum("nk,nk->n", self.user_factors[users], self.item_factors[items])
            + self.user_bias[users]
            + self.item_bias[items]
            + contexts @ self.context_bias
            + np.einsum("nc,nc->n", self.user_context[users], contexts)
        )

    def expected_context_free(self, users, items) -> np.ndarray:
        """Expected rating averaged over the uniform context draw; the best a
        context-blind model can do."""
        users = np.asarray(users)
        items = np.asarray(items)
        mean_ctx = np.full(len(self.context_bias), 1.0 / self.extra.get("levels", 1))
        return (
            np.einsum("nk,nk->n", self.user_factors[users], self.item_factors[items])
            + self.user_bias[users]
            + self.item_bias[items]
            + mean_ctx @ self.context_bias
            + self.user_context[users] @ mean_ctx
        )

    def predict(self, users, items, contexts) -> np.ndarray:
        lo, hi = self.rating_scale
        return np.clip(self.expected(users, items, contexts), lo, hi)


def synth_generate(
    n_users: int,
    n_items: int,
    n_context_features: int,
    n_interactions: int,
    seed: int,
    *,
    rank: int = 2,
    levels: int = 3,
    noise: float = 0.0,
    bias_scale: float = 0.0,
    context_scale: float = 0.0,
    user_context_scale: float = 0.0,
    discrete: bool = False,
    rating_scale: tuple[float, float] = (1.0, 5.0),
) -> tuple[RatingsDataset, PlantedModel]:
    """Ratings from a planted low-rank + bias + context model.

    The dot-product term lies in [1.5, 4.5] (factors are positive and scaled
    by rank). User/item biases are U(-bias_scale, bias_scale); every
    contextual condition (one-hot column) gets a bias U(-context_scale,
    context_scale) and every user a per-condition offset
    U(-user_context_scale, user_context_scale). Results are clipped to the
    rating scale (``PlantedModel.n_clipped`` counts clipped rows) and rounded
    when ``discrete``. Each interaction is a distinct (user, item) pair.
    """
    if min(n_users, n_items, n_interactions, rank, levels) <= 0 or n_context_features < 0:
        raise DataError("synth_generate: counts must be positive")
    if n_interactions > n_users * n_items:
        raise DataError(
            f"synth_generate: {n_interactions} interactions exceed {n_users} x {n_items} user-item pairs"
        )
    rng = np.random.default_rng(seed)
    lo_f, hi_f = np.sqrt(1.5 / rank), np.sqrt(4.5 / rank)
    user_factors = rng.uniform(lo_f, hi_f, size=(n_users, rank))
    item_factors = rng.uniform(lo_f, hi_f, size=(n_items, rank))
    user_bias = rng.uniform(-bias_scale, bias_scale, size=n_users)
    item_bias = rng.uniform(-bias_scale, bias_scale, size=n_items)
    schema = ContextSchema(
        tuple(
            ContextFeature(f"ctx{k}", "nominal", tuple(f"v{j}" for j in range(levels)))
            for k in range(n_context_features)
        )
    )
    dim = schema.dimension
    context_bias = rng.uniform(-context_scale, context_scale, size=dim)
    user_context = rng.uniform(-user_context_scale, user_context_scale, size=(n_users, dim))

    cells = rng.choice(n_users * n_items, size=n_interactions, replace=False)
    users, items = np.divmod(cells, n_items)
    contexts = np.zeros((n_interactions, dim), dtype=FLOAT)
    if n_context_features:
        picks = rng.integers(0, levels, size=(n_interactions, n_context_features))
        cols = picks + levels * np.arange(n_context_features)
        contexts[np.arange(n_interactions)[:, None], cols] = 1.0
    planted = PlantedModel(
        user_factors, item_factors, user_bias, item_bias, context_bias, user_context, noise, tuple(rating_scale),
        extra={"levels": levels},
    )
    ratings = planted.expected(users, items, contexts) + rng.normal(0.0, 1.0, size=n_interactions) * noise
    if discrete:
        ratings = np.round(ratings)
    lo, hi = rating_scale
    planted.n_clipped = int(np.sum((ratings < lo) | (ratings > hi)))
    ratings = np.clip(ratings, lo, hi)
    dataset = RatingsDataset(
        users,
        items,
        contexts,
        ratings,
        [f"u{k}" for k in range(n_users)],
        [f"i{k}" for k in range(n_items)],
        schema,
        rating_scale,
        name=f"synth-{seed}",
    )
    return dataset, planted
