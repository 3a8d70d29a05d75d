"""Pairwise learning to rank over hashed (prefix, query) features.

Within each context group, candidates are reduced to binary classification
samples: for every unordered pair with distinct utility targets, the
feature delta phi(x, q_hi) - phi(x, q_lo) gets label +1 iff the
higher-index candidate has the larger target. A linear model is fit by
seeded SGD on the weighted logistic loss

    sum_s w_s * log(1 + exp(-y_s <w, delta_s>)) + l2 * ||w||^2

and candidates are ranked by the linear score (monotone in the predicted
pairwise probability, so ranking by score is ranking by probability).

Feature vectors have a fixed logical dimension d but are stored sparsely:
character 2-4 grams of the prefix and of the query plus prefix-token x
query-token interactions are sign-hashed into d-4 buckets, and four
reserved slots at the top carry scalar features (token overlap,
starts-with-prefix, scaled length difference, log1p retriever score).
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .retriever import NULL_QUERY
from .util import stable_hash64

__all__ = [
    "FeatureVector",
    "PairFeaturizer",
    "featurize_pair",
    "PairwiseSample",
    "build_pairwise_samples",
    "RankerModel",
    "TrainingDivergedError",
    "train_ranker",
    "score",
    "loss_and_gradient",
    "empirical_pairwise_loss",
]

N_SCALAR_SLOTS = 4
MIN_DIM = 1 << 10


@dataclass(eq=False)
class FeatureVector:
    """Sparse view of a fixed-dimension dense feature vector."""

    dim: int
    indices: np.ndarray  # int64, sorted, unique
    values: np.ndarray  # float64

    def subtract(self, other: "FeatureVector") -> "FeatureVector":
        if self.dim != other.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
        acc: dict[int, float] = {}
        for i, v in zip(self.indices.tolist(), self.values.tolist()):
            acc[i] = acc.get(i, 0.0) + v
        for i, v in zip(other.indices.tolist(), other.values.tolist()):
            acc[i] = acc.get(i, 0.0) - v
        items = sorted((i, v) for i, v in acc.items() if v != 0.0)
        return _from_items(self.dim, items)

    def dot(self, weights: np.ndarray) -> float:
        if len(weights) != self.dim:
            raise ValueError(f"dimension mismatch: {len(weights)} vs {self.dim}")
        if len(self.indices) == 0:
            return 0.0
        return float(np.dot(weights[self.indices], self.values))

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dim)
        dense[self.indices] = self.values
        return dense


def _from_items(dim: int, items: list[tuple[int, float]]) -> FeatureVector:
    if items:
        idx = np.fromiter((i for i, _ in items), dtype=np.int64, count=len(items))
        val = np.fromiter((v for _, v in items), dtype=np.float64, count=len(items))
    else:
        idx = np.empty(0, dtype=np.int64)
        val = np.empty(0, dtype=np.float64)
    return FeatureVector(dim=dim, indices=idx, values=val)


class PairFeaturizer:
    """Deterministic hashed featurization of (context, candidate query) pairs."""

    def __init__(self, dim: int, seed: int):
        if dim < MIN_DIM or dim & (dim - 1):
            raise ValueError(f"dim must be a power of two >= {MIN_DIM}")
        self.dim = dim
        self.seed = seed
        self._hash_space = dim - N_SCALAR_SLOTS
        self._gram_cache: dict[tuple[str, str], tuple[int, int]] = {}

    def _bucket(self, tag: str, gram: str) -> tuple[int, int]:
        key = (tag, gram)
        cached = self._gram_cache.get(key)
        if cached is None:
            h = stable_hash64(tag, gram, seed=self.seed)
            cached = (h % self._hash_space, 1 if (h >> 63) & 1 else -1)
            self._gram_cache[key] = cached
        return cached

    def _add_grams(self, acc: dict[int, float], tag: str, text: str) -> None:
        for n in (2, 3, 4):
            for i in range(len(text) - n + 1):
                idx, sign = self._bucket(tag, text[i : i + n])
                acc[idx] = acc.get(idx, 0.0) + sign

    def featurize(
        self,
        prefix: str,
        query: str,
        retriever_score: float = 0.0,
        side_features: Mapping[str, float] | None = None,
    ) -> FeatureVector:
        if query == NULL_QUERY:
            return _from_items(self.dim, [])
        acc: dict[int, float] = {}
        self._add_grams(acc, "p", prefix)
        self._add_grams(acc, "q", query)
        p_tokens = prefix.split()
        q_tokens = query.split()
        for pt in p_tokens:
            for qt in q_tokens:
                idx, sign = self._bucket("x", pt + "|" + qt)
                acc[idx] = acc.get(idx, 0.0) + sign
        if side_features:
            for name, value in side_features.items():
                idx, sign = self._bucket("s", name)
                acc[idx] = acc.get(idx, 0.0) + sign * value
        base = self.dim - N_SCALAR_SLOTS
        acc[base + 0] = float(len(set(p_tokens) & set(q_tokens)))
        acc[base + 1] = 1.0 if query.startswith(prefix) else 0.0
        acc[base + 2] = (len(query) - len(prefix)) / 20.0
        acc[base + 3] = math.log1p(max(retriever_score, 0.0))
        return _from_items(self.dim, sorted(acc.items()))


@lru_cache(maxsize=8)
def _featurizer(dim: int, seed: int) -> PairFeaturizer:
    return PairFeaturizer(dim=dim, seed=seed)


def featurize_pair(
    context: str | tuple[str, Mapping[str, float] | None],
    query: str,
    retriever_score: float,
    d: int,
    seed: int,
) -> FeatureVector:
    """Functional entry point; ``context`` is a prefix or (prefix, side map)."""
    if isinstance(context, tuple):
        prefix, side = context
    else:
        prefix, side = context, None
    return _featurizer(d, seed).featurize(prefix, query, retriever_score, side)


@dataclass(eq=False)
class PairwiseSample:
    delta: FeatureVector
    label: int  # +1 iff the higher-index candidate has the larger target
    weight: float
    group_id: int


def build_pairwise_samples(
    group: Sequence[tuple[FeatureVector, float]],
    weighting: str = "magnitude",
    group_id: int = 0,
) -> list[PairwiseSample]:
    """Pairwise reduction of one context's candidates.

    One sample per unordered pair with distinct targets, oriented
    higher-index-first; ties are skipped. ``magnitude`` weighting uses
    |target difference| so the objective tracks the utility-gap loss,
    ``uniform`` uses weight 1.
    """
    if weighting not in ("uniform", "magnitude"):
        raise ValueError(f"unknown weighting: {weighting!r}")
    samples: list[PairwiseSample] = []
    for i in range(len(group)):
        fv_i, t_i = group[i]
        for j in range(i + 1, len(group)):
            fv_j, t_j = group[j]
            if t_i == t_j:
                continue
            delta = fv_j.subtract(fv_i)
            label = 1 if t_j > t_i else -1
            weight = 1.0 if weighting == "uniform" else abs(t_j - t_i)
            samples.append(PairwiseSample(delta=delta, label=label, weight=weight, group_id=group_id))
    return samples


@dataclass
class RankerModel:
    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.weights)

    def save(self, path: str | Path) -> None:
        payload = {
            "version": 1,
            "dim": int(self.dim),
            "dtype": "<f8",
            "weights_b64": base64.b64encode(np.ascontiguousarray(self.weights, dtype="<f8").tobytes()).decode("ascii"),
            "meta": self.meta,
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RankerModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("version") != 1:
            raise ValueError(f"unsupported ranker file version: {payload.get('version')!r}")
        weights = np.frombuffer(base64.b64decode(payload["weights_b64"]), dtype=payload["dtype"]).copy()
        if len(weights) != payload["dim"]:
            raise ValueError("ranker file is corrupt: dim mismatch")
        return cls(weights=weights, meta=payload.get("meta", {}))


class TrainingDivergedError(RuntimeError):
    pass


def _sigmoid_neg(m: float) -> float:
    # sigma(-m), computed stably for both signs of m
    if m >= 0:
        e = math.exp(-m)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(m))


def train_ranker(
    samples: Sequence[PairwiseSample],
    epochs: int,
    learning_rate: float,
    l2: float,
    seed: int,
    extra_meta: Mapping[str, object] | None = None,
) -> RankerModel:
    """Seeded SGD on the weighted pairwise logistic objective.

    Weights start at zero (zero epochs returns the zero model). The l2 term
    is applied as a uniform per-step decay via a scale factor, so steps stay
    sparse. Raises :class:`TrainingDivergedError` if the loss goes
    non-finite (learning rate too large).
    """
    if not samples:
        raise ValueError("no training samples")
    dim = samples[0].delta.dim
    for s in samples:
        if s.delta.dim != dim:
            raise ValueError("inconsistent feature dimensions across samples")
    rng = np.random.default_rng(seed)
    n = len(samples)
    v = np.zeros(dim)
    scale = 1.0
    decay = 1.0 - 2.0 * learning_rate * l2 / n
    if decay <= 0.0:
        raise TrainingDivergedError("learning rate too large for the l2 strength")
    for _ in range(epochs):
        for i in rng.permutation(n):
            s = samples[i]
            idx, val = s.delta.indices, s.delta.values
            if len(idx) == 0:
                scale *= decay
                continue
            z = scale * float(np.dot(v[idx], val))
            g = -s.label * _sigmoid_neg(s.label * z) * s.weight
            scale *= decay
            v[idx] -= (learning_rate * g / scale) * val
        if scale < 1e-100 or not np.isfinite(scale):
            raise TrainingDivergedError("non-finite loss: scale underflow or overflow")
    weights = scale * v
    if not np.isfinite(weights).all():
        raise TrainingDivergedError("non-finite loss: weights diverged")
    meta = {
        "epochs": epochs,
        "learning_rate": learning_rate,
        "l2": l2,
        "seed": seed,
        "n_samples": n,
    }
    if extra_meta:
        meta.update(extra_meta)
    return RankerModel(weights=weights, meta=meta)


def score(model: RankerModel, fv: FeatureVector) -> float:
    """Linear score <weights, fv>; raises on dimension mismatch."""
    return fv.dot(model.weights)


def loss_and_gradient(
    weights: np.ndarray,
    samples: Sequence[PairwiseSample],
    l2: float,
) -> tuple[float, np.ndarray]:
    """Full-batch objective and its analytic gradient (for checks and tests)."""
    loss = l2 * float(np.dot(weights, weights))
    grad = 2.0 * l2 * weights.copy()
    for s in samples:
        z = s.delta.dot(weights)
        m = s.label * z
        loss += s.weight * float(np.logaddexp(0.0, -m))
        g = -s.label * _sigmoid_neg(m) * s.weight
        if len(s.delta.indices):
            grad[s.delta.indices] += g * s.delta.values
    return loss, grad


def empirical_pairwise_loss(
    ranking_per_context: Mapping[object, Sequence[str]],
    targets: Mapping[tuple[object, str], float],
    k: int,
) -> float:
    """Average negated pairwise concordance with the utility gaps.

    Per context with queries padded to K, sums (u(q) - u(q')) over unordered
    pairs with q ranked ahead of q', normalized by C(K, 2); the sign is
    flipped so that ranking high-utility queries first minimizes the loss.
    Queries missing from ``targets`` (padding) count as zero utility.
    """
    if k < 2:
        raise ValueError("K must be >= 2")
    if not ranking_per_context:
        raise ValueError("no contexts")
    n_pairs = k * (k - 1) / 2.0
    total = 0.0
    for ctx, ranked in ranking_per_context.items():
        if len(ranked) != k:
            raise ValueError(f"context {ctx!r} has {len(ranked)} queries, expected K={k}")
        utils = [targets.get((ctx, q), 0.0) for q in ranked]
        ctx_sum = 0.0
        for i in range(k):
            for j in range(i + 1, k):
                ctx_sum += utils[i] - utils[j]
        total += ctx_sum / n_pairs
    return -total / len(ranking_per_context)
