"""Counterfactual utility estimation from biased click logs.

Given a log entry (prefix, logged query, clicked doc a, logged rank) and a
candidate query q, the unbiased relative utility is the propensity ratio

    u_hat = p(rank_q(a)) / p(rank_logged(a)) = (logged_rank / rank_q(a))^alpha

which equals 1.0 for the logged query itself and debiases the click by the
inverse propensity of the logged rank. Ablation variants drop the
debiasing (biased), binarize (prescient@k), or swap in a wrong exponent
(misspecified). The ratio is computed in the (den/num)^alpha form so that
identities like u_hat(q_logged) = 1 and the cutoff^alpha worst case are
exact in floating point.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clicksim import LogEntry, PropensityModel
from .docrank import DocRanker

__all__ = [
    "ZeroPropensityError",
    "EstimatorVariant",
    "UtilityTarget",
    "estimate_utility",
    "true_expected_utility",
    "VarianceReport",
    "variance_diagnostics",
    "write_utilities",
]


class ZeroPropensityError(ValueError):
    """A logged click sits at a rank the click model cannot observe."""


@dataclass(frozen=True)
class EstimatorVariant:
    """Which utility target to compute; see module docstring.

    kind is one of "unbiased", "biased", "prescient", "misspecified".
    ``k`` (prescient horizon, None for infinity) and ``alpha_prime`` apply
    only to their kinds. ``clip_bound``, when set, caps the value.
    """

    kind: str
    k: float | None = None
    alpha_prime: float | None = None
    clip_bound: float | None = None

    def __post_init__(self):
        if self.kind not in ("unbiased", "biased", "prescient", "misspecified"):
            raise ValueError(f"unknown estimator kind: {self.kind!r}")
        if self.kind == "misspecified" and not (self.alpha_prime and self.alpha_prime > 0):
            raise ValueError("misspecified variant needs alpha_prime > 0")
        if self.kind == "prescient" and self.k is not None and self.k < 1:
            raise ValueError("prescient horizon must be >= 1")
        if self.clip_bound is not None and self.clip_bound < 1:
            raise ValueError("clip_bound must be >= 1")

    @classmethod
    def unbiased(cls, clip_bound: float | None = None) -> "EstimatorVariant":
        return cls(kind="unbiased", clip_bound=clip_bound)

    @classmethod
    def biased(cls) -> "EstimatorVariant":
        return cls(kind="biased")

    @classmethod
    def prescient(cls, k: float | None = None) -> "EstimatorVariant":
        return cls(kind="prescient", k=k)

    @classmethod
    def misspecified(cls, alpha_prime: float) -> "EstimatorVariant":
        return cls(kind="misspecified", alpha_prime=alpha_prime)

    def label(self) -> str:
        if self.kind == "prescient":
            horizon = "inf" if self.k is None or math.isinf(self.k) else f"{int(self.k)}"
            return f"prescient@{horizon}"
        if self.kind == "misspecified":
            return f"misspecified({self.alpha_prime:g})"
        return self.kind

    @classmethod
    def from_label(cls, label: str) -> "EstimatorVariant":
        label = label.strip()
        if label == "unbiased":
            return cls.unbiased()
        if label == "biased":
            return cls.biased()
        if label.startswith("prescient@"):
            horizon = label.split("@", 1)[1]
            return cls.prescient(None if horizon == "inf" else float(int(horizon)))
        if label.startswith("misspecified(") and label.endswith(")"):
            return cls.misspecified(float(label[len("misspecified(") : -1]))
        raise ValueError(f"unknown estimator variant label: {label!r}")


@dataclass(frozen=True)
class UtilityTarget:
    candidate_query: str
    value: float
    variant: EstimatorVariant
    source_entry: LogEntry


def _ratio(cand_rank: float, logged_rank: int, alpha: float, cutoff: int) -> float:
    if math.isinf(cand_rank) or cand_rank > cutoff:
        return 0.0
    return (logged_rank / cand_rank) ** alpha


def estimate_utility(
    entry: LogEntry,
    candidate: str,
    dr: DocRanker,
    model: PropensityModel,
    variant: EstimatorVariant,
) -> UtilityTarget:
    """Estimate the relative utility of a candidate query for one log entry."""
    if entry.logged_rank > model.cutoff or entry.logged_rank < 1:
        raise ZeroPropensityError(
            f"zero-propensity logged click: logged_rank={entry.logged_rank} vs cutoff={model.cutoff}"
        )
    cand_rank = dr.rank_of_document(candidate, entry.clicked_doc)
    if variant.kind == "unbiased":
        value = _ratio(cand_rank, entry.logged_rank, model.alpha, model.cutoff)
    elif variant.kind == "biased":
        value = model.propensity(cand_rank)
    elif variant.kind == "prescient":
        horizon = math.inf if variant.k is None else variant.k
        value = 1.0 if cand_rank <= horizon and not math.isinf(cand_rank) else 0.0
    else:  # misspecified
        value = _ratio(cand_rank, entry.logged_rank, variant.alpha_prime, model.cutoff)
    if variant.clip_bound is not None:
        value = min(value, variant.clip_bound)
    return UtilityTarget(candidate_query=candidate, value=value, variant=variant, source_entry=entry)


def true_expected_utility(
    dr: DocRanker,
    query: str,
    relevant: Iterable[int],
    m_true: PropensityModel,
) -> float:
    """Expected per-impression click mass of a query under the true model.

    Sum over relevant docs of p_true(rank_query(doc)): the quantity the
    unbiased estimator recovers in expectation, used as the ground-truth
    oracle in simulation (where true relevance is known).
    """
    return sum(m_true.propensity(dr.rank_of_document(query, a)) for a in sorted(set(relevant)))


@dataclass
class VarianceReport:
    """Diagnostics of the realized likelihood ratios and estimate spread."""

    n_entries: int
    n_pairs: int
    max_ratio: float
    mean_ratio: float
    ratio_quantiles: dict[str, float]
    mean_group_variance: float
    max_group_variance: float
    rho_hat: int


def variance_diagnostics(
    log: Sequence[LogEntry],
    candidates_per_entry: Mapping[int, Sequence[str]],
    dr: DocRanker,
    model: PropensityModel,
) -> VarianceReport:
    """Realized propensity-ratio stats, per-(context, candidate) variance of
    the unbiased estimate, and rho_hat = #queries with positive estimated
    utility for at least one context."""
    unbiased = EstimatorVariant.unbiased()
    ratios: list[float] = []
    groups: dict[tuple[str, str], list[float]] = defaultdict(list)
    positive_queries: set[str] = set()
    n_pairs = 0
    for i, entry in enumerate(log):
        for candidate in candidates_per_entry.get(i, ()):
            value = estimate_utility(entry, candidate, dr, model, unbiased).value
            ratios.append(value)
            groups[(entry.prefix, candidate)].append(value)
            if value > 0:
                positive_queries.add(candidate)
            n_pairs += 1
    if ratios:
        arr = np.asarray(ratios)
        qs = np.quantile(arr, [0.0, 0.25, 0.5, 0.75, 1.0])
        quantiles = {"min": float(qs[0]), "q25": float(qs[1]), "q50": float(qs[2]), "q75": float(qs[3]), "max": float(qs[4])}
        max_ratio, mean_ratio = float(arr.max()), float(arr.mean())
    else:
        quantiles = {"min": 0.0, "q25": 0.0, "q50": 0.0, "q75": 0.0, "max": 0.0}
        max_ratio = mean_ratio = 0.0
    group_vars = [float(np.var(vals)) for vals in groups.values() if len(vals) >= 2]
    return VarianceReport(
        n_entries=len(log),
        n_pairs=n_pairs,
        max_ratio=max_ratio,
        mean_ratio=mean_ratio,
        ratio_quantiles=quantiles,
        mean_group_variance=float(np.mean(group_vars)) if group_vars else 0.0,
        max_group_variance=max(group_vars) if group_vars else 0.0,
        rho_hat=len(positive_queries),
    )


def write_utilities(targets: Iterable[UtilityTarget], path: str | Path) -> None:
    """Dump estimates as JSON lines {prefix, candidate, value, variant}."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for t in targets:
            fh.write(
                json.dumps(
                    {
                        "prefix": t.source_entry.prefix,
                        "candidate": t.candidate_query,
                        "value": t.value,
                        "variant": t.variant.label(),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
