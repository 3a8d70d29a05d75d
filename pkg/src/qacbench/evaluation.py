"""Ranking policies and the position-weighted utility metric.

Utility@k is the weighted mean of the estimated relative utilities of the
top k suggested queries with weights proportional to 1/j, normalized by
sum_{j<=k} 1/j. Normalizing makes a uniformly random policy's Utility@k
constant in k and lets a front-loaded policy score higher at k=1 than at
k=5, matching how the headline comparisons behave.

Test-time utilities are always computed with the unbiased estimator under
the true click model, regardless of which estimator variant trained the
policy being evaluated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .clicksim import LogEntry, PropensityModel
from .docrank import DocRanker
from .estimator import EstimatorVariant, estimate_utility
from .ltr import PairFeaturizer, RankerModel
from .ltr import score as ltr_score
from .retriever import NULL_QUERY, CandidateSet, TrieRetriever, pad_candidates
from .util import derive_seed

__all__ = [
    "Policy",
    "EvalContext",
    "PreparedContext",
    "prepare_contexts",
    "rank_with_policy",
    "utility_at_k",
    "positional_utility_profile",
    "PolicyMetrics",
    "EvalReport",
    "evaluate_policies",
]


@dataclass(frozen=True)
class EvalContext:
    index: int
    prefix: str
    logged_query: str
    clicked_doc: int
    logged_rank: int
    side_features: Mapping[str, float] | None = None


@dataclass
class Policy:
    """A way of ordering a context's candidate queries.

    ``oracle`` and ``logged`` read test-time utilities and are evaluation-only
    baselines; ``model`` scores candidates with a trained pairwise ranker.
    """

    kind: str
    name: str
    model: RankerModel | None = None
    featurizer: PairFeaturizer | None = None
    seed: int = 0

    @classmethod
    def from_model(cls, name: str, model: RankerModel, featurizer: PairFeaturizer) -> "Policy":
        return cls(kind="model", name=name, model=model, featurizer=featurizer)

    @classmethod
    def retriever_order(cls, name: str = "retriever") -> "Policy":
        return cls(kind="retriever_order", name=name)

    @classmethod
    def oracle(cls) -> "Policy":
        return cls(kind="oracle", name="oracle")

    @classmethod
    def logged(cls) -> "Policy":
        return cls(kind="logged", name="logged")

    @classmethod
    def random(cls, seed: int) -> "Policy":
        return cls(kind="random", name="random", seed=seed)


def rank_with_policy(
    policy: Policy,
    context: EvalContext,
    candidates: CandidateSet,
    targets: Mapping[str, float] | None,
) -> list[str]:
    """Order the padded candidate list according to the policy."""
    if candidates.padded_to is None:
        raise ValueError("candidates must be padded before ranking")
    queries = candidates.queries()
    if policy.kind == "model":
        if policy.model is None or policy.featurizer is None:
            raise ValueError("model policy needs a model and featurizer")
        scores = [
            ltr_score(policy.model, policy.featurizer.featurize(context.prefix, q, s, context.side_features))
            for q, s in candidates.entries
        ]
        order = sorted(range(len(queries)), key=lambda i: (-scores[i], i))
        return [queries[i] for i in order]
    if policy.kind == "retriever_order":
        return list(queries)
    if policy.kind == "oracle":
        if targets is None:
            raise ValueError("oracle policy requires test-time utilities")
        order = sorted(range(len(queries)), key=lambda i: (-targets.get(queries[i], 0.0), i))
        return [queries[i] for i in order]
    if policy.kind == "logged":
        if targets is None:
            raise ValueError("logged policy requires test-time utilities")
        rest = [q for q in queries if q != context.logged_query]
        return ([context.logged_query] + rest)[: len(queries)]
    if policy.kind == "random":
        rng = np.random.default_rng(derive_seed("random-policy", context.index, seed=policy.seed))
        return [queries[i] for i in rng.permutation(len(queries))]
    raise ValueError(f"unknown policy kind: {policy.kind!r}")


def utility_at_k(ranked: Sequence[str], targets: Mapping[str, float], k: int) -> float:
    """Normalized position-weighted utility of the top-k suggestions."""
    if k < 1:
        raise ValueError("k must be >= 1")
    weights = [1.0 / j for j in range(1, k + 1)]
    num = sum(w * targets.get(q, 0.0) for w, q in zip(weights, ranked[:k]))
    return num / sum(weights)


@dataclass
class PreparedContext:
    context: EvalContext
    candidates: CandidateSet
    targets: dict[str, float]


def prepare_contexts(
    test_log: Sequence[LogEntry],
    retriever: TrieRetriever,
    dr: DocRanker,
    m_true: PropensityModel,
    pad_k: int,
) -> list[PreparedContext]:
    """Retrieve, pad, and score candidates for every test log entry.

    Candidate sets and utilities are shared by all policies evaluated on the
    same prepared contexts, which keeps policy comparisons paired.
    """
    unbiased = EstimatorVariant.unbiased()
    prepared: list[PreparedContext] = []
    for i, entry in enumerate(test_log):
        cs = pad_candidates(retriever.retrieve_candidates(entry.prefix), pad_k)
        targets: dict[str, float] = {}
        for q, _ in cs.entries:
            if q != NULL_QUERY and q not in targets:
                targets[q] = estimate_utility(entry, q, dr, m_true, unbiased).value
        targets[entry.logged_query] = estimate_utility(entry, entry.logged_query, dr, m_true, unbiased).value
        ctx = EvalContext(
            index=i,
            prefix=entry.prefix,
            logged_query=entry.logged_query,
            clicked_doc=entry.clicked_doc,
            logged_rank=entry.logged_rank,
        )
        prepared.append(PreparedContext(context=ctx, candidates=cs, targets=targets))
    return prepared


def positional_utility_profile(
    rankings: Sequence[Sequence[str]],
    targets_per_context: Sequence[Mapping[str, float]],
    max_pos: int = 5,
) -> list[float]:
    """Mean utility at each display position 1..max_pos across contexts.

    Positions holding padding (or beyond a short list) contribute zero.
    """
    sums = np.zeros(max_pos)
    for ranked, targets in zip(rankings, targets_per_context):
        for j in range(max_pos):
            if j < len(ranked):
                sums[j] += targets.get(ranked[j], 0.0)
    n = max(len(rankings), 1)
    return [float(s / n) for s in sums]


@dataclass
class PolicyMetrics:
    utility: dict[int, float | None]
    stderr: dict[int, float | None]
    positional: list[float]


@dataclass
class EvalReport:
    policies: dict[str, PolicyMetrics]
    n_contexts: int
    k_list: tuple[int, ...]
    max_pos: int
    config_fingerprint: str = ""
    seeds: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "n_contexts": self.n_contexts,
            "k_list": list(self.k_list),
            "config_fingerprint": self.config_fingerprint,
            "seeds": self.seeds,
            "policies": {
                name: {
                    "utility": {str(k): m.utility[k] for k in self.k_list},
                    "stderr": {str(k): m.stderr[k] for k in self.k_list},
                    "positional": m.positional,
                }
                for name, m in self.policies.items()
            },
        }

    def to_markdown(self) -> str:
        header = "| Ranking policy | " + " | ".join(f"Utility@{k}" for k in self.k_list) + " |"
        rule = "|" + "---|" * (len(self.k_list) + 1)
        lines = [header, rule]
        for name, m in self.policies.items():
            cells = ["-" if m.utility[k] is None else f"{m.utility[k]:.4f}" for k in self.k_list]
            lines.append(f"| {name} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["policy,k,utility,stderr"]
        for name, m in self.policies.items():
            for k in self.k_list:
                u, se = m.utility[k], m.stderr[k]
                lines.append(f"{name},{k},{'' if u is None else repr(u)},{'' if se is None else repr(se)}")
        return "\n".join(lines) + "\n"

    def positional_csv(self) -> str:
        lines = ["policy," + ",".join(f"pos{j}" for j in range(1, self.max_pos + 1))]
        for name, m in self.policies.items():
            lines.append(name + "," + ",".join(repr(v) for v in m.positional))
        return "\n".join(lines) + "\n"


def evaluate_policies(
    prepared: Sequence[PreparedContext],
    policies: Sequence[Policy],
    k_list: tuple[int, ...] = (1, 5, 10),
    max_pos: int = 5,
    config_fingerprint: str = "",
    seeds: Mapping[str, int] | None = None,
) -> EvalReport:
    """Evaluate every policy on shared candidate sets and utilities.

    The logged baseline only reports Utility@1: positions past the first do
    not reflect the historical policy, so other cells are left empty.
    """
    if not prepared:
        raise ValueError("empty test set: no contexts to evaluate")
    metrics: dict[str, PolicyMetrics] = {}
    for policy in policies:
        rankings = [rank_with_policy(policy, p.context, p.candidates, p.targets) for p in prepared]
        per_k: dict[int, float | None] = {}
        per_k_se: dict[int, float | None] = {}
        for k in k_list:
            if policy.kind == "logged" and k != 1:
                per_k[k] = None
                per_k_se[k] = None
                continue
            vals = np.array([utility_at_k(r, p.targets, k) for r, p in zip(rankings, prepared)])
            per_k[k] = float(vals.mean())
            per_k_se[k] = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        profile = positional_utility_profile(rankings, [p.targets for p in prepared], max_pos)
        metrics[policy.name] = PolicyMetrics(utility=per_k, stderr=per_k_se, positional=profile)
    return EvalReport(
        policies=metrics,
        n_contexts=len(prepared),
        k_list=tuple(k_list),
        max_pos=max_pos,
        config_fingerprint=config_fingerprint,
        seeds=dict(seeds or {}),
    )
