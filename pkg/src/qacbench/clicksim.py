"""Position-based click model and biased log generation.

A user observes the document at rank r with probability r^(-alpha)
(independently per position, zero beyond the cutoff) and a click is
recorded iff the observed document is relevant. One log entry is emitted
per observed relevant position, so an impression can produce several
entries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, CorpusItem, sample_prefix
from .docrank import DocRanker
from .util import derive_seed

__all__ = [
    "PropensityModel",
    "LogEntry",
    "simulate_impression",
    "count_clicks_batch",
    "generate_log",
    "write_log",
    "read_log",
]


@dataclass(frozen=True)
class PropensityModel:
    """Observation probability p(r) = r^(-alpha) for ranks up to a cutoff."""

    alpha: float = 1.0
    cutoff: int = 20

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")

    def propensity(self, rank: float) -> float:
        if math.isinf(rank) or rank > self.cutoff:
            return 0.0
        if rank < 1:
            raise ValueError(f"rank must be >= 1, got {rank}")
        return float(rank) ** -self.alpha


@dataclass(frozen=True)
class LogEntry:
    """One biased click observation.

    ``logged_rank`` is the rank at which the clicked doc appeared under the
    logged query; ``entry_seed`` is the seed of the impression that produced
    the entry.
    """

    prefix: str
    logged_query: str
    clicked_doc: int
    logged_rank: int
    entry_seed: int


def simulate_impression(
    dr: DocRanker,
    item: CorpusItem,
    prefix: str,
    model: PropensityModel,
    rng: np.random.Generator,
    entry_seed: int = 0,
) -> list[LogEntry]:
    """Simulate one impression of the item's query; return the click entries."""
    ranked = dr.rank_documents(item.query_text).entries
    relevant = set(item.relevant_docs)
    entries: list[LogEntry] = []
    depth = min(model.cutoff, len(ranked))
    draws = rng.random(depth)
    for i in range(depth):
        rank = i + 1
        if draws[i] < model.propensity(rank) and ranked[i][0] in relevant:
            entries.append(
                LogEntry(
                    prefix=prefix,
                    logged_query=item.query_text,
                    clicked_doc=ranked[i][0],
                    logged_rank=rank,
                    entry_seed=entry_seed,
                )
            )
    return entries


def count_clicks_batch(
    dr: DocRanker,
    item: CorpusItem,
    model: PropensityModel,
    n_impressions: int,
    rng: np.random.Generator,
) -> dict[int, int]:
    """Click counts per rank over many impressions of one item.

    Positions are independent Bernoulli(p(r)) per impression, so the count
    at each relevant in-cutoff rank is Binomial(n, p(r)); this draws those
    binomials directly instead of looping impressions. Distribution-identical
    to aggregating :func:`simulate_impression`.
    """
    ranked = dr.rank_documents(item.query_text).entries
    relevant = set(item.relevant_docs)
    counts: dict[int, int] = {}
    for i, (doc, _) in enumerate(ranked[: model.cutoff]):
        if doc in relevant:
            rank = i + 1
            counts[rank] = int(rng.binomial(n_impressions, model.propensity(rank)))
    return counts


def generate_log(
    corpus: Corpus,
    dr: DocRanker,
    model: PropensityModel,
    passes: int,
    min_prefix_len: int,
    seed: int,
) -> list[LogEntry]:
    """Generate a biased click log: items x passes, one sampled prefix each.

    Each (item, pass) impression gets its own RNG seeded from
    (seed, item index, pass), so the output does not depend on iteration
    order or worker count. Items whose prefix sample comes back None are
    skipped for that pass.
    """
    if not corpus.items:
        raise ValueError("cannot generate a log from an empty corpus")
    entries: list[LogEntry] = []
    for idx, item in enumerate(corpus.items):
        for p in range(passes):
            impression_seed = derive_seed(idx, p, seed=seed)
            rng = np.random.default_rng(impression_seed)
            prefix = sample_prefix(item.query_text, min_prefix_len, rng)
            if prefix is None:
                continue
            entries.extend(simulate_impression(dr, item, prefix, model, rng, entry_seed=impression_seed))
    return entries


def write_log(entries: list[LogEntry], path: str | Path) -> None:
    """Write entries as JSON lines with a stable field order."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(
                json.dumps(
                    {
                        "prefix": e.prefix,
                        "logged_query": e.logged_query,
                        "clicked_doc": e.clicked_doc,
                        "logged_rank": e.logged_rank,
                        "entry_seed": e.entry_seed,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_log(path: str | Path) -> list[LogEntry]:
    entries: list[LogEntry] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entries.append(LogEntry(**json.loads(line)))
    return entries
