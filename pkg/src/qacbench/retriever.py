"""Utility-aware prefix trie retriever.

Training pairs (prefix, query, utility) are aggregated by summing utility
per query at every trie node along the prefix path, so a node's list favors
queries that are both high-utility and frequently evidenced. Queries whose
aggregate stays below ``tau`` are excluded; each node keeps its top
``m_candidates`` queries. Pairs whose query does not extend their own
prefix are not indexable (every stored query must carry its node's prefix)
and are skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

__all__ = ["NULL_QUERY", "CandidateSet", "TrieRetriever", "train_retriever", "pad_candidates"]

# Reserved padding marker; normalization guarantees no real query is empty.
NULL_QUERY = ""

_FORMAT_VERSION = 1


@dataclass
class CandidateSet:
    """Retrieved (query, score) entries for a prefix, optionally padded to K."""

    prefix: str
    entries: list[tuple[str, float]]
    padded_to: int | None = None

    def queries(self) -> list[str]:
        return [q for q, _ in self.entries]


class _Node:
    __slots__ = ("children", "agg", "entries")

    def __init__(self):
        self.children: dict[str, _Node] = {}
        self.agg: dict[str, float] = {}
        self.entries: list[tuple[str, float]] = []


class TrieRetriever:
    def __init__(self, tau: float, m_candidates: int):
        if m_candidates < 1:
            raise ValueError("m_candidates must be >= 1")
        self.tau = tau
        self.m_candidates = m_candidates
        self._root = _Node()
        self._grouped: dict[tuple[str, str], float] = {}

    def _insert(self, prefix: str, query: str, utility: float) -> None:
        node = self._root
        node.agg[query] = node.agg.get(query, 0.0) + utility
        for ch in prefix:
            node = node.children.setdefault(ch, _Node())
            node.agg[query] = node.agg.get(query, 0.0) + utility

    def _finalize(self) -> None:
        stack = [self._root]
        while stack:
            node = stack.pop()
            kept = [(q, u) for q, u in node.agg.items() if u >= self.tau]
            kept.sort(key=lambda e: (-e[1], e[0]))
            node.entries = kept[: self.m_candidates]
            node.agg = {}
            stack.extend(node.children.values())

    def retrieve_candidates(self, prefix: str) -> CandidateSet:
        """Walk to the deepest node matching the prefix.

        An exact node match returns its stored list; a partial match falls
        back to the longest matching ancestor with its list filtered to
        queries that still extend the requested prefix.
        """
        node = self._root
        depth = 0
        for ch in prefix:
            child = node.children.get(ch)
            if child is None:
                break
            node = child
            depth += 1
        if depth == len(prefix):
            entries = list(node.entries)
        else:
            entries = [(q, u) for q, u in node.entries if q.startswith(prefix)]
        return CandidateSet(prefix=prefix, entries=entries)

    def save(self, path: str | Path) -> None:
        pairs = [[p, q, u] for (p, q), u in sorted(self._grouped.items())]
        payload = {
            "version": _FORMAT_VERSION,
            "tau": self.tau,
            "m_candidates": self.m_candidates,
            "pairs": pairs,
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrieRetriever":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("version") != _FORMAT_VERSION:
            raise ValueError(f"unsupported retriever file version: {payload.get('version')!r}")
        retriever = cls(tau=payload["tau"], m_candidates=payload["m_candidates"])
        retriever._grouped = {(p, q): u for p, q, u in payload["pairs"]}
        for (p, q) in sorted(retriever._grouped):
            retriever._insert(p, q, retriever._grouped[(p, q)])
        retriever._finalize()
        return retriever


def train_retriever(
    training_pairs: Iterable[tuple[str, str, float]],
    tau: float,
    m: int,
) -> TrieRetriever:
    """Aggregate (prefix, query, utility) pairs into a trie retriever.

    Utilities are first summed per exact (prefix, query) pair in input
    order, then inserted in sorted pair order; this makes training, and the
    save/load round trip, reproduce float sums exactly.
    """
    retriever = TrieRetriever(tau=tau, m_candidates=m)
    grouped: dict[tuple[str, str], float] = {}
    for prefix, query, utility in training_pairs:
        if utility < 0:
            raise ValueError("training utilities must be >= 0")
        if not query.startswith(prefix):
            continue
        key = (prefix, query)
        grouped[key] = grouped.get(key, 0.0) + utility
    retriever._grouped = grouped
    for key in sorted(grouped):
        retriever._insert(key[0], key[1], grouped[key])
    retriever._finalize()
    return retriever


def pad_candidates(cs: CandidateSet, k: int) -> CandidateSet:
    """Pad with zero-score null markers up to K, or truncate past K."""
    if k < 1:
        raise ValueError("K must be >= 1")
    entries = list(cs.entries[:k])
    entries.extend((NULL_QUERY, 0.0) for _ in range(k - len(entries)))
    return CandidateSet(prefix=cs.prefix, entries=entries, padded_to=k)


def candidate_scores(entries: Sequence[tuple[str, float]]) -> dict[str, float]:
    """Convenience map query -> retriever score (null markers excluded)."""
    return {q: s for q, s in entries if q != NULL_QUERY}
