"""Deterministic TF-IDF document ranker.

Each document gets a profile vector built from the query texts of the
training items labeled with it: raw term frequency times smoothed IDF,

    idf(t) = ln((1 + N) / (1 + df(t))) + 1

with N the number of profiled docs, L2-normalized per doc. Queries are
scored by cosine against the profiles; ties break toward the smaller doc
id, and a document outside the kept top_k has rank infinity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Corpus

__all__ = ["RankedDocs", "DocRanker", "train_doc_ranker"]

INFINITE_RANK = math.inf

_FORMAT_VERSION = 1


@dataclass
class RankedDocs:
    """Ordered (doc id, cosine score) entries for one query, length <= top_k."""

    query_text: str
    entries: list[tuple[int, float]]


@dataclass
class DocRanker:
    doc_profiles: dict[int, dict[str, float]]
    idf: dict[str, float]
    top_k: int
    _postings: dict[str, list[tuple[int, float]]] = field(default_factory=dict, repr=False)
    _rank_cache: dict[str, dict[int, int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._postings:
            self._build_postings()

    def _build_postings(self) -> None:
        postings: dict[str, list[tuple[int, float]]] = {}
        for doc in sorted(self.doc_profiles):
            for token, weight in self.doc_profiles[doc].items():
                postings.setdefault(token, []).append((doc, weight))
        self._postings = postings

    def rank_documents(self, query_text: str) -> RankedDocs:
        """Cosine-score the profiles against the query's TF-IDF vector.

        A query sharing no token with any profile yields an empty ranking.
        """
        tf: dict[str, int] = {}
        for token in query_text.split():
            tf[token] = tf.get(token, 0) + 1
        if not tf:
            return RankedDocs(query_text=query_text, entries=[])
        default_idf = math.log(1 + len(self.doc_profiles)) + 1.0
        q_weights = {t: c * self.idf.get(t, default_idf) for t, c in tf.items()}
        q_norm = math.sqrt(sum(w * w for w in q_weights.values()))
        if q_norm == 0.0:
            return RankedDocs(query_text=query_text, entries=[])
        scores: dict[int, float] = {}
        for token, q_w in q_weights.items():
            for doc, d_w in self._postings.get(token, ()):
                scores[doc] = scores.get(doc, 0.0) + q_w * d_w
        ranked = sorted(((doc, s / q_norm) for doc, s in scores.items()), key=lambda e: (-e[1], e[0]))
        return RankedDocs(query_text=query_text, entries=ranked[: self.top_k])

    def doc_ranks(self, query_text: str) -> dict[int, int]:
        """1-based rank of every doc in the query's top_k list (cached)."""
        cached = self._rank_cache.get(query_text)
        if cached is None:
            ranked = self.rank_documents(query_text)
            cached = {doc: i + 1 for i, (doc, _) in enumerate(ranked.entries)}
            self._rank_cache[query_text] = cached
        return cached

    def rank_of_document(self, query_text: str, doc: int) -> float:
        """Position of ``doc`` for this query, or infinity if absent from top_k."""
        rank = self.doc_ranks(query_text).get(doc)
        return float(rank) if rank is not None else INFINITE_RANK

    def save(self, path: str | Path) -> None:
        payload = {
            "version": _FORMAT_VERSION,
            "top_k": self.top_k,
            "idf": self.idf,
            "doc_profiles": {str(doc): prof for doc, prof in sorted(self.doc_profiles.items())},
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DocRanker":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("version") != _FORMAT_VERSION:
            raise ValueError(f"unsupported doc ranker file version: {payload.get('version')!r}")
        profiles = {int(doc): prof for doc, prof in payload["doc_profiles"].items()}
        return cls(doc_profiles=profiles, idf=payload["idf"], top_k=payload["top_k"])


def train_doc_ranker(train: Corpus, top_k: int = 100) -> DocRanker:
    """Build per-doc TF-IDF profiles from the items labeled with each doc."""
    if not train.items:
        raise ValueError("cannot train a doc ranker on an empty corpus")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")

    doc_tf: dict[int, dict[str, int]] = {}
    for item in train.items:
        tokens = item.query_text.split()
        for doc in item.relevant_docs:
            tf = doc_tf.setdefault(doc, {})
            for token in tokens:
                tf[token] = tf.get(token, 0) + 1

    n_docs = len(doc_tf)
    df: dict[str, int] = {}
    for tf in doc_tf.values():
        for token in tf:
            df[token] = df.get(token, 0) + 1
    idf = {t: math.log((1 + n_docs) / (1 + d)) + 1.0 for t, d in df.items()}

    profiles: dict[int, dict[str, float]] = {}
    for doc, tf in doc_tf.items():
        weights = {t: c * idf[t] for t, c in tf.items()}
        norm = math.sqrt(sum(w * w for w in weights.values()))
        profiles[doc] = {t: w / norm for t, w in weights.items()}
    return DocRanker(doc_profiles=profiles, idf=idf, top_k=top_k)
