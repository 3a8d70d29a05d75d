"""Corpus loading, label filtering, splitting, and prefix sampling.

The corpus is a bipartite structure between query texts and the documents
they are relevant to, stored as tab-separated lines::

    <query text>\t<doc_id>,<doc_id>,...

Query texts are normalized on load: lowercased, punctuation replaced by
spaces, whitespace runs collapsed.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CorpusError",
    "CorpusItem",
    "Corpus",
    "CorpusSplit",
    "normalize_text",
    "load_corpus",
    "save_corpus",
    "filter_top_labels",
    "split_corpus",
    "sample_prefix",
]

_PUNCT_RE = re.compile(r"[^\w\s]")
_WS_RE = re.compile(r"\s+")


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid corpus operations."""


def normalize_text(text: str) -> str:
    """Lowercase, replace punctuation with spaces, collapse whitespace."""
    return _WS_RE.sub(" ", _PUNCT_RE.sub(" ", text.lower())).strip()


@dataclass(frozen=True)
class CorpusItem:
    """One (query text, relevant documents) pair.

    ``relevant_docs`` is kept as a sorted tuple of unique doc ids so that
    iteration order is deterministic everywhere.
    """

    query_text: str
    relevant_docs: tuple[int, ...]

    def __post_init__(self):
        if not self.query_text:
            raise CorpusError("empty query text")
        if not self.relevant_docs:
            raise CorpusError("empty relevant-doc list")
        docs = tuple(sorted(set(self.relevant_docs)))
        object.__setattr__(self, "relevant_docs", docs)


@dataclass
class Corpus:
    """A list of items plus derived label statistics.

    Invariants: every referenced doc id is < ``doc_count``, and
    ``label_frequency[d]`` counts the items listing ``d``.
    """

    items: list[CorpusItem]
    doc_count: int
    label_frequency: dict[int, int] = field(default_factory=dict)

    @classmethod
    def from_items(cls, items: list[CorpusItem], doc_count: int | None = None) -> "Corpus":
        freq: Counter[int] = Counter()
        for item in items:
            freq.update(item.relevant_docs)
        max_doc = max(freq) if freq else -1
        if doc_count is None:
            doc_count = max_doc + 1
        elif max_doc >= doc_count:
            raise CorpusError(f"doc id {max_doc} out of range for doc_count={doc_count}")
        return cls(items=items, doc_count=doc_count, label_frequency=dict(freq))

    def __len__(self) -> int:
        return len(self.items)

    def label_index(self) -> dict[int, list[int]]:
        """Map each doc id to the indices of items listing it."""
        index: dict[int, list[int]] = {}
        for i, item in enumerate(self.items):
            for d in item.relevant_docs:
                index.setdefault(d, []).append(i)
        return index


@dataclass
class CorpusSplit:
    """Disjoint retriever-train / ranker-train / test partitions of a corpus."""

    retriever_train: Corpus
    ranker_train: Corpus
    test: Corpus
    seed: int


def load_corpus(path: str | Path) -> Corpus:
    """Parse a tab-separated corpus file.

    Raises :class:`CorpusError` naming the offending line for malformed
    lines, non-integer doc ids, empty label lists, or queries that normalize
    to the empty string. An empty file is an error.
    """
    path = Path(path)
    items: list[CorpusItem] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusError(f"{path}: malformed line {lineno}: expected 2 tab-separated fields")
            text = normalize_text(parts[0])
            if not text:
                raise CorpusError(f"{path}: line {lineno}: empty query text after normalization")
            if not parts[1].strip():
                raise CorpusError(f"{path}: line {lineno}: empty relevant-doc list")
            try:
                docs = tuple(int(tok) for tok in parts[1].split(","))
            except ValueError as exc:
                raise CorpusError(f"{path}: line {lineno}: non-integer doc id") from exc
            if any(d < 0 for d in docs):
                raise CorpusError(f"{path}: line {lineno}: negative doc id")
            items.append(CorpusItem(query_text=text, relevant_docs=docs))
    if not items:
        raise CorpusError(f"{path}: empty corpus file")
    return Corpus.from_items(items)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus in the tab-separated format read by :func:`load_corpus`."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for item in corpus.items:
            fh.write(f"{item.query_text}\t{','.join(str(d) for d in item.relevant_docs)}\n")


def filter_top_labels(corpus: Corpus, top_l: int) -> tuple[Corpus, dict[int, int]]:
    """Keep only the ``top_l`` most frequent doc labels.

    Ties are broken toward the smaller doc id. Retained ids are re-indexed
    densely (ascending old id -> 0..L-1); items whose relevant set becomes
    empty are dropped. Returns the filtered corpus and the old->new id map.
    """
    if top_l < 1:
        raise CorpusError("top_l must be >= 1")
    ranked = sorted(corpus.label_frequency.items(), key=lambda kv: (-kv[1], kv[0]))
    kept_old = sorted(doc for doc, _ in ranked[:top_l])
    id_map = {old: new for new, old in enumerate(kept_old)}
    items: list[CorpusItem] = []
    for item in corpus.items:
        docs = tuple(id_map[d] for d in item.relevant_docs if d in id_map)
        if docs:
            items.append(CorpusItem(query_text=item.query_text, relevant_docs=docs))
    filtered = Corpus.from_items(items, doc_count=len(kept_old))
    return filtered, id_map


def split_corpus(corpus: Corpus, fractions: tuple[float, float, float], seed: int) -> CorpusSplit:
    """Shuffle items with a seeded RNG and cut into three partitions.

    Cut points are floor(f1*n) and floor((f1+f2)*n), so fractions
    (.6, .3, .1) on 10 items give sizes (6, 3, 1).
    """
    f1, f2, f3 = fractions
    if min(f1, f2, f3) < 0:
        raise CorpusError("fractions must be nonnegative")
    if abs((f1 + f2 + f3) - 1.0) > 1e-9:
        raise CorpusError(f"fractions must sum to 1, got {f1 + f2 + f3!r}")
    n = len(corpus.items)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    cut1 = int(np.floor(f1 * n))
    cut2 = int(np.floor((f1 + f2) * n))
    parts = []
    for lo, hi in ((0, cut1), (cut1, cut2), (cut2, n)):
        part_items = [corpus.items[i] for i in order[lo:hi]]
        parts.append(Corpus.from_items(part_items, doc_count=corpus.doc_count))
    return CorpusSplit(retriever_train=parts[0], ranker_train=parts[1], test=parts[2], seed=seed)


def sample_prefix(query_text: str, min_len: int, rng: np.random.Generator) -> str | None:
    """Sample a typing prefix by truncating after the first word.

    The cut position is uniform over (len(first word), len(query_text)].
    Returns None when there is no valid cut position (single-word query)
    or the sampled prefix is shorter than ``min_len``.
    """
    first_space = query_text.find(" ")
    first_word_len = len(query_text) if first_space < 0 else first_space
    lo, hi = first_word_len + 1, len(query_text)
    if lo > hi:
        return None
    cut = int(rng.integers(lo, hi + 1))
    if cut < min_len:
        return None
    return query_text[:cut]
