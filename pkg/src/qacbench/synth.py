"""Synthetic corpus generator for desk-scale experiments and tests.

Queries are grouped into lexically disjoint topics and built from
compositional tokens (stem + ending), so prefixes of one query match many
other queries of the topic at the character level while full tokens stay
distinct for a lexical ranker.

Each topic has a pool of clickable docs, and each doc owns one filler
token. Items come in three kinds: "sig" queries name their doc's filler
right after the head word but usually append a junk filler of another doc
at the end; "id" queries additionally name the doc's unique identity
token; "noise" queries use fillers unrelated to their doc. Truncating
after the first word usually keeps the intent-bearing filler and cuts the
junk, so the typed prefix predicts the wanted doc while the full logged
query ranks it poorly, and specialist completions (filler + identity
token) rank it first. That is the headroom a utility-aware suggester is
supposed to exploit. Repeated query texts re-draw their docs per item, the
way one popular query serves many users, so no single text owns a doc's
ranking profile.
"""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, CorpusItem

__all__ = ["generate_synthetic_corpus"]

_SYLLABLES = [
    "ba", "be", "bo", "da", "de", "do", "fa", "fe", "fo", "ga", "ge", "go",
    "ka", "ke", "ko", "la", "le", "lo", "ma", "me", "mo", "na", "ne", "no",
    "pa", "pe", "po", "ra", "re", "ro", "sa", "se", "so", "ta", "te", "to",
    "va", "ve", "vo", "za", "ze", "zo", "lu", "mi", "ni", "ri", "si", "ti",
]

_ENDINGS = ["ka", "ri", "sa", "to", "ne", "lu", "mi", "do", "va", "ze"]


def _make_stems(rng: np.random.Generator, count: int) -> list[str]:
    """Generate unique pronounceable stems."""
    stems: list[str] = []
    seen: set[str] = set()
    while len(stems) < count:
        n_syll = int(rng.integers(2, 4))
        stem = "".join(_SYLLABLES[int(i)] for i in rng.integers(0, len(_SYLLABLES), n_syll))
        if stem not in seen:
            seen.add(stem)
            stems.append(stem)
    return stems


def _zipf_weights(n: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** -exponent
    return w / w.sum()


def generate_synthetic_corpus(
    n_queries: int,
    n_docs: int,
    seed: int,
    *,
    n_topics: int = 12,
    filler_stems: int = 2,
    identity_docs: int = 16,
    p_id: float = 0.2,
    p_noise: float = 0.35,
    p_junk: float = 0.7,
    filler_fidelity: float = 0.85,
    doc_zipf: float = 1.1,
    query_zipf: float = 1.05,
    distinct_fraction: float = 0.35,
    max_relevant: int = 2,
) -> Corpus:
    """Build a topic-structured random corpus.

    ``identity_docs`` is how many docs per topic can be relevant; ``p_id``
    and ``p_noise`` set the mix of identity-bearing, signature, and noise
    queries; ``p_junk`` is the chance a signature query drags in another
    doc's filler as its last word; ``filler_fidelity`` is how reliably a
    signature query's filler names its own doc. With ``distinct_fraction``
    < 1, the remaining items repeat existing texts with
    Zipf(``query_zipf``) multiplicities, re-drawing relevant docs per item.
    """
    if n_docs < n_topics:
        raise ValueError("need at least one doc per topic")
    if p_id + p_noise > 1.0:
        raise ValueError("p_id + p_noise must be <= 1")
    if not 0.0 < distinct_fraction <= 1.0:
        raise ValueError("distinct_fraction must be in (0, 1]")
    docs_per_topic = n_docs // n_topics
    n_fillers = filler_stems * len(_ENDINGS)
    identity_docs = min(identity_docs, docs_per_topic, n_fillers, len(_ENDINGS) ** 2)
    rng = np.random.default_rng(seed)

    stems = _make_stems(rng, n_topics * (2 + filler_stems))
    per = 2 + filler_stems
    topic_head = [stems[t * per] + _ENDINGS[0] for t in range(n_topics)]
    topic_id_stem = [stems[t * per + 1] for t in range(n_topics)]
    topic_fillers: list[list[str]] = []
    for t in range(n_topics):
        fillers = [
            stems[t * per + 2 + s] + _ENDINGS[e]
            for s in range(filler_stems)
            for e in range(len(_ENDINGS))
        ]
        topic_fillers.append(fillers)

    doc_pool = [np.arange(t * docs_per_topic, (t + 1) * docs_per_topic) for t in range(n_topics)]
    doc_pop = _zipf_weights(identity_docs, doc_zipf)

    def identity_token(t: int, j: int) -> str:
        # Two ending syllables index up to len(_ENDINGS)^2 docs uniquely.
        return topic_id_stem[t] + _ENDINGS[j // len(_ENDINGS)] + _ENDINGS[j % len(_ENDINGS)]

    def draw_filler_for(j: int) -> int:
        # Doc j owns filler j; signature queries name it with high fidelity.
        if rng.random() < filler_fidelity:
            return j
        return int(rng.choice(identity_docs, p=doc_pop))

    def draw_primary(filler: int, kind: str) -> int:
        if kind == "noise":
            return int(rng.choice(identity_docs, p=doc_pop))
        # Invert the filler draw: mostly the filler's owner.
        if rng.random() < filler_fidelity:
            return filler
        return int(rng.choice(identity_docs, p=doc_pop))

    def draw_docs(t: int, kind: str, filler: int, pinned: int) -> tuple[int, ...]:
        primary = pinned if kind == "id" else draw_primary(filler, kind)
        docs = {int(doc_pool[t][primary])}
        if max_relevant > 1 and rng.random() < 0.4:
            docs.add(int(doc_pool[t][int(rng.choice(identity_docs, p=doc_pop))]))
        return tuple(docs)

    n_templates = max(int(round(n_queries * distinct_fraction)), 1)
    templates: list[tuple[str, int, str, int, int]] = []
    seen_texts: set[str] = set()
    attempts = 0
    while len(templates) < n_templates:
        attempts += 1
        if attempts > 50 * n_templates:
            raise RuntimeError("synthetic generator failed to produce enough distinct queries")
        t = int(rng.integers(0, n_topics))
        u = rng.random()
        kind = "id" if u < p_id else ("noise" if u < p_id + p_noise else "sig")
        primary = int(rng.choice(identity_docs, p=doc_pop))
        if kind == "noise":
            filler = int(rng.choice(identity_docs, p=doc_pop))
            while_guard = 0
            while filler == primary and while_guard < 8:
                filler = int(rng.choice(identity_docs, p=doc_pop))
                while_guard += 1
        else:
            filler = draw_filler_for(primary)
        tokens = [topic_head[t], topic_fillers[t][filler]]
        if kind == "id":
            tokens.append(identity_token(t, primary))
        elif kind == "sig" and rng.random() < p_junk:
            # A wrong identity token: the user remembered someone else's id.
            # It shares the identity stem with the right completion, and it
            # drags the wanted doc below the junk doc in the ranking.
            junk = int(rng.choice(identity_docs, p=doc_pop))
            if junk != primary:
                tokens.append(identity_token(t, junk))
        text = " ".join(tokens)
        if text in seen_texts:
            continue
        seen_texts.add(text)
        templates.append((text, t, kind, filler, primary))

    template_w = _zipf_weights(n_templates, query_zipf)
    picks = list(range(n_templates))
    if n_queries > n_templates:
        picks += [int(i) for i in rng.choice(n_templates, size=n_queries - n_templates, p=template_w)]
    items: list[CorpusItem] = []
    for i in picks:
        text, t, kind, filler, primary = templates[i]
        items.append(CorpusItem(query_text=text, relevant_docs=draw_docs(t, kind, filler, primary)))
    return Corpus.from_items(items, doc_count=n_docs)
