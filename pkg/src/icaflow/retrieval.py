"""Lexical intent retrieval: TF-IDF cosine over per-workflow term bags.

Each workflow contributes one index entry built from its intent label, the
root description, and any alias phrases (typically the query templates
associated with the intent).  Scoring is deliberately lexical and fully
deterministic so the rest of the harness is reproducible end to end; an
embedding scorer can be swapped in behind the same interface later.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .errors import IcaError
from .lang import IcaDocument

_WORD_RE = re.compile(r"\w+", re.UNICODE)

# Compact English stop-word list; enough to keep template phrasing from
# dominating the intent match.
STOP_WORDS = frozenset(
    """
    a an and are as at be but by can could do does for from has have how i
    if in is it its me my of on or our so that the their them they this to
    us was we what when where which who will with would you your
    """.split()
)


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens with stop words removed."""
    return [t for t in (m.group(0).lower() for m in _WORD_RE.finditer(text)) if t not in STOP_WORDS]


@dataclass(frozen=True)
class IntentEntry:
    workflow_id: str
    intent_label: str
    description: str
    terms: Counter = field(default_factory=Counter)


@dataclass(frozen=True)
class IntentIndex:
    entries: tuple[IntentEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def idf(self) -> dict[str, float]:
        return _idf([entry.terms for entry in self.entries])


def _idf(bags: Sequence[Counter]) -> dict[str, float]:
    n = len(bags)
    df: Counter = Counter()
    for bag in bags:
        df.update(set(bag))
    return {term: math.log((n + 1) / (df[term] + 1)) + 1.0 for term in sorted(df)}


def _idf_of(term: str, idf: dict[str, float], n_docs: int) -> float:
    return idf.get(term, math.log(n_docs + 1) + 1.0)


def _cosine(query: Counter, doc: Counter, idf: dict[str, float], n_docs: int) -> float:
    dot = 0.0
    for term, q_count in query.items():
        if term in doc:
            w = _idf_of(term, idf, n_docs)
            dot += (q_count * w) * (doc[term] * w)
    if dot == 0.0:
        return 0.0
    q_norm = math.sqrt(
        sum((c * _idf_of(t, idf, n_docs)) ** 2 for t, c in query.items())
    )
    d_norm = math.sqrt(
        sum((c * _idf_of(t, idf, n_docs)) ** 2 for t, c in doc.items())
    )
    if q_norm == 0.0 or d_norm == 0.0:
        return 0.0
    return dot / (q_norm * d_norm)


def build_index(
    docs: Sequence[IcaDocument], aliases: dict[str, list[str]] | None = None
) -> IntentIndex:
    """Index one entry per workflow; duplicate workflow ids are an error."""
    aliases = aliases or {}
    entries: list[IntentEntry] = []
    seen: set[str] = set()
    for doc in docs:
        if doc.workflow_id in seen:
            raise IcaError(f"duplicate workflow id {doc.workflow_id!r} in index")
        seen.add(doc.workflow_id)
        label = doc.intent_label()
        description = doc.tree.nodes[doc.tree.root].description
        terms: Counter = Counter(tokenize(label))
        terms.update(tokenize(description))
        for phrase in aliases.get(doc.workflow_id, ()):
            terms.update(tokenize(phrase))
        if not terms:
            raise IcaError(f"workflow {doc.workflow_id!r} yields an empty term bag")
        entries.append(
            IntentEntry(
                workflow_id=doc.workflow_id,
                intent_label=label,
                description=description,
                terms=terms,
            )
        )
    return IntentIndex(entries=tuple(entries))


def retrieve(
    index: IntentIndex,
    query_text: str,
    k: int = 3,
    idf: dict[str, float] | None = None,
) -> list[tuple[str, float]]:
    """Top-k workflows by TF-IDF cosine; zero-score entries are dropped.

    Ties break by workflow id ascending so rankings are deterministic.
    ``idf`` overrides the index-derived weights (used by tests to check
    rank stability with frozen document frequencies).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.entries:
        return []
    query_terms = Counter(tokenize(query_text))
    weights = idf if idf is not None else index.idf()
    n = len(index.entries)
    scored = [
        (entry.workflow_id, _cosine(query_terms, entry.terms, weights, n))
        for entry in index.entries
    ]
    scored = [(wf, score) for wf, score in scored if score > 0.0]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def rank_intents(
    query_text: str, docs: Sequence[IcaDocument]
) -> list[tuple[str, float]]:
    """Rank candidate workflows by intent affinity to the query.

    Unlike :func:`retrieve`, this works on an explicit candidate list and
    uses only the intent label and root description (no aliases) — exactly
    the information visible inside a rendered prompt, so any component that
    sees the same candidates infers the same intent.  Ties keep candidate
    order.
    """
    query_terms = Counter(tokenize(query_text))
    bags = []
    for doc in docs:
        terms: Counter = Counter(tokenize(doc.intent_label()))
        terms.update(tokenize(doc.tree.nodes[doc.tree.root].description))
        bags.append(terms)
    idf = _idf(bags)
    n = len(bags)
    scored = [
        (doc.workflow_id, _cosine(query_terms, bag, idf, n))
        for doc, bag in zip(docs, bags)
    ]
    scored.sort(key=lambda pair: -pair[1])
    return scored


def infer_intent_label(query_text: str, docs: Sequence[IcaDocument]) -> str | None:
    """Best-matching candidate's intent label, or None with zero overlap."""
    if not docs:
        return None
    ranking = rank_intents(query_text, docs)
    if not ranking or ranking[0][1] <= 0.0:
        return None
    top_id = ranking[0][0]
    for doc in docs:
        if doc.workflow_id == top_id:
            return doc.intent_label()
    return None
