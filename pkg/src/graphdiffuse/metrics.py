"""Task-grounded evaluation: entity extraction, FGT, ESR, graph edits, and BLEU.

FGT scores how precisely a generated text realizes the graph's entities,
optionally discounted by hallucinated out-of-graph mentions; ESR scores
whether a localized graph edit produces the matching localized text change.
Both reuse the alignment module's dictionary detector, so "entity in text"
means "linked by the detector", with labels compared after normalization.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from graphdiffuse.alignment import AliasTable, detect_and_link, expand_aliases
from graphdiffuse.kg import KnowledgeGraph, Triple, Vocab, build_vocab, encode, normalize_label


@dataclass(frozen=True)
class EntitySets:
    """Entity views of one (graph, text) pair.

    ``u_g``: normalized graph entities. ``u_s``: graph entities detected in
    the text. ``h_s``: detected lexicon entities that are not in ``u_g``.
    ``n_words``: whitespace word count of the text.
    """

    u_g: frozenset[str]
    u_s: frozenset[str]
    h_s: frozenset[str]
    n_words: int

    def __post_init__(self) -> None:
        if self.h_s & self.u_g:
            raise ValueError("hallucination set must be disjoint from the graph entity set")


def _entity_alias_table(g: KnowledgeGraph, k: int = 5) -> AliasTable:
    """Alias table restricted to entities (relations are not FGT entities)."""
    full = expand_aliases(g, k=k)
    entities = g.entities()
    return AliasTable({e: list(full.aliases[e]) for e in entities}, entities)


def _lexicon_table(lexicon: Iterable[str], k: int = 5) -> AliasTable:
    """Alias table over a bare entity lexicon (no graph context)."""
    triples = [Triple(e, "is", e) for e in lexicon]
    if not triples:
        return AliasTable({}, [])
    g = KnowledgeGraph(triples)
    return _entity_alias_table(g, k=k)


def _detect_entities(text: str, table: AliasTable) -> frozenset[str]:
    if not table.elements():
        return frozenset()
    vocab = build_vocab([text])
    seq = encode(text, vocab, max(1, len(text.split())))
    links = detect_and_link(seq, vocab, table)
    return frozenset(normalize_label(link.element) for link in links)


def extract_entity_sets(
    g: KnowledgeGraph,
    text: str,
    lexicon: Iterable[str] = (),
    k: int = 5,
) -> EntitySets:
    """Build the entity sets of one (graph, text) pair.

    ``lexicon`` is the universe of detectable out-of-graph entities; mentions
    of lexicon entities absent from the graph form the hallucination set.
    """
    graph_table = _entity_alias_table(g, k=k)
    u_g = frozenset(normalize_label(e) for e in g.entities())
    u_s = _detect_entities(text, graph_table)
    found_lex = _detect_entities(text, _lexicon_table(lexicon, k=k))
    h_s = frozenset(e for e in found_lex if e not in u_g)
    n_words = len(text.split())
    return EntitySets(u_g=u_g, u_s=u_s, h_s=h_s, n_words=max(n_words, 0))


def fgt_value(f1: float, h_count: float, n_words: float, lam: float) -> float:
    """Grounding score F1 * (1 - lam * |H_S| / N) from precomputed statistics."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if n_words < 1:
        raise ValueError("word count N must be >= 1")
    return f1 * (1.0 - lam * h_count / n_words)


@dataclass(frozen=True)
class FGTReport:
    precision: float
    recall: float
    f1: float
    h_count: int
    scores: dict[float, float]


def fgt(sets: EntitySets, lambdas: Sequence[float] = (0.0, 0.5, 1.0)) -> FGTReport:
    """Entity F1 with the hallucination penalty, at each requested lambda."""
    if sets.n_words < 1:
        raise ValueError("word count N must be >= 1")
    inter = len(sets.u_g & sets.u_s)
    denom = len(sets.u_g) + len(sets.u_s)
    f1 = 2.0 * inter / denom if denom else 0.0
    precision = inter / len(sets.u_s) if sets.u_s else 0.0
    recall = inter / len(sets.u_g) if sets.u_g else 0.0
    scores = {lam: fgt_value(f1, len(sets.h_s), sets.n_words, lam) for lam in lambdas}
    return FGTReport(precision, recall, f1, len(sets.h_s), scores)


@dataclass(frozen=True)
class ESRReport:
    delta_g: frozenset[str]
    delta_t: frozenset[str]
    score: float


def esr(
    g: KnowledgeGraph,
    s: str,
    g_edited: KnowledgeGraph,
    s_edited: str,
    lexicon: Iterable[str] = (),
    k: int = 5,
) -> ESRReport:
    """Edit sensitivity: |dG & dT| / |dT| over symmetric entity-set differences.

    Both texts are scanned with the union alias table of both graphs plus the
    lexicon, so an edit is detectable whichever side introduced the entity.
    Edge rules: an unchanged text scores 1 when the graph is also unchanged,
    0 when the graph changed.
    """
    table = _entity_alias_table(g, k=k).merged_with(_entity_alias_table(g_edited, k=k))
    table = table.merged_with(_lexicon_table(lexicon, k=k))
    u_g = frozenset(normalize_label(e) for e in g.entities())
    u_g2 = frozenset(normalize_label(e) for e in g_edited.entities())
    u_s = _detect_entities(s, table)
    u_s2 = _detect_entities(s_edited, table)
    delta_g = u_g ^ u_g2
    delta_t = u_s ^ u_s2
    if not delta_t:
        score = 1.0 if not delta_g else 0.0
    else:
        score = len(delta_g & delta_t) / len(delta_t)
    return ESRReport(frozenset(delta_g), frozenset(delta_t), score)


@dataclass(frozen=True)
class GraphEdit:
    """Record of a single-entity substitution in one triple slot."""

    triple_index: int
    slot: str  # "head" or "tail"
    old: str
    new: str

    def __post_init__(self) -> None:
        if self.slot not in ("head", "tail"):
            raise ValueError("slot must be 'head' or 'tail'")
        if normalize_label(self.new) == normalize_label(self.old):
            raise ValueError("edit must substitute a different entity")


def make_edit(
    g: KnowledgeGraph,
    lexicon: Sequence[str],
    rng: np.random.Generator,
) -> tuple[KnowledgeGraph, GraphEdit]:
    """Substitute one entity slot of one triple with a random lexicon entity.

    Other triples are left untouched even if they mention the old entity.
    """
    pool = [e for e in lexicon]
    if len({normalize_label(e) for e in pool}) < 2:
        raise ValueError("entity lexicon must contain at least 2 distinct entities")
    idx = int(rng.integers(len(g.triples)))
    slot = "head" if rng.integers(2) == 0 else "tail"
    old = getattr(g.triples[idx], slot)
    candidates = [e for e in pool if normalize_label(e) != normalize_label(old)]
    if not candidates:
        raise ValueError("no substitute entity differs from the edited slot")
    new = candidates[int(rng.integers(len(candidates)))]
    triples = list(g.triples)
    t = triples[idx]
    triples[idx] = Triple(new, t.rel, t.tail) if slot == "head" else Triple(t.head, t.rel, new)
    return KnowledgeGraph(triples), GraphEdit(idx, slot, old, new)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, references: Sequence[str], max_n: int = 4) -> float:
    """Corpus-free sentence BLEU with brevity penalty.

    Modified n-gram precisions up to ``max_n``; add-one smoothing on the
    numerator and denominator for n >= 2 only, so a candidate with no unigram
    overlap still scores 0.
    """
    if not references:
        raise ValueError("reference list must be non-empty")
    cand = candidate.split()
    refs = [r.split() for r in references]
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        counts = _ngrams(cand, n)
        clipped = 0
        total = sum(counts.values())
        if counts:
            max_counts: Counter = Counter()
            for ref in refs:
                ref_counts = _ngrams(ref, n)
                for gram in counts:
                    max_counts[gram] = max(max_counts[gram], ref_counts[gram])
            clipped = sum(min(c, max_counts[gram]) for gram, c in counts.items())
        if n == 1:
            if clipped == 0:
                return 0.0
            p = clipped / total
        else:
            p = (clipped + 1) / (total + 1)
        log_sum += math.log(p) / max_n
    c = len(cand)
    r = min((len(ref) for ref in refs), key=lambda rl: (abs(rl - c), rl))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)
