"""Graph-text alignment: alias expansion, mention detection, and quality scoring.

The aligner is a deterministic dictionary matcher: every graph element
(entity or relation) gets a small set of normalized aliases, and the target
sequence is scanned left-to-right with greedy longest-match. A surface form
shared by several elements resolves to the element occurring earliest in
triple order.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from typing import Iterable, Mapping

from graphdiffuse.kg import KnowledgeGraph, TokenSequence, Vocab, normalize_label

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def _alias_key(alias: str) -> tuple[str, ...]:
    """Normalized token tuple used for matching."""
    return tuple(normalize_label(alias).split())


class AliasTable:
    """Per-element alias lists (canonical surface form first, <= k entries)."""

    def __init__(self, aliases: Mapping[str, list[str]], element_order: Iterable[str]):
        self.aliases: dict[str, tuple[str, ...]] = {e: tuple(a) for e, a in aliases.items()}
        #: elements in triple-traversal order; index = disambiguation rank
        self.element_order: tuple[str, ...] = tuple(element_order)
        self._rank = {e: i for i, e in enumerate(self.element_order)}
        # inverted index: normalized token tuple -> candidate elements by rank
        index: dict[tuple[str, ...], list[str]] = {}
        for element in self.element_order:
            for alias in self.aliases.get(element, ()):
                key = _alias_key(alias)
                if not key:
                    continue
                bucket = index.setdefault(key, [])
                if element not in bucket:
                    bucket.append(element)
        for bucket in index.values():
            bucket.sort(key=self._rank.__getitem__)
        self._index = index
        self.max_span = max((len(k) for k in index), default=0)

    def elements(self) -> tuple[str, ...]:
        return self.element_order

    def lookup(self, key: tuple[str, ...]) -> list[str]:
        return self._index.get(key, [])

    def merged_with(self, other: "AliasTable") -> "AliasTable":
        """Union of two tables; this table's elements keep priority in the order."""
        aliases = {e: list(a) for e, a in self.aliases.items()}
        order = list(self.element_order)
        for e in other.element_order:
            if e not in aliases:
                aliases[e] = list(other.aliases[e])
                order.append(e)
        return AliasTable(aliases, order)


def expand_aliases(
    g: KnowledgeGraph,
    k: int = 5,
    extra: Mapping[str, Iterable[str]] | None = None,
) -> AliasTable:
    """Build the alias table for every entity and relation of ``g``.

    Each element gets, in order: its canonical normalized form, the
    underscore-to-space variant, a punctuation-stripped variant, then any
    user-supplied aliases; duplicates (after normalization) are dropped and
    the list is truncated to ``k``.

    User aliases naming an element absent from the graph are ignored with a
    warning entry in the returned table's ``ignored`` attribute.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    extra = extra or {}
    known = {normalize_label(e): e for e in g.elements()}
    ignored: list[str] = []
    aliases: dict[str, list[str]] = {}
    for element in g.elements():
        candidates = [
            normalize_label(element),
            normalize_label(element.replace("_", " ")),
            normalize_label(element.translate(_PUNCT_TABLE)),
        ]
        seen: list[str] = []
        for cand in candidates:
            if cand and cand not in seen:
                seen.append(cand)
        aliases[element] = seen
    for raw_element, user_aliases in extra.items():
        element = known.get(normalize_label(raw_element))
        if element is None:
            ignored.append(raw_element)
            continue
        for alias in user_aliases:
            norm = normalize_label(alias)
            if norm and norm not in aliases[element]:
                aliases[element].append(norm)
    table = AliasTable({e: a[:k] for e, a in aliases.items()}, g.elements())
    table.ignored = ignored  # type: ignore[attr-defined]
    return table


def load_alias_file(text: str) -> dict[str, list[str]]:
    """Parse UTF-8 ``element<TAB>alias`` lines into a mapping."""
    out: dict[str, list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ValueError(f"alias file line {lineno}: expected 'element<TAB>alias'")
        element, alias = line.split("\t", 1)
        out.setdefault(element, []).append(alias)
    return out


@dataclass(frozen=True, order=True)
class AlignmentLink:
    """Half-open token span [start, end) linked to a graph element."""

    start: int
    end: int
    element: str

    def overlaps(self, other: "AlignmentLink") -> bool:
        return self.start < other.end and other.start < self.end


def detect_and_link(seq: TokenSequence, vocab: Vocab, table: AliasTable) -> list[AlignmentLink]:
    """Greedy longest-match scan over the non-[PAD] tokens of ``seq``.

    Matched spans never overlap; ambiguous surface forms go to the candidate
    element earliest in triple order. Output order is by span start.
    """
    tokens = [vocab.id_to_token[i] for i in seq.ids]
    norm = [normalize_label(tok) for tok in tokens]
    n = seq.length
    links: list[AlignmentLink] = []
    pos = 0
    while pos < n:
        if not norm[pos]:
            pos += 1
            continue
        matched = False
        for span in range(min(table.max_span, n - pos), 0, -1):
            words = [w for w in norm[pos : pos + span] if w]
            if len(words) != span:
                continue  # span crosses a punctuation-only token
            candidates = table.lookup(tuple(words))
            if candidates:
                links.append(AlignmentLink(pos, pos + span, candidates[0]))
                pos += span
                matched = True
                break
        if not matched:
            pos += 1
    return links


def aligned_positions(links: Iterable[AlignmentLink]) -> set[int]:
    return {p for link in links for p in range(link.start, link.end)}


@dataclass(frozen=True)
class AlignmentReport:
    precision: float
    recall: float
    f1: float
    token_coverage: float
    node_coverage: float
    mean_links: float


def score_alignment(
    pred: list[AlignmentLink],
    gold: list[AlignmentLink],
    seq: TokenSequence,
    g: KnowledgeGraph,
) -> AlignmentReport:
    """Span-level precision/recall/F1 plus coverage statistics.

    A predicted link is a true positive when it overlaps a gold span linked to
    the same element. Token coverage is the percentage of non-[PAD] tokens
    inside predicted spans; node coverage the percentage of graph elements
    with at least one predicted link.
    """
    n_tokens = seq.length
    for link in gold:
        if link.start < 0 or link.end > len(seq) or link.start >= link.end:
            raise ValueError(f"gold span [{link.start},{link.end}) out of range")
        if not all(seq.mask[p] for p in range(link.start, link.end)):
            raise ValueError(f"gold span [{link.start},{link.end}) covers a [PAD] position")

    def hits(links: list[AlignmentLink], against: list[AlignmentLink]) -> int:
        return sum(1 for a in links if any(a.element == b.element and a.overlaps(b) for b in against))

    tp_pred = hits(pred, gold)
    tp_gold = hits(gold, pred)
    precision = tp_pred / len(pred) if pred else (1.0 if not gold else 0.0)
    recall = tp_gold / len(gold) if gold else (1.0 if not pred else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    covered = aligned_positions(pred)
    token_cov = 100.0 * len(covered) / n_tokens if n_tokens else 0.0
    elements = g.elements()
    linked = {link.element for link in pred}
    node_cov = 100.0 * sum(1 for e in elements if e in linked) / len(elements) if elements else 0.0
    return AlignmentReport(precision, recall, f1, token_cov, node_cov, float(len(pred)))


def dump_gold(example_id: str, links: list[AlignmentLink]) -> str:
    """One JSON line in the gold-alignment format."""
    return json.dumps(
        {
            "example_id": example_id,
            "links": [{"start": l.start, "end": l.end, "element": l.element} for l in links],
        }
    )


def load_gold(text: str) -> dict[str, list[AlignmentLink]]:
    """Parse line-delimited gold alignments keyed by example id."""
    out: dict[str, list[AlignmentLink]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out[str(obj["example_id"])] = [
                AlignmentLink(int(l["start"]), int(l["end"]), str(l["element"])) for l in obj["links"]
            ]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"gold alignment line {lineno}: {exc}") from None
    return out
