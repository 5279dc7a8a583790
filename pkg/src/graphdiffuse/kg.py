"""Knowledge-graph data model, triple serialization, and corpus-built vocabulary.

Graphs are ordered lists of (head, relation, tail) triples. Serialization
flattens them into a marker-delimited string::

    [HEAD] h [REL] r [TAIL] t [SEP] [HEAD] h2 [REL] r2 [TAIL] t2

Tokenization is deliberately simple: lowercase + whitespace split, with the
control markers kept as atomic reserved tokens. Underscores inside labels are
preserved verbatim in serialized form; they are folded to spaces only by the
normalization used for set membership and alias matching.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from typing import Iterable, Sequence

HEAD, REL, TAIL, SEP, PAD, UNK = "[HEAD]", "[REL]", "[TAIL]", "[SEP]", "[PAD]", "[UNK]"

#: Markers that may never appear inside entity/relation labels.
MARKERS = (HEAD, REL, TAIL, SEP, PAD)

#: Reserved vocabulary tokens in fixed id order; [PAD] is always id 0.
RESERVED_TOKENS = (PAD, HEAD, REL, TAIL, SEP, UNK)

PAD_ID = 0

_PUNCT = string.punctuation


class DataFormatError(ValueError):
    """Raised when an input file or record violates its declared format."""


def normalize_label(label: str) -> str:
    """Normalize a label or mention for set membership and alias matching.

    Lowercase, underscores to spaces, surrounding punctuation stripped per
    whitespace word. "Washington_D.C." and "Washington, D.C." both normalize
    to "washington d.c".
    """
    words = label.lower().replace("_", " ").split()
    stripped = [w.strip(_PUNCT) for w in words]
    return " ".join(w for w in stripped if w)


@dataclass(frozen=True)
class Triple:
    """One directed (head, relation, tail) edge of a knowledge graph."""

    head: str
    rel: str
    tail: str

    def __post_init__(self) -> None:
        for name, label in (("head", self.head), ("rel", self.rel), ("tail", self.tail)):
            if not label:
                raise ValueError(f"triple {name} label must be non-empty")
            for marker in MARKERS:
                if marker in label:
                    raise ValueError(f"triple {name} label contains reserved marker {marker!r}")


class KnowledgeGraph:
    """Ordered triple list with deduplicated entity and relation accessors.

    Triple order is the dataset order and is never re-sorted; it defines the
    serialization order and the tie-break order for alignment.
    """

    def __init__(self, triples: Iterable[Triple]):
        self.triples: tuple[Triple, ...] = tuple(triples)

    def __len__(self) -> int:
        return len(self.triples)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, KnowledgeGraph) and self.triples == other.triples

    def __repr__(self) -> str:
        return f"KnowledgeGraph({list(self.triples)!r})"

    def entities(self) -> tuple[str, ...]:
        """All heads and tails, deduplicated by normalized label, in first-occurrence order."""
        seen: dict[str, str] = {}
        for t in self.triples:
            for label in (t.head, t.tail):
                seen.setdefault(normalize_label(label), label)
        return tuple(seen.values())

    def relations(self) -> tuple[str, ...]:
        seen: dict[str, str] = {}
        for t in self.triples:
            seen.setdefault(normalize_label(t.rel), t.rel)
        return tuple(seen.values())

    def elements(self) -> tuple[str, ...]:
        """Entities and relations in triple-traversal order (head, rel, tail per triple).

        The position in this tuple is the tie-break rank used by alignment.
        """
        seen: dict[str, str] = {}
        for t in self.triples:
            for label in (t.head, t.rel, t.tail):
                seen.setdefault(normalize_label(label), label)
        return tuple(seen.values())


@dataclass(frozen=True)
class RecordError:
    """A malformed dataset record, reported with its 1-based line number."""

    line: int
    message: str


def parse_dataset(lines: Iterable[str]) -> tuple[list[tuple[KnowledgeGraph, str]], list[RecordError]]:
    """Parse line-delimited JSON records into (graph, target text) pairs.

    Each record carries either ``"triples"`` (array of 3-arrays) or the flat
    ``"subject"/"predicate"/"object"`` fields, plus ``"text"``. Malformed
    records are collected as :class:`RecordError` with their line numbers;
    valid records keep their file order.
    """
    pairs: list[tuple[KnowledgeGraph, str]] = []
    errors: list[RecordError] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append(RecordError(lineno, f"invalid JSON: {exc.msg}"))
            continue
        if not isinstance(record, dict):
            errors.append(RecordError(lineno, "record is not an object"))
            continue
        if "text" not in record:
            errors.append(RecordError(lineno, "missing required field 'text'"))
            continue
        try:
            if "triples" in record:
                triples = [Triple(str(h), str(r), str(t)) for h, r, t in record["triples"]]
            elif all(k in record for k in ("subject", "predicate", "object")):
                triples = [Triple(str(record["subject"]), str(record["predicate"]), str(record["object"]))]
            else:
                errors.append(RecordError(lineno, "missing 'triples' or 'subject'/'predicate'/'object'"))
                continue
        except (TypeError, ValueError) as exc:
            errors.append(RecordError(lineno, f"bad triple: {exc}"))
            continue
        if not triples:
            errors.append(RecordError(lineno, "empty triple list"))
            continue
        pairs.append((KnowledgeGraph(triples), str(record["text"])))
    return pairs, errors


def serialize_graph(g: KnowledgeGraph) -> str:
    """Flatten a graph into the marker-delimited string, one block per triple."""
    if len(g) == 0:
        raise ValueError("empty graph")
    blocks = [f"{HEAD} {t.head} {REL} {t.rel} {TAIL} {t.tail}" for t in g.triples]
    return f" {SEP} ".join(blocks)


def parse_serialized(s: str) -> KnowledgeGraph:
    """Inverse of :func:`serialize_graph`; raises on malformed input."""
    triples = []
    for block in s.split(f" {SEP} "):
        tokens = block.split()
        if not tokens or tokens[0] != HEAD:
            raise DataFormatError(f"triple block does not start with {HEAD}: {block!r}")
        try:
            i_rel = tokens.index(REL)
            i_tail = tokens.index(TAIL)
        except ValueError:
            raise DataFormatError(f"triple block missing {REL} or {TAIL}: {block!r}") from None
        head = " ".join(tokens[1:i_rel])
        rel = " ".join(tokens[i_rel + 1 : i_tail])
        tail = " ".join(tokens[i_tail + 1 :])
        if not head or not rel or not tail:
            raise DataFormatError(f"triple block has an empty slot: {block!r}")
        triples.append(Triple(head, rel, tail))
    return KnowledgeGraph(triples)


class Vocab:
    """Bijective token<->id maps with fixed reserved ids ([PAD] is 0)."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens in canonical order")
        self.id_to_token: tuple[str, ...] = tuple(tokens)
        self.token_to_id: dict[str, int] = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def dump(self) -> str:
        """Persistable form: one ``token<TAB>id`` line per token, sorted by id."""
        return "".join(f"{tok}\t{i}\n" for i, tok in enumerate(self.id_to_token))

    @classmethod
    def load(cls, text: str) -> "Vocab":
        tokens: list[str] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line:
                continue
            try:
                tok, sid = line.rsplit("\t", 1)
                idx = int(sid)
            except ValueError:
                raise DataFormatError(f"vocab line {lineno}: expected 'token<TAB>id'") from None
            if idx != len(tokens):
                raise DataFormatError(f"vocab line {lineno}: ids must be contiguous from 0")
            tokens.append(tok)
        return cls(tokens)


def tokenize(text: str) -> list[str]:
    """Whitespace split; markers stay atomic, everything else is lowercased."""
    return [tok if tok in MARKERS or tok == UNK else tok.lower() for tok in text.split()]


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocab:
    """Build a vocabulary from texts and serialized graphs.

    Contains the reserved tokens plus every tokenized word type with frequency
    >= min_count, in first-occurrence order. Reserved spellings are never
    shadowed by corpus words.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: dict[str, int] = {}
    for text in corpus:
        for tok in tokenize(text):
            if tok in RESERVED_TOKENS:
                continue
            counts[tok] = counts.get(tok, 0) + 1
    kept = [tok for tok, n in counts.items() if n >= min_count]
    return Vocab(list(RESERVED_TOKENS) + kept)


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length id sequence with its pad mask.

    Everything past the pad boundary is [PAD]; ``mask[i]`` is True exactly on
    the non-[PAD] positions.
    """

    ids: tuple[int, ...]
    mask: tuple[bool, ...] = field(repr=False)

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.mask):
            raise ValueError("ids and mask length mismatch")
        for i, m in zip(self.ids, self.mask):
            if (i == PAD_ID) == m:
                raise ValueError("mask inconsistent with [PAD] ids")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def length(self) -> int:
        """Number of non-[PAD] positions."""
        return sum(self.mask)


def encode(text: str, vocab: Vocab, n_max: int) -> TokenSequence:
    """Tokenize, map to ids (unknowns to [UNK]), truncate to n_max, pad with [PAD]."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    ids = [vocab.id_of(tok) for tok in tokenize(text)][:n_max]
    n = len(ids)
    ids.extend([PAD_ID] * (n_max - n))
    mask = [True] * n + [False] * (n_max - n)
    return TokenSequence(tuple(ids), tuple(mask))


def decode(seq: TokenSequence, vocab: Vocab) -> str:
    """Strip [PAD] and join the remaining tokens with single spaces."""
    return " ".join(vocab.id_to_token[i] for i, m in zip(seq.ids, seq.mask) if m)
