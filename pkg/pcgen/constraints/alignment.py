"""
Tables and the alignment heuristic A(x, y).

Matching is exact on case-folded tokens. Candidate matches of every field value
are resolved longest first, then leftmost, then by field order in the table;
a candidate overlapping an already accepted span is dropped. All spans are
0-based and end-exclusive.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from pcgen.errors import ContractError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Field:
    name: str
    value: Tuple[str, ...]


@dataclass(frozen=True)
class Table:
    """Conditioning input x: named fields with token-sequence values."""
    fields: Tuple[Field, ...]

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate field names in table: {names}")
        for f in self.fields:
            if not f.value:
                raise ContractError(f"field '{f.name}' has an empty value")

    @classmethod
    def from_items(cls, items: Iterable[Tuple[str, Sequence[str]]]) -> "Table":
        return cls(tuple(Field(name, tuple(value)) for name, value in items))

    @classmethod
    def from_json(cls, data: Sequence[Mapping[str, Any]]) -> "Table":
        return cls.from_items((d["field"], d["value"]) for d in data)

    def to_json(self) -> List[Dict[str, Any]]:
        return [{"field": f.name, "value": list(f.value)} for f in self.fields]

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    def __contains__(self, name: str) -> bool:
        return any(f.name == name for f in self.fields)

    def __len__(self) -> int:
        return len(self.fields)

    def value(self, name: str) -> Tuple[str, ...]:
        for f in self.fields:
            if f.name == name:
                return f.value
        raise KeyError(name)

    def token_rows(self) -> Iterator[Tuple[str, str, int, int]]:
        """(field, word, position from left, position from right) per table token."""
        for f in self.fields:
            n = len(f.value)
            for k, word in enumerate(f.value):
                yield f.name, word, k + 1, n - k


class Alignment(NamedTuple):
    start: int
    end: int
    field: str

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class AlignmentSet:
    """Aligned spans (i, j, f), sorted by start."""
    spans: Tuple[Alignment, ...] = ()

    @classmethod
    def from_json(cls, data: Iterable[Sequence[Any]]) -> "AlignmentSet":
        spans = tuple(Alignment(int(i), int(j), str(f)) for i, j, f in data)
        return cls(tuple(sorted(spans, key=lambda a: (a.start, a.end))))

    def to_json(self) -> List[List[Any]]:
        return [[a.start, a.end, a.field] for a in self.spans]

    def __iter__(self):
        return iter(self.spans)

    def __len__(self) -> int:
        return len(self.spans)

    def validate(self, length: int, table: Optional[Table] = None) -> None:
        by_field: Dict[str, List[Alignment]] = {}
        for a in self.spans:
            if not 0 <= a.start < a.end <= length:
                raise ContractError(f"alignment {tuple(a)} outside sentence of length {length}")
            if table is not None and a.field not in table:
                raise ContractError(f"alignment to inactive field '{a.field}'")
            by_field.setdefault(a.field, []).append(a)
        for name, spans in by_field.items():
            spans = sorted(spans)
            for prev, cur in zip(spans, spans[1:]):
                if cur.start < prev.end:
                    raise ContractError(f"overlapping alignments for field '{name}'")

    def split(self, max_len: int) -> List[Tuple[Alignment, List[Tuple[int, int]]]]:
        """Each alignment with its maximal <= max_len sub-spans (itself if short enough)."""
        out = []
        for a in self.spans:
            pieces = [(s, min(s + max_len, a.end)) for s in range(a.start, a.end, max_len)]
            out.append((a, pieces))
        return out


def _fold(tokens: Sequence[str]) -> List[str]:
    return [t.casefold() for t in tokens]


def _exact_candidates(value: List[str], text: List[str]) -> Iterator[Tuple[int, int]]:
    n = len(value)
    for s in range(len(text) - n + 1):
        if text[s:s + n] == value:
            yield s, s + n


def _partial_candidates(value: List[str], text: List[str]) -> Iterator[Tuple[int, int]]:
    """Maximal runs of text that occur contiguously inside the value."""
    ngrams = {tuple(value[a:b]) for a in range(len(value)) for b in range(a + 1, len(value) + 1)}
    for s in range(len(text)):
        e = s
        while e < len(text) and tuple(text[s:e + 1]) in ngrams:
            e += 1
        if e > s and not (s > 0 and tuple(text[s - 1:e]) in ngrams):
            yield s, e


def extract_alignments(table: Table, tokens: Sequence[str], partial: bool = False) -> AlignmentSet:
    """Greedy longest-match alignment of field values to the sentence."""
    text = _fold(tokens)
    candidates = []
    for order, f in enumerate(table.fields):
        value = _fold(f.value)
        found = _partial_candidates(value, text) if partial else _exact_candidates(value, text)
        for s, e in found:
            candidates.append((-(e - s), s, order, e, f.name))
    candidates.sort()

    taken = [False] * len(text)
    accepted = []
    for _, s, _, e, name in candidates:
        if any(taken[s:e]):
            continue
        for t in range(s, e):
            taken[t] = True
        accepted.append(Alignment(s, e, name))
    accepted.sort(key=lambda a: (a.start, a.end))
    return AlignmentSet(tuple(accepted))
