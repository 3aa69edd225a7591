"""Value types shared by the chart, the penalties and the decoder."""
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import torch

from pcgen.errors import ContractError, InvalidSegmentationError
from pcgen.inference.semiring import Payload


@dataclass(frozen=True)
class LabelSet:
    """Control-state inventory C. The chart's start symbol is not a member."""
    size: int
    names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.size < 1:
            raise ContractError(f"label set needs at least one state, got {self.size}")
        if self.names is not None and len(self.names) != self.size:
            raise ContractError(f"{len(self.names)} label names for {self.size} states")

    def __contains__(self, c: object) -> bool:
        return isinstance(c, int) and 0 <= c < self.size

    def name(self, c: int) -> str:
        if self.names is None:
            return str(c)
        return self.names[c]


def valid_span_mask(length: int, max_len: int) -> torch.Tensor:
    """[T, L] boolean mask of spans [i, i+d) that end inside the sentence."""
    starts = torch.arange(length).unsqueeze(1)
    return starts + torch.arange(1, max_len + 1).unsqueeze(0) <= length


class Span(NamedTuple):
    """Labelled span [start, end) with 0-based indices."""
    start: int
    end: int
    label: int

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Segmentation:
    """Labelled tiling of a sentence (the control states z)."""
    spans: Tuple[Span, ...]

    @classmethod
    def from_spans(cls, spans: Iterable[Sequence[int]]) -> "Segmentation":
        return cls(tuple(Span(int(s[0]), int(s[1]), int(s[2])) for s in spans))

    @classmethod
    def from_states(cls, states: Sequence[int]) -> "Segmentation":
        """Merge runs of equal per-token states into spans."""
        spans: List[Span] = []
        start = 0
        for t in range(1, len(states) + 1):
            if t == len(states) or states[t] != states[start]:
                spans.append(Span(start, t, int(states[start])))
                start = t
        return cls(tuple(spans))

    @property
    def length(self) -> int:
        return self.spans[-1].end if self.spans else 0

    def validate(self, length: int, max_len: Optional[int] = None, num_labels: Optional[int] = None) -> None:
        if not self.spans:
            raise InvalidSegmentationError("empty segmentation")
        pos = 0
        for span in self.spans:
            if span.start != pos:
                raise InvalidSegmentationError(f"span {tuple(span)} does not start at {pos}")
            if span.end <= span.start:
                raise InvalidSegmentationError(f"empty or reversed span {tuple(span)}")
            if max_len is not None and span.length > max_len:
                raise InvalidSegmentationError(f"span {tuple(span)} longer than L={max_len}")
            if num_labels is not None and not 0 <= span.label < num_labels:
                raise InvalidSegmentationError(f"label {span.label} outside [0, {num_labels})")
            pos = span.end
        if pos != length:
            raise InvalidSegmentationError(f"spans cover [0, {pos}) but sentence length is {length}")

    def to_states(self) -> List[int]:
        """Per-token expansion."""
        states: List[int] = []
        for span in self.spans:
            states.extend([span.label] * span.length)
        return states

    def to_json(self) -> List[List[int]]:
        return [[s.start, s.end, s.label] for s in self.spans]


@dataclass
class PotentialTable:
    """Log-potentials of the segmental CRF.

    log_emission   [T, L, C]   span starting at i with length d+1 and label c
    log_transition [C+1, C]    row 0 is the start symbol, row c'+1 is label c'
    log_length     [L]         label-independent, uniform (zeros) by default

    Entries with d+1 > T-i are never read.
    """
    log_emission: torch.Tensor
    log_transition: torch.Tensor
    log_length: torch.Tensor
    check_finite: bool = True

    def __post_init__(self):
        if self.log_emission.dim() != 3:
            raise ContractError(f"log_emission must be [T, L, C], got {tuple(self.log_emission.shape)}")
        T, L, C = self.log_emission.shape
        if T < 1 or L < 1 or C < 1:
            raise ContractError(f"degenerate potential table T={T} L={L} C={C}")
        if tuple(self.log_transition.shape) != (C + 1, C):
            raise ContractError(f"log_transition must be [{C + 1}, {C}], got {tuple(self.log_transition.shape)}")
        if tuple(self.log_length.shape) != (L,):
            raise ContractError(f"log_length must be [{L}], got {tuple(self.log_length.shape)}")
        if self.check_finite:
            for name in ("log_emission", "log_transition", "log_length"):
                if not bool(torch.isfinite(getattr(self, name).detach()).all()):
                    raise ContractError(f"{name} contains non-finite entries")

    @property
    def length(self) -> int:
        return self.log_emission.shape[0]

    @property
    def max_len(self) -> int:
        return self.log_emission.shape[1]

    @property
    def num_labels(self) -> int:
        return self.log_emission.shape[2]

    @property
    def log_start(self) -> torch.Tensor:
        return self.log_transition[0]

    @property
    def log_between(self) -> torch.Tensor:
        """[C, C] transition from previous label (row) to next label (column)."""
        return self.log_transition[1:]

    def detach(self) -> "PotentialTable":
        return PotentialTable(self.log_emission.detach(), self.log_transition.detach(),
                              self.log_length.detach(), check_finite=self.check_finite)

    @classmethod
    def uniform(cls, length: int, max_len: int, num_labels: int, dtype=torch.float64) -> "PotentialTable":
        return cls(torch.zeros(length, max_len, num_labels, dtype=dtype),
                   torch.zeros(num_labels + 1, num_labels, dtype=dtype),
                   torch.zeros(max_len, dtype=dtype))


@dataclass(frozen=True)
class ChartTables:
    """beta[t] and beta_prime[t] payloads for t = 0..T, each over C labels."""
    semiring: str
    beta: Tuple[Payload, ...]
    beta_prime: Tuple[Payload, ...]
    partition: Payload
