"""
Synthetic restaurant-description corpus (desk-scale stand-in for E2E).

A sentence is a head template followed by a shuffled subset of clause
templates. Templates carry `{field}` slots; every field of a record's table is
realized verbatim exactly once, so gold alignments are exact by construction.
"""
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from data.corpus import CorpusRecord
from data.storage import CorpusStorage
from pcgen.constraints.alignment import Alignment, AlignmentSet, Table
from pcgen.errors import ConfigError
from utils.logger import logger

SLOT = re.compile(r"^\{(\w+)\}$")

DEFAULT_VALUES: Dict[str, Tuple[str, ...]] = {
    "name": ("Clowns", "The Mill", "Aromi", "Cotto", "The Punter", "Zizzi", "Blue Spice", "The Vaults",
             "Giraffe", "Wildwood", "Alimentum", "Browns Cambridge", "Fitzbillies", "Strada", "The Eagle",
             "Loch Fyne", "The Cricketers", "Bibimbap House"),
    "eatType": ("coffee shop", "pub", "restaurant"),
    "food": ("Italian", "French", "Chinese", "Indian", "English", "Japanese", "fast food"),
    "rating": ("1 out of 5", "3 out of 5", "5 out of 5", "low", "average", "high"),
    "area": ("riverside", "city centre"),
    "near": ("Clare Hall", "Burger King", "Raja Cuisine", "Cafe Sicilia", "The Sorrento", "Avalon",
             "Rainbow Vegetarian Cafe", "Crowne Plaza Hotel", "All Bar One", "Express by Holiday Inn"),
}

# head templates open the sentence; clauses follow in random order
DEFAULT_HEADS: Tuple[str, ...] = (
    "{name} is a {eatType}",
    "There is a {eatType} called {name}",
    "{name} is a {food} {eatType}",
    "{name} , a {eatType} ,",
)

DEFAULT_CLAUSES: Tuple[str, ...] = (
    "serving {food} food",
    "located in the {area}",
    "near {near}",
    "with a {rating} customer rating",
)


def _slots(template: str) -> List[str]:
    return [m.group(1) for m in (SLOT.match(tok) for tok in template.split()) if m]


@dataclass
class SyntheticSpec:
    values: Dict[str, Tuple[str, ...]] = field(default_factory=lambda: dict(DEFAULT_VALUES))
    heads: Tuple[str, ...] = DEFAULT_HEADS
    clauses: Tuple[str, ...] = DEFAULT_CLAUSES
    size: int = 2000
    seed: int = 1
    clause_prob: float = 0.7
    duplicate_value_rate: float = 0.0     # probability that `near` repeats the `area` value
    max_length: int = 32
    max_value_length: int = 8
    split: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        fields = set(self.values)
        for template in self.heads + self.clauses:
            slots = _slots(template)
            unknown = [s for s in slots if s not in fields]
            if unknown:
                raise ConfigError(f"template '{template}' references unknown field(s) {unknown}")
            if len(set(slots)) != len(slots):
                raise ConfigError(f"template '{template}' repeats a slot")
        for name, pool in self.values.items():
            if not pool:
                raise ConfigError(f"empty value pool for field '{name}'")
            for v in pool:
                if not 1 <= len(v.split()) <= self.max_value_length:
                    raise ConfigError(f"value '{v}' of '{name}' must have 1..{self.max_value_length} tokens")
        if self.size < 1:
            raise ConfigError("corpus size must be positive")
        if not 0.0 <= self.duplicate_value_rate <= 1.0 or not 0.0 <= self.clause_prob <= 1.0:
            raise ConfigError("probabilities must lie in [0, 1]")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.split}")

    @property
    def fields(self) -> Tuple[str, ...]:
        return tuple(self.values)


def _realize(template: str, values: Dict[str, List[str]], text: List[str], spans: List[Alignment]) -> None:
    for tok in template.split():
        m = SLOT.match(tok)
        if m:
            name = m.group(1)
            start = len(text)
            text.extend(values[name])
            spans.append(Alignment(start, len(text), name))
        else:
            text.append(tok)


def generate_record(spec: SyntheticSpec, rng: np.random.Generator) -> CorpusRecord:
    for _ in range(100):
        head = spec.heads[int(rng.integers(len(spec.heads)))]
        used = set(_slots(head))
        clauses = [c for c in spec.clauses
                   if not used & set(_slots(c)) and rng.random() < spec.clause_prob]
        order = rng.permutation(len(clauses))
        clauses = [clauses[k] for k in order]

        active = list(_slots(head)) + [s for c in clauses for s in _slots(c)]
        values = {name: spec.values[name][int(rng.integers(len(spec.values[name])))].split()
                  for name in active}
        if "near" in values and "area" in values and rng.random() < spec.duplicate_value_rate:
            values["near"] = list(values["area"])

        text: List[str] = []
        spans: List[Alignment] = []
        _realize(head, values, text, spans)
        for k, clause in enumerate(clauses):
            if k > 0 and k == len(clauses) - 1:
                text.append("and")
            _realize(clause, values, text, spans)
        if text[-1] == ",":
            text.pop()
        text.append(".")
        if len(text) <= spec.max_length:
            # table fields in inventory order
            table = Table.from_items((name, values[name]) for name in spec.fields if name in values)
            align = AlignmentSet(tuple(sorted(spans, key=lambda a: (a.start, a.end))))
            return CorpusRecord(table=table, text=tuple(text), align=align)
    raise ConfigError(f"could not generate a sentence within max_length={spec.max_length}")


def generate_corpus(spec: SyntheticSpec) -> Dict[str, List[CorpusRecord]]:
    """Deterministic train/valid/test records for `spec.seed`."""
    rng = np.random.default_rng(spec.seed)
    records = [generate_record(spec, rng) for _ in range(spec.size)]
    n_train = int(round(spec.split[0] * spec.size))
    n_valid = int(round(spec.split[1] * spec.size))
    return {
        "train": records[:n_train],
        "valid": records[n_train:n_train + n_valid],
        "test": records[n_train + n_valid:],
    }


def gen_synthetic(spec: SyntheticSpec, out_dir: Optional[Path] = None) -> Dict[str, Path]:
    """Write the three JSONL splits; returns their paths."""
    storage = CorpusStorage(data_dir=out_dir)
    splits = generate_corpus(spec)
    paths = {name: storage.save_split(name, records) for name, records in splits.items()}
    vocab = {t for records in splits.values() for r in records for t in r.text}
    logger.info(f"Synthetic corpus: {spec.size} records, {len(vocab)} word types, "
                f"duplicate_value_rate={spec.duplicate_value_rate}, seed={spec.seed}")
    return paths
