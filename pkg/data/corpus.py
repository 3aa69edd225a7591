"""JSON-lines record types: corpus records, decode outputs and state plans."""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple, TypeVar

from pcgen.constraints.alignment import AlignmentSet, Table
from pcgen.errors import ContractError, CorpusFormatError
from pcgen.inference.structures import Segmentation
from utils.logger import logger

R = TypeVar("R")


@dataclass(frozen=True)
class CorpusRecord:
    """{"table": [{"field", "value"}], "text": [...], "align": [[i, j, field]]} (align optional)."""
    table: Table
    text: Tuple[str, ...]
    align: Optional[AlignmentSet] = None

    def to_json(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"table": self.table.to_json(), "text": list(self.text)}
        if self.align is not None:
            data["align"] = self.align.to_json()
        return data

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "CorpusRecord":
        text = data["text"]
        if not isinstance(text, list) or not all(isinstance(t, str) for t in text):
            raise ValueError("'text' must be a list of strings")
        table = Table.from_json(data["table"])
        align = AlignmentSet.from_json(data["align"]) if "align" in data else None
        if align is not None:
            align.validate(len(text), table)
        return cls(table=table, text=tuple(text), align=align)


@dataclass(frozen=True)
class DecodeRecord:
    """{"tokens": [...], "states": [[i, j, c]], "score": float} (+ "truncated" when true)."""
    tokens: Tuple[str, ...]
    states: Segmentation
    score: float
    truncated: bool = False

    def to_json(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"tokens": list(self.tokens), "states": self.states.to_json(), "score": self.score}
        if self.truncated:
            data["truncated"] = True
        return data

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "DecodeRecord":
        tokens = tuple(data["tokens"])
        states = Segmentation.from_spans(data["states"])
        if tokens:
            states.validate(len(tokens))
        return cls(tokens=tokens, states=states, score=float(data["score"]),
                   truncated=bool(data.get("truncated", False)))


@dataclass(frozen=True)
class PlanRecord:
    """{"record": n, "states": [[i, j, c]]} with an optional inline "table"."""
    record: Optional[int]
    states: Segmentation
    table: Optional[Table] = None

    def to_json(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"states": self.states.to_json()}
        if self.record is not None:
            data["record"] = self.record
        if self.table is not None:
            data["table"] = self.table.to_json()
        return data

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "PlanRecord":
        states = Segmentation.from_spans(data["states"])
        states.validate(states.length)
        table = Table.from_json(data["table"]) if "table" in data else None
        record = int(data["record"]) if "record" in data else None
        if record is None and table is None:
            raise ValueError("plan needs a 'record' index or an inline 'table'")
        return cls(record=record, states=states, table=table)


def read_jsonl(path: Path, parse: Callable[[Dict[str, Any]], R]) -> List[R]:
    """Parse every non-empty line; malformed lines raise CorpusFormatError with the 1-based line number."""
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError("file not found", str(path))
    records: List[R] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(parse(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, ContractError) as e:
                raise CorpusFormatError(f"{type(e).__name__}: {e}", str(path), line_number)
    logger.debug(f"Read {len(records)} records from {path}")
    return records


def write_jsonl(path: Path, records: Iterable[Any]) -> int:
    """Atomic write of objects exposing to_json()."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = path.with_suffix(path.suffix + ".tmp")
    count = 0
    with open(temp_file, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")
            count += 1
    temp_file.replace(path)
    return count


def read_corpus(path: Path) -> List[CorpusRecord]:
    return read_jsonl(path, CorpusRecord.from_json)


def read_decodes(path: Path) -> List[DecodeRecord]:
    return read_jsonl(path, DecodeRecord.from_json)


def read_plans(path: Path) -> List[PlanRecord]:
    return read_jsonl(path, PlanRecord.from_json)
