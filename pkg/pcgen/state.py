"""Training state and the per-step JSON-lines log."""
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_prlbo: float
    lr_generative: float
    lr_inference: float
    improved: bool
    finished_at: str = field(default_factory=lambda: datetime.now().isoformat())


@dataclass
class TrainState:
    """Resumable progress of one run."""
    epoch: int = 0
    step: int = 0
    anneal: float = 0.0
    best_valid_prlbo: float = -math.inf
    best_epoch: int = 0
    epochs_without_improvement: int = 0
    lr_generative: float = 0.0
    lr_inference: float = 0.0
    aborted_steps: int = 0
    stopped_early: bool = False
    history: List[EpochRecord] = field(default_factory=list)

    def update_anneal(self, value: float) -> None:
        """The coefficient never decreases, also across resumes."""
        self.anneal = min(max(self.anneal, value), 1.0)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        # JSON has no -inf
        if math.isinf(self.best_valid_prlbo):
            data["best_valid_prlbo"] = None
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainState":
        data = dict(data)
        history = [EpochRecord(**h) for h in data.pop("history", [])]
        if data.get("best_valid_prlbo") is None:
            data["best_valid_prlbo"] = -math.inf
        return cls(history=history, **data)

    def save(self, path: Path) -> None:
        """Atomic write (tmp file + replace)."""
        path = Path(path)
        temp_file = path.with_suffix(".tmp")
        with open(temp_file, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)
        temp_file.replace(path)
        logger.debug(f"[state] Train state saved to {path} (epoch {self.epoch}, step {self.step})")


class TrainLog:
    """Append-only JSON lines, one object per optimizer step."""

    def __init__(self, path: Path, truncate: bool = True):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if truncate and self.path.exists():
            self.path.unlink()
        self.last: Optional[Dict[str, Any]] = None

    def write(self, row: Dict[str, Any]) -> None:
        self.last = row
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")

    def read(self) -> List[Dict[str, Any]]:
        if not self.path.exists():
            return []
        with open(self.path, "r", encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]
