"""On-disk layout of corpora, decodes and checkpoints."""
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from config.settings import DATA_DIR, MODELS_DIR
from data.corpus import CorpusRecord, read_corpus, write_jsonl
from pcgen.errors import CorpusFormatError
from utils.logger import logger

SPLITS = ("train", "valid", "test")


class CorpusStorage:
    """JSONL splits under `data_dir`, checkpoints under `models_dir`."""

    def __init__(self, data_dir: Optional[Path] = None, models_dir: Optional[Path] = None):
        self.data_dir = Path(data_dir or DATA_DIR)
        self.models_dir = Path(models_dir or MODELS_DIR)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.models_dir.mkdir(parents=True, exist_ok=True)
        logger.debug(f"Corpus storage at {self.data_dir}, checkpoints at {self.models_dir}")

    def split_path(self, split: str) -> Path:
        return self.data_dir / f"{split}.jsonl"

    def save_split(self, split: str, records: Sequence[CorpusRecord]) -> Path:
        path = self.split_path(split)
        count = write_jsonl(path, records)
        logger.info(f"Saved {count} records to {path}")
        return path

    def load_split(self, split: str) -> List[CorpusRecord]:
        path = self.split_path(split)
        if not path.exists():
            raise CorpusFormatError(f"split '{split}' not found", str(path))
        return read_corpus(path)

    def available_splits(self) -> List[str]:
        return [s for s in SPLITS if self.split_path(s).exists()]

    def checkpoint_path(self, run_name: str, tag: str = "best") -> Path:
        return self.models_dir / f"{run_name}_{tag}.pt"

    def summary(self) -> pd.DataFrame:
        """One row per split: records, tokens, mean length, distinct fields."""
        rows: List[Dict] = []
        for split in self.available_splits():
            records = self.load_split(split)
            lengths = [len(r.text) for r in records]
            rows.append({
                "split": split,
                "records": len(records),
                "tokens": sum(lengths),
                "mean_length": (sum(lengths) / len(lengths)) if lengths else 0.0,
                "max_length": max(lengths) if lengths else 0,
                "fields": len({n for r in records for n in r.table.names}),
            })
        return pd.DataFrame(rows)
