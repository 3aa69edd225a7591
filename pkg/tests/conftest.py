"""Shared fixtures: random potential tables, tiny models and a tiny corpus."""
import os
import sys

import pytest
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from data.corpus import CorpusRecord
from data.synthetic import SyntheticSpec, generate_corpus
from pcgen.config import AppSettings, DecodeParams, ModelParams, PenaltyConfig, TrainConfig
from pcgen.constraints.alignment import AlignmentSet, Table
from pcgen.inference.structures import PotentialTable
from pcgen.ml.model import PosteriorControlModel
from pcgen.ml.trainer import build_vocabulary, field_inventory


def random_table(T: int, L: int, C: int, seed: int = 0, scale: float = 1.0) -> PotentialTable:
    g = torch.Generator().manual_seed(seed)
    return PotentialTable(
        torch.randn(T, L, C, generator=g, dtype=torch.float64) * scale,
        torch.randn(C + 1, C, generator=g, dtype=torch.float64) * scale,
        torch.randn(L, generator=g, dtype=torch.float64) * scale,
    )


def tiny_settings(**sections) -> AppSettings:
    model = dict(embedding_size=8, hidden_size=8, table_embedding_size=4, max_position=4,
                 label_embedding_size=8, max_seg_len=4)
    model.update(sections.get("model", {}))
    train = dict(k_samples=3, max_epochs=2, batch_size=2, seed=3)
    train.update(sections.get("train", {}))
    return AppSettings(
        model=ModelParams(**model),
        penalty=PenaltyConfig(**sections.get("penalty", {})),
        train=TrainConfig(**train),
        decode=DecodeParams(**{"beam_size": 3, "max_length": 12, **sections.get("decode", {})}),
    )


CLOWNS_TABLE = Table.from_items([
    ("name", ["Clowns"]),
    ("eatType", ["coffee", "shop"]),
    ("rating", ["1", "out", "of", "5"]),
    ("near", ["Clare", "Hall"]),
])
CLOWNS_TEXT = "Clowns is a coffee shop near Clare Hall with a 1 out of 5 rating".split()


@pytest.fixture
def clowns_record() -> CorpusRecord:
    align = AlignmentSet.from_json([[0, 1, "name"], [3, 5, "eatType"], [6, 8, "near"], [10, 14, "rating"]])
    return CorpusRecord(table=CLOWNS_TABLE, text=tuple(CLOWNS_TEXT), align=align)


@pytest.fixture(scope="session")
def tiny_corpus():
    spec = SyntheticSpec(size=20, seed=5, max_length=20)
    return generate_corpus(spec)


@pytest.fixture
def tiny_model(tiny_corpus):
    torch.manual_seed(0)
    records = tiny_corpus["train"]
    settings = tiny_settings()
    return PosteriorControlModel(build_vocabulary(records), field_inventory(records), settings)
