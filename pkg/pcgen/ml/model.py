"""Joint container: generative decoder p(y, z | x), inference network q(z | x, y) and the field/state map."""
import logging
from typing import Dict, List, Optional, Sequence

import torch
import torch.nn as nn

from pcgen.config import AppSettings
from pcgen.constraints.alignment import Table
from pcgen.constraints.penalties import DynamicMapping, FieldStateMap
from pcgen.errors import ContractError, VocabularyMismatchError
from pcgen.inference.inference_net import InferenceNetwork
from pcgen.inference.structures import LabelSet, PotentialTable
from pcgen.ml.decoder import ControlDecoder, TableContext
from pcgen.ml.vocab import Vocabulary

logger = logging.getLogger(__name__)

# learned mappings get a fixed pool of states
ONE_TO_MANY_STATES = 10


class PosteriorControlModel(nn.Module):
    def __init__(self, vocab: Vocabulary, fields: Sequence[str], settings: AppSettings):
        super().__init__()
        self.settings = settings
        self.vocab = vocab
        self.fields = tuple(fields)
        num_states = settings.model.num_states
        if num_states is None:
            num_states = ONE_TO_MANY_STATES if settings.penalty.mode == "one2many" else len(self.fields) + 2
        self.num_states = num_states
        self.sigma = FieldStateMap.default(self.fields, num_states)

        self.decoder = ControlDecoder(vocab, self.fields, num_states, settings.model)
        self.inference = InferenceNetwork(len(vocab), num_states, settings.model, pad_id=vocab.pad_id)
        self.mapping: Optional[DynamicMapping] = None
        if settings.penalty.mode == "one2many":
            self.mapping = DynamicMapping(self.fields, num_states)

    def generative_parameters(self) -> List[nn.Parameter]:
        return list(self.decoder.parameters())

    def variational_parameters(self) -> List[nn.Parameter]:
        params = list(self.inference.parameters())
        if self.mapping is not None:
            params += list(self.mapping.parameters())
        return params

    def tokens(self, words: Sequence[str]) -> torch.Tensor:
        return self.vocab.tensor(words)

    def encode_table(self, table: Table) -> TableContext:
        return self.decoder.encode_table(table)

    def potentials(self, table: Table, tokens: torch.Tensor) -> PotentialTable:
        table_tokens = None
        if self.inference.use_table_features:
            table_tokens = self.decoder.table_tensors(table)[0]
        return self.inference(tokens, table_tokens)

    def evaluation_map(self) -> FieldStateMap:
        """sigma used for controllability: static, or argmax of M in one-to-many mode."""
        if self.mapping is not None:
            return self.mapping.argmax_map()
        return self.sigma

    def state_names(self) -> List[str]:
        return self.evaluation_map().state_names()

    def check_fields(self, tables: Sequence[Table]) -> None:
        unknown = sorted({name for t in tables for name in t.names} - set(self.fields))
        if unknown:
            raise VocabularyMismatchError(f"fields not in the checkpoint inventory: {unknown}")

    @property
    def labels(self) -> LabelSet:
        return LabelSet(self.num_states)

    def check_plan(self, states: Sequence[int]) -> None:
        labels = self.labels
        bad = [c for c in states if int(c) not in labels]
        if bad:
            raise ContractError(f"plan uses states {sorted(set(bad))} outside [0, {self.num_states})")

    def describe(self) -> Dict[str, int]:
        count = lambda ps: sum(p.numel() for p in ps)  # noqa: E731
        return {"vocab": len(self.vocab), "fields": len(self.fields), "states": self.num_states,
                "generative_params": count(self.generative_parameters()),
                "variational_params": count(self.variational_parameters())}
