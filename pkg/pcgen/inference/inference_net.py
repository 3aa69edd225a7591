"""
Amortized inference network: (x, y) -> PotentialTable of q(z | x, y).

The sentence is read by a 1-layer BiLSTM. A span [i, i+d) is represented by
endpoint differences of both directions,

    fwd(i, d) = f[i+d] - f[i]        f[0] = 0, f[t+1] = state after token t
    bwd(i, d) = b[i]   - b[i+d]      b[T] = 0, b[t]   = state before token t (right to left)

so the feature of a span only depends on the encoder states at its boundaries.
Emission scores are projected span features dotted with label embeddings;
transitions are label-embedding dot products, with row 0 the start symbol.
"""
import logging
from typing import Optional

import torch
import torch.nn as nn

from pcgen.config import ModelParams
from pcgen.errors import ContractError
from pcgen.inference.structures import PotentialTable, valid_span_mask

logger = logging.getLogger(__name__)


class InferenceNetwork(nn.Module):
    """Variational parameters phi."""

    def __init__(self, vocab_size: int, num_states: int, params: ModelParams, pad_id: int = 0):
        super().__init__()
        self.num_states = num_states
        self.max_seg_len = params.max_seg_len
        self.use_table_features = params.infnet_table_features
        hidden = params.hidden_size

        self.embedding = nn.Embedding(vocab_size, params.embedding_size, padding_idx=pad_id)
        self.encoder = nn.LSTM(params.embedding_size, hidden, num_layers=1,
                               batch_first=True, bidirectional=True)
        feature_size = 2 * hidden + (params.embedding_size if self.use_table_features else 0)
        self.feature_size = feature_size
        self.span_proj = nn.Linear(feature_size, params.label_embedding_size, bias=False)
        # row 0: start symbol, row c + 1: state c
        self.label_embeddings = nn.Parameter(torch.empty(num_states + 1, params.label_embedding_size))
        nn.init.normal_(self.label_embeddings, std=0.1)

    def encode_pair(self, tokens: torch.Tensor, table_tokens: Optional[torch.Tensor] = None) -> torch.Tensor:
        """SpanFeatures [T, L, feature_size] for one sentence (token ids [T])."""
        if tokens.dim() != 1 or tokens.numel() == 0:
            raise ContractError("inference network needs a non-empty sentence")
        T, L = tokens.numel(), self.max_seg_len
        emb = self.embedding(tokens).unsqueeze(0)
        out, _ = self.encoder(emb)
        out = out.squeeze(0)                                    # [T, 2H]
        H = out.shape[1] // 2
        zeros = out.new_zeros(1, H)
        fwd = torch.cat([zeros, out[:, :H]], dim=0)             # [T+1, H]
        bwd = torch.cat([out[:, H:], zeros], dim=0)             # [T+1, H]

        starts = torch.arange(T).unsqueeze(1)                   # [T, 1]
        ends = starts + torch.arange(1, L + 1).unsqueeze(0)     # [T, L]
        valid = valid_span_mask(T, L)
        ends = ends.clamp(max=T)
        features = torch.cat([fwd[ends] - fwd[starts].expand(T, L, H),
                              bwd[starts].expand(T, L, H) - bwd[ends]], dim=-1)

        if self.use_table_features:
            if table_tokens is None or table_tokens.numel() == 0:
                raise ContractError("table features enabled but no table tokens given")
            pooled = self.embedding(table_tokens).mean(dim=0)
            features = torch.cat([features, pooled.expand(T, L, pooled.shape[0])], dim=-1)

        # spans running past the sentence end are never read by the chart
        return features * valid.unsqueeze(-1).to(features.dtype)

    def build_potentials(self, features: torch.Tensor) -> PotentialTable:
        T, L, _ = features.shape
        labels = self.label_embeddings
        log_emission = self.span_proj(features) @ labels[1:].t()       # [T, L, C]
        log_transition = labels @ labels[1:].t()                        # [C+1, C]
        log_length = features.new_zeros(L)
        return PotentialTable(log_emission, log_transition, log_length)

    def forward(self, tokens: torch.Tensor, table_tokens: Optional[torch.Tensor] = None) -> PotentialTable:
        return self.build_potentials(self.encode_pair(tokens, table_tokens))
