"""
Autoregressive generative model p(y, z | x).

At every step t the LSTM reads (y_{t-1}, z_{t-1}) and yields h_t, then

    p(z_t | .)      = softmax(W_0 h_t + b_0)
    p_gen(y_t | .)  = softmax(W_1 [h_t, g(z_t), a_t] + b_1)
    p(y_t | .)      = (1 - gate) p_gen + gate p_copy

where a_t attends over table tokens with a per-state projection of h_t and
p_copy scatters the attention weights onto the table words. <pad> and <bos>
are never generated. Training sentences end in <eos>; the <eos> step carries
the state of the last span.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from pcgen.config import ModelParams
from pcgen.constraints.alignment import Table
from pcgen.errors import ContractError
from pcgen.inference.semicrf import sample_segmentations, state_sequence_logprob
from pcgen.inference.structures import PotentialTable, Segmentation
from pcgen.ml.vocab import Vocabulary

logger = logging.getLogger(__name__)

Hidden = Tuple[torch.Tensor, torch.Tensor]


@dataclass
class TableContext:
    memory: torch.Tensor        # [N, H], one row per table token
    word_ids: torch.Tensor      # [N]
    pooled: torch.Tensor        # [H]


class TableEncoder(nn.Module):
    """Flat encoder: emb(word) . emb(field) . emb(left index) . emb(right index) -> tanh projection."""

    def __init__(self, word_embedding: nn.Embedding, num_fields: int, params: ModelParams):
        super().__init__()
        P = params.table_embedding_size
        self.max_position = params.max_position
        self.word_embedding = word_embedding
        # last row: field unseen at training time
        self.field_embedding = nn.Embedding(num_fields + 1, P)
        self.left_position = nn.Embedding(params.max_position + 1, P)
        self.right_position = nn.Embedding(params.max_position + 1, P)
        self.proj = nn.Linear(word_embedding.embedding_dim + 3 * P, params.hidden_size)

    def forward(self, word_ids, field_ids, left, right) -> TableContext:
        left = left.clamp(max=self.max_position)
        right = right.clamp(max=self.max_position)
        emb = torch.cat([self.word_embedding(word_ids), self.field_embedding(field_ids),
                         self.left_position(left), self.right_position(right)], dim=-1)
        memory = torch.tanh(self.proj(emb))
        return TableContext(memory=memory, word_ids=word_ids, pooled=memory.mean(dim=0))


class ControlDecoder(nn.Module):
    """Generative parameters theta."""

    def __init__(self, vocab: Vocabulary, fields: Sequence[str], num_states: int, params: ModelParams):
        super().__init__()
        self.vocab = vocab
        self.fields = tuple(fields)
        self.num_states = num_states
        self.use_copy = params.use_copy
        V, E, H, S = len(vocab), params.embedding_size, params.hidden_size, params.label_embedding_size

        self.token_embedding = nn.Embedding(V, E, padding_idx=vocab.pad_id)
        # g(c) for c < C, row C is the start state z_0
        self.state_embedding = nn.Embedding(num_states + 1, S)
        table_words = self.token_embedding if params.share_embeddings else nn.Embedding(V, E, padding_idx=vocab.pad_id)
        self.table_encoder = TableEncoder(table_words, len(self.fields), params)
        self.init_hidden = nn.Linear(H, H)
        self.cell = nn.LSTMCell(E + S, H)
        self.state_head = nn.Linear(H, num_states)
        self.attention = nn.Parameter(torch.empty(num_states, H, H))
        for c in range(num_states):
            nn.init.xavier_uniform_(self.attention.data[c])
        self.token_head = nn.Linear(2 * H + S, V)
        self.copy_gate = nn.Linear(2 * H + S, 1)

        blocked = torch.zeros(V, dtype=torch.bool)
        blocked[vocab.pad_id] = True
        blocked[vocab.bos_id] = True
        self.register_buffer("blocked", blocked, persistent=False)

    # table

    def table_tensors(self, table: Table) -> Tuple[torch.Tensor, ...]:
        words, fields, left, right = [], [], [], []
        unseen = len(self.fields)
        for name, word, l, r in table.token_rows():
            words.append(self.vocab.stoi.get(word, self.vocab.unk_id))
            fields.append(self.fields.index(name) if name in self.fields else unseen)
            left.append(l)
            right.append(r)
        as_long = lambda v: torch.tensor(v, dtype=torch.long)  # noqa: E731
        return as_long(words), as_long(fields), as_long(left), as_long(right)

    def encode_table(self, table: Table) -> TableContext:
        if len(table) == 0:
            raise ContractError("cannot encode an empty table")
        return self.table_encoder(*self.table_tensors(table))

    # one step

    def initial_hidden(self, ctx: TableContext, batch: int) -> Hidden:
        h = torch.tanh(self.init_hidden(ctx.pooled)).expand(batch, -1).contiguous()
        return h, torch.zeros_like(h)

    def step(self, hidden: Hidden, y_prev: torch.Tensor, z_prev: torch.Tensor,
             ctx: TableContext) -> Tuple[Hidden, torch.Tensor]:
        """Advance one position; returns the new state and log p(z_t | .) [B, C]."""
        inp = torch.cat([self.token_embedding(y_prev), self.state_embedding(z_prev)], dim=-1)
        hidden = self.cell(inp, hidden)
        return hidden, torch.log_softmax(self.state_head(hidden[0]), dim=-1)

    def token_probs(self, h: torch.Tensor, z: torch.Tensor, ctx: TableContext,
                    copy_gate_override: Optional[float] = None) -> torch.Tensor:
        """p(y_t | ., z_t) [B, V] for states z [B]."""
        query = torch.bmm(self.attention[z], h.unsqueeze(-1)).squeeze(-1)         # [B, H]
        alpha = torch.softmax(query @ ctx.memory.t(), dim=-1)                        # [B, N]
        attended = alpha @ ctx.memory
        features = torch.cat([h, self.state_embedding(z), attended], dim=-1)

        logits = self.token_head(features).masked_fill(self.blocked, float("-inf"))
        p_gen = torch.softmax(logits, dim=-1)
        if not self.use_copy and copy_gate_override is None:
            return p_gen
        p_copy = torch.zeros_like(p_gen).scatter_add(1, ctx.word_ids.expand(h.shape[0], -1), alpha)
        if copy_gate_override is not None:
            gate = torch.full((h.shape[0], 1), float(copy_gate_override), dtype=p_gen.dtype)
        else:
            gate = torch.sigmoid(self.copy_gate(features))
        return (1.0 - gate) * p_gen + gate * p_copy

    # scoring

    def score(self, tokens: torch.Tensor, states: torch.Tensor, ctx: TableContext, add_eos: bool = True,
              copy_gate_override: Optional[float] = None,
              eos_state: bool = True) -> Tuple[torch.Tensor, torch.Tensor]:
        """(sum_t log p(y_t | .), sum_t log p(z_t | .)) per state sequence; states [B, T].

        With `eos_state=False` the state sum stops at z_T: the <eos> step only
        contributes its token term.
        """
        if states.dim() == 1:
            states = states.unsqueeze(0)
        if states.shape[1] != tokens.numel():
            raise ContractError(f"{states.shape[1]} states for {tokens.numel()} tokens")
        if tokens.numel() == 0 and not add_eos:
            raise ContractError("nothing to score")
        B = states.shape[0]
        if add_eos:
            tokens = torch.cat([tokens, torch.tensor([self.vocab.eos_id], dtype=torch.long)])
            last = states[:, -1:] if states.shape[1] else torch.zeros(B, 1, dtype=torch.long)
            states = torch.cat([states, last], dim=1)

        hidden = self.initial_hidden(ctx, B)
        y_prev = torch.full((B,), self.vocab.bos_id, dtype=torch.long)
        z_prev = torch.full((B,), self.num_states, dtype=torch.long)
        token_lp = ctx.memory.new_zeros(B)
        state_lp = ctx.memory.new_zeros(B)
        scored_states = tokens.numel() - (1 if add_eos and not eos_state else 0)
        for t in range(tokens.numel()):
            z_t = states[:, t]
            y_t = tokens[t].expand(B)
            hidden, log_pz = self.step(hidden, y_prev, z_prev, ctx)
            if t < scored_states:
                state_lp = state_lp + log_pz.gather(1, z_t.unsqueeze(1)).squeeze(1)
            p_y = self.token_probs(hidden[0], z_t, ctx, copy_gate_override).gather(1, y_t.unsqueeze(1)).squeeze(1)
            token_lp = token_lp + torch.log(p_y)
            y_prev, z_prev = y_t, z_t
        return token_lp, state_lp

    def joint_logprob(self, tokens: torch.Tensor, states: torch.Tensor, ctx: TableContext,
                      add_eos: bool = True) -> torch.Tensor:
        """log p(y, z | x); scalar for states [T], vector for states [B, T]."""
        token_lp, state_lp = self.score(tokens, states, ctx, add_eos=add_eos)
        joint = token_lp + state_lp
        return joint[0] if states.dim() == 1 else joint


@dataclass
class DecodeResult:
    tokens: List[str]
    token_ids: List[int]
    states: List[int]           # per generated token, <eos> excluded
    score: float                # logprob / steps ** alpha
    logprob: float
    truncated: bool = False

    @property
    def segmentation(self) -> Segmentation:
        return Segmentation.from_states(self.states)


def _result(decoder: ControlDecoder, token_ids: List[int], states: List[int], logprob: float,
            alpha: float, truncated: bool) -> DecodeResult:
    steps = max(len(token_ids), 1)
    eos = decoder.vocab.eos_id
    if token_ids and token_ids[-1] == eos:
        token_ids, states = token_ids[:-1], states[:-1]
    return DecodeResult(tokens=decoder.vocab.decode(token_ids), token_ids=list(token_ids), states=list(states),
                        score=logprob / steps ** alpha, logprob=logprob, truncated=truncated)


def _step_table(decoder: ControlDecoder, hidden: Hidden, y_prev, z_prev, ctx) -> Tuple[Hidden, torch.Tensor]:
    """Joint log p(z_t = c, y_t = w | .) for every beam: [B, C, V]."""
    C = decoder.num_states
    hidden, state_lp = decoder.step(hidden, y_prev, z_prev, ctx)
    B = state_lp.shape[0]
    h = hidden[0].repeat_interleave(C, dim=0)
    z = torch.arange(C).repeat(B)
    token_lp = torch.log(decoder.token_probs(h, z, ctx)).view(B, C, -1)
    return hidden, state_lp.unsqueeze(-1) + token_lp


def greedy_decode(decoder: ControlDecoder, ctx: TableContext, max_length: int,
                  length_norm_alpha: float = 1.0) -> DecodeResult:
    """Best (state, token) pair at every step until <eos>."""
    V = len(decoder.vocab)
    hidden = decoder.initial_hidden(ctx, 1)
    y_prev = torch.tensor([decoder.vocab.bos_id])
    z_prev = torch.tensor([decoder.num_states])
    token_ids, states, logprob = [], [], 0.0
    with torch.no_grad():
        for _ in range(max_length):
            hidden, joint = _step_table(decoder, hidden, y_prev, z_prev, ctx)
            best = int(torch.argmax(joint.view(-1)))
            c, w = divmod(best, V)
            logprob += float(joint.view(-1)[best])
            token_ids.append(w)
            states.append(c)
            if w == decoder.vocab.eos_id:
                return _result(decoder, token_ids, states, logprob, length_norm_alpha, False)
            y_prev, z_prev = torch.tensor([w]), torch.tensor([c])
    return _result(decoder, token_ids, states, logprob, length_norm_alpha, True)


def _search(decoder: ControlDecoder, ctx: TableContext, beam_size: int, length_norm_alpha: float,
            max_length: int, plan: Optional[Sequence[int]] = None,
            forced_length: Optional[int] = None) -> DecodeResult:
    """Beam search over the product of states and tokens.

    `plan` clamps z_t (and the <eos> step to the last planned state);
    `plan` or `forced_length` fix the number of tokens before <eos>.
    """
    if beam_size < 1:
        raise ContractError(f"beam_size must be >= 1, got {beam_size}")
    C, V = decoder.num_states, len(decoder.vocab)
    eos = decoder.vocab.eos_id
    length = len(plan) if plan is not None else forced_length
    limit = length + 1 if length is not None else max_length

    hidden = decoder.initial_hidden(ctx, 1)
    beams = [(0.0, [], [])]
    y_prev = torch.tensor([decoder.vocab.bos_id])
    z_prev = torch.tensor([C])
    finished = []

    with torch.no_grad():
        for t in range(limit):
            hidden, joint = _step_table(decoder, hidden, y_prev, z_prev, ctx)
            if length is not None:
                if t < length:
                    joint[:, :, eos] = float("-inf")
                else:
                    keep = joint[:, :, eos].clone()
                    joint.fill_(float("-inf"))
                    joint[:, :, eos] = keep
            if plan is not None:
                allowed = plan[min(t, length - 1)]
                blocked = torch.ones(C, dtype=torch.bool)
                blocked[allowed] = False
                joint[:, blocked, :] = float("-inf")

            base = torch.tensor([b[0] for b in beams], dtype=joint.dtype)
            total = (base.view(-1, 1, 1) + joint).view(-1)
            k = min(beam_size, int(torch.isfinite(total).sum()))
            if k == 0:
                break
            values, indices = torch.topk(total, k)

            survivors, rows = [], []
            for value, idx in zip(values.tolist(), indices.tolist()):
                b, rest = divmod(idx, C * V)
                c, w = divmod(rest, V)
                _, tokens, states = beams[b]
                entry = (value, tokens + [w], states + [c])
                if w == eos:
                    finished.append(entry)
                else:
                    survivors.append(entry)
                    rows.append(b)
            if len(finished) >= beam_size or not survivors:
                beams = survivors
                break
            index = torch.tensor(rows)
            hidden = (hidden[0][index], hidden[1][index])
            beams = survivors
            y_prev = torch.tensor([e[1][-1] for e in beams])
            z_prev = torch.tensor([e[2][-1] for e in beams])

    alpha = length_norm_alpha
    if finished:
        best = max(finished, key=lambda e: e[0] / max(len(e[1]), 1) ** alpha)
        return _result(decoder, best[1], best[2], best[0], alpha, False)
    if not beams:
        raise ContractError("search produced no hypothesis")
    logger.warning(f"[decode] no hypothesis reached <eos> within {limit} steps, returning best partial")
    best = max(beams, key=lambda e: e[0] / max(len(e[1]), 1) ** alpha)
    return _result(decoder, best[1], best[2], best[0], alpha, True)


def beam_search(decoder: ControlDecoder, ctx: TableContext, beam_size: int = 5, length_norm_alpha: float = 1.0,
                max_length: int = 50, forced_length: Optional[int] = None) -> DecodeResult:
    """Joint (z, y) beam search ranked by logprob / steps ** alpha."""
    return _search(decoder, ctx, beam_size, length_norm_alpha, max_length, forced_length=forced_length)


def constrained_beam_search(decoder: ControlDecoder, ctx: TableContext, plan: Segmentation,
                            beam_size: int = 5, length_norm_alpha: float = 1.0) -> DecodeResult:
    """Beam search over tokens with z clamped to the plan's per-token states."""
    states = plan.to_states()
    if not states:
        raise ContractError("empty state plan")
    plan.validate(len(states), num_labels=decoder.num_states)
    return _search(decoder, ctx, beam_size, length_norm_alpha, len(states) + 1, plan=states)


def sample(decoder: ControlDecoder, ctx: TableContext, plan: Segmentation,
           generator: Optional[torch.Generator] = None) -> List[int]:
    """Ancestral sample of len(plan) tokens under the plan's states (<eos> excluded)."""
    states = plan.to_states()
    hidden = decoder.initial_hidden(ctx, 1)
    y_prev = torch.tensor([decoder.vocab.bos_id])
    z_prev = torch.tensor([decoder.num_states])
    out = []
    with torch.no_grad():
        for c in states:
            hidden, _ = decoder.step(hidden, y_prev, z_prev, ctx)
            z = torch.tensor([c])
            p = decoder.token_probs(hidden[0], z, ctx)[0].clone()
            p[decoder.vocab.eos_id] = 0.0
            w = int(torch.multinomial(p / p.sum(), 1, generator=generator))
            out.append(w)
            y_prev, z_prev = torch.tensor([w]), z
    return out


def importance_logprob(decoder: ControlDecoder, ctx: TableContext, tokens: torch.Tensor, pt: PotentialTable,
                       num_samples: int, rng_seed=None) -> float:
    """log p(y | x) ~ log mean_k p(y, s_k | x) / q(s_k), s_k the state sequences of z_k ~ q."""
    if num_samples < 1:
        raise ContractError("importance sampling needs at least one sample")
    segs = sample_segmentations(pt, num_samples, rng_seed)
    states = torch.tensor([z.to_states() for z in segs], dtype=torch.long)
    with torch.no_grad():
        joint = decoder.joint_logprob(tokens, states, ctx).double()
    log_q = torch.stack([state_sequence_logprob(pt, s).double() for s in states.tolist()])
    return float(log_mean_exp(joint - log_q))


def log_mean_exp(values: torch.Tensor) -> torch.Tensor:
    """log of the mean of exp(values) along the first axis."""
    return torch.logsumexp(values, dim=0) - math.log(values.shape[0])


def perplexity(logprob: float, num_tokens: int) -> float:
    return float(np.exp(-logprob / max(num_tokens, 1)))
