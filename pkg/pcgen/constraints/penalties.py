"""
Posterior penalties R_q computed from exact span marginals q[i, d-1, c].

One-to-one (static map sigma: field -> state):
    inclusion  sum over aligned (i, j, f) of 1 - q(z_ij = sigma(f))
    exclusion  sum over active f and chart spans not aligned to f of q(z_ij = sigma(f))
    coverage   sum over f of |expected uses of sigma(f) - 1(f in x)|

One-to-many (learned sigma(c | f; M) = softmax(M[f])):
    sparsity   sum over f of H[sigma(. | f)]
    fit        sum over aligned (i, j, f) of H[sigma(. | f), q(z_ij = .)]
    diversity  log|C| - H[p_agg],  p_agg(c) ~ sum_t q_tok[t, c]

All terms are differentiable in the marginals; coverage uses |.| whose
subgradient at 0 is 0.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from pcgen.config import PenaltyConfig
from pcgen.constraints.alignment import AlignmentSet, Table
from pcgen.errors import ContractError

logger = logging.getLogger(__name__)

ONE_TO_ONE_TERMS = ("inclusion", "exclusion", "coverage")
ONE_TO_MANY_TERMS = ("sparsity", "fit", "diversity")


@dataclass(frozen=True)
class FieldStateMap:
    """sigma: F -> C over the global field inventory.

    `other_state` may be shared by several fields; every other state is owned by
    at most one field unless `injective` is False (argmax maps of a learned M).
    """
    fields: Tuple[str, ...]
    states: Tuple[int, ...]
    num_states: int
    other_state: Optional[int] = None
    injective: bool = True

    def __post_init__(self):
        if len(self.fields) != len(self.states):
            raise ContractError("field/state map must list one state per field")
        if len(set(self.fields)) != len(self.fields):
            raise ContractError(f"duplicate fields in map: {self.fields}")
        for c in self.states:
            if not 0 <= c < self.num_states:
                raise ContractError(f"state {c} outside [0, {self.num_states})")
        if self.injective:
            owned = [c for c in self.states if c != self.other_state]
            if len(set(owned)) != len(owned):
                raise ContractError("field/state map must be injective up to the shared other state")

    @classmethod
    def default(cls, fields: Sequence[str], num_states: Optional[int] = None) -> "FieldStateMap":
        """Field k -> state k, shared 'other' state |F|, free state |F| + 1.

        With fewer states the trailing fields share the last state as 'other'.
        """
        fields = tuple(fields)
        if num_states is None:
            num_states = len(fields) + 2
        if num_states >= len(fields) + 1:
            other = len(fields)
            states = tuple(range(len(fields)))
        else:
            other = num_states - 1
            states = tuple(min(k, other) for k in range(len(fields)))
            logger.warning(f"[constraints] {len(fields)} fields for {num_states} states: "
                           f"{len(fields) - other} fields share the other state")
        return cls(fields, states, num_states, other)

    def state_of(self, name: str) -> int:
        try:
            return self.states[self.fields.index(name)]
        except ValueError:
            raise ContractError(f"field '{name}' not in the field inventory")

    def has_own_state(self, name: str) -> bool:
        return name in self.fields and self.state_of(name) != self.other_state

    def fields_of(self, state: int) -> List[str]:
        return [f for f, c in zip(self.fields, self.states) if c == state]

    def state_names(self) -> List[str]:
        names = []
        for c in range(self.num_states):
            owners = [f for f in self.fields_of(c) if c != self.other_state]
            if owners:
                names.append("/".join(owners))
            elif c == self.other_state:
                names.append("other")
            else:
                names.append(f"free{c}")
        return names

    def to_json(self) -> Dict[str, Any]:
        return {"fields": list(self.fields), "states": list(self.states), "num_states": self.num_states,
                "other_state": self.other_state, "injective": self.injective}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "FieldStateMap":
        return cls(tuple(data["fields"]), tuple(int(c) for c in data["states"]), int(data["num_states"]),
                   data.get("other_state"), data.get("injective", True))


class DynamicMapping(nn.Module):
    """Learned soft map sigma(c | f; M) = softmax over the row M[f]."""

    def __init__(self, fields: Sequence[str], num_states: int, init_std: float = 0.01):
        super().__init__()
        self.fields = tuple(fields)
        self.num_states = num_states
        self.M = nn.Parameter(torch.randn(len(self.fields), num_states) * init_std)

    def log_probs(self) -> torch.Tensor:
        return torch.log_softmax(self.M, dim=-1)

    def probs(self) -> torch.Tensor:
        return torch.softmax(self.M, dim=-1)

    def row(self, name: str) -> int:
        try:
            return self.fields.index(name)
        except ValueError:
            raise ContractError(f"field '{name}' not in the field inventory")

    def argmax_map(self) -> FieldStateMap:
        """Hard map sigma(f) = argmax_c sigma(c | f), used for evaluation."""
        states = tuple(int(c) for c in torch.argmax(self.M.detach(), dim=-1))
        return FieldStateMap(self.fields, states, self.num_states, other_state=None, injective=False)


def _span_mask(T: int, L: int, spans: Sequence[Tuple[int, int]]) -> torch.Tensor:
    mask = torch.zeros(T, L, dtype=torch.bool)
    for s, e in spans:
        if e - s <= L:
            mask[s, e - s - 1] = True
    return mask


def _aligned_pieces(alignments: AlignmentSet, max_len: int, split_long: bool):
    """(alignment, pieces) with pieces == [] when a long alignment is not split."""
    conflicts = 0
    out = []
    for a, pieces in alignments.split(max_len):
        if a.length > max_len:
            conflicts += 1
            if not split_long:
                pieces = []
        out.append((a, pieces))
    if conflicts:
        logger.warning(f"[constraints] {conflicts} alignment(s) longer than L={max_len} "
                       f"({'split into sub-spans' if split_long else 'counted with full weight'})")
    return out


def inclusion_penalty(span_q: torch.Tensor, alignments: AlignmentSet, sigma: FieldStateMap,
                      split_long: bool = True) -> torch.Tensor:
    T, L, _ = span_q.shape
    total = span_q.new_zeros(())
    for a, pieces in _aligned_pieces(alignments, L, split_long):
        if not pieces:
            total = total + 1.0
            continue
        c = sigma.state_of(a.field)
        for s, e in pieces:
            total = total + (1.0 - span_q[s, e - s - 1, c])
    return total


def exclusion_penalty(span_q: torch.Tensor, alignments: AlignmentSet, sigma: FieldStateMap,
                      table: Table) -> torch.Tensor:
    T, L, _ = span_q.shape
    total = span_q.new_zeros(())
    for name in table.names:
        if not sigma.has_own_state(name):
            continue
        c = sigma.state_of(name)
        # aligned spans of f (sub-spans of long alignments) are excluded from the sum
        pieces = [p for a, ps in alignments.split(L) if a.field == name for p in ps]
        keep = ~_span_mask(T, L, pieces)
        total = total + (span_q[:, :, c] * keep.to(span_q.dtype)).sum()
    return total


def coverage_penalty(span_q: torch.Tensor, sigma: FieldStateMap, table: Table) -> torch.Tensor:
    total = span_q.new_zeros(())
    for name in sigma.fields:
        if not sigma.has_own_state(name):
            continue
        usage = span_q[:, :, sigma.state_of(name)].sum()
        target = 1.0 if name in table else 0.0
        total = total + torch.abs(usage - target)
    return total


def sparsity_penalty(mapping: DynamicMapping) -> torch.Tensor:
    log_p = mapping.log_probs()
    return -(log_p.exp() * log_p).sum()


def fit_penalty(span_q: torch.Tensor, alignments: AlignmentSet, mapping: DynamicMapping,
                log_floor: float = 1e-12, split_long: bool = True) -> torch.Tensor:
    """Cross-entropy of each aligned span's posterior against sigma(. | f)."""
    T, L, _ = span_q.shape
    sigma = mapping.probs()
    total = span_q.new_zeros(())
    clamped = 0
    for a, pieces in _aligned_pieces(alignments, L, split_long):
        if a.field not in mapping.fields:
            continue
        row = sigma[mapping.row(a.field)].to(span_q.dtype)
        for s, e in pieces:
            q = span_q[s, e - s - 1]
            clamped += int(((q.detach() < log_floor) & (row.detach() > 0)).sum())
            total = total - (row * torch.log(q.clamp_min(log_floor))).sum()
    if clamped:
        logger.warning(f"[constraints] fit penalty clamped {clamped} zero-probability log term(s) at {log_floor}")
    return total


def diversity_penalty(q_tok: torch.Tensor) -> torch.Tensor:
    T, C = q_tok.shape
    p_agg = q_tok.sum(dim=0)
    p_agg = p_agg / p_agg.sum()
    positive = p_agg > 0
    safe = torch.where(positive, p_agg, torch.ones_like(p_agg))
    entropy = -(torch.where(positive, p_agg * torch.log(safe), torch.zeros_like(p_agg))).sum()
    return math.log(C) - entropy


@dataclass
class PenaltyBreakdown:
    total: torch.Tensor
    terms: Dict[str, torch.Tensor] = field(default_factory=dict)

    def as_floats(self) -> Dict[str, float]:
        return {name: float(value.detach()) for name, value in self.terms.items()}


def total_penalty(cfg: PenaltyConfig, span_q: torch.Tensor, alignments: AlignmentSet, table: Table,
                  sigma: Optional[FieldStateMap] = None, mapping: Optional[DynamicMapping] = None,
                  q_tok: Optional[torch.Tensor] = None, lam: Optional[float] = None) -> PenaltyBreakdown:
    """lambda * weighted sum of the three terms of the configured mode."""
    lam = cfg.lam if lam is None else lam
    terms: Dict[str, torch.Tensor] = {}
    if cfg.mode == "one2one":
        if sigma is None:
            raise ContractError("one-to-one penalties need a static field/state map")
        if cfg.weight("inclusion"):
            terms["inclusion"] = inclusion_penalty(span_q, alignments, sigma, cfg.split_long_alignments)
        if cfg.weight("exclusion"):
            terms["exclusion"] = exclusion_penalty(span_q, alignments, sigma, table)
        if cfg.weight("coverage"):
            terms["coverage"] = coverage_penalty(span_q, sigma, table)
    else:
        if mapping is None:
            raise ContractError("one-to-many penalties need a dynamic mapping")
        if cfg.weight("sparsity"):
            terms["sparsity"] = sparsity_penalty(mapping)
        if cfg.weight("fit"):
            terms["fit"] = fit_penalty(span_q, alignments, mapping, cfg.log_floor, cfg.split_long_alignments)
        if cfg.weight("diversity"):
            if q_tok is None:
                raise ContractError("diversity penalty needs token marginals")
            terms["diversity"] = diversity_penalty(q_tok)

    weighted = span_q.new_zeros(())
    for name, value in terms.items():
        weighted = weighted + cfg.weight(name) * value
    return PenaltyBreakdown(total=lam * weighted, terms=terms)
