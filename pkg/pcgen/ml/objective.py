"""
Training objectives.

PRLBO(theta, phi) = E_q[log p(y | x, z)] + a * (E_q[log p(z | x)] + H[q]) - lambda R_q

with the anneal coefficient a warming up the prior-over-z and entropy terms.
The reconstruction and prior terms are estimated from K exact samples of q;
their gradient reaches phi through the score function with a mean baseline,

    grad_phi ~ 1/(K-1) sum_k (r_k - mean_j r_j) grad_phi log q(z_k),

which is unbiased. H[q] comes from the expectation-semiring chart and R_q
from exact span marginals, both differentiated directly.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from pcgen.config import AppSettings
from pcgen.constraints.alignment import AlignmentSet, Table
from pcgen.constraints.penalties import FieldStateMap, PenaltyBreakdown, total_penalty
from pcgen.errors import ContractError, NonFiniteLossError
from pcgen.inference.semicrf import (
    entropy,
    log_partition,
    run_chart,
    sample_segmentations,
    score_segmentation,
    span_marginals,
    token_marginals,
)
from pcgen.inference.structures import PotentialTable, Segmentation

logger = logging.getLogger(__name__)


def anneal_coefficient(step: int, horizon: int) -> float:
    if horizon <= 0:
        raise ContractError(f"anneal horizon must be positive, got {horizon}")
    return min(max(step, 0) / horizon, 1.0)


def centered_rewards(rewards: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """(r_k - mean r, mean r). Centering is computed from pairwise differences so equal rewards give exact zeros."""
    centered = (rewards.unsqueeze(1) - rewards.unsqueeze(0)).mean(dim=1)
    return centered, rewards.mean()


def score_function_surrogate(log_q: torch.Tensor, rewards: torch.Tensor) -> torch.Tensor:
    """Surrogate whose gradient is the mean-baseline REINFORCE estimate of grad E_q[r]."""
    K = log_q.shape[0]
    if K < 2:
        raise ContractError("the mean baseline needs at least two samples")
    centered, _ = centered_rewards(rewards.detach())
    return (centered * log_q).sum() / (K - 1)


def segmentation_logprob(pt: PotentialTable, segs: Sequence[Segmentation],
                         log_z: Optional[torch.Tensor] = None) -> torch.Tensor:
    """log q(z_k) for each segmentation, differentiable in the potentials."""
    if log_z is None:
        log_z = log_partition(pt)
    return torch.stack([score_segmentation(z, pt) for z in segs]) - log_z


@dataclass
class ObjectiveTerms:
    loss: torch.Tensor                  # minimized; gradient carries the REINFORCE surrogate
    prlbo: float
    elbo: float
    reconstruction: float
    prior: float
    entropy: float
    penalty: float
    anneal: float
    penalty_terms: Dict[str, float] = field(default_factory=dict)
    baseline: float = 0.0

    def log_row(self) -> Dict[str, float]:
        return {"prlbo": self.prlbo, "elbo": self.elbo, "reconstruction": self.reconstruction,
                "prior": self.prior, "entropy": self.entropy, "penalty": self.penalty,
                "penalty_terms": dict(self.penalty_terms), "anneal": self.anneal}


def _check(term: str, value: torch.Tensor) -> None:
    if not bool(torch.isfinite(value.detach()).all()):
        raise NonFiniteLossError(term, float(value.detach().sum()))


def prlbo_loss(model, table: Table, tokens: torch.Tensor, alignments: AlignmentSet, settings: AppSettings,
               anneal: float = 1.0, lam: Optional[float] = None, rng=None) -> ObjectiveTerms:
    """Negative PRLBO of one (x, y) pair for PC0 / PClambda training.

    `lam` defaults to the settings (0 in PC0 mode).
    """
    lam = settings.effective_lambda if lam is None else lam
    K = settings.train.k_samples
    ctx = model.encode_table(table)
    pt = model.potentials(table, tokens)

    chart, partition = run_chart(pt, "log")
    log_z = partition[0]
    segs = sample_segmentations(pt, K, rng, chart=chart)
    states = torch.tensor([z.to_states() for z in segs], dtype=torch.long)
    token_lp, state_lp = model.decoder.score(tokens, states, ctx)
    _check("reconstruction", token_lp)
    _check("prior", state_lp)

    rewards = (token_lp + anneal * state_lp).detach()
    log_q = segmentation_logprob(pt, segs, log_z)
    surrogate = score_function_surrogate(log_q, rewards)
    _check("score_function", surrogate)

    h = entropy(pt)
    _check("entropy", h)

    penalty = PenaltyBreakdown(total=h.new_zeros(()))
    if lam > 0:
        span_q = span_marginals(pt, log_z)
        q_tok = token_marginals(pt, span_q) if settings.penalty.mode == "one2many" else None
        penalty = total_penalty(settings.penalty, span_q, alignments, table, sigma=model.sigma,
                                mapping=model.mapping, q_tok=q_tok, lam=lam)
        for name, value in penalty.terms.items():
            _check(f"penalty.{name}", value)

    generative = (token_lp + anneal * state_lp).mean()
    objective = generative + surrogate + anneal * h - penalty.total
    elbo = float(token_lp.detach().mean() + anneal * (state_lp.detach().mean() + h.detach()))
    return ObjectiveTerms(
        loss=-objective,
        prlbo=elbo - float(penalty.total.detach()),
        elbo=elbo,
        reconstruction=float(token_lp.detach().mean()),
        prior=float(state_lp.detach().mean()),
        entropy=float(h.detach()),
        penalty=float(penalty.total.detach()),
        anneal=anneal,
        penalty_terms=penalty.as_floats(),
        baseline=float(rewards.mean()),
    )


def heuristic_states(alignments: AlignmentSet, sigma: FieldStateMap, length: int,
                     generic_state: Optional[int] = None) -> List[int]:
    """Fully observed states for PC-infinity: sigma(f) on aligned tokens, a generic state elsewhere."""
    if generic_state is None:
        generic_state = sigma.other_state if sigma.other_state is not None else sigma.num_states - 1
    states = [generic_state] * length
    for a in alignments:
        c = sigma.state_of(a.field)
        for t in range(a.start, min(a.end, length)):
            states[t] = c
    return states


def pcinf_loss(model, table: Table, tokens: torch.Tensor, alignments: AlignmentSet) -> ObjectiveTerms:
    """Supervised -log p(y, z* | x) on heuristic states; no inference network, no sampling."""
    ctx = model.encode_table(table)
    states = torch.tensor(heuristic_states(alignments, model.sigma, tokens.numel()), dtype=torch.long)
    token_lp, state_lp = model.decoder.score(tokens, states, ctx)
    joint = (token_lp + state_lp)[0]
    _check("joint", joint)
    value = float(joint.detach())
    return ObjectiveTerms(loss=-joint, prlbo=value, elbo=value, reconstruction=float(token_lp.detach()[0]),
                          prior=float(state_lp.detach()[0]), entropy=0.0, penalty=0.0, anneal=1.0)


def step_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-example sampler stream, independent of batch composition."""
    return np.random.default_rng([seed, epoch, index])