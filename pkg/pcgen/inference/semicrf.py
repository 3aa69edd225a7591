"""
Semi-Markov CRF q(z | x, y) over labelled segmentations.

One backward recursion (`run_chart`) serves every query; the semiring decides
what it computes:

    beta'_i(c) = (+)_{d=1..min(L, T-i)} beta_{i+d}(c) (x) phi_l(d) (x) phi_e(i, d, c)
    beta_i(c)  = (+)_{c'} beta'_i(c') (x) phi_t(c, c')
    Z          = (+)_c beta'_0(c) (x) phi_t(start, c)

Runtime is O(|C|^2 T L). Span marginals are the gradient of log Z with respect
to the emission log-potentials (reverse accumulation through the log chart), so
penalties built on them stay differentiable in the inference network.
"""
import itertools
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from pcgen.errors import EnumerationLimitError, ContractError
from pcgen.inference.semiring import (
    EntropySemiring,
    LogSemiring,
    MaxSemiring,
    SemiringLike,
    get_semiring,
    index,
    stack,
    unsqueeze,
)
from pcgen.inference.structures import ChartTables, PotentialTable, Segmentation, Span

logger = logging.getLogger(__name__)

ORACLE_MAX_LENGTH = 8

RandomSource = Union[None, int, np.random.Generator]


def score_segmentation(z: Segmentation, pt: PotentialTable) -> torch.Tensor:
    """log phi(x, y, z): emissions, lengths and transitions (start row included)."""
    z.validate(pt.length, pt.max_len, pt.num_labels)
    total = pt.log_start[z.spans[0].label]
    prev = None
    for span in z.spans:
        d = span.length - 1
        total = total + pt.log_emission[span.start, d, span.label] + pt.log_length[d]
        if prev is not None:
            total = total + pt.log_between[prev, span.label]
        prev = span.label
    return total


def run_chart(pt: PotentialTable, semiring_id: SemiringLike = "log") -> Tuple[ChartTables, tuple]:
    """Fill beta / beta' backwards from T and return the tables with Z."""
    sr = get_semiring(semiring_id)
    T, L, C = pt.length, pt.max_len, pt.num_labels
    dtype = pt.log_emission.dtype

    emission = sr.lift(pt.log_emission)
    length = sr.lift(pt.log_length)
    between = sr.lift(pt.log_between)
    start = sr.lift(pt.log_start)

    beta = [None] * (T + 1)
    beta_prime = [None] * (T + 1)
    beta[T] = sr.one((C,), dtype=dtype)
    # no span starts at T
    beta_prime[T] = sr.zero((C,), dtype=dtype)

    for i in range(T - 1, -1, -1):
        D = min(L, T - i)
        following = stack([beta[i + d] for d in range(1, D + 1)], dim=0)      # [D, C]
        span_scores = sr.times_all(
            following,
            unsqueeze(index(length, slice(0, D)), 1),                          # [D, 1]
            index(emission, (i, slice(0, D))),                                 # [D, C]
        )
        beta_prime[i] = sr.sum(span_scores, dim=0)                            # [C]
        # rows: label of the span ending at i, columns: label starting at i
        beta[i] = sr.sum(sr.times(unsqueeze(beta_prime[i], 0), between), dim=1)

    partition = sr.sum(sr.times(beta_prime[0], start), dim=0)
    chart = ChartTables(semiring=sr.name, beta=tuple(beta), beta_prime=tuple(beta_prime),
                        partition=partition)
    return chart, partition


def log_partition(pt: PotentialTable) -> torch.Tensor:
    _, partition = run_chart(pt, LogSemiring)
    return partition[0]


def map_segmentation(pt: PotentialTable) -> Tuple[Segmentation, torch.Tensor]:
    """Viterbi segmentation by replaying the max-semiring decisions.

    Ties: smallest first label, then shortest span, then smallest next label.
    """
    chart, partition = run_chart(pt.detach(), MaxSemiring)
    T = pt.length
    label = int(partition[1])
    spans: List[Span] = []
    i = 0
    while True:
        d = int(chart.beta_prime[i][1][label]) + 1
        spans.append(Span(i, i + d, label))
        i += d
        if i >= T:
            break
        label = int(chart.beta[i][1][label])
    z = Segmentation(tuple(spans))
    return z, score_segmentation(z, pt)


def entropy(pt: PotentialTable) -> torch.Tensor:
    """H[q] = R/Z + log Z from the expectation-semiring chart."""
    _, partition = run_chart(pt, EntropySemiring)
    log_z, ratio = partition
    return ratio + log_z


def span_marginals(pt: PotentialTable, log_z: Optional[torch.Tensor] = None) -> torch.Tensor:
    """q[i, d-1, c] = q(z_{i:i+d} = c | x, y) = d log Z / d log phi_e(i, d, c).

    If the emissions already carry a graph, the marginals keep it
    (create_graph) so penalties on them backpropagate into the potentials.
    A `log_z` computed from the same emissions is reused instead of a new chart.
    """
    emission = pt.log_emission
    keep_graph = emission.requires_grad
    with torch.enable_grad():
        if not keep_graph:
            emission = emission.detach().requires_grad_(True)
            pt = PotentialTable(emission, pt.log_transition.detach(), pt.log_length.detach(),
                                check_finite=pt.check_finite)
            log_z = None
        if log_z is None:
            log_z = log_partition(pt)
        (marginals,) = torch.autograd.grad(log_z, emission, create_graph=keep_graph, retain_graph=True)
    return marginals


def token_marginals(pt: PotentialTable, span_q: Optional[torch.Tensor] = None) -> torch.Tensor:
    """q_tok[t, c] = sum of span marginals over spans covering token t."""
    if span_q is None:
        span_q = span_marginals(pt)
    T, L, C = span_q.shape
    q_tok = torch.zeros(T, C, dtype=span_q.dtype)
    for d in range(1, L + 1):
        for k in range(min(d, T)):
            # spans of length d starting at t-k cover t
            q_tok = q_tok + F.pad(span_q[: T - k, d - 1], (0, 0, k, 0))
    return q_tok


def _rng(random_source: RandomSource) -> np.random.Generator:
    if isinstance(random_source, np.random.Generator):
        return random_source
    return np.random.default_rng(random_source)


class SegmentationSampler:
    """Forward-filtering backward-sampling over one log chart.

    The conditional tables are normalised once; each draw then walks left to
    right choosing a first label, span lengths and next labels.
    """

    def __init__(self, pt: PotentialTable, chart: Optional[ChartTables] = None):
        """`chart` may be a log chart already built over `pt` (with or without a graph)."""
        pt = pt.detach()
        if chart is None:
            chart, _ = run_chart(pt, LogSemiring)
        elif chart.semiring != LogSemiring.name:
            raise ContractError(f"sampling needs a log chart, got '{chart.semiring}'")
        self.length = pt.length
        beta = [b[0].detach() for b in chart.beta]
        beta_prime = [b[0].detach() for b in chart.beta_prime[:pt.length]]
        T, L = pt.length, pt.max_len

        self.first = _normalize(beta_prime[0] + pt.log_start)
        self.lengths = []
        self.next_labels = [None] * (T + 1)
        for i in range(T):
            D = min(L, T - i)
            following = torch.stack([beta[i + d] for d in range(1, D + 1)], dim=0)     # [D, C]
            logits = following + pt.log_length[:D].unsqueeze(1) + pt.log_emission[i, :D]
            self.lengths.append(_normalize(logits.t()))                                  # [C, D]
            if i > 0:
                self.next_labels[i] = _normalize(beta_prime[i].unsqueeze(0) + pt.log_between)  # [C, C]

    def sample(self, random_source: RandomSource = None) -> Segmentation:
        rng = _rng(random_source)
        label = _draw(self.first, rng)
        spans: List[Span] = []
        i = 0
        while True:
            d = _draw(self.lengths[i][label], rng) + 1
            spans.append(Span(i, i + d, label))
            i += d
            if i >= self.length:
                return Segmentation(tuple(spans))
            label = _draw(self.next_labels[i][label], rng)


def _normalize(logits: torch.Tensor) -> np.ndarray:
    probs = torch.softmax(logits, dim=-1).numpy()
    return np.cumsum(probs, axis=-1)


def _draw(cumulative: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random() * cumulative[-1]
    return int(min(np.searchsorted(cumulative, u, side="right"), len(cumulative) - 1))


def sample_segmentation(pt: PotentialTable, rng_seed: RandomSource = None) -> Segmentation:
    """One exact sample from q; deterministic for an integer seed."""
    return SegmentationSampler(pt).sample(_rng(rng_seed))


def sample_segmentations(pt: PotentialTable, n: int, rng_seed: RandomSource = None,
                          chart: Optional[ChartTables] = None) -> List[Segmentation]:
    sampler = SegmentationSampler(pt, chart)
    rng = _rng(rng_seed)
    return [sampler.sample(rng) for _ in range(n)]


def brute_force_oracle(pt: PotentialTable, max_length: int = ORACLE_MAX_LENGTH) -> List[Tuple[Segmentation, float]]:
    """Every valid labelled segmentation with its log-score (test oracle)."""
    T, L, C = pt.length, pt.max_len, pt.num_labels
    if T > max_length:
        raise EnumerationLimitError(f"brute-force enumeration limited to T <= {max_length}, got T={T}")
    pt = pt.detach()
    results: List[Tuple[Segmentation, float]] = []
    for tiling in _tilings(T, L):
        for labels in itertools.product(range(C), repeat=len(tiling)):
            z = Segmentation(tuple(Span(s, e, c) for (s, e), c in zip(tiling, labels)))
            results.append((z, float(score_segmentation(z, pt))))
    return results


def _tilings(T: int, L: int, start: int = 0):
    if start == T:
        yield []
        return
    for d in range(1, min(L, T - start) + 1):
        for rest in _tilings(T, L, start + d):
            yield [(start, start + d)] + rest


def state_sequence_logprob(pt: PotentialTable, states: Sequence[int]) -> torch.Tensor:
    """log q(z_1..z_T = states): mass of all segmentations that expand to `states`.

    Evaluation only: the masked chart is built from detached potentials.
    """
    pt = pt.detach()
    T, L, C = pt.length, pt.max_len, pt.num_labels
    if len(states) != T:
        raise ContractError(f"state sequence of length {len(states)} for a sentence of length {T}")
    states = np.asarray(states)
    allowed = np.zeros((T, L, C), dtype=bool)
    for i in range(T):
        for d in range(1, min(L, T - i) + 1):
            window = states[i:i + d]
            if np.all(window == window[0]):
                allowed[i, d - 1, window[0]] = True
    mask = torch.from_numpy(allowed)
    masked = PotentialTable(
        pt.log_emission.masked_fill(~mask, float("-inf")),
        pt.log_transition,
        pt.log_length,
        check_finite=False,
    )
    with torch.no_grad():
        return log_partition(masked) - log_partition(pt)


def linear_chain_log_partition(emission: torch.Tensor, transition: torch.Tensor, start: torch.Tensor) -> torch.Tensor:
    """Forward algorithm of a first-order linear-chain CRF.

    emission [T, C], transition [C, C] (previous -> next), start [C].
    Equals `log_partition` of the L = 1 table with the same factors.
    """
    alpha = start + emission[0]
    for t in range(1, emission.shape[0]):
        alpha = torch.logsumexp(alpha.unsqueeze(1) + transition, dim=0) + emission[t]
    return torch.logsumexp(alpha, dim=0)
