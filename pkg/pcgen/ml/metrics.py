"""
Evaluation: controllability of decoded state spans and distributional fit.

Controllability, for decodes with state spans and their tables:
    S          = {(i, j, f): z_ij = sigma(f), f in x}
    #match     = sum over S of unigram-overlap(y_ij, x_f)
    precision  = #match / sum over S of (j - i)
    recall     = #match / sum over f in x of |x_f|
    coverage   = distinct states in S / distinct states of the fields in x
Counts are summed over the corpus before dividing (micro average).
"""
import logging
from collections import Counter
from dataclasses import dataclass, asdict
from typing import Dict, Optional, Sequence

import numpy as np
import torch

from data.corpus import CorpusRecord, DecodeRecord
from pcgen.constraints.alignment import Table
from pcgen.constraints.penalties import FieldStateMap
from pcgen.inference.semicrf import sample_segmentations, state_sequence_logprob
from pcgen.ml.decoder import importance_logprob

logger = logging.getLogger(__name__)


@dataclass
class ControlScores:
    precision: float
    recall: float
    coverage: float
    matched: int = 0
    predicted_tokens: int = 0
    reference_tokens: int = 0
    states_used: int = 0
    states_available: int = 0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class DistributionalScores:
    rec: float
    ppl: float
    kl: float
    tokens: int = 0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def unigram_overlap(span: Sequence[str], value: Sequence[str]) -> int:
    """Clipped count of span tokens found in the value (case-folded)."""
    a = Counter(t.casefold() for t in span)
    b = Counter(t.casefold() for t in value)
    return sum((a & b).values())


def evaluate_control(decodes: Sequence[DecodeRecord], tables: Sequence[Table], sigma: FieldStateMap) -> ControlScores:
    if len(decodes) != len(tables):
        raise ValueError(f"{len(decodes)} decodes for {len(tables)} tables")
    matched = predicted = reference = used = available = 0
    for dec, table in zip(decodes, tables):
        owned = {}
        for name in table.names:
            if sigma.has_own_state(name):
                owned.setdefault(sigma.state_of(name), []).append(name)
                reference += len(table.value(name))
        available += len(owned)
        states_in_s = set()
        for span in dec.states.spans:
            for name in owned.get(span.label, []):
                words = dec.tokens[span.start:span.end]
                matched += unigram_overlap(words, table.value(name))
                predicted += span.length
                states_in_s.add(span.label)
        used += len(states_in_s)

    if predicted == 0:
        logger.warning("[metrics] no decoded span carries a field state: precision defined as 1")
        precision = 1.0
    else:
        precision = matched / predicted
    recall = matched / reference if reference else 0.0
    coverage = used / available if available else 0.0
    return ControlScores(precision=precision, recall=recall, coverage=coverage, matched=matched,
                         predicted_tokens=predicted, reference_tokens=reference, states_used=used,
                         states_available=available)


def evaluate_distributional(model, records: Sequence[CorpusRecord], num_samples: int = 4,
                            importance_samples: Optional[int] = None, seed: int = 1) -> DistributionalScores:
    """Rec = exp(-E_q[log p(y | x, z)] / T), PPL by importance sampling, KL = E_q[log q(z) - log p(z | .)].

    T counts the <eos> step. KL compares z_1..z_T only: the <eos> step copies
    z_T and its state term is left out. Sampled state sequences are scored under
    q by marginalizing segmentations, so |C| = 1 gives KL = 0.
    """
    importance_samples = importance_samples or num_samples
    rng = np.random.default_rng(seed)
    total_tokens = 0
    rec_lp = ppl_lp = kl = 0.0
    model.eval()
    with torch.no_grad():
        for r in records:
            tokens = model.tokens(r.text)
            ctx = model.encode_table(r.table)
            pt = model.potentials(r.table, tokens).detach()
            segs = sample_segmentations(pt, num_samples, rng)
            states = torch.tensor([z.to_states() for z in segs], dtype=torch.long)
            token_lp, state_lp = model.decoder.score(tokens, states, ctx, eos_state=False)
            log_q = torch.stack([state_sequence_logprob(pt, s) for s in states.tolist()]).to(state_lp.dtype)

            rec_lp += float(token_lp.mean())
            kl += float((log_q - state_lp).mean())
            ppl_lp += importance_logprob(model.decoder, ctx, tokens, pt, importance_samples, rng)
            total_tokens += len(r.text) + 1
    n = max(len(records), 1)
    scores = DistributionalScores(rec=float(np.exp(-rec_lp / max(total_tokens, 1))),
                                  ppl=float(np.exp(-ppl_lp / max(total_tokens, 1))),
                                  kl=kl / n, tokens=total_tokens)
    logger.info(f"[metrics] Rec {scores.rec:.3f}  PPL {scores.ppl:.3f}  KL {scores.kl:.3f} ({n} records)")
    return scores
