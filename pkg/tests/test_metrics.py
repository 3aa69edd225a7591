import math

import pytest
import torch

from data.corpus import DecodeRecord
from pcgen.constraints.alignment import Table
from pcgen.constraints.penalties import FieldStateMap
from pcgen.inference.structures import PotentialTable, Segmentation
from pcgen.ml.metrics import evaluate_control, evaluate_distributional, unigram_overlap
from pcgen.ml.model import PosteriorControlModel
from pcgen.ml.objective import heuristic_states
from pcgen.ml.trainer import build_vocabulary, field_inventory
from tests.conftest import tiny_settings

NAME_ONLY = Table.from_items([("name", ["Clowns"])])


def _decode(tokens, spans):
    return DecodeRecord(tokens=tuple(tokens), states=Segmentation.from_spans(spans), score=0.0)


def test_exact_single_field():
    sigma = FieldStateMap.default(["name"])
    scores = evaluate_control([_decode(["Clowns"], [(0, 1, 0)])], [NAME_ONLY], sigma)
    assert (scores.precision, scores.recall, scores.coverage) == (1.0, 1.0, 1.0)


def test_half_matching_span():
    sigma = FieldStateMap.default(["name"])
    scores = evaluate_control([_decode(["Clowns", "is"], [(0, 2, 0)])], [NAME_ONLY], sigma)
    assert scores.precision == pytest.approx(0.5)
    assert scores.recall == pytest.approx(1.0)


def test_no_field_state_used():
    sigma = FieldStateMap.default(["name"])
    scores = evaluate_control([_decode(["a", "pub"], [(0, 2, 1)])], [NAME_ONLY], sigma)
    assert scores.precision == 1.0
    assert scores.recall == 0.0
    assert scores.coverage == 0.0


def test_counts_are_micro_averaged():
    sigma = FieldStateMap.default(["name"])
    decodes = [_decode(["Clowns"], [(0, 1, 0)]), _decode(["x", "y", "z"], [(0, 3, 0)])]
    scores = evaluate_control(decodes, [NAME_ONLY, NAME_ONLY], sigma)
    assert scores.precision == pytest.approx(1 / 4)
    assert scores.recall == pytest.approx(1 / 2)


def test_unigram_overlap_is_clipped_and_case_folded():
    assert unigram_overlap(["the", "The", "mill"], ["The", "Mill"]) == 2
    assert unigram_overlap(["a"], ["b"]) == 0


def test_gold_copy_scores_one(tiny_corpus):
    records = tiny_corpus["train"]
    sigma = FieldStateMap.default(field_inventory(records))
    decodes = []
    for r in records:
        states = heuristic_states(r.align, sigma, len(r.text))
        decodes.append(DecodeRecord(tokens=r.text, states=Segmentation.from_states(states), score=0.0))
    scores = evaluate_control(decodes, [r.table for r in records], sigma)
    assert (scores.precision, scores.recall, scores.coverage) == (1.0, 1.0, 1.0)


def test_single_state_model_has_zero_kl(tiny_corpus):
    records = tiny_corpus["valid"]
    torch.manual_seed(0)
    settings = tiny_settings(model={"num_states": 1})
    model = PosteriorControlModel(build_vocabulary(records), field_inventory(records), settings)
    scores = evaluate_distributional(model, records, num_samples=3, importance_samples=2, seed=4)
    assert scores.kl == pytest.approx(0.0, abs=1e-6)
    assert math.isfinite(scores.rec) and scores.rec > 1.0
    assert math.isfinite(scores.ppl) and scores.ppl > 1.0
    assert scores.tokens == sum(len(r.text) + 1 for r in records)


def test_kl_scores_the_sentence_states_only(tiny_corpus, monkeypatch):
    records = tiny_corpus["valid"]
    torch.manual_seed(0)
    model = PosteriorControlModel(build_vocabulary(records), field_inventory(records), tiny_settings())
    C = model.num_states
    with torch.no_grad():
        model.decoder.state_head.weight.zero_()
        model.decoder.state_head.bias.copy_(0.3 * torch.arange(C, dtype=torch.float32))
    log_p = torch.log_softmax(model.decoder.state_head.bias.detach(), dim=0)

    # q puts all its mass on state 1 at every token
    def point_mass(table, tokens):
        pt = PotentialTable.uniform(tokens.numel(), 1, C, dtype=torch.float32)
        pt.log_emission[:, 0, 1] = 50.0
        return pt

    monkeypatch.setattr(model, "potentials", point_mass)
    scores = evaluate_distributional(model, records, num_samples=2, importance_samples=2, seed=0)
    expected = sum(-len(r.text) * float(log_p[1]) for r in records) / len(records)
    assert scores.kl == pytest.approx(expected, rel=1e-4)
