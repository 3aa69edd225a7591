import math

import pytest
import torch

from pcgen.config import PenaltyConfig
from pcgen.constraints.alignment import AlignmentSet, Table
from pcgen.constraints.penalties import (
    DynamicMapping,
    FieldStateMap,
    coverage_penalty,
    diversity_penalty,
    exclusion_penalty,
    fit_penalty,
    inclusion_penalty,
    sparsity_penalty,
    total_penalty,
)
from pcgen.errors import ContractError
from pcgen.inference.semicrf import brute_force_oracle, span_marginals, token_marginals
from pcgen.inference.structures import PotentialTable
from tests.conftest import random_table

TWO_FIELDS = Table.from_items([("name", ["Aromi"]), ("eatType", ["coffee", "shop"])])


def _oracle_marginals(pt):
    results = brute_force_oracle(pt)
    scores = torch.tensor([s for _, s in results], dtype=torch.float64)
    probs = torch.softmax(scores, dim=0)
    q = torch.zeros(pt.length, pt.max_len, pt.num_labels, dtype=torch.float64)
    for (z, _), p in zip(results, probs):
        for span in z.spans:
            q[span.start, span.length - 1, span.label] += p
    return q


def test_default_map_reserves_other_and_free_states():
    sigma = FieldStateMap.default(["name", "eatType", "food"])
    assert sigma.num_states == 5
    assert [sigma.state_of(f) for f in ("name", "eatType", "food")] == [0, 1, 2]
    assert sigma.other_state == 3
    assert sigma.state_names() == ["name", "eatType", "food", "other", "free4"]
    assert FieldStateMap.from_json(sigma.to_json()) == sigma


def test_default_map_with_fewer_states_shares_other():
    sigma = FieldStateMap.default(["a", "b", "c"], num_states=2)
    assert sigma.state_of("a") == 0
    assert sigma.state_of("b") == sigma.state_of("c") == 1
    assert not sigma.has_own_state("c")


def test_map_must_be_injective():
    with pytest.raises(ContractError):
        FieldStateMap(("a", "b"), (0, 0), 3, other_state=2)


def test_inclusion_single_span():
    sigma = FieldStateMap.default(["name"])
    q = torch.zeros(2, 2, 3, dtype=torch.float64)
    q[0, 1, 0] = 0.6
    spans = AlignmentSet.from_json([[0, 2, "name"]])
    assert float(inclusion_penalty(q, spans, sigma)) == pytest.approx(0.4)
    q[0, 1, 0] = 1.0
    assert float(inclusion_penalty(q, spans, sigma)) == pytest.approx(0.0)


def test_inclusion_long_alignment():
    sigma = FieldStateMap.default(["rating"])
    q = torch.zeros(4, 2, 3, dtype=torch.float64)
    spans = AlignmentSet.from_json([[0, 4, "rating"]])
    # split into two sub-spans of length 2, each weight 1
    assert float(inclusion_penalty(q, spans, sigma, split_long=True)) == pytest.approx(2.0)
    assert float(inclusion_penalty(q, spans, sigma, split_long=False)) == pytest.approx(1.0)


def test_exclusion_counts_expected_segments_on_uniform_chart():
    sigma = FieldStateMap(("name",), (0,), 1)
    q = span_marginals(PotentialTable.uniform(2, 2, 1))
    table = Table.from_items([("name", ["x"])])
    assert float(exclusion_penalty(q, AlignmentSet(), sigma, table)) == pytest.approx(1.5)
    assert float(coverage_penalty(q, sigma, table)) == pytest.approx(0.5)
    absent = Table.from_items([("food", ["y"])])
    assert float(coverage_penalty(q, sigma, absent)) == pytest.approx(1.5)


def test_coverage_double_use():
    sigma = FieldStateMap.default(["name"])
    q = torch.zeros(3, 1, 3, dtype=torch.float64)
    q[0, 0, 0] = 1.0
    q[2, 0, 0] = 1.0
    q[1, 0, 1] = 1.0
    assert float(coverage_penalty(q, sigma, Table.from_items([("name", ["a"])]))) == pytest.approx(1.0)


def test_one_to_one_terms_vanish_on_consistent_posterior():
    sigma = FieldStateMap.default(["name", "eatType"])
    emission = torch.zeros(3, 2, 4, dtype=torch.float64)
    emission[0, 0, 0] = 30.0
    emission[1, 1, 1] = 30.0
    pt = PotentialTable(emission, torch.zeros(5, 4, dtype=torch.float64), torch.zeros(2, dtype=torch.float64))
    q = span_marginals(pt)
    spans = AlignmentSet.from_json([[0, 1, "name"], [1, 3, "eatType"]])
    assert float(inclusion_penalty(q, spans, sigma)) == pytest.approx(0.0, abs=1e-6)
    assert float(exclusion_penalty(q, spans, sigma, TWO_FIELDS)) == pytest.approx(0.0, abs=1e-6)
    assert float(coverage_penalty(q, sigma, TWO_FIELDS)) == pytest.approx(0.0, abs=1e-6)


def test_penalties_match_enumerated_marginals():
    pt = random_table(6, 3, 4, seed=21)
    sigma = FieldStateMap.default(["name", "eatType"])
    spans = AlignmentSet.from_json([[0, 1, "name"], [2, 4, "eatType"]])
    q = span_marginals(pt)
    q_oracle = _oracle_marginals(pt)
    for fn in (lambda m: inclusion_penalty(m, spans, sigma),
               lambda m: exclusion_penalty(m, spans, sigma, TWO_FIELDS),
               lambda m: coverage_penalty(m, sigma, TWO_FIELDS)):
        assert float(fn(q)) == pytest.approx(float(fn(q_oracle)), abs=1e-6)
    expected_inclusion = (1 - q_oracle[0, 0, 0]) + (1 - q_oracle[2, 1, 1])
    assert float(inclusion_penalty(q, spans, sigma)) == pytest.approx(float(expected_inclusion), abs=1e-6)


def test_sparsity():
    mapping = DynamicMapping(["a", "b"], 10)
    with torch.no_grad():
        mapping.M.zero_()
    assert float(sparsity_penalty(mapping)) == pytest.approx(2 * math.log(10), rel=1e-5)
    with torch.no_grad():
        mapping.M[:, 3] = 100.0
    assert float(sparsity_penalty(mapping)) == pytest.approx(0.0, abs=1e-6)


def test_fit_one_hot_row():
    mapping = DynamicMapping(["name"], 3)
    with torch.no_grad():
        mapping.M.zero_()
        mapping.M[0, 2] = 1000.0
    q = torch.zeros(2, 2, 3, dtype=torch.float64)
    q[0, 1, 2] = 0.5
    spans = AlignmentSet.from_json([[0, 2, "name"]])
    assert float(fit_penalty(q, spans, mapping)) == pytest.approx(math.log(2), rel=1e-5)
    q[0, 1, 2] = 1.0
    assert float(fit_penalty(q, spans, mapping)) == pytest.approx(0.0, abs=1e-6)


def test_fit_gradient_reaches_mapping_and_marginals():
    mapping = DynamicMapping(["name"], 3)
    pt = random_table(3, 2, 3, seed=5)
    emission = pt.log_emission.clone().requires_grad_(True)
    q = span_marginals(PotentialTable(emission, pt.log_transition, pt.log_length))
    fit_penalty(q, AlignmentSet.from_json([[0, 2, "name"]]), mapping).backward()
    assert mapping.M.grad is not None and float(mapping.M.grad.abs().sum()) > 0
    assert emission.grad is not None and float(emission.grad.abs().sum()) > 0


def test_diversity():
    uniform = torch.full((4, 3), 1 / 3, dtype=torch.float64)
    assert float(diversity_penalty(uniform)) == pytest.approx(0.0, abs=1e-12)
    one_hot = torch.zeros(4, 3, dtype=torch.float64)
    one_hot[:, 1] = 1.0
    assert float(diversity_penalty(one_hot)) == pytest.approx(math.log(3))
    q_tok = token_marginals(random_table(5, 2, 3, seed=1))
    p = q_tok.sum(dim=0) / q_tok.sum()
    expected = math.log(3) + float((p * torch.log(p)).sum())
    assert float(diversity_penalty(q_tok)) == pytest.approx(expected)


def test_total_penalty_weights_and_lambda():
    pt = random_table(5, 3, 4, seed=3)
    q = span_marginals(pt)
    sigma = FieldStateMap.default(["name", "eatType"])
    spans = AlignmentSet.from_json([[0, 1, "name"], [2, 4, "eatType"]])

    cfg = PenaltyConfig(lam=2.0, inclusion_weight=0.5, coverage_weight=3.0)
    result = total_penalty(cfg, q, spans, TWO_FIELDS, sigma=sigma)
    by_hand = (0.5 * inclusion_penalty(q, spans, sigma) + exclusion_penalty(q, spans, sigma, TWO_FIELDS)
               + 3.0 * coverage_penalty(q, sigma, TWO_FIELDS))
    assert float(result.total) == pytest.approx(2.0 * float(by_hand))
    assert set(result.as_floats()) == {"inclusion", "exclusion", "coverage"}

    assert float(total_penalty(cfg, q, spans, TWO_FIELDS, sigma=sigma, lam=0.0).total) == 0.0
    disabled = PenaltyConfig(use_exclusion=False)
    assert "exclusion" not in total_penalty(disabled, q, spans, TWO_FIELDS, sigma=sigma).terms


def test_total_penalty_one_to_many():
    pt = random_table(5, 3, 4, seed=3)
    q = span_marginals(pt)
    q_tok = token_marginals(pt, q)
    mapping = DynamicMapping(["name", "eatType"], 4)
    spans = AlignmentSet.from_json([[0, 1, "name"]])
    cfg = PenaltyConfig(mode="one2many", lam=1.0)
    result = total_penalty(cfg, q, spans, TWO_FIELDS, mapping=mapping, q_tok=q_tok)
    by_hand = sparsity_penalty(mapping) + fit_penalty(q, spans, mapping) + diversity_penalty(q_tok)
    assert float(result.total) == pytest.approx(float(by_hand), rel=1e-6)
    with pytest.raises(ContractError):
        total_penalty(cfg, q, spans, TWO_FIELDS, mapping=mapping)
    with pytest.raises(ContractError):
        total_penalty(PenaltyConfig(), q, spans, TWO_FIELDS)
