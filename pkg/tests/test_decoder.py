import itertools
import math

import pytest
import torch

from pcgen.config import ModelParams
from pcgen.constraints.alignment import Table
from pcgen.errors import ContractError
from pcgen.inference.structures import PotentialTable, Segmentation
from pcgen.ml.decoder import (
    ControlDecoder,
    TableContext,
    beam_search,
    constrained_beam_search,
    greedy_decode,
    importance_logprob,
    log_mean_exp,
    perplexity,
    sample,
)
from pcgen.ml.vocab import Vocabulary
from tests.conftest import random_table

TABLE = Table.from_items([("name", ["a"]), ("food", ["b", "zzz"])])


def _decoder(words=("a", "b"), num_states=2, use_copy=True, seed=0, double=True):
    torch.manual_seed(seed)
    params = ModelParams(embedding_size=6, hidden_size=8, table_embedding_size=3, max_position=4,
                         label_embedding_size=5, use_copy=use_copy)
    decoder = ControlDecoder(Vocabulary(words), ["name", "food"], num_states, params)
    decoder.eval()
    return decoder.double() if double else decoder


def _ids(decoder, words):
    return decoder.vocab.tensor(words)


def test_zero_parameters_give_uniform_distributions():
    decoder = _decoder(use_copy=False)
    with torch.no_grad():
        for p in decoder.parameters():
            p.zero_()
    ctx = decoder.encode_table(TABLE)
    tokens = _ids(decoder, ["a", "b"])
    # 6 ids, <pad> and <bos> never emitted: 4 choices per token, 2 per state
    joint = decoder.joint_logprob(tokens, torch.tensor([0, 1]), ctx, add_eos=False)
    assert float(joint) == pytest.approx(2 * (math.log(0.5) + math.log(0.25)), abs=1e-9)
    assert float(joint) == pytest.approx(-4.1589, abs=1e-4)


def test_distributions_normalize():
    decoder = _decoder()
    ctx = decoder.encode_table(TABLE)
    hidden = decoder.initial_hidden(ctx, 3)
    hidden, log_pz = decoder.step(hidden, torch.tensor([2, 4, 5]), torch.tensor([2, 0, 1]), ctx)
    assert torch.allclose(log_pz.exp().sum(dim=1), torch.ones(3, dtype=torch.float64), atol=1e-6)
    p = decoder.token_probs(hidden[0], torch.tensor([0, 1, 1]), ctx)
    assert torch.allclose(p.sum(dim=1), torch.ones(3, dtype=torch.float64), atol=1e-6)
    assert float(p[:, decoder.vocab.pad_id].abs().sum()) == 0.0
    assert float(p[:, decoder.vocab.bos_id].abs().sum()) == 0.0


def test_copy_gate_one_restricts_support_to_table_tokens():
    decoder = _decoder()
    ctx = decoder.encode_table(TABLE)
    hidden, _ = decoder.step(decoder.initial_hidden(ctx, 1), torch.tensor([2]), torch.tensor([2]), ctx)
    p = decoder.token_probs(hidden[0], torch.tensor([1]), ctx, copy_gate_override=1.0)[0]
    support = set(torch.nonzero(p).flatten().tolist())
    vocab = decoder.vocab
    assert support <= {vocab.stoi["a"], vocab.stoi["b"], vocab.unk_id}
    assert float(p.sum()) == pytest.approx(1.0)


def test_score_replays_the_step_op():
    decoder = _decoder()
    ctx = decoder.encode_table(TABLE)
    tokens = _ids(decoder, ["a", "b", "a"])
    states = [1, 0, 0]
    token_lp, state_lp = decoder.score(tokens, torch.tensor(states), ctx)

    hidden = decoder.initial_hidden(ctx, 1)
    y_prev, z_prev = torch.tensor([decoder.vocab.bos_id]), torch.tensor([decoder.num_states])
    manual = 0.0
    for y, z in zip(tokens.tolist() + [decoder.vocab.eos_id], states + [states[-1]]):
        hidden, log_pz = decoder.step(hidden, y_prev, z_prev, ctx)
        p = decoder.token_probs(hidden[0], torch.tensor([z]), ctx)
        manual += float(log_pz[0, z]) + math.log(float(p[0, y]))
        y_prev, z_prev = torch.tensor([y]), torch.tensor([z])
    assert float(token_lp[0] + state_lp[0]) == pytest.approx(manual, abs=1e-9)


def test_eos_state_term_can_be_left_out():
    decoder = _decoder()
    ctx = decoder.encode_table(TABLE)
    tokens = _ids(decoder, ["a", "b", "a"])
    states = torch.tensor([1, 0, 0])
    token_full, state_full = decoder.score(tokens, states, ctx)
    token_body, state_body = decoder.score(tokens, states, ctx, eos_state=False)
    assert torch.equal(token_full, token_body)

    hidden = decoder.initial_hidden(ctx, 1)
    y_prev, z_prev = torch.tensor([decoder.vocab.bos_id]), torch.tensor([decoder.num_states])
    for y, z in zip(tokens.tolist() + [decoder.vocab.eos_id], [1, 0, 0, 0]):
        hidden, log_pz = decoder.step(hidden, y_prev, z_prev, ctx)
        y_prev, z_prev = torch.tensor([y]), torch.tensor([z])
    # the last step is the <eos> step, which carries z_T = 0
    assert float(state_full[0] - state_body[0]) == pytest.approx(float(log_pz[0, 0]), abs=1e-9)
    _, no_eos = decoder.score(tokens, states, ctx, add_eos=False, eos_state=False)
    assert float(no_eos[0]) == pytest.approx(float(state_body[0]), abs=1e-9)


def test_joint_logprob_gradcheck():
    decoder = _decoder()
    ctx = decoder.encode_table(TABLE)
    tokens = _ids(decoder, ["a", "b", "zzz"])
    states = torch.tensor([[1, 0, 0], [0, 1, 1]])

    def fn(memory):
        table = TableContext(memory=memory, word_ids=ctx.word_ids, pooled=memory.mean(dim=0))
        return decoder.joint_logprob(tokens, states, table)

    memory = ctx.memory.detach().clone().requires_grad_(True)
    assert torch.autograd.gradcheck(fn, (memory,))


def test_log_mean_exp():
    values = torch.tensor([0.0, math.log(3.0)], dtype=torch.float64)
    assert float(log_mean_exp(values)) == pytest.approx(math.log(2.0))


def test_joint_logprob_decreases_with_each_token():
    decoder = _decoder()
    ctx = decoder.encode_table(TABLE)
    short = decoder.joint_logprob(_ids(decoder, ["a"]), torch.tensor([0]), ctx, add_eos=False)
    long = decoder.joint_logprob(_ids(decoder, ["a", "b"]), torch.tensor([0, 0]), ctx, add_eos=False)
    assert float(short) < 0
    assert float(long) < float(short)


def test_length_mismatch_and_empty_table_are_rejected():
    decoder = _decoder()
    ctx = decoder.encode_table(TABLE)
    with pytest.raises(ContractError):
        decoder.joint_logprob(_ids(decoder, ["a", "b"]), torch.tensor([0]), ctx)
    with pytest.raises(ContractError):
        decoder.encode_table(Table(()))


def test_encode_table_shapes_and_field_permutation():
    decoder = _decoder()
    one = decoder.encode_table(Table.from_items([("name", ["a"])]))
    assert tuple(one.memory.shape) == (1, 8)
    forward = decoder.encode_table(Table.from_items([("name", ["a"]), ("food", ["b"])]))
    swapped = decoder.encode_table(Table.from_items([("food", ["b"]), ("name", ["a"])]))
    assert torch.allclose(forward.memory[0], swapped.memory[1], atol=1e-12)
    assert torch.allclose(forward.memory[1], swapped.memory[0], atol=1e-12)
    again = decoder.encode_table(Table.from_items([("name", ["a"]), ("food", ["b"])]))
    assert torch.equal(forward.memory, again.memory)


def test_greedy_equals_beam_of_one():
    for seed in range(3):
        decoder = _decoder(seed=seed)
        ctx = decoder.encode_table(TABLE)
        greedy = greedy_decode(decoder, ctx, max_length=6, length_norm_alpha=1.0)
        beam = beam_search(decoder, ctx, beam_size=1, length_norm_alpha=1.0, max_length=6)
        assert greedy.token_ids == beam.token_ids
        assert greedy.states == beam.states
        assert greedy.truncated == beam.truncated
        assert greedy.logprob == pytest.approx(beam.logprob, abs=1e-9)


def _enumerate(decoder, ctx, max_length):
    """(logprob, token ids, states) of every sequence ending in <eos> within max_length steps."""
    vocab = decoder.vocab
    emittable = [vocab.unk_id, vocab.stoi["a"]]
    out = []
    for n in range(1, max_length + 1):
        for words in itertools.product(emittable, repeat=n - 1):
            ids = list(words) + [vocab.eos_id]
            for states in itertools.product(range(decoder.num_states), repeat=n):
                lp = decoder.joint_logprob(torch.tensor(ids), torch.tensor(states), ctx, add_eos=False)
                out.append((float(lp), ids, list(states)))
    return out


def test_exhaustive_beam_finds_the_argmax():
    decoder = _decoder(words=("a",))
    ctx = decoder.encode_table(Table.from_items([("name", ["a"])]))
    with torch.no_grad():
        candidates = _enumerate(decoder, ctx, max_length=3)
        best = max(candidates, key=lambda e: e[0])
        result = beam_search(decoder, ctx, beam_size=1000, length_norm_alpha=0.0, max_length=3)
        greedy = greedy_decode(decoder, ctx, max_length=3, length_norm_alpha=0.0)
    assert not result.truncated
    assert result.logprob == pytest.approx(best[0], abs=1e-9)
    assert result.token_ids == best[1][:-1]
    assert result.states == best[2][:-1]
    if not greedy.truncated:
        assert result.score >= greedy.score - 1e-12


def test_length_normalization_uses_steps_with_eos():
    decoder = _decoder()
    ctx = decoder.encode_table(TABLE)
    result = beam_search(decoder, ctx, beam_size=4, length_norm_alpha=1.0, max_length=8)
    steps = len(result.token_ids) + (0 if result.truncated else 1)
    assert result.score == pytest.approx(result.logprob / steps)


def test_forced_length_and_truncation():
    decoder = _decoder()
    ctx = decoder.encode_table(TABLE)
    forced = beam_search(decoder, ctx, beam_size=3, forced_length=4)
    assert len(forced.tokens) == 4 and not forced.truncated
    assert "<eos>" not in forced.tokens
    truncated = beam_search(decoder, ctx, beam_size=2, max_length=1)
    if truncated.truncated:
        assert len(truncated.token_ids) == 1


def test_constrained_search_follows_the_plan():
    decoder = _decoder(num_states=3)
    ctx = decoder.encode_table(TABLE)
    plan = Segmentation.from_spans([(0, 2, 2), (2, 3, 0)])
    result = constrained_beam_search(decoder, ctx, plan, beam_size=4)
    assert len(result.tokens) == 3
    assert result.states == [2, 2, 0]
    assert result.segmentation == plan
    with pytest.raises(ContractError):
        constrained_beam_search(decoder, ctx, Segmentation.from_spans([(0, 2, 5)]))


def test_single_state_constrained_equals_forced_length_beam():
    decoder = _decoder(num_states=1)
    ctx = decoder.encode_table(TABLE)
    plan = Segmentation.from_spans([(0, 4, 0)])
    constrained = constrained_beam_search(decoder, ctx, plan, beam_size=3)
    free = beam_search(decoder, ctx, beam_size=3, forced_length=4)
    assert constrained.token_ids == free.token_ids
    assert constrained.logprob == pytest.approx(free.logprob)


def test_exhaustive_constrained_search_beats_samples():
    decoder = _decoder(words=("a",))
    ctx = decoder.encode_table(TABLE)
    plan = Segmentation.from_spans([(0, 1, 1), (1, 3, 0)])
    states = torch.tensor(plan.to_states())
    with torch.no_grad():
        result = constrained_beam_search(decoder, ctx, plan, beam_size=1000, length_norm_alpha=0.0)
        best = decoder.joint_logprob(torch.tensor(result.token_ids), states, ctx)
        assert float(best) == pytest.approx(result.logprob, abs=1e-9)
        generator = torch.Generator().manual_seed(0)
        for _ in range(20):
            ids = sample(decoder, ctx, plan, generator)
            assert len(ids) == 3
            assert float(decoder.joint_logprob(torch.tensor(ids), states, ctx)) <= float(best) + 1e-9


def test_importance_estimate_is_exact_with_one_state():
    decoder = _decoder(num_states=1)
    ctx = decoder.encode_table(TABLE)
    tokens = _ids(decoder, ["a", "b", "b"])
    pt = PotentialTable.uniform(3, 2, 1)
    with torch.no_grad():
        exact = decoder.score(tokens, torch.zeros(3, dtype=torch.long), ctx)[0]
    for k in (1, 5):
        estimate = importance_logprob(decoder, ctx, tokens, pt, num_samples=k, rng_seed=0)
        assert estimate == pytest.approx(float(exact[0]), abs=1e-9)


@pytest.mark.slow
def test_importance_estimate_converges_to_the_enumerated_marginal():
    decoder = _decoder()
    ctx = decoder.encode_table(TABLE)
    tokens = _ids(decoder, ["a", "b", "a"])
    pt = random_table(3, 2, 2, seed=13, scale=0.5)
    with torch.no_grad():
        all_states = torch.tensor(list(itertools.product(range(2), repeat=3)))
        exact = float(torch.logsumexp(decoder.joint_logprob(tokens, all_states, ctx), dim=0))
    estimates = [importance_logprob(decoder, ctx, tokens, pt, num_samples=20, rng_seed=s) for s in range(30)]
    # lower bound in expectation, up to sampling noise of the mean
    assert sum(estimates) / len(estimates) <= exact + 0.1
    assert importance_logprob(decoder, ctx, tokens, pt, num_samples=5000, rng_seed=99) == pytest.approx(exact, abs=0.05)


def test_perplexity():
    assert perplexity(-2 * math.log(4), 2) == pytest.approx(4.0)
