import math

import numpy as np
import pytest
from conftest import central_difference, relative_error

from twistsmc.baselines import (BaselineConfig, PolicyTrainState, PreferenceBatch, dpo_loss_and_grad,
                                grpo_advantages, grpo_loss_and_grad, pair_by_reward, train_baseline)
from twistsmc.errors import DegenerateBatchError, InputDomainError
from twistsmc.potential import LogisticPotential
from twistsmc.seqmodel import NeuralModel, Prompt

PROMPT = Prompt((0,), 4)
POT = LogisticPotential([0.0, -0.5, 2.0, 2.0], -3.0, 1.0)


def reference(seed=0):
    return NeuralModel.random(4, 2, 4, np.random.default_rng(seed), hidden=8, scale=0.5)


def perturbed(ref, seed=1, scale=0.3):
    noise = np.random.default_rng(seed).normal(scale=scale, size=ref.mlp.params.size)
    return ref.with_params(ref.mlp.params + noise)


def test_pairing_two_samples():
    b = pair_by_reward([[0], [1]], [0.2, 0.9])
    assert b.positive.tolist() == [[1]] and b.negative.tolist() == [[0]]


def test_pairing_odd_count_drops_median():
    b = pair_by_reward([[0], [1], [2], [3], [4]], [5.0, 1.0, 3.0, 4.0, 2.0])
    assert len(b) == 2
    assert b.reward_pos.tolist() == [5.0, 4.0] and b.reward_neg.tolist() == [2.0, 1.0]


def test_pairing_ties_are_stable():
    b = pair_by_reward([[0], [1], [2], [3]], [1.0, 1.0, 1.0, 1.0])
    assert b.positive.ravel().tolist() == [0, 1] and b.negative.ravel().tolist() == [2, 3]
    with pytest.raises(InputDomainError):
        pair_by_reward([[0]], [1.0])


def test_dpo_loss_is_log2_at_reference():
    ref = reference()
    seqs = ref.sample(PROMPT, 32, np.random.default_rng(0))
    loss, _ = dpo_loss_and_grad(PolicyTrainState(ref, ref, 0.1), PROMPT, pair_by_reward(seqs, POT.log_score(seqs)))
    assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_dpo_ties_carry_no_gradient():
    ref = reference()
    seqs = ref.sample(PROMPT, 8, np.random.default_rng(0))
    pairs = PreferenceBatch(seqs[:4], seqs[4:], np.ones(4), np.ones(4))
    _, grad = dpo_loss_and_grad(PolicyTrainState(perturbed(ref), ref, 0.4), PROMPT, pairs)
    assert not grad.any()


def test_dpo_gradient_matches_finite_differences():
    ref = reference()
    pol = perturbed(ref)
    seqs = ref.sample(PROMPT, 24, np.random.default_rng(2))
    rewards = np.random.default_rng(3).random(24)
    state = PolicyTrainState(pol, ref, 0.5)
    pairs = pair_by_reward(seqs, rewards)
    _, grad = dpo_loss_and_grad(state, PROMPT, pairs)
    idx = np.random.default_rng(4).choice(pol.mlp.params.size, 60, replace=False)
    fd = central_difference(lambda: dpo_loss_and_grad(state, PROMPT, pairs)[0], pol.mlp.params, idx)
    assert relative_error(grad[idx], fd) < 1e-4


def test_dpo_loss_vanishes_with_large_margin():
    ref = reference()
    pol = perturbed(ref)
    seq_a, seq_b = np.array([[2, 3, 2, 3]]), np.array([[1, 1, 1, 1]])
    pairs = PreferenceBatch(seq_a, seq_b, np.ones(1), np.zeros(1))
    margin = (pol.sequence_logprob(PROMPT, seq_a) - ref.sequence_logprob(PROMPT, seq_a)
              - pol.sequence_logprob(PROMPT, seq_b) + ref.sequence_logprob(PROMPT, seq_b))[0]
    beta = 1e4 * np.sign(margin)
    if beta < 0:
        pairs = PreferenceBatch(seq_b, seq_a, np.ones(1), np.zeros(1))
    loss, _ = dpo_loss_and_grad(PolicyTrainState(pol, ref, abs(beta)), PROMPT, pairs)
    assert loss < 1e-6


def test_grpo_advantages_standardized():
    adv = grpo_advantages(np.random.default_rng(0).normal(3.0, 2.0, 50))
    assert abs(adv.mean()) < 1e-9 and abs(adv.std() - 1.0) < 1e-9
    with pytest.raises(DegenerateBatchError):
        grpo_advantages([0.5, 0.5, 0.5])


def test_grpo_zero_advantage_at_reference():
    # symmetric rewards make each pair of advantages cancel; at the reference the regularizer is 0
    ref = reference()
    seqs = np.repeat(ref.sample(PROMPT, 1, np.random.default_rng(0)), 2, axis=0)
    loss, grad = grpo_loss_and_grad(PolicyTrainState(ref, ref, 0.1), PROMPT, seqs, [0.0, 1.0])
    assert abs(loss) < 1e-15
    np.testing.assert_allclose(grad, 0.0, atol=1e-15)


def test_grpo_gradient_matches_finite_differences():
    ref = reference()
    pol = perturbed(ref)
    seqs = pol.sample(PROMPT, 16, np.random.default_rng(5))
    rewards = POT.log_score(seqs)
    frozen = pol.token_logprobs(PROMPT, seqs)
    state = PolicyTrainState(pol, ref, 0.3)
    _, grad = grpo_loss_and_grad(state, PROMPT, seqs, rewards, frozen_logp=frozen)
    idx = np.random.default_rng(6).choice(pol.mlp.params.size, 60, replace=False)
    fd = central_difference(lambda: grpo_loss_and_grad(state, PROMPT, seqs, rewards, frozen_logp=frozen)[0],
                            pol.mlp.params, idx)
    assert relative_error(grad[idx], fd) < 1e-4


def test_grpo_regularizer_nonnegative():
    ref = reference()
    pol = perturbed(ref, scale=1.0)
    seqs = pol.sample(PROMPT, 64, np.random.default_rng(7))
    r = np.exp(ref.token_logprobs(PROMPT, seqs) - pol.token_logprobs(PROMPT, seqs))
    assert (r - np.log(r) - 1.0 >= 0).all()


def test_constant_reward_leaves_policy_at_reference():
    ref = reference()
    cfg = BaselineConfig(kind="dpo", batch=64, steps=50, lr=1e-2, beta=0.1)
    pol, _ = train_baseline(ref, lambda s: np.zeros(len(s)), PROMPT, cfg)
    np.testing.assert_array_equal(pol.mlp.params, ref.mlp.params)
    cfg = BaselineConfig(kind="grpo", batch=64, steps=50, lr=1e-2, beta=0.1)
    pol, _ = train_baseline(ref, lambda s: np.zeros(len(s)), PROMPT, cfg)
    np.testing.assert_array_equal(pol.mlp.params, ref.mlp.params)


@pytest.mark.parametrize("kind", ["dpo", "grpo"])
def test_training_raises_reward_and_is_deterministic(kind):
    ref = reference()
    cfg = BaselineConfig(kind=kind, batch=128, steps=100, lr=1e-2, beta=0.1, kl_every=100, kl_samples=128)
    pol, trace = train_baseline(ref, POT.log_score, PROMPT, cfg)
    rng = np.random.default_rng(9)
    assert POT.log_score(pol.sample(PROMPT, 4000, rng)).mean() > POT.log_score(ref.sample(PROMPT, 4000, rng)).mean()
    again, trace2 = train_baseline(ref, POT.log_score, PROMPT, cfg)
    np.testing.assert_array_equal(pol.mlp.params, again.mlp.params)
    assert trace == trace2 and trace[-1]["step"] == 100


def test_grpo_kl_shrinks_with_stronger_regularizer():
    ref = reference()
    kls = []
    for beta in (0.04, 0.32, 2.56):
        cfg = BaselineConfig(kind="grpo", batch=128, steps=200, lr=1e-2, beta=beta)
        pol, _ = train_baseline(ref, POT.log_score, PROMPT, cfg)
        s = pol.sample(PROMPT, 20_000, np.random.default_rng(11))
        kls.append(float(np.mean(pol.sequence_logprob(PROMPT, s) - ref.sequence_logprob(PROMPT, s))))
    assert kls[0] >= kls[1] >= kls[2] >= 0


def test_unknown_kind_raises():
    with pytest.raises(InputDomainError):
        train_baseline(reference(), POT.log_score, PROMPT, BaselineConfig(kind="ppo"))
