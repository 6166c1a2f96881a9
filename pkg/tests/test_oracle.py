import math

import numpy as np
import pytest
from conftest import brute_force_target

from twistsmc.errors import CapacityError, StarvationError
from twistsmc.oracle import (empirical_distribution, enumerate_target, exact_ctl_loss, exact_kl_target_vs_proposal,
                             rejection_sample, total_variation)
from twistsmc.potential import LogisticPotential
from twistsmc.seqmodel import Prompt, TabularModel, Vocab
from twistsmc.twist import ConstantTwist, optimal_twist_table

A, B = 0, 1
UNTWISTED_TOY_KL = 0.09487759197468807457  # (2/7) log(4/7) + (5/7) log(10/7), mpmath


def test_toy_target_exact(toy):
    ex = enumerate_target(*toy)
    assert ex.z == pytest.approx(0.4375, abs=1e-12)
    assert ex.sigma()[3] == pytest.approx(4 / 7, abs=1e-12)
    assert np.exp(ex.log_marginals[1][B]) == pytest.approx(5 / 7, abs=1e-12)


def test_matches_brute_force(small_sparse):
    ex = enumerate_target(*small_sparse)
    seqs, z, sigma = brute_force_target(*small_sparse)
    np.testing.assert_array_equal(ex.sequences(), seqs)
    assert ex.z == pytest.approx(z, rel=1e-12)
    np.testing.assert_allclose(ex.sigma(), sigma, rtol=0, atol=1e-14)
    for t, marg in enumerate(ex.log_marginals):
        assert np.exp(marg).sum() == pytest.approx(1.0, abs=1e-9)
        direct = np.bincount(seqs[:, :t] @ (4 ** np.arange(t - 1, -1, -1)) if t else np.zeros(len(seqs), int),
                             weights=sigma, minlength=4 ** t)
        np.testing.assert_allclose(np.exp(marg), direct, atol=1e-14)


def test_unit_potential_target_is_base_model():
    m = TabularModel.random(3, 2, np.random.default_rng(0))
    prompt = Prompt((1,), 4)
    ex = enumerate_target(m, LogisticPotential([1.0, 0.0, -1.0], beta=0.0), prompt)
    np.testing.assert_allclose(ex.sigma(), np.exp(m.sequence_logprob(prompt, ex.sequences())), atol=1e-12)


def test_capacity_guard():
    with pytest.raises(CapacityError):
        enumerate_target(TabularModel.uniform(8, 1), LogisticPotential(np.zeros(8)), Prompt((), 8))


def test_kl_oracle_twist_is_zero(small_sparse):
    ex = enumerate_target(*small_sparse)
    table = optimal_twist_table(*small_sparse)
    assert abs(exact_kl_target_vs_proposal(ex, small_sparse[0], table)) <= 1e-10
    assert abs(exact_ctl_loss(ex, small_sparse[0], table)) <= 1e-10


def test_kl_untwisted_unit_potential():
    m = TabularModel.random(3, 2, np.random.default_rng(0))
    ex = enumerate_target(m, LogisticPotential([1.0, 0.0, -1.0], beta=0.0), Prompt((1,), 3))
    assert abs(exact_kl_target_vs_proposal(ex, m, ConstantTwist(3))) <= 1e-12


def test_kl_untwisted_toy(toy):
    ex = enumerate_target(*toy)
    assert exact_kl_target_vs_proposal(ex, toy[0], ConstantTwist(2)) == pytest.approx(UNTWISTED_TOY_KL, abs=1e-14)
    assert exact_ctl_loss(ex, toy[0], ConstantTwist(2)) == pytest.approx(UNTWISTED_TOY_KL, abs=1e-14)


def test_kl_untwisted_sparse_closed_form(small_sparse):
    model, pot, prompt = small_sparse
    seqs, _, sigma = brute_force_target(model, pot, prompt)
    # untwisted proposal: base model until T - 1, then the exact final conditional
    T = prompt.horizon
    prefix_lp = np.array([model.sequence_logprob(Prompt(prompt.tokens, T - 1), s[:-1]) for s in seqs])
    sig_prefix = sigma.reshape(-1, 4).sum(axis=1)
    log_q = prefix_lp + np.log(sigma / np.repeat(sig_prefix, 4))
    kl = float(np.sum(sigma * (np.log(sigma) - log_q)))
    ex = enumerate_target(model, pot, prompt)
    assert kl > 0
    assert exact_kl_target_vs_proposal(ex, model, ConstantTwist(4)) == pytest.approx(kl, abs=1e-10)


def test_rejection_sampling_sparse():
    # 16 cells: at 1e5 accepts the multinomial TV noise is a few 1e-3
    model = TabularModel.random(2, 2, np.random.default_rng(0), offsets=[0.0, -1.5])
    pot = LogisticPotential([-1.0, 2.0], -2.0, 3.0)
    prompt = Prompt((0,), 4)
    ex = enumerate_target(model, pot, prompt)
    assert ex.z < 0.05
    seqs, ratio = rejection_sample(model, pot, prompt, 100_000, np.random.default_rng(0))
    assert total_variation(empirical_distribution(seqs, 2), ex.sigma()) < 0.01
    attempts = 100_000 / ratio
    assert abs(ratio - ex.z) <= 3 * math.sqrt(ex.z * (1 - ex.z) / attempts)


def test_rejection_beta_zero_accepts_everything():
    m = TabularModel.uniform(3, 2)
    _, ratio = rejection_sample(m, LogisticPotential([0.0, 1.0, 2.0], beta=0.0), Prompt((), 3), 500,
                                np.random.default_rng(0))
    assert ratio == 1.0


def test_rejection_starvation():
    pot = LogisticPotential([-30.0, -30.0], beta=1.0)
    with pytest.raises(StarvationError):
        rejection_sample(TabularModel.uniform(2, 1), pot, Prompt((), 2), 10, np.random.default_rng(0),
                         max_attempts=5000)


def test_csv_dump(toy, tmp_path):
    ex = enumerate_target(*toy)
    ex.write_csv(tmp_path / "sigma.csv", Vocab(2, ("a", "b")))
    lines = (tmp_path / "sigma.csv").read_text().splitlines()
    assert lines[0] == "sequence,log_p,log_phi,sigma"
    assert lines[4].startswith("b b,") and lines[4].endswith(",0.571428571429")
    assert lines[-1] == "Z,,,0.4375"
