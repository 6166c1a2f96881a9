import itertools

import numpy as np
import pytest
from conftest import brute_force_target, central_difference, relative_error

from twistsmc.errors import CapacityError
from twistsmc.potential import LogisticPotential
from twistsmc.seqmodel import Prompt, TabularModel
from twistsmc.twist import (TwistNetwork, accumulate_grad_log_twist, load_twist, optimal_twist_table,
                            save_twist)

A, B = 0, 1


def random_twist(V=3, T=4, seed=0, hidden=8):
    tw = TwistNetwork.initialize(V, T, np.random.default_rng(seed), window=2, hidden=hidden)
    tw.params[:] = np.random.default_rng(seed + 1).normal(size=tw.params.size)
    return tw


def test_zero_head_gives_constant_outputs():
    tw = TwistNetwork.initialize(3, 4, np.random.default_rng(0))
    out = tw.log_twist_all(Prompt((1,), 4), np.array([[0, 2], [1, 1]]))
    assert np.all(out == out[0, 0])


def test_evaluation_is_pure_and_paths_agree():
    tw = random_twist()
    prompt, parents = Prompt((2,), 4), np.array([[0, 1, 2], [2, 2, 0]])
    a, b = tw.log_twist_all(prompt, parents), tw.log_twist_all(prompt, parents)
    np.testing.assert_array_equal(a, b)
    for v in range(3):
        single = tw.log_twist(prompt, parents, [v, v])
        np.testing.assert_allclose(single, a[:, v], rtol=0, atol=1e-12)


def test_zero_coefficient_leaves_buffer():
    tw = random_twist()
    grad = np.arange(tw.params.size, dtype=float)
    before = grad.copy()
    accumulate_grad_log_twist(tw, Prompt((0,), 4), [1, 2], 0, 0.0, grad)
    np.testing.assert_array_equal(grad, before)


def test_gradient_matches_finite_differences():
    tw = random_twist(seed=3)
    prompt = Prompt((1,), 4)
    rng = np.random.default_rng(0)
    parents = rng.integers(0, 3, size=(6, 2))
    tokens = rng.integers(0, 3, size=6)
    coef = rng.normal(size=6)
    grad = np.zeros_like(tw.params)
    tw.accumulate_grad(prompt, parents, tokens, coef, grad)

    def f():
        return float(coef @ tw.log_twist(prompt, parents, tokens))

    idx = rng.choice(tw.params.size, 100, replace=False)
    assert relative_error(grad[idx], central_difference(f, tw.params, idx)) < 1e-4


def test_gradient_linearity():
    tw = random_twist()
    prompt = Prompt((0,), 4)
    g1 = np.zeros_like(tw.params)
    accumulate_grad_log_twist(tw, prompt, [1], 2, 0.3, g1)
    accumulate_grad_log_twist(tw, prompt, [1], 2, 1.1, g1)
    g2 = np.zeros_like(tw.params)
    accumulate_grad_log_twist(tw, prompt, [1], 2, 1.4, g2)
    np.testing.assert_allclose(g1, g2, rtol=0, atol=1e-12)


def test_optimal_twist_toy(toy):
    model, pot, prompt = toy
    table = optimal_twist_table(model, pot, prompt)
    assert table.value([B]) == pytest.approx(0.625, abs=1e-15)
    assert table.value([A]) == pytest.approx(0.25, abs=1e-15)
    assert table.value([B, B]) == 1.0
    assert np.exp(table.log_levels[0][0]) == pytest.approx(0.4375, abs=1e-15)


def test_optimal_twist_unit_potential():
    model = TabularModel.random(3, 2, np.random.default_rng(0))
    table = optimal_twist_table(model, LogisticPotential([1.0, 2.0, 3.0], beta=0.0), Prompt((0,), 3))
    for lv in table.log_levels:
        np.testing.assert_allclose(lv, 0.0, atol=1e-14)


def test_optimal_twist_against_direct_enumeration(small_sparse):
    model, pot, prompt = small_sparse
    table = optimal_twist_table(model, pot, prompt)
    V, T = 4, prompt.horizon
    seqs, _, _ = brute_force_target(model, pot, prompt)
    for t in range(T + 1):
        for prefix in itertools.product(range(V), repeat=t):
            rest = seqs[np.all(seqs[:, :t] == prefix, axis=1)]
            cond = np.exp(model.sequence_logprob(prompt, rest) - (model.sequence_logprob(
                Prompt(prompt.tokens, t), np.array(prefix)) if t else 0.0))
            direct = float(cond @ np.exp(pot.log_score(rest)))
            assert table.value(prefix) == pytest.approx(direct, rel=1e-12)
        if t < T:
            for prefix in itertools.product(range(V), repeat=t):
                p = np.exp(model.next_token_logprobs(prompt, prefix))
                kids = [table.value(list(prefix) + [v]) for v in range(V)]
                assert table.value(prefix) == pytest.approx(float(p @ kids), rel=1e-12)


def test_capacity_guard():
    with pytest.raises(CapacityError):
        optimal_twist_table(TabularModel.uniform(16, 1), LogisticPotential(np.zeros(16)), Prompt((), 6))


def test_save_load_round_trip(tmp_path):
    tw = random_twist()
    tw.generation = 3
    save_twist(tw, tmp_path / "tw.txt")
    back = load_twist(tmp_path / "tw.txt")
    np.testing.assert_array_equal(back.params, tw.params)
    assert (back.window, back.horizon, back.generation) == (2, 4, 3)
