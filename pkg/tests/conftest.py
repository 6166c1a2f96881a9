import itertools

import numpy as np
import pytest

from twistsmc.potential import LogisticPotential, TablePotential
from twistsmc.seqmodel import Prompt, TabularModel

A, B = 0, 1


@pytest.fixture
def toy():
    """Uniform base over {a, b}, T = 2, phi(bb) = 1 and 0.25 elsewhere."""
    model = TabularModel.uniform(2, 1)
    pot = TablePotential(2, {(B, B): 1.0}, default=0.25)
    return model, pot, Prompt((), 2)


@pytest.fixture
def small_sparse():
    """Vocab 4, T = 4 target with a few high-score tokens; cheap to enumerate and train."""
    model = TabularModel.random(4, 2, np.random.default_rng(3), scale=0.5, offsets=[0, 0, -1.5, -1.5])
    pot = LogisticPotential([0.0, -0.5, 2.0, 2.0], -3.0, 5.0)
    return model, pot, Prompt((0,), 4)


def brute_force_target(model, pot, prompt):
    """Independent oracle: loop over every sequence with the chain rule."""
    V, T = model.vocab_size, prompt.horizon
    seqs = np.array(list(itertools.product(range(V), repeat=T)), dtype=np.int64)
    logp = np.array([sum(model.next_token_logprobs(prompt, s[:t])[s[t]] for t in range(T)) for s in seqs])
    unnorm = np.exp(logp) * np.exp(pot.log_score(seqs))
    return seqs, unnorm.sum(), unnorm / unnorm.sum()


def central_difference(f, x, idx, h=1e-5):
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        out[j] = (up - down) / (2 * h)
    return out


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8))


# vocab 4, T = 4 experiment small enough that every subcommand runs in about a second
SMALL_CONFIG = {
    "vocab": ["a", "b", "c", "d"], "prompt": ["a"], "horizon": 4,
    "base_model": {"offsets": [0, 0, -2, -2]},
    "potential": {"weights": {"c": 2.0, "d": 2.0}, "bias": -3.0, "beta": 5.0},
    "ctl": {"steps": 100, "k_pos": 64, "k_neg": 64},
    "distill": {"generations": 1, "dataset_size": 500},
    "smc": {"k_train": 20, "k_grid": [2, 8], "repeats": 64, "test_runs": 20},
    "oracle": {"n_accepts": 300},
    "eval": {"kl_samples": 1000},
    "baselines": {"reference_samples": 500, "reference_steps": 100, "steps": 20, "lrs": [1e-3],
                  "beta_dpo": [0.1], "beta_grpo": [0.04], "eval_samples": 200},
}


def write_config(path, overrides=None):
    import copy
    import json
    cfg = copy.deepcopy(SMALL_CONFIG)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    path.write_text(json.dumps(cfg))
    return path


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# filled by test_acceptance.py; printed once at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
