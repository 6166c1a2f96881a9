"""Twist functions: a learned MLP twist, a constant twist, and the exact
optimal twist obtained by enumeration.

Every twist answers ``log_twist_all(prompt, parents)``: for parents of length
``t - 1`` it returns, for each candidate token ``v``, ``log psi(parent + v)``.
"""

from __future__ import annotations

import numpy as np

from .enumeration import guard, level_tokens, model_conditionals, prefix_index
from .nn import MLP, logsumexp, make_optimizer
from .seqmodel import Prompt, as_prefixes, window_features
from .textio import read_flat, write_flat


class TwistNetwork:
    """Shared-across-time MLP twist with one output per candidate next token.

    Features are a one-hot window of the last ``window`` tokens before the
    candidate plus a one-hot of the candidate's position.
    """

    def __init__(self, vocab_size, horizon, window, mlp: MLP, generation=0):
        self.vocab_size, self.horizon, self.window = int(vocab_size), int(horizon), int(window)
        self.mlp = mlp
        self.generation = int(generation)

    @classmethod
    def initialize(cls, vocab_size, horizon, rng, window=2, hidden=64, generation=0):
        n_in = window * (vocab_size + 1) + horizon
        # zero head: psi is constant, so the first proposal is the base model
        mlp = MLP.initialize(n_in, hidden, vocab_size, rng, scale=0.1, zero_head=True)
        return cls(vocab_size, horizon, window, mlp, generation)

    @property
    def params(self) -> np.ndarray:
        return self.mlp.params

    def copy(self, generation=None) -> "TwistNetwork":
        gen = self.generation if generation is None else generation
        return TwistNetwork(self.vocab_size, self.horizon, self.window, self.mlp.copy(), gen)

    def with_params(self, params) -> "TwistNetwork":
        mlp = MLP(self.mlp.n_in, self.mlp.n_hidden, self.mlp.n_out, np.array(params, dtype=np.float64))
        return TwistNetwork(self.vocab_size, self.horizon, self.window, mlp, self.generation)

    def features(self, prompt: Prompt, parents):
        return window_features(prompt.tokens, as_prefixes(parents), self.window,
                               self.vocab_size, self.horizon)

    def log_twist_all(self, prompt, parents) -> np.ndarray:
        out, _ = self.mlp.forward(self.features(prompt, parents))
        return out

    def log_twist(self, prompt, parents, tokens) -> np.ndarray:
        """Single-candidate path: evaluates only the output rows it needs."""
        h = self.mlp.hidden(self.features(prompt, parents))
        _, _, W2, b2 = self.mlp.weights
        tokens = np.asarray(tokens, dtype=np.int64)
        return np.einsum("bh,bh->b", h, W2[tokens]) + b2[tokens]

    def accumulate_grad(self, prompt, parents, tokens, coef, grad) -> np.ndarray:
        """``grad += sum_b coef[b] * d log psi(parents[b] + tokens[b]) / d theta``."""
        X = self.features(prompt, parents)
        out, h = self.mlp.forward(X)
        d_out = np.zeros_like(out)
        d_out[np.arange(X.shape[0]), np.asarray(tokens, dtype=np.int64)] = coef
        return self.mlp.backward(X, h, d_out, grad)


def accumulate_grad_log_twist(tw: TwistNetwork, prompt, prefix, token, coefficient, grad):
    """Single-example form of :meth:`TwistNetwork.accumulate_grad`."""
    prefix = np.asarray(prefix, dtype=np.int64)[None, :]
    return tw.accumulate_grad(prompt, prefix, [int(token)], np.array([float(coefficient)]), grad)


class ConstantTwist:
    """``psi == 1`` everywhere."""

    def __init__(self, vocab_size):
        self.vocab_size = int(vocab_size)

    def log_twist_all(self, prompt, parents):
        return np.zeros((as_prefixes(parents).shape[0], self.vocab_size))


class TableTwist:
    """Twist backed by explicit per-level tables (``log_levels[t]`` has ``V**t`` entries)."""

    def __init__(self, vocab_size, log_levels):
        self.vocab_size = int(vocab_size)
        self.log_levels = [np.asarray(x, dtype=np.float64) for x in log_levels]

    @property
    def horizon(self):
        return len(self.log_levels) - 1

    def log_twist_all(self, prompt, parents):
        parents = as_prefixes(parents)
        t = parents.shape[1]
        table = self.log_levels[t + 1].reshape(-1, self.vocab_size)
        return table[prefix_index(parents, self.vocab_size)]

    def value(self, prefix) -> float:
        prefix = np.asarray(prefix, dtype=np.int64)[None, :]
        return float(np.exp(self.log_levels[prefix.shape[1]][prefix_index(prefix, self.vocab_size)][0]))


def optimal_twist_table(model, potential, prompt: Prompt, horizon: int | None = None) -> TableTwist:
    """Expected future potential of every prefix, by backward recursion.

    Level ``T`` is ``log phi``; level ``t`` is the model-weighted log-sum-exp
    of its children. Level 0 is therefore ``log Z``.
    """
    T = prompt.horizon if horizon is None else horizon
    V = model.vocab_size
    guard(V, T)
    cond = model_conditionals(model, prompt, T)
    levels = [None] * (T + 1)
    levels[T] = np.asarray(potential.log_score(level_tokens(V, T)), dtype=np.float64)
    for t in range(T - 1, -1, -1):
        levels[t] = logsumexp(cond[t] + levels[t + 1].reshape(-1, V), axis=1)
    return TableTwist(V, levels)


def fit_twist_to_table(tw: TwistNetwork, table: TableTwist, prompt, steps=3000, lr=1e-2) -> TwistNetwork:
    """Regress the network onto a table twist, up to a free constant per position.

    Only positions ``1..T-1`` are fitted; the final step always uses the
    potential itself.
    """
    V, T = tw.vocab_size, tw.horizon
    tw = tw.copy()
    parents = [level_tokens(V, t - 1) for t in range(1, T)]
    targets = [table.log_twist_all(prompt, p) for p in parents]
    opt = make_optimizer("adam", tw.params.size, lr)
    for _ in range(steps):
        grad = np.zeros_like(tw.params)
        for p, y in zip(parents, targets):
            X = tw.features(prompt, p)
            out, h = tw.mlp.forward(X)
            resid = out - y
            resid -= resid.mean()
            tw.mlp.backward(X, h, resid / resid.size, grad)
        opt.step(tw.params, grad)
    return tw


def save_twist(tw: TwistNetwork, path) -> None:
    header = {
        "kind": "twist",
        "vocab_size": tw.vocab_size,
        "horizon": tw.horizon,
        "window": tw.window,
        "hidden": tw.mlp.n_hidden,
        "generation": tw.generation,
    }
    write_flat(path, header, tw.params)


def load_twist(path) -> TwistNetwork:
    header, values = read_flat(path)
    V, T, w = int(header["vocab_size"]), int(header["horizon"]), int(header["window"])
    mlp = MLP(w * (V + 1) + T, int(header["hidden"]), V, values)
    return TwistNetwork(V, T, w, mlp, int(header["generation"]))
