"""Sequence-level potentials, always handled as log-scores.

``log_score(seqs)`` returns ``beta * log p(toxic | s)`` clamped at the log
floor, so scores lie in ``(0, 1]``. ``log_score_extensions(parents)`` scores
every one-token completion of length ``T - 1`` parents at once, which is what
the final-step proposal needs.
"""

from __future__ import annotations

import numpy as np

from .errors import InputDomainError
from .nn import log_sigmoid
from .seqmodel import DEFAULT_LOG_FLOOR, AutoregressiveModel, Prompt, as_prefixes


class Potential:
    vocab_size: int
    beta: float
    log_floor: float

    def log_prob_toxic(self, seqs) -> np.ndarray:
        raise NotImplementedError

    def toxicity(self, seqs) -> np.ndarray:
        """Classifier probability at ``beta = 1`` regardless of ``self.beta``."""
        return np.exp(self.log_prob_toxic(seqs))

    def log_score(self, seqs) -> np.ndarray | float:
        single = np.ndim(seqs) == 1
        lp = self.log_prob_toxic(as_prefixes(seqs))
        out = np.maximum(self.beta * lp, self.log_floor) if self.beta else np.zeros_like(lp)
        return float(out[0]) if single else out

    def log_score_extensions(self, parents) -> np.ndarray:
        parents = as_prefixes(parents)
        B, V = parents.shape[0], self.vocab_size
        full = np.concatenate([np.repeat(parents, V, axis=0),
                               np.tile(np.arange(V), B)[:, None]], axis=1)
        return self.log_score(full).reshape(B, V)


class LogisticPotential(Potential):
    """``p(toxic | s) = sigmoid(bias + sum_t w[s_t])`` raised to ``beta``."""

    def __init__(self, weights, bias=0.0, beta=1.0, log_floor=DEFAULT_LOG_FLOOR):
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.ndim != 1 or self.weights.size < 2:
            raise InputDomainError("need one weight per token")
        if beta < 0:
            raise InputDomainError("beta must be >= 0")
        self.vocab_size = self.weights.size
        self.bias, self.beta, self.log_floor = float(bias), float(beta), float(log_floor)

    def with_beta(self, beta):
        return LogisticPotential(self.weights, self.bias, beta, self.log_floor)

    def logits(self, seqs):
        return self.bias + self.weights[as_prefixes(seqs)].sum(axis=1)

    def log_prob_toxic(self, seqs):
        return log_sigmoid(self.logits(seqs))

    def log_score_extensions(self, parents):
        parents = as_prefixes(parents)
        z = (self.bias + self.weights[parents].sum(axis=1))[:, None] + self.weights[None, :]
        if not self.beta:
            return np.zeros(z.shape)
        return np.maximum(self.beta * log_sigmoid(z), self.log_floor)


class TablePotential(Potential):
    """Explicit classifier probabilities for listed sequences; ``default`` elsewhere."""

    def __init__(self, vocab_size, table: dict, default=1.0, beta=1.0, log_floor=DEFAULT_LOG_FLOOR):
        self.vocab_size = int(vocab_size)
        self.table = {tuple(int(t) for t in k): float(v) for k, v in table.items()}
        for p in list(self.table.values()) + [default]:
            if not 0.0 < p <= 1.0:
                raise InputDomainError("table scores must lie in (0, 1]")
        if beta < 0:
            raise InputDomainError("beta must be >= 0")
        self.default, self.beta, self.log_floor = float(default), float(beta), float(log_floor)

    def with_beta(self, beta):
        return TablePotential(self.vocab_size, self.table, self.default, beta, self.log_floor)

    def log_prob_toxic(self, seqs):
        seqs = as_prefixes(seqs)
        return np.log([self.table.get(tuple(row), self.default) for row in seqs.tolist()])


class EffectivePotential(Potential):
    """``log phi_m(s) = log p0(s) + log phi(s) - log p_m(s)``.

    Keeps ``p_m * phi_m == p0 * phi`` for every sequence, so the target is the
    same whichever model generates the proposals.
    """

    def __init__(self, base: Potential, reference: AutoregressiveModel,
                 current: AutoregressiveModel, prompt: Prompt):
        self.base, self.reference, self.current, self.prompt = base, reference, current, prompt
        self.vocab_size = base.vocab_size
        self.beta, self.log_floor = base.beta, base.log_floor
        self.is_identity = reference is current

    def log_prob_toxic(self, seqs):
        return self.base.log_prob_toxic(seqs)

    def log_score(self, seqs):
        single = np.ndim(seqs) == 1
        seqs = as_prefixes(seqs)
        out = self.base.log_score(seqs)
        if not self.is_identity:
            out = (self.reference.sequence_logprob(self.prompt, seqs) + out
                   - self.current.sequence_logprob(self.prompt, seqs))
        return float(out[0]) if single else out

    def log_score_extensions(self, parents):
        parents = as_prefixes(parents)
        out = self.base.log_score_extensions(parents)
        if self.is_identity:
            return out
        if parents.shape[1] + 1 != self.prompt.horizon:
            raise InputDomainError("extensions must complete the sequence")

        def prefix_and_next(model):
            lp = model.token_logprobs(self.prompt, parents).sum(axis=1)
            return lp[:, None] + model.next_logprobs(self.prompt, parents)

        return prefix_and_next(self.reference) + out - prefix_and_next(self.current)
