"""Ground truth for small instances: exact target tables and rejection sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .enumeration import guard, level_tokens, model_conditionals, prefix_logprobs
from .errors import InputDomainError, StarvationError
from .nn import log_softmax, logsumexp
from .seqmodel import Prompt


@dataclass
class ExactDistribution:
    vocab_size: int
    prompt: Prompt
    cond: list            # reference-model conditionals per level
    log_p: np.ndarray     # log p0(s) for every complete s, lexicographic
    log_phi: np.ndarray   # log phi(s)
    log_z: float
    log_sigma: np.ndarray
    log_marginals: list   # log_marginals[t] over level t, t = 0..T

    @property
    def horizon(self):
        return self.prompt.horizon

    @property
    def z(self):
        return float(np.exp(self.log_z))

    def sigma(self):
        return np.exp(self.log_sigma)

    def log_sigma_tilde(self):
        return self.log_p + self.log_phi

    def expectation(self, values):
        return float(np.dot(self.sigma(), values))

    def sequences(self):
        return level_tokens(self.vocab_size, self.horizon)

    def twisted_targets(self, model, twist):
        """``log pi_t`` and ``log Z_pi_t`` for ``t = 1..T-1`` under ``model`` and ``twist``."""
        levels = prefix_logprobs(model_conditionals(model, self.prompt))
        out = []
        for t in range(1, self.horizon):
            parents = level_tokens(self.vocab_size, t - 1)
            lpsi = twist.log_twist_all(self.prompt, parents).reshape(-1)
            unnorm = levels[t] + lpsi
            lz = logsumexp(unnorm)
            out.append((unnorm - lz, float(lz)))
        return out

    def write_csv(self, path, vocab=None):
        """Golden-file dump: one row per sequence, sorted, plus ``Z``."""
        seqs = self.sequences()
        name = vocab.decode if vocab is not None else (lambda s: " ".join(map(str, s)))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sequence", "log_p", "log_phi", "sigma"])
            for s, lp, lf, sg in zip(seqs, self.log_p, self.log_phi, self.sigma()):
                w.writerow([name(s), f"{lp:.12g}", f"{lf:.12g}", f"{sg:.12g}"])
            w.writerow(["Z", "", "", f"{self.z:.12g}"])


def enumerate_target(model, potential, prompt: Prompt) -> ExactDistribution:
    """Exact ``sigma ∝ p * phi`` over every continuation, with all prefix marginals."""
    V, T = model.vocab_size, prompt.horizon
    guard(V, T)
    cond = model_conditionals(model, prompt)
    log_p = prefix_logprobs(cond)[T]
    log_phi = np.asarray(potential.log_score(level_tokens(V, T)), dtype=np.float64)
    unnorm = log_p + log_phi
    log_z = float(logsumexp(unnorm))
    log_sigma = unnorm - log_z
    marg = [None] * (T + 1)
    marg[T] = log_sigma
    for t in range(T - 1, -1, -1):
        marg[t] = logsumexp(marg[t + 1].reshape(-1, V), axis=1)
    return ExactDistribution(V, prompt, cond, log_p, log_phi, log_z, log_sigma, marg)


def proposal_log_table(exact: ExactDistribution, model, twist) -> np.ndarray:
    """``log q(s)`` for every complete sequence under the twist-induced proposal.

    The final step uses the effective potential ``p0 * phi / model``, which is
    the plain potential when ``model`` is the reference model.
    """
    V, T = exact.vocab_size, exact.horizon
    cond = model_conditionals(model, exact.prompt)
    levels = prefix_logprobs(cond)
    logq = np.zeros(1)
    for t in range(T - 1):
        lpsi = twist.log_twist_all(exact.prompt, level_tokens(V, t))
        logq = (logq[:, None] + log_softmax(cond[t] + lpsi, axis=1)).reshape(-1)
    log_phi_m = exact.log_p + exact.log_phi - levels[T]
    last = (cond[T - 1].reshape(-1) + log_phi_m).reshape(-1, V)
    return (logq[:, None] + log_softmax(last, axis=1)).reshape(-1)


def kl_divergence(log_p, log_q) -> float:
    p = np.exp(log_p)
    mask = p > 0
    return float(max(np.sum(p[mask] * (log_p[mask] - log_q[mask])), 0.0))


def exact_kl_target_vs_proposal(exact: ExactDistribution, model, twist) -> float:
    """``KL(sigma || q)`` by enumeration."""
    return kl_divergence(exact.log_sigma, proposal_log_table(exact, model, twist))


def exact_ctl_loss(exact: ExactDistribution, model, twist) -> float:
    """``sum_t KL(sigma_t || pi_t)`` over ``t = 1..T-1``.

    The ``t = T`` term vanishes because the final twist is the potential.
    """
    total = 0.0
    for t, (log_pi, _) in enumerate(exact.twisted_targets(model, twist), start=1):
        total += kl_divergence(exact.log_marginals[t], log_pi)
    return total


def rejection_sample(model, potential, prompt, n_accepts, rng, max_attempts=10 ** 8, batch=None):
    """Draw from ``model`` and accept each candidate with probability ``phi``.

    Returns ``(accepted (n_accepts, T), accepts / attempts)`` where attempts
    counts candidates up to and including the last accepted one.
    """
    if n_accepts < 1:
        raise InputDomainError("n_accepts must be >= 1")
    accepted, attempts, n_found = [], 0, 0
    rate = 1.0
    while n_found < n_accepts:
        if attempts >= max_attempts:
            raise StarvationError(
                f"only {n_found} of {n_accepts} accepted after {attempts} attempts")
        size = batch or int(min(max((n_accepts - n_found) / max(rate, 1e-6) * 1.2, 1024), 2 ** 20))
        size = int(min(size, max_attempts - attempts))
        cand = model.sample(prompt, size, rng)
        u = rng.random(size)
        ok = np.log(u) < potential.log_score(cand)
        idx = np.flatnonzero(ok)
        need = n_accepts - n_found
        if idx.size >= need:
            idx = idx[:need]
            attempts += int(idx[-1]) + 1
        else:
            attempts += size
        accepted.append(cand[idx])
        n_found += idx.size
        rate = max(n_found / attempts, 1.0 / attempts)
    return np.concatenate(accepted, axis=0), n_accepts / attempts


def empirical_distribution(seqs, vocab_size) -> np.ndarray:
    """Frequencies of complete sequences in lexicographic order."""
    seqs = np.asarray(seqs, dtype=np.int64)
    T = seqs.shape[1]
    powers = vocab_size ** np.arange(T - 1, -1, -1)
    idx = seqs @ powers
    return np.bincount(idx, minlength=vocab_size ** T) / len(idx)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
