"""Twisted SMC: extend with the twist-induced proposal, reweight, resample.

The engine runs ``n_runs`` independent particle systems of ``K`` particles in
lock-step so that repeated experiments vectorize. All weights live in the log
domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, InputDomainError
from .nn import logsumexp
from .seqmodel import as_prefixes, categorical


def propose_next(model, twist, potential, prompt, parents):
    """Twist-induced next-token proposal ``q(v) ∝ p(v | parent) psi(parent + v)``.

    At the last position the twist is replaced by the potential itself.
    Returns ``(log_q, log_normalizer, log_psi_of_children)``.
    """
    parents = as_prefixes(parents)
    logp = model.next_logprobs(prompt, parents)
    if parents.shape[1] + 1 == prompt.horizon:
        log_psi = potential.log_score_extensions(parents)
    else:
        log_psi = twist.log_twist_all(prompt, parents)
    a = logp + log_psi
    log_norm = logsumexp(a, axis=1)
    return a - log_norm[:, None], log_norm, log_psi


def parent_log_twist(twist, prompt, parents) -> np.ndarray:
    """``log psi(s_{1:t-1})`` of each parent, with the empty prefix's twist equal to 1."""
    parents = as_prefixes(parents)
    if parents.shape[1] == 0:
        return np.zeros(parents.shape[0])
    vals = twist.log_twist_all(prompt, parents[:, :-1])
    return vals[np.arange(parents.shape[0]), parents[:, -1]]


def incremental_log_weight(model, twist, potential, prompt, parents) -> np.ndarray:
    """Reweighting factor for extending each parent by one token.

    Depends on the parent only: ``log sum_v p(v | parent) psi(parent + v) - log psi(parent)``.
    """
    _, log_norm, _ = propose_next(model, twist, potential, prompt, parents)
    return log_norm - parent_log_twist(twist, prompt, parents)


def effective_sample_size(log_weights, axis=-1):
    lw = np.asarray(log_weights, dtype=np.float64)
    m = np.max(lw, axis=axis, keepdims=True)
    w = np.exp(lw - m)
    return np.sum(w, axis=axis) ** 2 / np.sum(w * w, axis=axis)


def normalize_log_weights(log_weights, axis=-1):
    lw = np.asarray(log_weights, dtype=np.float64)
    return np.exp(lw - np.expand_dims(logsumexp(lw, axis=axis), axis))


def resample(log_weights, rng, scheme="multinomial") -> np.ndarray:
    """Ancestor indices for each row of a ``(runs, K)`` log-weight array.

    Multinomial ancestors come back grouped by parent (the multiset is what
    matters); systematic ancestors are sorted by construction.
    """
    lw = np.atleast_2d(np.asarray(log_weights, dtype=np.float64))
    R, K = lw.shape
    m = lw.max(axis=1, keepdims=True)
    bad = ~np.isfinite(m[:, 0])
    if bad.any():
        raise DegeneracyError(
            "all particle weights collapsed",
            {"runs": np.flatnonzero(bad).tolist(), "max_log_weight": m[bad, 0].tolist()})
    w = np.exp(lw - m)
    w /= w.sum(axis=1, keepdims=True)
    if K == 1:
        return np.zeros((R, 1), dtype=np.int64)
    if scheme == "multinomial":
        counts = rng.multinomial(K, w)
        return np.repeat(np.tile(np.arange(K), R), counts.ravel()).reshape(R, K)
    if scheme == "systematic":
        u = (rng.random((R, 1)) + np.arange(K)) / K
        cdf = np.cumsum(w, axis=1)
        out = np.stack([np.searchsorted(cdf[r], u[r], side="right") for r in range(R)])
        return np.minimum(out, K - 1)
    raise InputDomainError(f"unknown resampling scheme {scheme!r}")


@dataclass
class ParticleSystem:
    """State of ``runs`` particle systems after the last step.

    ``incremental[r, k, t]`` and ``proposal_logprob[r, k, t]`` are recorded for
    the particle that occupied slot ``k`` at step ``t`` before resampling;
    ``ancestors[r, :, t]`` maps slots after step ``t``'s resampling to slots
    before it.
    """

    sequences: np.ndarray        # (runs, K, steps)
    log_weights: np.ndarray      # (runs, K) accumulated since the last resampling
    log_z: np.ndarray            # (runs,)
    log_z_increments: np.ndarray  # (runs, steps)
    ess: np.ndarray              # (runs, steps), before resampling
    incremental: np.ndarray      # (runs, K, steps)
    proposal_logprob: np.ndarray  # (runs, K, steps)
    ancestors: np.ndarray        # (runs, K, steps)
    unique_ancestors: np.ndarray  # (runs, steps)

    @property
    def K(self):
        return self.sequences.shape[1]

    def normalized_weights(self):
        return normalize_log_weights(self.log_weights)

    def trace_rows(self):
        for r in range(self.sequences.shape[0]):
            for t in range(self.sequences.shape[2]):
                yield {
                    "run": r,
                    "t": t + 1,
                    "ess": float(self.ess[r, t]),
                    "log_normalizer_increment": float(self.log_z_increments[r, t]),
                    "unique_ancestors": int(self.unique_ancestors[r, t]),
                }


def run_particles(model, twist, potential, prompt, K, rng, n_runs=1, n_steps=None,
                  resampling=True, scheme="multinomial", ess_threshold=None) -> ParticleSystem:
    """Shared engine behind TSMC (with resampling) and SIS (without).

    ``ess_threshold`` (a fraction of ``K``) switches from resampling at every
    step to resampling only when ESS drops below ``ess_threshold * K``.
    """
    if K < 1 or n_runs < 1:
        raise InputDomainError("need K >= 1 and n_runs >= 1")
    T = prompt.horizon if n_steps is None else n_steps
    R, N = n_runs, n_runs * K
    seqs = np.zeros((N, 0), dtype=np.int64)
    parent_lpsi = np.zeros(N)
    logw = np.zeros((R, K))
    rows = np.arange(N)
    offsets = (np.arange(R) * K)[:, None]

    inc_all = np.empty((R, K, T))
    logq_all = np.empty((R, K, T))
    anc_all = np.tile(np.arange(K)[None, :, None], (R, 1, T))
    ess = np.empty((R, T))
    z_inc = np.empty((R, T))
    unique = np.full((R, T), K, dtype=np.int64)

    for t in range(T):
        log_q, log_norm, log_psi = propose_next(model, twist, potential, prompt, seqs)
        tok = categorical(np.exp(log_q), rng)
        inc = (log_norm - parent_lpsi).reshape(R, K)
        logq_all[:, :, t] = log_q[rows, tok].reshape(R, K)
        parent_lpsi = log_psi[rows, tok]
        seqs = np.concatenate([seqs, tok[:, None]], axis=1)

        inc_all[:, :, t] = inc
        prev = logw
        logw = logw + inc
        if not np.all(np.isfinite(logw.max(axis=1))):
            raise DegeneracyError("all particle weights collapsed",
                                  {"step": t + 1, "min_increment": float(np.nanmin(inc))})
        z_inc[:, t] = logsumexp(logw, axis=1) - logsumexp(prev, axis=1)
        ess[:, t] = effective_sample_size(logw)

        if not resampling or K == 1:
            if K == 1 and resampling:
                logw = np.zeros_like(logw)
            continue
        do = np.ones(R, dtype=bool) if ess_threshold is None else ess[:, t] < ess_threshold * K
        if not do.any():
            continue
        anc = np.tile(np.arange(K), (R, 1))
        anc[do] = resample(logw[do], rng, scheme)
        anc_all[:, :, t] = anc
        srt = np.sort(anc, axis=1)
        unique[:, t] = 1 + (np.diff(srt, axis=1) != 0).sum(axis=1)
        flat = (anc + offsets).ravel()
        seqs, parent_lpsi = seqs[flat], parent_lpsi[flat]
        logw = np.where(do[:, None], 0.0, logw)

    return ParticleSystem(
        sequences=seqs.reshape(R, K, T),
        log_weights=logw,
        log_z=z_inc.sum(axis=1),
        log_z_increments=z_inc,
        ess=ess,
        incremental=inc_all,
        proposal_logprob=logq_all,
        ancestors=anc_all,
        unique_ancestors=unique,
    )


def tsmc_sample(model, twist, potential, prompt, K, rng, n_runs=1, scheme="multinomial",
                ess_threshold=None) -> ParticleSystem:
    """Full TSMC over the horizon; in generation ``m`` pass the effective potential."""
    return run_particles(model, twist, potential, prompt, K, rng, n_runs=n_runs,
                         resampling=True, scheme=scheme, ess_threshold=ess_threshold)


def sis_sample(model, twist, potential, prompt, K, rng, n_steps=None) -> ParticleSystem:
    """Sequential importance sampling from the twist-induced proposal (no resampling)."""
    return run_particles(model, twist, potential, prompt, K, rng, n_steps=n_steps, resampling=False)
