"""Contrastive twist learning.

Positive samples approximate the target marginals by self-normalized
importance sampling of whole sequences; negative samples approximate the
twisted intermediate targets by SIS prefix weights. The gradient is the
weighted difference of ``grad log psi`` over the two batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError
from .nn import make_optimizer
from .rng import stream
from .smc import effective_sample_size, normalize_log_weights, run_particles, sis_sample


@dataclass
class CtlConfig:
    k_pos: int = 256
    k_neg: int = 256
    steps: int = 2000
    lr: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    generation: int = 0
    seed: int = 0
    resampled_positives: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("step budget must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")


@dataclass
class WeightedPrefixBatch:
    """Sequences with self-normalized weights per prefix length.

    ``weights[:, t - 1]`` weighs the prefixes ``sequences[:, :t]``.
    """

    sequences: np.ndarray   # (K, L)
    weights: np.ndarray     # (K, L)
    log_weights: np.ndarray  # (K, L) unnormalized

    def ess(self, t=None):
        col = self.log_weights[:, -1 if t is None else t - 1]
        return float(effective_sample_size(col))


def _check(log_w):
    if log_w.size and not np.isfinite(np.max(log_w)):
        raise DegeneracyError("every importance weight collapsed",
                              {"max_log_weight": float(np.max(log_w))})


def positive_batch(model, twist, potential, prompt, k, rng, resampled=False) -> WeightedPrefixBatch:
    """i.i.d. draws from the full-sequence proposal with weights ``p_m phi_m / q``.

    With ``resampled=True`` the candidates come from one TSMC run instead and
    carry uniform weights.
    """
    if resampled:
        ps = run_particles(model, twist, potential, prompt, k, rng)
        seqs = ps.sequences[0]
        lw = np.zeros(k)
    else:
        ps = sis_sample(model, twist, potential, prompt, k, rng)
        seqs = ps.sequences[0]
        lw = ps.incremental[0].sum(axis=1)
    _check(lw)
    T = seqs.shape[1]
    lw_cols = np.repeat(lw[:, None], T, axis=1)
    return WeightedPrefixBatch(seqs, normalize_log_weights(lw_cols, axis=0), lw_cols)


def negative_batch(model, twist, prompt, k, rng) -> WeightedPrefixBatch:
    """SIS trajectories up to ``T - 1`` whose prefix weights target each twisted marginal."""
    n_steps = max(prompt.horizon - 1, 0)
    ps = sis_sample(model, twist, None, prompt, k, rng, n_steps=n_steps)
    lw = np.cumsum(ps.incremental[0], axis=1)
    _check(lw)
    return WeightedPrefixBatch(ps.sequences[0], normalize_log_weights(lw, axis=0), lw)


def ctl_gradient(twist, prompt, positive: WeightedPrefixBatch, negative: WeightedPrefixBatch):
    """Ascent direction ``sum_t (E_pos - E_neg)[grad log psi(s_{1:t})]`` for ``t < T``."""
    grad = np.zeros_like(twist.params)
    for t in range(1, prompt.horizon):
        parents = np.concatenate([positive.sequences[:, :t - 1], negative.sequences[:, :t - 1]])
        tokens = np.concatenate([positive.sequences[:, t - 1], negative.sequences[:, t - 1]])
        coef = np.concatenate([positive.weights[:, t - 1], -negative.weights[:, t - 1]])
        twist.accumulate_grad(prompt, parents, tokens, coef, grad)
    return grad


def proxy_loss(twist, prompt, positive, negative) -> float:
    """Weighted positive minus negative mean of ``log psi``, summed over ``t < T``."""
    total = 0.0
    for t in range(1, prompt.horizon):
        for batch, sign in ((positive, 1.0), (negative, -1.0)):
            lpsi = twist.log_twist(prompt, batch.sequences[:, :t - 1], batch.sequences[:, t - 1])
            total += sign * float(np.dot(batch.weights[:, t - 1], lpsi))
    return total


def train_twist(model, potential, prompt, config: CtlConfig, twist, callback=None):
    """Run ``config.steps`` ascent steps of CTL starting from ``twist`` (copied).

    ``callback(step, twist)`` is invoked before the first step and after each
    step. Returns ``(twist, trace)``.
    """
    tw = twist.copy(generation=config.generation)
    opt = make_optimizer(config.optimizer, tw.params.size, config.lr, config.weight_decay,
                         config.beta1, config.beta2)
    rng = stream(config.seed, "ctl", config.generation)
    trace = []
    if callback is not None:
        callback(0, tw)
    for step in range(1, config.steps + 1):
        pos = positive_batch(model, tw, potential, prompt, config.k_pos, rng,
                             resampled=config.resampled_positives)
        neg = negative_batch(model, tw, prompt, config.k_neg, rng)
        grad = ctl_gradient(tw, prompt, pos, neg)
        ess_neg = [neg.ess(t) for t in range(1, prompt.horizon)] or [float(config.k_neg)]
        trace.append({
            "step": step,
            "ess_pos": pos.ess(),
            "ess_neg_mean": float(np.mean(ess_neg)),
            "proxy_loss": proxy_loss(tw, prompt, pos, neg),
            "grad_norm": float(np.linalg.norm(grad)),
        })
        opt.step(tw.params, -grad)
        if callback is not None:
            callback(step, tw)
    return tw, trace
