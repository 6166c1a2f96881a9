"""DPO and GRPO fine-tuning of a neural policy against the reward ``log phi``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBatchError, InputDomainError
from .nn import log_sigmoid, make_optimizer
from .rng import stream
from .seqmodel import NeuralModel


@dataclass
class PreferenceBatch:
    """Rank-matched pairs; row ``i`` of ``positive`` is preferred to row ``i`` of ``negative``."""

    positive: np.ndarray
    negative: np.ndarray
    reward_pos: np.ndarray
    reward_neg: np.ndarray

    def __len__(self):
        return len(self.reward_pos)


@dataclass
class PolicyTrainState:
    policy: NeuralModel
    reference: NeuralModel
    beta: float
    optimizer: object = None


@dataclass
class BaselineConfig:
    kind: str = "dpo"
    batch: int = 256
    steps: int = 1000
    lr: float = 1e-3
    beta: float = 0.1
    weight_decay: float = 0.0
    kl_every: int = 50
    kl_samples: int = 256
    seed: int = 0


def pair_by_reward(seqs, rewards) -> PreferenceBatch:
    """Sort by reward (descending, stable) and pair rank ``i`` of the top half
    with rank ``i`` of the bottom half; an odd middle sample is dropped."""
    seqs = np.asarray(seqs)
    rewards = np.asarray(rewards, dtype=np.float64)
    n = len(rewards)
    if n < 2:
        raise InputDomainError("need at least two samples to form a pair")
    order = np.argsort(-rewards, kind="stable")
    half = n // 2
    top, bottom = order[:half], order[n - half:]
    return PreferenceBatch(seqs[top], seqs[bottom], rewards[top], rewards[bottom])


def build_preference_batch(ref_model, reward_fn, prompt, n, rng) -> PreferenceBatch:
    seqs = ref_model.sample(prompt, n, rng)
    return pair_by_reward(seqs, reward_fn(seqs))


def dpo_loss_and_grad(state: PolicyTrainState, prompt, pairs: PreferenceBatch):
    """Mean ``-log sigmoid(beta * (margin_pos - margin_neg))`` and its gradient.

    Pairs with tied rewards carry no preference, so they count toward the loss
    value but are masked out of the gradient.
    """
    if len(pairs) == 0:
        raise InputDomainError("DPO needs at least one pair")
    P = len(pairs)
    pol, ref, beta = state.policy, state.reference, state.beta
    ref_pos = ref.sequence_logprob(prompt, pairs.positive)
    ref_neg = ref.sequence_logprob(prompt, pairs.negative)
    pol_pos = pol.token_logprobs(prompt, pairs.positive).sum(axis=1)
    pol_neg = pol.token_logprobs(prompt, pairs.negative).sum(axis=1)
    z = beta * ((pol_pos - ref_pos) - (pol_neg - ref_neg))
    loss = float(-np.mean(log_sigmoid(z)))
    live = (pairs.reward_pos != pairs.reward_neg).astype(np.float64)
    # d(-log sigmoid z)/dz = -(1 - sigmoid z) = -sigmoid(-z)
    dz = -np.exp(log_sigmoid(-z)) * live / P
    T = pairs.positive.shape[1]
    grad = np.zeros_like(pol.mlp.params)
    pol.accumulate_token_grad(prompt, pairs.positive, np.repeat((beta * dz)[:, None], T, 1), grad)
    pol.accumulate_token_grad(prompt, pairs.negative, np.repeat((-beta * dz)[:, None], T, 1), grad)
    return loss, grad


def grpo_advantages(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    std = r.std()
    if not std > 0:
        raise DegenerateBatchError("reward batch has zero standard deviation")
    return (r - r.mean()) / std


def grpo_loss_and_grad(state: PolicyTrainState, prompt, seqs, rewards, frozen_logp=None):
    """GRPO loss with the stop-gradient ratio and the ``r - log r - 1`` regularizer.

    ``frozen_logp`` (per-token log-probs) stands in for the stop-gradient copy;
    by default it equals the current policy, so the ratio term is 1 in value and
    contributes ``-A * grad log pi`` per token.
    """
    seqs = np.asarray(seqs, dtype=np.int64)
    N, T = seqs.shape
    if N < 2:
        raise InputDomainError("GRPO needs at least two sequences")
    adv = grpo_advantages(rewards)
    pol, ref, beta = state.policy, state.reference, state.beta
    lp = pol.token_logprobs(prompt, seqs)
    lp_ref = ref.token_logprobs(prompt, seqs)
    frozen = lp if frozen_logp is None else np.asarray(frozen_logp)
    ratio = np.exp(lp - frozen)
    rho = np.exp(lp_ref - lp)
    per_token = -ratio * adv[:, None] + beta * (rho - (lp_ref - lp) - 1.0)
    loss = float(per_token.mean())
    # d/dtheta of ratio = ratio * grad log pi; of (rho - log rho) = (1 - rho) * grad log pi
    coef = (-ratio * adv[:, None] + beta * (1.0 - rho)) / (N * T)
    grad = np.zeros_like(pol.mlp.params)
    pol.accumulate_token_grad(prompt, seqs, coef, grad)
    return loss, grad


def sample_kl(policy, reference, prompt, n, rng) -> float:
    """Monte Carlo ``KL(policy || reference)`` from policy samples."""
    seqs = policy.sample(prompt, n, rng)
    return float(np.mean(policy.sequence_logprob(prompt, seqs) - reference.sequence_logprob(prompt, seqs)))


def train_baseline(reference: NeuralModel, reward_fn, prompt, config: BaselineConfig):
    """Fine-tune a copy of ``reference``; returns ``(policy, trace)``.

    DPO draws its preference batch from the frozen reference each step; GRPO
    samples from the current policy. A GRPO batch with zero reward spread
    skips its update.
    """
    if config.kind not in ("dpo", "grpo"):
        raise InputDomainError(f"unknown baseline {config.kind!r}")
    tag = 1 if config.kind == "dpo" else 2
    rng = stream(config.seed, "baselines", tag)
    kl_rng = stream(config.seed, "baselines-kl", tag)
    policy = reference.with_params(reference.mlp.params.copy(), generation=reference.generation)
    state = PolicyTrainState(policy, reference, config.beta,
                             make_optimizer("adam", policy.mlp.params.size, config.lr, config.weight_decay))
    trace = []
    for step in range(1, config.steps + 1):
        if config.kind == "dpo":
            seqs = reference.sample(prompt, config.batch, rng)
            rewards = reward_fn(seqs)
            _, grad = dpo_loss_and_grad(state, prompt, pair_by_reward(seqs, rewards))
        else:
            seqs = policy.sample(prompt, config.batch, rng)
            rewards = reward_fn(seqs)
            try:
                _, grad = grpo_loss_and_grad(state, prompt, seqs, rewards)
            except DegenerateBatchError:
                grad = None
        if grad is not None:
            state.optimizer.step(policy.mlp.params, grad)
        if step % config.kl_every == 0 or step == config.steps:
            trace.append({
                "step": step,
                "mean_reward": float(np.mean(rewards)),
                "kl_to_reference": sample_kl(policy, reference, prompt, config.kl_samples, kl_rng),
            })
    return policy, trace
