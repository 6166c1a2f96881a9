"""Evaluation metrics and the tables behind the report figures."""

from __future__ import annotations

import numpy as np

from .errors import InputDomainError
from .nn import logsumexp
from .rng import chunk_sizes, map_chunks, stream
from .smc import sis_sample, tsmc_sample


def toxicity_analog(potential, seqs) -> float:
    """Mean classifier probability (the ``beta = 1`` score)."""
    seqs = np.asarray(seqs)
    if seqs.ndim != 2 or seqs.shape[0] == 0:
        raise InputDomainError("toxicity needs at least one complete sequence")
    return float(np.mean(potential.toxicity(seqs)))


def bigram_profiles(seqs, vocab_size) -> np.ndarray:
    seqs = np.asarray(seqs, dtype=np.int64)
    n, T = seqs.shape
    counts = np.zeros((n, vocab_size * vocab_size))
    if T >= 2:
        codes = seqs[:, :-1] * vocab_size + seqs[:, 1:]
        np.add.at(counts, (np.repeat(np.arange(n), T - 1), codes.ravel()), 1.0)
    return counts


def pairwise_similarity(seqs, vocab_size) -> float:
    """Mean cosine similarity of bigram-count profiles over unordered pairs.

    A sequence with no bigrams (``T = 1``) has similarity 0 to everything.
    """
    seqs = np.asarray(seqs)
    if seqs.ndim != 2 or seqs.shape[0] < 2:
        raise InputDomainError("similarity needs at least two sequences")
    prof = bigram_profiles(seqs, vocab_size)
    norm = np.linalg.norm(prof, axis=1)
    unit = prof / np.where(norm > 0, norm, 1.0)[:, None]
    gram = unit @ unit.T
    n = len(seqs)
    iu = np.triu_indices(n, k=1)
    return float(np.clip(gram[iu].mean(), 0.0, 1.0))


def estimate_kl_target_vs_proposal(model, twist, potential, prompt, n_samples, rng):
    """Self-normalized importance estimate of ``KL(sigma || q)``.

    ``potential`` is the final-step potential for ``model`` (the effective
    potential in later generations), so the SIS log-weights equal
    ``log sigma_tilde - log q``. Returns ``(estimate, standard_error)`` with a
    delta-method standard error.
    """
    ps = sis_sample(model, twist, potential, prompt, n_samples, rng)
    lw = ps.incremental[0].sum(axis=1)
    w_hat = np.exp(lw - logsumexp(lw))
    first = float(np.dot(w_hat, lw))
    log_z = float(logsumexp(lw) - np.log(n_samples))
    estimate = first - log_z
    ratio = w_hat * n_samples
    influence = ratio * (lw - first) - (ratio - 1.0)
    se = float(np.std(influence) / np.sqrt(n_samples))
    return estimate, se


def particle_efficiency_curve(records, k_values, potential, prompt, repeats, seed,
                              exact_toxicity=None, threads=1, scheme="multinomial"):
    """Mean toxicity of TSMC outputs for each generation and particle count.

    Each record needs ``index``, ``model``, ``twist`` and ``potential`` (the
    final-step potential for that generation). Rows are dicts with the mean
    over repeats of the per-run particle mean, its std and standard error.
    """
    rows = []
    for rec in records:
        for K in k_values:
            def run(chunk, size, rec=rec, K=K):
                rng = stream(seed, "efficiency", rec.index, K, chunk)
                ps = tsmc_sample(rec.model, rec.twist, rec.potential, prompt, K, rng, n_runs=size, scheme=scheme)
                return potential.toxicity(ps.sequences.reshape(-1, prompt.horizon)).reshape(size, K).mean(axis=1)

            vals = np.concatenate(map_chunks(run, chunk_sizes(repeats, 64), threads))
            row = {
                "generation": rec.index,
                "K": int(K),
                "toxicity_mean": float(vals.mean()),
                "toxicity_std": float(vals.std()),
                "toxicity_se": float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0,
            }
            if exact_toxicity is not None:
                row["target_toxicity"] = float(exact_toxicity)
            rows.append(row)
    return rows


def toxicity_histogram(potential, seqs, bins=20):
    """Counts of classifier scores in equal-width bins over ``[0, 1]``."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(potential.toxicity(seqs), bins=edges)
    return edges, counts
