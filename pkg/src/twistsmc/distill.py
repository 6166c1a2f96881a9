"""Self-distilled TSMC: alternate TSMC dataset generation, maximum-likelihood
refitting of the base model, and contrastive twist learning against the
generation's effective potential."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ctl import CtlConfig, train_twist
from .potential import EffectivePotential
from .rng import chunk_sizes, map_chunks, stream
from .seqmodel import fit_mle
from .smc import tsmc_sample
from .twist import TwistNetwork

DATASET_CHUNK_RUNS = 16


@dataclass
class DistillConfig:
    generations: int = 2
    dataset_size: int = 10_000
    k_train: int = 100
    warm_start: bool = True
    smoothing: float = 1.0
    neural_hidden: int = 64
    neural_steps: int = 2000
    neural_lr: float = 1e-2
    twist_window: int = 2
    twist_hidden: int = 64
    ctl: CtlConfig = field(default_factory=CtlConfig)
    scheme: str = "multinomial"
    seed: int = 0
    threads: int = 1


@dataclass
class GenerationRecord:
    index: int
    model: object
    twist: TwistNetwork
    potential: object
    dataset: np.ndarray | None = None
    dataset_summary: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    ctl_trace: list = field(default_factory=list)


def effective_potential(potential, p0, model, prompt):
    if model is p0:
        return potential
    return EffectivePotential(potential, p0, model, prompt)


def generate_dataset(model, twist, potential, prompt, K, n_sequences, seed, generation=0, threads=1,
                     scheme="multinomial"):
    """Final particles of ``ceil(n / K)`` independent TSMC runs, stacked."""
    if n_sequences < 1:
        raise ValueError("n_sequences must be >= 1")
    n_runs = -(-n_sequences // K)

    def run(chunk, size):
        rng = stream(seed, "distill-data", generation, chunk)
        ps = tsmc_sample(model, twist, potential, prompt, K, rng, n_runs=size, scheme=scheme)
        return ps.sequences.reshape(-1, prompt.horizon)

    parts = map_chunks(run, chunk_sizes(n_runs, DATASET_CHUNK_RUNS), threads)
    return np.concatenate(parts, axis=0)


def summarize_dataset(dataset, potential):
    return {
        "size": int(dataset.shape[0]),
        "mean_log_potential": float(np.mean(potential.log_score(dataset))),
        "mean_toxicity": float(np.mean(potential.toxicity(dataset))),
    }


def initial_record(p0, potential, prompt, config: DistillConfig, callback=None) -> GenerationRecord:
    """Generation 0: plain CTL on the base model."""
    rng = stream(config.seed, "twist-init", 0)
    tw0 = TwistNetwork.initialize(p0.vocab_size, prompt.horizon, rng, window=config.twist_window,
                                  hidden=config.twist_hidden)
    ctl = replace(config.ctl, generation=0, seed=config.seed)
    tw, trace = train_twist(p0, potential, prompt, ctl, tw0, callback=callback)
    return GenerationRecord(0, p0, tw, potential, ctl_trace=trace)


def self_distill_step(prev: GenerationRecord, p0, potential, prompt, config: DistillConfig,
                      callback=None) -> GenerationRecord:
    m = prev.index + 1
    data = generate_dataset(prev.model, prev.twist, prev.potential, prompt, config.k_train,
                            config.dataset_size, config.seed, generation=m, threads=config.threads,
                            scheme=config.scheme)
    model = fit_mle(data, prompt, p0.vocab_size, order=p0.order, kind=p0.kind,
                    smoothing=config.smoothing, hidden=config.neural_hidden,
                    steps=config.neural_steps, lr=config.neural_lr,
                    rng=stream(config.seed, "mle-init", m), generation=m, log_floor=p0.log_floor)
    eff = effective_potential(potential, p0, model, prompt)
    if config.warm_start:
        start = prev.twist
    else:
        start = TwistNetwork.initialize(p0.vocab_size, prompt.horizon, stream(config.seed, "twist-init", m),
                                        window=config.twist_window, hidden=config.twist_hidden)
    ctl = replace(config.ctl, generation=m, seed=config.seed)
    tw, trace = train_twist(model, eff, prompt, ctl, start, callback=callback)
    return GenerationRecord(m, model, tw, eff, dataset=data,
                            dataset_summary=summarize_dataset(data, potential), ctl_trace=trace)


def run_pipeline(p0, potential, prompt, config: DistillConfig, evaluate=None, on_record=None,
                 resume=None):
    """Records for generations ``0..M``.

    ``evaluate(record)`` fills ``record.metrics``; ``on_record(record)`` is
    called once each generation is complete (for persistence). ``resume`` is
    a list of already-finished records to continue from.
    """
    records = list(resume or [])
    if not records:
        rec = initial_record(p0, potential, prompt, config)
        if evaluate is not None:
            rec.metrics = evaluate(rec)
        if on_record is not None:
            on_record(rec)
        records.append(rec)
    while records[-1].index < config.generations:
        rec = self_distill_step(records[-1], p0, potential, prompt, config)
        if evaluate is not None:
            rec.metrics = evaluate(rec)
        if on_record is not None:
            on_record(rec)
        records.append(rec)
    return records
