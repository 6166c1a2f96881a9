"""Command-line experiment runner.

    twistsmc oracle    exact target + rejection sampling per beta
    twistsmc train     self-distilled TSMC for the configured generations
    twistsmc baselines DPO / GRPO fine-tuning and the similarity-toxicity table
    twistsmc eval      particle-efficiency table and KL checks on trained artifacts
    twistsmc sample    TSMC draws printed to standard output

Exit codes: 0 success, 2 configuration or missing-artifact errors, 3 capacity
or degeneracy errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .baselines import BaselineConfig, train_baseline
from .config import ExperimentConfig, load_config
from .distill import GenerationRecord, effective_potential, run_pipeline
from .enumeration import MAX_SEQUENCES
from .errors import CapacityError, ConfigError, DegeneracyError, StarvationError
from .metrics import (estimate_kl_target_vs_proposal, pairwise_similarity, particle_efficiency_curve,
                      toxicity_histogram)
from .oracle import enumerate_target, exact_ctl_loss, exact_kl_target_vs_proposal, rejection_sample
from .rng import stream
from .seqmodel import NeuralModel, fit_mle, load_model, save_model
from .smc import tsmc_sample
from .textio import write_csv, write_json, write_jsonl
from .twist import ConstantTwist, load_twist, save_twist


class MissingArtifactError(ConfigError):
    pass


# -- shared helpers ------------------------------------------------------------

def _enumerable(cfg: ExperimentConfig) -> bool:
    return len(cfg.vocab) ** cfg.horizon <= MAX_SEQUENCES


def _exact(cfg, p0, pot, prompt):
    return enumerate_target(p0, pot, prompt) if _enumerable(cfg) else None


def _gen_dir(out: Path, m: int) -> Path:
    return out / f"gen_{m}"


def _summary(pot, seqs, n_similarity):
    tox = pot.toxicity(seqs)
    return {
        "n": int(len(seqs)),
        "toxicity": float(tox.mean()),
        "toxicity_se": float(tox.std(ddof=1) / np.sqrt(len(tox))) if len(tox) > 1 else 0.0,
        "similarity": pairwise_similarity(seqs[:n_similarity], pot.vocab_size)
        if min(len(seqs), n_similarity) >= 2 else 0.0,
    }


def _config_echo(cfg):
    echo = dataclasses.asdict(cfg)
    echo.pop("output")
    return echo


def load_records(cfg, out: Path, p0, pot, prompt):
    """Completed generations found under ``out`` (a generation is complete once its metrics exist)."""
    records = []
    m = 0
    while (_gen_dir(out, m) / "metrics.json").exists():
        d = _gen_dir(out, m)
        model = p0 if m == 0 else load_model(d / "model.txt")
        twist = load_twist(d / "twist.txt")
        with open(d / "metrics.json") as fh:
            metrics = json.load(fh)
        records.append(GenerationRecord(m, model, twist, effective_potential(pot, p0, model, prompt),
                                        metrics=metrics))
        m += 1
    return records


def _require_records(cfg, out, p0, pot, prompt):
    records = load_records(cfg, out, p0, pot, prompt)
    if not records:
        raise MissingArtifactError(f"no trained generations under {out}; run `twistsmc train` first")
    return records


# -- subcommands ---------------------------------------------------------------

def cmd_oracle(cfg: ExperimentConfig, out: Path, threads: int = 1):
    p0, prompt = cfg.base_model_obj(), cfg.prompt_obj()
    if not _enumerable(cfg):
        raise CapacityError(f"vocab {len(cfg.vocab)} ** horizon {cfg.horizon} exceeds the "
                            f"enumeration limit of {MAX_SEQUENCES} sequences")
    summary, hist = [], []
    for i, beta in enumerate(cfg.oracle.betas):
        pot = cfg.potential_obj(beta)
        exact = enumerate_target(p0, pot, prompt)
        seqs, ratio = rejection_sample(p0, pot, prompt, cfg.oracle.n_accepts, stream(cfg.seed, "oracle", i))
        stats = _summary(pot, seqs, cfg.oracle.similarity_samples)
        summary.append({
            "beta": beta,
            "z_exact": exact.z,
            "acceptance_ratio": ratio,
            "accepts": cfg.oracle.n_accepts,
            "attempts": int(round(cfg.oracle.n_accepts / ratio)),
            "toxicity": stats["toxicity"],
            "toxicity_se": stats["toxicity_se"],
            "exact_toxicity": exact.expectation(pot.toxicity(exact.sequences())),
            "similarity": stats["similarity"],
        })
        edges, counts = toxicity_histogram(pot, seqs, cfg.oracle.histogram_bins)
        hist += [{"beta": beta, "bin_lo": lo, "bin_hi": hi, "count": int(c)}
                 for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
    write_csv(out / "oracle_summary.csv", summary, list(summary[0]))
    write_csv(out / "toxicity_hist.csv", hist, ["beta", "bin_lo", "bin_hi", "count"])
    plotting.toxicity_histograms(hist, out / "toxicity_hist.png")
    return summary


def _evaluator(cfg, exact, pot, prompt):
    def evaluate(rec):
        m = rec.index
        metrics = {}
        if exact is not None:
            metrics["exact_kl"] = exact_kl_target_vs_proposal(exact, rec.model, rec.twist)
            metrics["exact_ctl_loss"] = exact_ctl_loss(exact, rec.model, rec.twist)
        est, se = estimate_kl_target_vs_proposal(rec.model, rec.twist, rec.potential, prompt,
                                                 cfg.eval.kl_samples, stream(cfg.seed, "eval-kl", m))
        metrics["estimated_kl"], metrics["estimated_kl_se"] = est, se
        ps = tsmc_sample(rec.model, rec.twist, rec.potential, prompt, cfg.smc.k_test,
                         stream(cfg.seed, "eval-smc", m), n_runs=cfg.smc.test_runs, scheme=cfg.smc.scheme)
        stats = _summary(pot, ps.sequences.reshape(-1, prompt.horizon), cfg.eval.similarity_samples)
        metrics["toxicity"], metrics["toxicity_se"] = stats["toxicity"], stats["toxicity_se"]
        metrics["similarity"] = stats["similarity"]
        metrics["log_z_mean"] = float(ps.log_z.mean())
        metrics["log_z_std"] = float(ps.log_z.std())
        return metrics
    return evaluate


def _persist(out):
    def on_record(rec):
        d = _gen_dir(out, rec.index)
        d.mkdir(parents=True, exist_ok=True)
        save_model(rec.model, d / "model.txt")
        save_twist(rec.twist, d / "twist.txt")
        if rec.dataset is not None:
            write_jsonl(d / "dataset.jsonl", (list(map(int, s)) for s in rec.dataset))
            write_json(d / "dataset_summary.json", rec.dataset_summary)
        write_jsonl(d / "ctl_trace.jsonl", rec.ctl_trace)
        # written last: marks the generation complete for --resume
        write_json(d / "metrics.json", rec.metrics)
    return on_record


KL_COLUMNS = ["generation", "exact_kl", "exact_ctl_loss", "estimated_kl", "estimated_kl_se", "toxicity",
              "toxicity_se", "similarity", "log_z_mean", "log_z_std"]


def cmd_train(cfg: ExperimentConfig, out: Path, threads: int = 1, resume: bool = False):
    p0, pot, prompt = cfg.base_model_obj(), cfg.potential_obj(), cfg.prompt_obj()
    exact = _exact(cfg, p0, pot, prompt)
    resumed = load_records(cfg, out, p0, pot, prompt) if resume else []
    if resumed and resumed[-1].index > cfg.distill.generations:
        resumed = resumed[:cfg.distill.generations + 1]
    try:
        records = run_pipeline(p0, pot, prompt, cfg.distill_config(threads),
                               evaluate=_evaluator(cfg, exact, pot, prompt), on_record=_persist(out),
                               resume=resumed)
    except DegeneracyError as exc:
        done = len(load_records(cfg, out, p0, pot, prompt))
        raise DegeneracyError(f"generation {done}: {exc}", exc.diagnostics) from exc
    rows = [{"generation": r.index, **r.metrics} for r in records]
    write_csv(out / "kl_per_generation.csv", rows, [c for c in KL_COLUMNS if exact is not None or "exact" not in c])
    plotting.kl_per_generation(rows, out / "kl_per_generation.png")
    info = {"config": _config_echo(cfg), "generations": rows}
    if exact is not None:
        tox = pot.toxicity(exact.sequences())
        info["exact"] = {"z": exact.z, "log_z": exact.log_z, "target_toxicity": exact.expectation(tox),
                         "base_toxicity": float(np.exp(exact.log_p) @ tox)}
    write_json(out / "pipeline.json", info)
    return records


def cmd_eval(cfg: ExperimentConfig, out: Path, threads: int = 1):
    p0, pot, prompt = cfg.base_model_obj(), cfg.potential_obj(), cfg.prompt_obj()
    records = _require_records(cfg, out, p0, pot, prompt)
    exact = _exact(cfg, p0, pot, prompt)
    target = exact.expectation(pot.toxicity(exact.sequences())) if exact is not None else None
    rows = particle_efficiency_curve(records, cfg.smc.k_grid, pot, prompt, cfg.smc.repeats, cfg.seed,
                                     exact_toxicity=target, threads=threads,
                                     scheme=cfg.smc.scheme)
    cols = ["generation", "K", "toxicity_mean", "toxicity_std", "toxicity_se"]
    write_csv(out / "particle_efficiency.csv", rows, cols + (["target_toxicity"] if target is not None else []))
    plotting.particle_efficiency(rows, out / "particle_efficiency.png")

    kl_rows = []
    for rec in records:
        est, se = estimate_kl_target_vs_proposal(rec.model, rec.twist, rec.potential, prompt,
                                                 cfg.eval.kl_samples, stream(cfg.seed, "eval-kl-check", rec.index))
        row = {"generation": rec.index, "estimated_kl": est, "estimated_kl_se": se}
        if exact is not None:
            row["exact_kl"] = exact_kl_target_vs_proposal(exact, rec.model, rec.twist)
            row["within_3se"] = abs(est - row["exact_kl"]) <= 3 * se
        kl_rows.append(row)
    write_csv(out / "kl_estimates.csv", kl_rows,
              ["generation", "exact_kl", "estimated_kl", "estimated_kl_se", "within_3se"]
              if exact is not None else ["generation", "estimated_kl", "estimated_kl_se"])
    return rows, kl_rows


def baseline_reference(cfg, p0, prompt):
    """The policy baselines start from: ``p0`` itself if neural, else an MLP fitted to its samples."""
    if isinstance(p0, NeuralModel):
        return p0
    b = cfg.baselines
    data = p0.sample(prompt, b.reference_samples, stream(cfg.seed, "baseline-reference-data"))
    return fit_mle(data, prompt, p0.vocab_size, order=max(p0.order - 1, 1), kind="neural",
                   hidden=b.reference_hidden, steps=b.reference_steps, lr=b.reference_lr,
                   rng=stream(cfg.seed, "baseline-reference-init"))


def cmd_baselines(cfg: ExperimentConfig, out: Path, threads: int = 1):
    p0, pot, prompt = cfg.base_model_obj(), cfg.potential_obj(), cfg.prompt_obj()
    records = _require_records(cfg, out, p0, pot, prompt)
    b, n_eval, n_sim = cfg.baselines, cfg.baselines.eval_samples, cfg.eval.similarity_samples
    rows = [{"method": "Base", **_summary(pot, p0.sample(prompt, n_eval, stream(cfg.seed, "fig-base")), n_sim)}]

    exact = _exact(cfg, p0, pot, prompt)
    rng = stream(cfg.seed, "fig-target")
    if exact is not None:
        target = exact.sequences()[rng.choice(exact.log_p.size, size=n_eval, p=exact.sigma())]
    else:
        target, _ = rejection_sample(p0, pot, prompt, n_eval, rng)
    rows.append({"method": "Target", **_summary(pot, target, n_sim)})

    for rec in records:
        runs = -(-n_eval // cfg.smc.k_test)
        ps = tsmc_sample(rec.model, rec.twist, rec.potential, prompt, cfg.smc.k_test,
                         stream(cfg.seed, "fig-tsmc", rec.index), n_runs=runs, scheme=cfg.smc.scheme)
        seqs = ps.sequences.reshape(-1, prompt.horizon)[:n_eval]
        rows.append({"method": f"TSMC gen {rec.index}", **_summary(pot, seqs, n_sim)})

    reference = baseline_reference(cfg, p0, prompt)
    save_model(reference, out / "baseline_reference.txt")
    rows.append({"method": "Reference", **_summary(
        pot, reference.sample(prompt, n_eval, stream(cfg.seed, "fig-reference")), n_sim)})
    bdir = out / "baselines"
    bdir.mkdir(parents=True, exist_ok=True)
    for kind, betas in (("dpo", b.beta_dpo), ("grpo", b.beta_grpo)):
        for beta in betas:
            for lr in b.lrs:
                bc = BaselineConfig(kind=kind, batch=b.batch, steps=b.steps, lr=lr, beta=beta, seed=cfg.seed)
                policy, trace = train_baseline(reference, pot.log_score, prompt, bc)
                tag = f"baseline_{kind}_beta{beta:g}_lr{lr:g}"
                save_model(policy, bdir / f"{tag}.txt")
                write_jsonl(bdir / f"{tag}_trace.jsonl", trace)
                seqs = policy.sample(prompt, n_eval, stream(cfg.seed, "fig-baseline", len(rows)))
                rows.append({"method": kind.upper(), "beta": beta, "lr": lr,
                             "final_kl_to_reference": trace[-1]["kl_to_reference"], **_summary(pot, seqs, n_sim)})
    cols = ["method", "beta", "lr", "n", "toxicity", "toxicity_se", "similarity", "final_kl_to_reference"]
    write_csv(out / "similarity_toxicity.csv", rows, cols)
    plotting.similarity_toxicity(rows, out / "similarity_toxicity.png")
    return rows


def cmd_sample(cfg: ExperimentConfig, out: Path, generation=None, n_runs=1, k=None, stdout=None):
    stdout = stdout or sys.stdout
    p0, pot, prompt = cfg.base_model_obj(), cfg.potential_obj(), cfg.prompt_obj()
    k = k or cfg.smc.k_test
    if generation is None:
        model, twist, final = p0, ConstantTwist(p0.vocab_size), pot
        tag = 0
    else:
        records = _require_records(cfg, out, p0, pot, prompt)
        if generation >= len(records):
            raise MissingArtifactError(f"generation {generation} not found under {out}")
        rec = records[generation]
        model, twist, final, tag = rec.model, rec.twist, rec.potential, generation + 1
    ps = tsmc_sample(model, twist, final, prompt, k, stream(cfg.seed, "sample", tag), n_runs=n_runs,
                     scheme=cfg.smc.scheme)
    vocab = cfg.vocab_obj()
    for r in range(n_runs):
        for seq in ps.sequences[r]:
            stdout.write(f"{r}\t{vocab.decode(seq)}\n")
    return ps


# -- entry point ---------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config (defaults built in)")
    common.add_argument("--out", type=Path, help="output directory (overrides config.output)")
    common.add_argument("--seed", type=int, help="master seed (overrides config.seed)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")

    parser = argparse.ArgumentParser(prog="twistsmc", description="Self-distilled twisted SMC experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("oracle", parents=[common], help="exact target and rejection sampling")
    train = sub.add_parser("train", parents=[common], help="self-distilled TSMC pipeline")
    train.add_argument("--resume", action="store_true", help="continue from completed generations in --out")
    sub.add_parser("baselines", parents=[common], help="DPO and GRPO baselines")
    sub.add_parser("eval", parents=[common], help="particle efficiency and KL checks")
    sample = sub.add_parser("sample", parents=[common], help="print TSMC samples")
    sample.add_argument("--generation", type=int, help="trained generation to use (default: untwisted base)")
    sample.add_argument("--runs", type=int, default=1)
    sample.add_argument("-k", "--particles", type=int, help="particles per run (default smc.k_test)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output = str(args.out)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(cfg.output)
        os.makedirs(out, exist_ok=True)
        if args.command == "oracle":
            cmd_oracle(cfg, out, args.threads)
        elif args.command == "train":
            cmd_train(cfg, out, args.threads, resume=args.resume)
        elif args.command == "baselines":
            cmd_baselines(cfg, out, args.threads)
        elif args.command == "eval":
            cmd_eval(cfg, out, args.threads)
        else:
            cmd_sample(cfg, out, args.generation, args.runs, args.particles)
    except ConfigError as exc:
        print(f"twistsmc: config error: {exc}", file=sys.stderr)
        return 2
    except (CapacityError, DegeneracyError, StarvationError) as exc:
        print(f"twistsmc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
