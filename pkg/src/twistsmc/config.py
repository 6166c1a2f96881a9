"""Experiment configuration: JSON with explicit keys, strict parsing, exact round trip."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field

import numpy as np

from .ctl import CtlConfig
from .distill import DistillConfig
from .errors import ConfigError
from .potential import LogisticPotential
from .seqmodel import NeuralModel, Prompt, TabularModel, Vocab, load_model
from .rng import stream


@dataclass
class BaseModelSpec:
    kind: str = "random_tabular"   # random_tabular | random_neural | uniform | file
    order: int = 2
    scale: float = 0.5
    offsets: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0, -2.5, -2.5])
    hidden: int = 32
    seed: int = 1
    path: str = ""


@dataclass
class PotentialSpec:
    weights: dict = field(default_factory=lambda: {"a": -0.5, "b": -0.5, "e": 3.0, "f": 3.0})
    bias: float = -6.0
    beta: float = 10.0


@dataclass
class TwistSpec:
    window: int = 2
    hidden: int = 16


@dataclass
class SmcSpec:
    k_train: int = 100
    k_test: int = 16
    test_runs: int = 100
    k_grid: list = field(default_factory=lambda: [4, 16, 64, 256])
    repeats: int = 200
    scheme: str = "multinomial"   # multinomial | systematic


@dataclass
class CtlSpec:
    k_pos: int = 256
    k_neg: int = 256
    steps: int = 2000
    lr: float = 1e-3
    optimizer: str = "adam"
    weight_decay: float = 0.0
    resampled_positives: bool = False


@dataclass
class DistillSpec:
    generations: int = 2
    dataset_size: int = 10_000
    warm_start: bool = True
    smoothing: float = 1.0
    neural_hidden: int = 64
    neural_steps: int = 2000
    neural_lr: float = 1e-2


@dataclass
class OracleSpec:
    betas: list = field(default_factory=lambda: [0.0, 1.0, 10.0])
    n_accepts: int = 2000
    similarity_samples: int = 500
    histogram_bins: int = 20


@dataclass
class EvalSpec:
    kl_samples: int = 10_000
    similarity_samples: int = 500


@dataclass
class BaselineSpec:
    reference_samples: int = 5000
    reference_hidden: int = 32
    reference_steps: int = 500
    reference_lr: float = 1e-2
    batch: int = 256
    steps: int = 1000
    lrs: list = field(default_factory=lambda: [1e-3, 1e-4])
    beta_dpo: list = field(default_factory=lambda: [0.1, 0.2, 0.4, 0.8])
    beta_grpo: list = field(default_factory=lambda: [0.04, 0.08, 0.16, 0.32])
    eval_samples: int = 2000


@dataclass
class ExperimentConfig:
    vocab: list = field(default_factory=lambda: ["a", "b", "c", "d", "e", "f"])
    prompt: list = field(default_factory=lambda: ["a"])
    horizon: int = 8
    base_model: BaseModelSpec = field(default_factory=BaseModelSpec)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    twist: TwistSpec = field(default_factory=TwistSpec)
    smc: SmcSpec = field(default_factory=SmcSpec)
    ctl: CtlSpec = field(default_factory=CtlSpec)
    distill: DistillSpec = field(default_factory=DistillSpec)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    baselines: BaselineSpec = field(default_factory=BaselineSpec)
    seed: int = 0
    output: str = "runs/default"

    # -- derived objects -------------------------------------------------

    def vocab_obj(self) -> Vocab:
        return Vocab(len(self.vocab), tuple(self.vocab))

    def prompt_obj(self) -> Prompt:
        v = self.vocab_obj()
        return Prompt(tuple(v.token(t) for t in self.prompt), self.horizon)

    def potential_obj(self, beta=None) -> LogisticPotential:
        v = self.vocab_obj()
        w = np.zeros(v.size)
        for name, value in self.potential.weights.items():
            w[v.token(name)] = value
        return LogisticPotential(w, self.potential.bias, self.potential.beta if beta is None else beta)

    def base_model_obj(self):
        spec, V = self.base_model, len(self.vocab)
        rng = np.random.default_rng(spec.seed)
        offsets = spec.offsets or None
        if spec.kind == "random_tabular":
            return TabularModel.random(V, spec.order, rng, scale=spec.scale, offsets=offsets)
        if spec.kind == "random_neural":
            return NeuralModel.random(V, spec.order, self.horizon, rng, hidden=spec.hidden,
                                      scale=spec.scale, offsets=offsets)
        if spec.kind == "uniform":
            return TabularModel.uniform(V, spec.order)
        if spec.kind == "file":
            model = load_model(spec.path)
            if model.vocab_size != V:
                raise ConfigError(f"{spec.path}: vocab size {model.vocab_size} != {V}")
            return model
        raise ConfigError(f"base_model.kind: unknown kind {spec.kind!r}")

    def ctl_config(self) -> CtlConfig:
        c = self.ctl
        return CtlConfig(k_pos=c.k_pos, k_neg=c.k_neg, steps=c.steps, lr=c.lr, optimizer=c.optimizer,
                         weight_decay=c.weight_decay, seed=self.seed,
                         resampled_positives=c.resampled_positives)

    def distill_config(self, threads=1) -> DistillConfig:
        d = self.distill
        return DistillConfig(generations=d.generations, dataset_size=d.dataset_size, k_train=self.smc.k_train,
                             warm_start=d.warm_start, smoothing=d.smoothing, neural_hidden=d.neural_hidden,
                             neural_steps=d.neural_steps, neural_lr=d.neural_lr, twist_window=self.twist.window,
                             twist_hidden=self.twist.hidden, ctl=self.ctl_config(), scheme=self.smc.scheme,
                             seed=self.seed,
                             threads=threads)

    def validate(self) -> "ExperimentConfig":
        try:
            v = self.vocab_obj()
            self.prompt_obj()
            for name in self.potential.weights:
                v.token(name)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"unresolved reference: {exc}") from exc
        if self.base_model.kind not in ("random_tabular", "random_neural", "uniform", "file"):
            raise ConfigError(f"base_model.kind: unknown kind {self.base_model.kind!r}")
        if self.base_model.offsets and len(self.base_model.offsets) != v.size:
            raise ConfigError("base_model.offsets must have one entry per token")
        if not self.smc.k_grid or min(self.smc.k_grid) < 1:
            raise ConfigError("smc.k_grid must list positive particle counts")
        if self.smc.scheme not in ("multinomial", "systematic"):
            raise ConfigError(f"smc.scheme: unknown resampling scheme {self.smc.scheme!r}")
        if self.distill.generations < 0:
            raise ConfigError("distill.generations must be >= 0")
        if self.ctl.steps < 1 or self.ctl.lr <= 0:
            raise ConfigError("ctl.steps must be >= 1 and ctl.lr > 0")
        if self.ctl.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"ctl.optimizer: unknown optimizer {self.ctl.optimizer!r}")
        if min(self.potential.beta, *self.oracle.betas) < 0:
            raise ConfigError("beta values must be >= 0")
        return self


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        path = f"{where}.{key}" if where else key
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, path)
        else:
            kwargs[key] = _coerce(hint, value, path)
    return cls(**kwargs)


def _coerce(hint, value, path):
    if hint is bool:
        ok = isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif hint is str:
        ok = isinstance(value, str)
    elif hint is list:
        ok = isinstance(value, list)
    elif hint is dict:
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {hint.__name__}, got {type(value).__name__}")
    return value


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return _build(ExperimentConfig, data, "").validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(dataclasses.asdict(cfg), indent=2) + "\n"
