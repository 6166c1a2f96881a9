"""Tokens, prompts, and autoregressive models over a small vocabulary.

Two model kinds share one interface: a tabular n-gram with add-k smoothing
and a one-hidden-layer MLP over a one-hot window of recent tokens plus a
position one-hot. Batched methods take ``prefixes`` as an int array of shape
``(batch, t)`` holding the generated tokens after the prompt.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputDomainError
from .nn import MLP, log_softmax, make_optimizer
from .textio import read_flat, write_flat

DEFAULT_LOG_FLOOR = -45.0


@dataclass(frozen=True)
class Vocab:
    size: int
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if int(self.size) < 2:
            raise InputDomainError(f"vocab size must be >= 2, got {self.size}")
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != self.size:
                raise InputDomainError("need exactly one name per token id")
            if len(set(self.names)) != self.size:
                raise InputDomainError("token names must be distinct")

    def name(self, token: int) -> str:
        return self.names[token] if self.names else str(token)

    def token(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            tok = int(name)
        elif self.names and name in self.names:
            tok = self.names.index(name)
        else:
            try:
                tok = int(name)
            except (TypeError, ValueError):
                raise InputDomainError(f"unknown token {name!r}") from None
        if not 0 <= tok < self.size:
            raise InputDomainError(f"token id {tok} out of range for vocab {self.size}")
        return tok

    def decode(self, tokens) -> str:
        return " ".join(self.name(int(t)) for t in tokens)

    def encode(self, text) -> tuple[int, ...]:
        parts = text.split() if isinstance(text, str) else list(text)
        return tuple(self.token(p) for p in parts)


@dataclass(frozen=True)
class Prompt:
    tokens: tuple[int, ...]
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if int(self.horizon) < 1:
            raise InputDomainError(f"horizon must be >= 1, got {self.horizon}")


def check_tokens(tokens, vocab_size: int) -> np.ndarray:
    arr = np.asarray(tokens)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        raise InputDomainError(f"token id out of range [0, {vocab_size})")
    return arr.astype(np.int64, copy=False)


def as_prefixes(prefixes) -> np.ndarray:
    arr = np.asarray(prefixes, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InputDomainError("prefixes must be a (batch, t) array")
    return arr


def context_window(prompt_tokens, prefixes, width: int, pad: int) -> np.ndarray:
    """Last ``width`` tokens of ``prompt + prefix`` per row, left-padded with ``pad``."""
    B, t = prefixes.shape
    if width == 0:
        return np.zeros((B, 0), dtype=np.int64)
    head = np.asarray(prompt_tokens[-width:] if prompt_tokens else (), dtype=np.int64)
    full = np.concatenate([np.broadcast_to(head, (B, head.size)), prefixes], axis=1)
    if full.shape[1] >= width:
        return full[:, full.shape[1] - width:]
    out = np.full((B, width), pad, dtype=np.int64)
    out[:, width - full.shape[1]:] = full
    return out


def window_features(prompt_tokens, prefixes, width, vocab_size, horizon) -> np.ndarray:
    """One-hot of the last ``width`` tokens (plus a padding symbol) and of the
    position of the token about to be generated."""
    B, t = prefixes.shape
    if t >= horizon:
        raise InputDomainError(f"prefix length {t} must be < horizon {horizon}")
    slot = vocab_size + 1
    X = np.zeros((B, width * slot + horizon))
    win = context_window(prompt_tokens, prefixes, width, vocab_size)
    rows = np.arange(B)
    for j in range(width):
        X[rows, j * slot + win[:, j]] = 1.0
    X[:, width * slot + t] = 1.0
    return X


class AutoregressiveModel:
    """Shared behaviour; subclasses implement :meth:`next_logprobs`."""

    kind = "abstract"

    def __init__(self, vocab_size: int, order: int, generation: int = 0,
                 log_floor: float = DEFAULT_LOG_FLOOR):
        self.vocab_size = int(vocab_size)
        self.order = int(order)
        self.generation = int(generation)
        self.log_floor = float(log_floor)

    def next_logprobs(self, prompt: Prompt, prefixes) -> np.ndarray:
        raise NotImplementedError

    def next_token_logprobs(self, prompt: Prompt, prefix) -> np.ndarray:
        """Log-probabilities of every next token after a single prefix."""
        prefix = check_tokens(prefix, self.vocab_size)
        check_tokens(prompt.tokens, self.vocab_size)
        if prefix.ndim != 1 or prefix.size >= prompt.horizon:
            raise InputDomainError("prefix must be 1-d and shorter than the horizon")
        return self.next_logprobs(prompt, prefix[None, :])[0]

    def token_logprobs(self, prompt: Prompt, seqs) -> np.ndarray:
        """Per-position log-probabilities, shape ``(batch, T)``."""
        seqs = as_prefixes(seqs)
        out = np.empty(seqs.shape)
        rows = np.arange(seqs.shape[0])
        for t in range(seqs.shape[1]):
            out[:, t] = self.next_logprobs(prompt, seqs[:, :t])[rows, seqs[:, t]]
        return out

    def sequence_logprob(self, prompt: Prompt, seqs) -> np.ndarray | float:
        """Chain-rule log-probability of complete sequences."""
        single = np.ndim(seqs) == 1
        seqs = check_tokens(as_prefixes(seqs), self.vocab_size)
        if seqs.shape[1] != prompt.horizon:
            raise InputDomainError(
                f"sequence has {seqs.shape[1]} tokens, horizon is {prompt.horizon}")
        total = self.token_logprobs(prompt, seqs).sum(axis=1)
        return float(total[0]) if single else total

    def sample(self, prompt: Prompt, n: int, rng: np.random.Generator) -> np.ndarray:
        """Ancestral samples, shape ``(n, T)``."""
        seqs = np.zeros((n, 0), dtype=np.int64)
        for _ in range(prompt.horizon):
            probs = np.exp(self.next_logprobs(prompt, seqs))
            seqs = np.concatenate([seqs, categorical(probs, rng)[:, None]], axis=1)
        return seqs

    def sample_sequence(self, prompt: Prompt, rng: np.random.Generator) -> np.ndarray:
        return self.sample(prompt, 1, rng)[0]

    def exact_probs(self, prompt: Prompt, prefixes) -> np.ndarray:
        return np.exp(self.next_logprobs(prompt, prefixes))


def categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One inverse-CDF draw per row of an (unnormalized-safe) probability matrix."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


class TabularModel(AutoregressiveModel):
    """n-gram model: the next token depends on the previous ``order - 1`` tokens.

    Contexts that run off the start of ``prompt + prefix`` are padded with a
    beginning-of-sequence symbol (id ``vocab_size``).
    """

    kind = "tabular"

    def __init__(self, vocab_size, order, log_table, generation=0, log_floor=DEFAULT_LOG_FLOOR):
        super().__init__(vocab_size, order, generation, log_floor)
        if self.order < 1:
            raise InputDomainError("order must be >= 1")
        table = np.asarray(log_table, dtype=np.float64)
        n_ctx = (self.vocab_size + 1) ** (self.order - 1)
        if table.shape != (n_ctx, self.vocab_size):
            raise InputDomainError(f"log table must have shape {(n_ctx, self.vocab_size)}")
        if np.isnan(table).any() or np.isposinf(table).any():
            raise InputDomainError("log table must be finite")
        self.log_table = np.maximum(table, self.log_floor)
        self.log_table.setflags(write=False)

    @classmethod
    def from_probs(cls, probs, order, **kw):
        probs = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return cls(probs.shape[1], order, np.log(probs), **kw)

    @classmethod
    def uniform(cls, vocab_size, order=2, **kw):
        n_ctx = (vocab_size + 1) ** (order - 1)
        return cls.from_probs(np.full((n_ctx, vocab_size), 1.0 / vocab_size), order, **kw)

    @classmethod
    def random(cls, vocab_size, order, rng, scale=1.0, offsets=None, **kw):
        n_ctx = (vocab_size + 1) ** (order - 1)
        logits = scale * rng.standard_normal((n_ctx, vocab_size))
        if offsets is not None:
            logits = logits + np.asarray(offsets, dtype=np.float64)
        return cls(vocab_size, order, log_softmax(logits, axis=1), **kw)

    def context_index(self, prompt, prefixes) -> np.ndarray:
        width = self.order - 1
        win = context_window(prompt.tokens, prefixes, width, self.vocab_size)
        idx = np.zeros(prefixes.shape[0], dtype=np.int64)
        for j in range(width):
            idx = idx * (self.vocab_size + 1) + win[:, j]
        return idx

    def next_logprobs(self, prompt, prefixes):
        prefixes = as_prefixes(prefixes)
        return self.log_table[self.context_index(prompt, prefixes)]

    def conditional_probs(self) -> np.ndarray:
        return np.exp(self.log_table)

    def with_generation(self, generation):
        return TabularModel(self.vocab_size, self.order, self.log_table, generation, self.log_floor)


class NeuralModel(AutoregressiveModel):
    """MLP language model; ``order`` is the width of its token window."""

    kind = "neural"

    def __init__(self, vocab_size, order, horizon, mlp: MLP, generation=0,
                 log_floor=DEFAULT_LOG_FLOOR):
        super().__init__(vocab_size, order, generation, log_floor)
        self.horizon = int(horizon)
        self.mlp = mlp
        expected = self.order * (self.vocab_size + 1) + self.horizon
        if mlp.n_in != expected or mlp.n_out != self.vocab_size:
            raise InputDomainError("MLP shape does not match vocab/window/horizon")
        if not np.isfinite(mlp.params).all():
            raise InputDomainError("network weights must be finite")

    @classmethod
    def initialize(cls, vocab_size, order, horizon, rng, hidden=64, **kw):
        n_in = order * (vocab_size + 1) + horizon
        return cls(vocab_size, order, horizon, MLP.initialize(n_in, hidden, vocab_size, rng), **kw)

    @classmethod
    def random(cls, vocab_size, order, horizon, rng, hidden=64, scale=1.0, offsets=None, **kw):
        """Random network: uniform hidden weights, Gaussian output head of size ``scale``."""
        n_in = order * (vocab_size + 1) + horizon
        mlp = MLP.initialize(n_in, hidden, vocab_size, rng, scale=1.0)
        _, _, W2, b2 = mlp.weights
        W2[:] = scale * rng.standard_normal(W2.shape) / np.sqrt(hidden)
        if offsets is not None:
            b2 += np.asarray(offsets, dtype=np.float64)
        return cls(vocab_size, order, horizon, mlp, **kw)

    def with_params(self, params, generation=None):
        mlp = MLP(self.mlp.n_in, self.mlp.n_hidden, self.mlp.n_out, np.array(params, dtype=np.float64))
        gen = self.generation if generation is None else generation
        return NeuralModel(self.vocab_size, self.order, self.horizon, mlp, gen, self.log_floor)

    def features(self, prompt, prefixes):
        return window_features(prompt.tokens, prefixes, self.order, self.vocab_size, self.horizon)

    def next_logprobs(self, prompt, prefixes):
        prefixes = as_prefixes(prefixes)
        out, _ = self.mlp.forward(self.features(prompt, prefixes))
        return np.maximum(log_softmax(out, axis=1), self.log_floor)

    def _stacked(self, prompt, seqs):
        """Features for every (sequence, position) pair, position-major."""
        N, T = seqs.shape
        X = np.concatenate([self.features(prompt, seqs[:, :t]) for t in range(T)], axis=0)
        targets = seqs.T.reshape(-1)
        return X, targets

    def accumulate_token_grad(self, prompt, seqs, coef, grad):
        """``grad += sum_{n,t} coef[n, t] * d log p(s_t | s_<t) / d params``.

        Returns the per-token log-probabilities as a by-product.
        """
        seqs = as_prefixes(seqs)
        N, T = seqs.shape
        X, targets = self._stacked(prompt, seqs)
        out, h = self.mlp.forward(X)
        logp = log_softmax(out, axis=1)
        c = np.asarray(coef, dtype=np.float64).T.reshape(-1)
        d_out = -np.exp(logp) * c[:, None]
        d_out[np.arange(targets.size), targets] += c
        self.mlp.backward(X, h, d_out, grad)
        return logp[np.arange(targets.size), targets].reshape(T, N).T

    def token_logprobs(self, prompt, seqs):
        seqs = as_prefixes(seqs)
        N, T = seqs.shape
        X, targets = self._stacked(prompt, seqs)
        out, _ = self.mlp.forward(X)
        logp = np.maximum(log_softmax(out, axis=1), self.log_floor)
        return logp[np.arange(targets.size), targets].reshape(T, N).T


def _uniform_loglik(dataset, vocab_size):
    return -dataset.shape[1] * np.log(vocab_size)


def fit_mle(dataset, prompt: Prompt, vocab_size: int, order: int = 2, kind: str = "tabular",
            smoothing: float = 1.0, hidden: int = 64, steps: int = 2000, lr: float = 1e-2,
            rng: np.random.Generator | None = None, generation: int = 0,
            log_floor: float = DEFAULT_LOG_FLOOR) -> AutoregressiveModel:
    """Maximum-likelihood model for a set of complete continuations of ``prompt``.

    Tabular fits are closed-form counts plus ``smoothing`` per cell. Neural fits
    run ``steps`` full-batch Adam updates on the distinct sequences weighted by
    multiplicity, starting from the uniform distribution (zero output head).
    """
    dataset = as_prefixes(dataset)
    if dataset.shape[0] == 0:
        raise InputDomainError("fit_mle needs a non-empty dataset")
    check_tokens(dataset, vocab_size)
    if dataset.shape[1] != prompt.horizon:
        raise InputDomainError("dataset sequences must all have the prompt's horizon")

    if kind == "tabular":
        shell = TabularModel.uniform(vocab_size, order)
        n_ctx = (vocab_size + 1) ** (order - 1)
        counts = np.zeros((n_ctx, vocab_size))
        for t in range(dataset.shape[1]):
            ctx = shell.context_index(prompt, dataset[:, :t])
            np.add.at(counts, (ctx, dataset[:, t]), 1.0)
        counts += smoothing
        totals = counts.sum(axis=1, keepdims=True)
        probs = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / vocab_size)
        return TabularModel.from_probs(probs, order, generation=generation, log_floor=log_floor)

    if kind == "neural":
        if rng is None:
            rng = np.random.default_rng(0)
        uniq, counts = np.unique(dataset, axis=0, return_counts=True)
        weights = counts / counts.sum()
        model = NeuralModel.initialize(vocab_size, order, prompt.horizon, rng, hidden=hidden,
                                       generation=generation, log_floor=log_floor)
        params = model.mlp.params
        opt = make_optimizer("adam", params.size, lr)
        coef = np.repeat(weights[:, None], uniq.shape[1], axis=1)
        for _ in range(steps):
            grad = np.zeros_like(params)
            model.accumulate_token_grad(prompt, uniq, coef, grad)
            opt.step(params, -grad)
        return model
    raise InputDomainError(f"unknown model kind {kind!r}")


def save_model(model: AutoregressiveModel, path) -> None:
    header = {
        "kind": model.kind,
        "vocab_size": model.vocab_size,
        "order": model.order,
        "generation": model.generation,
        "log_floor": repr(model.log_floor),
    }
    if isinstance(model, TabularModel):
        values = model.log_table
    else:
        header.update(horizon=model.horizon, hidden=model.mlp.n_hidden)
        values = model.mlp.params
    write_flat(path, header, values)


def load_model(path) -> AutoregressiveModel:
    header, values = read_flat(path)
    V, order = int(header["vocab_size"]), int(header["order"])
    common = dict(generation=int(header["generation"]), log_floor=float(header["log_floor"]))
    if header["kind"] == "tabular":
        return TabularModel(V, order, values.reshape(-1, V), **common)
    if header["kind"] == "neural":
        horizon, hidden = int(header["horizon"]), int(header["hidden"])
        mlp = MLP(order * (V + 1) + horizon, hidden, V, values)
        return NeuralModel(V, order, horizon, mlp, **common)
    raise InputDomainError(f"{path}: unknown model kind {header['kind']!r}")
