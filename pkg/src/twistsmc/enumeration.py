"""Level-by-level enumeration of every prefix of a small instance.

Level ``t`` holds all ``V**t`` prefixes in lexicographic order, so the
children of prefix ``i`` at level ``t`` are ``i * V + v`` at level ``t + 1``.
Conditionals are evaluated once per prefix and carried down the tree.
"""

from __future__ import annotations

import numpy as np

from .errors import CapacityError

MAX_SEQUENCES = 2 ** 22


def guard(vocab_size: int, horizon: int, limit: int = MAX_SEQUENCES) -> None:
    if vocab_size ** horizon > limit:
        raise CapacityError(
            f"{vocab_size}^{horizon} = {vocab_size ** horizon} sequences exceeds the "
            f"enumeration limit of {limit}")


def level_tokens(vocab_size: int, t: int) -> np.ndarray:
    """All ``V**t`` prefixes of length ``t`` as an int array ``(V**t, t)``."""
    if t == 0:
        return np.zeros((1, 0), dtype=np.int64)
    idx = np.arange(vocab_size ** t)
    powers = vocab_size ** np.arange(t - 1, -1, -1)
    return (idx[:, None] // powers[None, :]) % vocab_size


def prefix_index(prefixes: np.ndarray, vocab_size: int) -> np.ndarray:
    t = prefixes.shape[1]
    powers = vocab_size ** np.arange(t - 1, -1, -1)
    return prefixes @ powers if t else np.zeros(prefixes.shape[0], dtype=np.int64)


def model_conditionals(model, prompt, horizon: int | None = None) -> list[np.ndarray]:
    """``cond[t]`` has shape ``(V**t, V)``: next-token log-probs after each level-``t`` prefix."""
    T = prompt.horizon if horizon is None else horizon
    guard(model.vocab_size, T)
    return [model.next_logprobs(prompt, level_tokens(model.vocab_size, t)) for t in range(T)]


def prefix_logprobs(cond: list[np.ndarray]) -> list[np.ndarray]:
    """Joint log-probability of every prefix at levels ``0..T``."""
    levels = [np.zeros(1)]
    for c in cond:
        levels.append((levels[-1][:, None] + c).reshape(-1))
    return levels
