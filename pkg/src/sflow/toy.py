"""Toy categorical data and the factorized KL evaluation.

The target is a length-L stack of independent categorical distributions over
K tokens, drawn flat-Dirichlet (normalized standard exponentials). KL is the
sum over positions of KL(smoothed empirical || target): at large K the joint
support cannot be estimated from the sample budget, so the factorized
estimator is the only consistent one and reports label it as such.

Dataset and model sampling fan out across worker chunks whose generator
streams are split deterministically from the master seed, so results are
identical for any ``SFLOW_THREADS`` setting; chunk order fixes output order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

CHUNK = 8192


@dataclass(frozen=True)
class ToySpec:
    vocab: int = 20  # K
    seq_len: int = 4  # L
    n_train: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.vocab < 2:
            raise ValueError("vocab must be >= 2")
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")


def n_workers() -> int:
    """Worker cap from SFLOW_THREADS; default 1 (fully serial)."""
    try:
        return max(1, int(os.environ.get("SFLOW_THREADS", "1")))
    except ValueError:
        return 1


def gen_toy_target(spec: ToySpec, rng: np.random.Generator) -> np.ndarray:
    """Per-position categorical rows (L, K), each flat-Dirichlet."""
    draws = rng.standard_exponential((spec.seq_len, spec.vocab))
    return draws / draws.sum(axis=-1, keepdims=True)


def _categorical_rows(target: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    seq_len, vocab = target.shape
    cdf = np.cumsum(target, axis=-1)
    cdf[:, -1] = 1.0
    u = rng.random((n, seq_len))
    out = np.empty((n, seq_len), dtype=int)
    for pos in range(seq_len):
        out[:, pos] = np.searchsorted(cdf[pos], u[:, pos], side="right")
    return np.minimum(out, vocab - 1)


def chunked_map(n: int, seed, task) -> np.ndarray:
    """Run task(chunk_index, chunk_size, child_rng) over fixed-size chunks and
    concatenate in chunk order. Chunking is independent of the thread count."""
    n_chunks = (n + CHUNK - 1) // CHUNK
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(n_chunks)
    sizes = [min(CHUNK, n - i * CHUNK) for i in range(n_chunks)]

    def run(i):
        return task(i, sizes[i], np.random.default_rng(children[i]))

    workers = n_workers()
    if workers == 1 or n_chunks == 1:
        parts = [run(i) for i in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    return np.concatenate(parts, axis=0)


def sample_dataset(target: np.ndarray, n: int, seed) -> np.ndarray:
    """n i.i.d. sequences from the factorized target; (n, L) ints.

    seed may be an int/SeedSequence (chunked, thread-safe, deterministic) or a
    Generator (single serial stream).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(seed, np.random.Generator):
        return _categorical_rows(target, n, seed)
    return chunked_map(n, seed, lambda i, size, rng: _categorical_rows(target, size, rng))


def empirical_kl(
    sequences: np.ndarray, target: np.ndarray, alpha: float | None = None
) -> tuple:
    """Factorized KL of the smoothed empirical distribution from the target.

    Returns (total, per_position): total is the sum over positions of
    KL(q_pos || target_pos) where q_pos is the add-alpha smoothed frequency
    (alpha defaults to 1e-9 * sample count, keeping the estimator floor
    proportional to n).
    """
    sequences = np.atleast_2d(np.asarray(sequences))
    if sequences.size == 0:
        raise ValueError("empty sample set")
    n, seq_len = sequences.shape
    vocab = target.shape[-1]
    if alpha is None:
        alpha = 1e-9 * n
    per_position = np.empty(seq_len)
    for pos in range(seq_len):
        counts = np.bincount(sequences[:, pos], minlength=vocab).astype(float)
        q = (counts + alpha) / (n + vocab * alpha)
        per_position[pos] = float(np.sum(q * np.log(q / target[pos])))
    return float(per_position.sum()), per_position


def linear_baseline_velocity(x: np.ndarray, predicted: np.ndarray, t: float) -> np.ndarray:
    """Baseline straight-path velocity (predicted - x) / (1 - t), the mixture
    over predicted weights of (e_k - x) / (1 - t); denominator clamped near 1."""
    if t >= 1.0:
        raise ValueError("baseline velocity undefined at t >= 1")
    x = np.asarray(x, dtype=float)
    p = np.asarray(predicted, dtype=float)
    return (p - x) / max(1.0 - t, 1e-6)


def sample_uniform_simplex(shape, rng: np.random.Generator) -> np.ndarray:
    """Flat-Dirichlet rows over the last axis; the baseline's t=0 prior."""
    draws = rng.standard_exponential(shape)
    return draws / draws.sum(axis=-1, keepdims=True)
