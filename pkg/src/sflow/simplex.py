"""Simplex-valued primitives.

Temperature schedule, scaled Gumbel noise, the probability-space and
log-space softmax interpolants, and Euclidean projection onto the simplex.
All array operations act on the last axis (the vocabulary axis) and accept
arbitrary leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Guard inside both logs of the Gumbel transform; prevents -inf without
# measurably biasing the distribution.
GUMBEL_EPS = 1e-20

SIMPLEX_ATOL = 1e-9
LOG_SIMPLEX_ATOL = 1e-7


@dataclass(frozen=True)
class TemperatureSchedule:
    """Exponentially decaying temperature tau(t) = tau_max * exp(-decay * t)."""

    tau_max: float = 10.0
    decay: float = 3.0

    def __post_init__(self):
        if self.tau_max <= 0:
            raise ValueError(f"tau_max must be positive, got {self.tau_max}")
        if self.decay < 0:
            raise ValueError(f"decay must be nonnegative, got {self.decay}")


@dataclass(frozen=True)
class NoiseConfig:
    """Gumbel noise scaled down by beta; noise_free yields exact zeros."""

    beta: float = 2.0
    epsilon: float = GUMBEL_EPS
    noise_free: bool = False

    def __post_init__(self):
        if not self.noise_free and self.beta < 1.0:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def temperature_at(schedule: TemperatureSchedule, t) -> np.ndarray | float:
    """Evaluate tau(t) for t in [0, 1]; scalar in gives scalar out."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    tau = schedule.tau_max * np.exp(-schedule.decay * t_arr)
    return float(tau) if np.isscalar(t) or t_arr.ndim == 0 else tau


def sample_gumbel(rng: np.random.Generator, shape, noise: NoiseConfig) -> np.ndarray:
    """Draw beta-scaled Gumbel noise g = -log(-log(U + eps) + eps) / beta.

    noise_free mode returns exact zeros without consuming the generator.
    """
    if np.prod(shape) < 1:
        raise ValueError(f"shape must be nonempty, got {shape}")
    if noise.noise_free:
        return np.zeros(shape, dtype=float)
    u = rng.random(shape)
    return -np.log(-np.log(u + noise.epsilon) + noise.epsilon) / noise.beta


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax; safe for the large logits small tau produces."""
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def logsumexp(a: np.ndarray, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def one_hot(index, size: int) -> np.ndarray:
    """Dense rendering of token indices; last axis has length `size`."""
    idx = np.asarray(index)
    if np.any(idx < 0) or np.any(idx >= size):
        raise ValueError(f"token index out of range [0, {size})")
    return np.identity(size)[idx]


def interpolant_logits(target_index, g: np.ndarray, tau, size: int) -> np.ndarray:
    """(one_hot + g) / tau, with g already beta-scaled. Internal helper; the
    general-logit form is exposed for callers that pass their own base logits."""
    return general_interpolant_logits(one_hot(target_index, size), g, tau)


def general_interpolant_logits(base_logits: np.ndarray, g: np.ndarray, tau) -> np.ndarray:
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr <= 0):
        raise ValueError(f"tau must be positive, got {tau}")
    while tau_arr.ndim < np.asarray(base_logits).ndim:
        tau_arr = tau_arr[..., None]
    return (np.asarray(base_logits) + g) / tau_arr


def gs_interpolant(target_index, g: np.ndarray, tau, size: int) -> np.ndarray:
    """Tempered softmax of (one-hot + noise); a point on the simplex per row."""
    return softmax(interpolant_logits(target_index, g, tau, size))


def expconcrete_interpolant(target_index, g: np.ndarray, tau, size: int) -> np.ndarray:
    """Log-space twin of gs_interpolant; rows satisfy logsumexp(row) = 0."""
    return log_softmax(interpolant_logits(target_index, g, tau, size))


def is_simplex(x: np.ndarray, atol: float = SIMPLEX_ATOL) -> bool:
    x = np.asarray(x)
    return bool(
        np.all(np.isfinite(x))
        and np.all(x >= 0.0)
        and np.all(np.abs(np.sum(x, axis=-1) - 1.0) <= atol)
    )


def is_log_simplex(x: np.ndarray, atol: float = LOG_SIMPLEX_ATOL) -> bool:
    x = np.asarray(x)
    return bool(np.all(np.isfinite(x)) and np.all(np.abs(logsumexp(x)) <= atol))


def simplex_project(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the simplex (sort-based threshold).

    Rows already feasible are returned bit-unchanged, which makes the
    projection exactly idempotent. Raises on non-finite input.
    """
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("simplex_project requires finite input")
    flat = v.reshape(-1, v.shape[-1])
    feasible = (np.abs(flat.sum(axis=-1) - 1.0) <= SIMPLEX_ATOL) & np.all(
        flat >= 0.0, axis=-1
    )
    if np.all(feasible):
        return v
    out = flat.copy()
    bad = flat[~feasible]
    n = bad.shape[-1]
    s = np.sort(bad, axis=-1)[:, ::-1]
    cum = np.cumsum(s, axis=-1)
    j = np.arange(1, n + 1)
    cond = s - (cum - 1.0) / j > 0.0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=-1)
    theta = (cum[np.arange(bad.shape[0]), rho] - 1.0) / (rho + 1)
    out[~feasible] = np.maximum(bad - theta[:, None], 0.0)
    return out.reshape(v.shape)
