"""Straight-through classifier guidance over a velocity-field sampler.

Each integration step interleaves the unguided Euler update with a guidance
update: sample M candidate sequences from the top-k renormalized state, push
classifier gradients through the softmax surrogate of the state, add the
aggregate scaled by gamma, and project back onto the simplex. With gamma = 0
the state trajectory is bit-identical to unguided sampling under the same
seed, because the candidate draws never touch the state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import net
from .flow import SamplerConfig, decode, initial_state, marginal_velocity
from .simplex import NoiseConfig, TemperatureSchedule, one_hot, simplex_project, softmax

GUIDANCE_TRACE_FIELDS = ("step", "t", "mean_score", "max_score", "gamma")


@dataclass(frozen=True)
class GuidanceConfig:
    """gamma scales the aggregate gradient; n_candidates sequences are drawn
    per step from the top_k renormalized state (top_k None -> min(10, V))."""

    gamma: float = 10.0
    n_candidates: int = 10
    top_k: int | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")

    def resolve_top_k(self, vocab: int) -> int:
        k = min(10, vocab) if self.top_k is None else self.top_k
        if not 1 <= k <= vocab:
            raise ValueError(f"top_k must lie in [1, {vocab}], got {k}")
        return k


@dataclass
class ToyLinearClassifier:
    """Mean over positions of a per-token weight; the linear structure makes
    the straight-through estimator exact on its softmax surrogate."""

    weights: np.ndarray  # (L, V)

    def score(self, tokens: np.ndarray) -> float:
        tokens = np.asarray(tokens)
        return float(np.mean(self.weights[np.arange(tokens.shape[-1]), tokens]))

    def input_gradient(self, rendered: np.ndarray) -> np.ndarray:
        """d score / d one-hot entries; constant weights / L for this model."""
        if rendered.shape != self.weights.shape:
            raise ValueError("rendered sequence shape mismatch")
        return self.weights / self.weights.shape[0]

    def score_range(self) -> float:
        """Spread between the best and worst achievable sequence scores."""
        return float(
            np.mean(self.weights.max(axis=-1)) - np.mean(self.weights.min(axis=-1))
        )


def random_linear_classifier(
    seq_len: int, vocab: int, rng: np.random.Generator
) -> ToyLinearClassifier:
    return ToyLinearClassifier(weights=rng.normal(size=(seq_len, vocab)))


def topk_renormalize(row: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest entries (ties to the lowest index), softmax over
    their values, zero elsewhere. Works on (..., V)."""
    row = np.asarray(row, dtype=float)
    vocab = row.shape[-1]
    if not 1 <= k <= vocab:
        raise ValueError(f"k must lie in [1, {vocab}], got {k}")
    order = np.argsort(-row, axis=-1, kind="stable")
    keep = order[..., :k]
    vals = np.take_along_axis(row, keep, axis=-1)
    probs = softmax(vals)
    out = np.zeros_like(row)
    np.put_along_axis(out, keep, probs, axis=-1)
    return out


def sample_candidates(
    dist: np.ndarray, n_candidates: int, rng: np.random.Generator
) -> np.ndarray:
    """n_candidates independent per-position categorical draws; (M, L) ints."""
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    dist = np.asarray(dist, dtype=float)
    seq_len = dist.shape[0]
    cdf = np.cumsum(dist, axis=-1)
    cdf[..., -1] = 1.0
    u = rng.random((n_candidates, seq_len))
    out = np.empty((n_candidates, seq_len), dtype=int)
    for pos in range(seq_len):
        out[:, pos] = np.searchsorted(cdf[pos], u[:, pos], side="right")
    return np.minimum(out, dist.shape[-1] - 1)


def straight_through_grad(x_row: np.ndarray, token: int, upstream: float) -> np.ndarray:
    """Row of the softmax-surrogate Jacobian at the sampled token, scaled by
    the upstream classifier derivative. Entries sum to zero."""
    s = softmax(np.asarray(x_row, dtype=float))
    sk = s[token]
    out = -upstream * s * sk
    out[token] = upstream * sk * (1.0 - sk)
    return out


def _aggregate_gradient(
    x: np.ndarray, candidates: np.ndarray, classifier
) -> np.ndarray:
    """Sum of per-candidate straight-through gradients, (L, V)."""
    seq_len, vocab = x.shape
    s = softmax(x)
    total = np.zeros_like(x)
    pos = np.arange(seq_len)
    for m, tokens in enumerate(candidates):
        try:
            grad_matrix = classifier.input_gradient(one_hot(tokens, vocab))
        except Exception as exc:
            raise RuntimeError(f"classifier failed on candidate {m}") from exc
        upstream = grad_matrix[pos, tokens]
        sk = s[pos, tokens]
        contrib = -(upstream * sk)[:, None] * s
        contrib[pos, tokens] = upstream * sk * (1.0 - sk)
        total += contrib
    return total


def guided_step(
    x: np.ndarray, candidates: np.ndarray, classifier, gamma: float
) -> np.ndarray:
    """x + gamma * aggregate straight-through gradient, projected back onto
    the simplex per position. gamma = 0 returns x unchanged."""
    x = np.asarray(x, dtype=float)
    if gamma == 0.0:
        return simplex_project(x)
    return simplex_project(x + gamma * _aggregate_gradient(x, candidates, classifier))


def guided_sample(
    params: net.Denoiser,
    classifier,
    guidance: GuidanceConfig,
    sampler: SamplerConfig,
    schedule: TemperatureSchedule,
    rng: np.random.Generator,
    init_noise: NoiseConfig = NoiseConfig(),
) -> tuple:
    """Classifier-guided sampling of one sequence.

    Returns (tokens, trace_rows) where each trace row holds step, t, the mean
    and max classifier score over that step's candidates, and gamma.
    """
    top_k = guidance.resolve_top_k(params.vocab)
    x = initial_state(1, params.seq_len, params.vocab, sampler.init_tau, rng, init_noise)[0]
    dt = sampler.dt
    rows = []
    for step in range(sampler.n_steps):
        t = step * dt
        logits, probs = net.forward(params, x, t)
        u = marginal_velocity(x, probs, schedule, t) if sampler.mode == "denoise" else logits
        x = simplex_project(x + dt * u)
        dist = topk_renormalize(x, top_k)
        candidates = sample_candidates(dist, guidance.n_candidates, rng)
        scores = [classifier.score(c) for c in candidates]
        x = guided_step(x, candidates, classifier, guidance.gamma)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at guided step {step}")
        rows.append([step, t, float(np.mean(scores)), float(np.max(scores)), guidance.gamma])
    return decode(x), rows
