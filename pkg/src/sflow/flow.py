"""Flow matching on the simplex: conditional and marginal velocity fields,
the denoising training step, and the Euler sampler.

Velocity rows are tangent to the simplex (entries sum to zero). The training
interpolant carries scaled Gumbel noise; inference velocities are noise-free
and point toward the predicted clean distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import net
from .simplex import (
    NoiseConfig,
    TemperatureSchedule,
    gs_interpolant,
    one_hot,
    sample_gumbel,
    simplex_project,
    softmax,
    temperature_at,
)

MIN_TAU = 1e-8
PROB_FLOOR = 1e-12

TRACE_FIELDS = ("step", "t", "tau")


@dataclass(frozen=True)
class SamplerConfig:
    """Euler integration settings; mode picks the network parameterization.

    init_tau sets the spread of the random starting state, softmax of scaled
    Gumbel noise over init_tau. The integration is a deterministic map of the
    start, so this spread decides how initial tilts compete with the shared
    drift toward common tokens; the schedule's tau_max is too tight (samples
    over-concentrate) and a flat Dirichlet too wide. The default is calibrated
    against an exact-posterior oracle on the toy task.
    """

    n_steps: int = 100
    mode: str = "denoise"  # "denoise" (predict clean probs) or "velocity"
    init_tau: float = 2.0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.mode not in ("denoise", "velocity"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.init_tau <= 0:
            raise ValueError("init_tau must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps


def _rate(schedule: TemperatureSchedule, t, like: np.ndarray) -> np.ndarray:
    """decay / tau(t), expanded with trailing axes to broadcast against `like`."""
    tau = np.asarray(temperature_at(schedule, t), dtype=float)
    if np.any(tau < MIN_TAU):
        raise FloatingPointError(f"tau(t) below {MIN_TAU}; velocity undefined")
    rate = schedule.decay / tau
    while rate.ndim < like.ndim:
        rate = rate[..., None]
    return rate


def conditional_velocity_train(
    x: np.ndarray, target_index, g: np.ndarray, schedule: TemperatureSchedule, t
) -> np.ndarray:
    """Velocity of the noisy interpolant: the time derivative of the tempered
    softmax under the same noise g that produced x. Entry i is
    rate * x_i * (a_i - <x, a>) with a = one_hot(target) + g."""
    x = np.asarray(x, dtype=float)
    a = one_hot(target_index, x.shape[-1]) + g
    inner = np.sum(x * a, axis=-1, keepdims=True)
    return _rate(schedule, t, x) * x * (a - inner)


def conditional_velocity_inference(
    x: np.ndarray, target_index: int, schedule: TemperatureSchedule, t
) -> np.ndarray:
    """Noise-free conditional velocity rate * x_k * (e_k - x); vanishes at the
    target vertex and on the opposite face."""
    x = np.asarray(x, dtype=float)
    e = one_hot(target_index, x.shape[-1])
    xk = x[..., target_index, None]
    return _rate(schedule, t, x) * xk * (e - x)


def marginal_velocity(
    x: np.ndarray, predicted: np.ndarray, schedule: TemperatureSchedule, t
) -> np.ndarray:
    """Mixture of noise-free conditional velocities weighted by the predicted
    clean distribution, in closed form rate * (x*p - x*<x, p>)."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(predicted, dtype=float)
    inner = np.sum(x * p, axis=-1, keepdims=True)
    return _rate(schedule, t, x) * (x * p - x * inner)


def fm_loss_nll(predicted: np.ndarray, targets) -> float:
    """Mean over positions of -log(predicted prob of the true token), with
    the probability floored at 1e-12."""
    p = np.asarray(predicted, dtype=float)
    if p.ndim == 2:
        p = p[None]
    targets = np.atleast_2d(targets)
    n, seq_len = targets.shape
    picked = p[np.arange(n)[:, None], np.arange(seq_len)[None, :], targets]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def fm_loss_mse(predicted_velocity: np.ndarray, true_velocity: np.ndarray) -> float:
    """Mean squared difference over all entries."""
    a = np.asarray(predicted_velocity, dtype=float)
    b = np.asarray(true_velocity, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def make_interpolants(
    tokens: np.ndarray,
    t: np.ndarray,
    schedule: TemperatureSchedule,
    noise: NoiseConfig,
    rng: np.random.Generator,
    vocab: int,
) -> tuple:
    """Noisy states for a batch of clean token sequences at per-sequence times.

    Returns (states, g) with states shaped (n, L, V); g is the beta-scaled
    noise actually used, needed by the velocity-regression branch.
    """
    tokens = np.atleast_2d(tokens)
    g = sample_gumbel(rng, tokens.shape + (vocab,), noise)
    states = gs_interpolant(tokens, g, temperature_at(schedule, t), vocab)
    return states, g


def fm_train_step(
    params: net.Denoiser,
    opt: net.AdamState,
    batch: np.ndarray,
    rng: np.random.Generator,
    schedule: TemperatureSchedule,
    noise: NoiseConfig,
    loss_kind: str = "nll",
) -> tuple:
    """One optimizer step on a batch of clean token sequences.

    Draws t ~ U(0,1) per sequence, builds noisy interpolants, and updates the
    network through the configured loss branch. Returns (params, loss).
    """
    batch = np.atleast_2d(np.asarray(batch))
    if batch.size == 0:
        raise ValueError("empty batch")
    n = batch.shape[0]
    t = rng.random(n)
    states, g = make_interpolants(batch, t, schedule, noise, rng, params.vocab)
    logits, _, cache = net.forward(params, states, t, return_cache=True)
    if loss_kind == "nll":
        loss, dlogits = net.nll_loss_and_grad(logits, batch)
    elif loss_kind == "mse":
        target_v = conditional_velocity_train(states, batch, g, schedule, t)
        loss = fm_loss_mse(logits, target_v)
        dlogits = 2.0 * (logits - target_v) / logits.size
    else:
        raise ValueError(f"unknown loss {loss_kind!r}")
    grads = net.backward(params, cache, dlogits)
    params = net.adam_step(params, grads, opt)
    return params, loss


def initial_state(
    n: int,
    seq_len: int,
    vocab: int,
    init_tau: float,
    rng: np.random.Generator,
    init_noise: NoiseConfig,
) -> np.ndarray:
    """Draw starting states: softmax of scaled Gumbel noise over init_tau.

    Noise-free config gives the exact uniform state (and therefore a single
    deterministic trajectory)."""
    g = sample_gumbel(rng, (n, seq_len, vocab), init_noise)
    return softmax(g / init_tau)


def integrate(
    params: net.Denoiser,
    states: np.ndarray,
    sampler: SamplerConfig,
    schedule: TemperatureSchedule,
    on_step=None,
) -> np.ndarray:
    """Euler-integrate a batch of states from t=0 to 1 with projection back
    onto the simplex after every step."""
    x = np.asarray(states, dtype=float)
    dt = sampler.dt
    for step in range(sampler.n_steps):
        t = step * dt
        logits, probs = net.forward(params, x, t)
        if sampler.mode == "denoise":
            u = marginal_velocity(x, probs, schedule, t)
        else:
            u = logits
        x = simplex_project(x + dt * u)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at integration step {step}")
        if on_step is not None:
            on_step(step, t, temperature_at(schedule, t), x)
    return x


def decode(states: np.ndarray) -> np.ndarray:
    """Per-position argmax with ties broken toward the lowest index."""
    return np.argmax(states, axis=-1)


def trace_row(step: int, t: float, tau: float, state: np.ndarray) -> list:
    """CSV trace row: step, t, tau, per-position entropy then max-prob."""
    p = np.clip(state, PROB_FLOOR, 1.0)
    entropy = -np.sum(p * np.log(p), axis=-1)
    return [step, t, tau, *entropy.tolist(), *state.max(axis=-1).tolist()]


def trace_header(seq_len: int) -> list:
    return (
        list(TRACE_FIELDS)
        + [f"entropy_{i}" for i in range(seq_len)]
        + [f"max_prob_{i}" for i in range(seq_len)]
    )


def fm_sample(
    params: net.Denoiser,
    sampler: SamplerConfig,
    schedule: TemperatureSchedule,
    rng: np.random.Generator,
    init_noise: NoiseConfig = NoiseConfig(),
) -> tuple:
    """Sample one token sequence; returns (tokens, trace_rows)."""
    rows = []
    x0 = initial_state(1, params.seq_len, params.vocab, sampler.init_tau, rng, init_noise)

    def record(step, t, tau, x):
        rows.append(trace_row(step, t, tau, x[0]))

    final = integrate(params, x0, sampler, schedule, on_step=record)
    return decode(final)[0], rows


def fm_sample_batch(
    params: net.Denoiser,
    n: int,
    sampler: SamplerConfig,
    schedule: TemperatureSchedule,
    rng: np.random.Generator,
    init_noise: NoiseConfig = NoiseConfig(),
) -> np.ndarray:
    """Sample n token sequences in one vectorized integration; (n, L) ints."""
    x0 = initial_state(n, params.seq_len, params.vocab, sampler.init_tau, rng, init_noise)
    return decode(integrate(params, x0, sampler, schedule))
