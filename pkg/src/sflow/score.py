"""Score matching on the simplex via the log-space (ExpConcrete) interpolant.

Provides the closed-form log-densities of the tempered-softmax family and its
log-space twin, the analytic conditional score, the softmax score
parameterization for a network head, the training step, and the score-ascent
sampler. The sign convention of the analytic score is fixed by the
finite-difference oracle in the test suite: score = -tau + tau*V*SM(...).
"""

from __future__ import annotations

import math

import numpy as np

from . import net
from .flow import initial_state, trace_row
from .simplex import (
    NoiseConfig,
    TemperatureSchedule,
    expconcrete_interpolant,
    logsumexp,
    one_hot,
    sample_gumbel,
    simplex_project,
    softmax,
    temperature_at,
)

INTERIOR_FLOOR = 1e-12


def _log_weights(x, target_index, tau):
    """log pi_i - tau * x_i with pi_i = exp(delta_ik); broadcasts tau."""
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    while tau.ndim < x.ndim - 1:
        tau = tau[..., None]
    return one_hot(target_index, x.shape[-1]) - tau[..., None] * x


def expconcrete_log_density(x: np.ndarray, target_index, tau) -> float | np.ndarray:
    """Log-density of the log-space interpolant at rows x (logsumexp(x) = 0):

        log[(V-1)!] + (V-1) log tau + sum_i a_i - V * logsumexp(a)

    with a_i = delta_ik - tau * x_i. Scalar for a single row."""
    x = np.asarray(x, dtype=float)
    vocab = x.shape[-1]
    a = _log_weights(x, target_index, tau)
    tau_b = np.asarray(tau, dtype=float)
    while tau_b.ndim < x.ndim - 1:
        tau_b = tau_b[..., None]
    out = (
        math.lgamma(vocab)
        + (vocab - 1) * np.log(tau_b)
        + a.sum(axis=-1)
        - vocab * logsumexp(a)
    )
    return float(out) if out.ndim == 0 else out


def conditional_score(x: np.ndarray, target_index, tau) -> np.ndarray:
    """Gradient of expconcrete_log_density in its row entries:
    -tau + tau * V * SM(delta_ik - tau * x). Rows sum to zero."""
    x = np.asarray(x, dtype=float)
    vocab = x.shape[-1]
    tau_col = np.asarray(tau, dtype=float)
    while tau_col.ndim < x.ndim:
        tau_col = tau_col[..., None]
    return -tau_col + tau_col * vocab * softmax(_log_weights(x, target_index, tau))


def gs_log_density(x: np.ndarray, target_index, tau) -> float | np.ndarray:
    """Log-density of the tempered-softmax interpolant at simplex rows x:

        log[(V-1)!] + (V-1) log tau - V * logsumexp(delta - tau log x)
        + sum_i delta_ik - (tau + 1) * sum_i log x_i

    Requires strictly interior points."""
    x = np.asarray(x, dtype=float)
    if np.any(x < INTERIOR_FLOOR):
        raise ValueError("gs_log_density requires interior points (entries >= 1e-12)")
    vocab = x.shape[-1]
    logx = np.log(x)
    a = _log_weights(logx, target_index, tau)
    tau_b = np.asarray(tau, dtype=float)
    while tau_b.ndim < x.ndim - 1:
        tau_b = tau_b[..., None]
    out = (
        math.lgamma(vocab)
        + (vocab - 1) * np.log(tau_b)
        - vocab * logsumexp(a)
        + 1.0  # sum_i delta_ik
        - (tau_b + 1.0) * logx.sum(axis=-1)
    )
    return float(out) if np.ndim(out) == 0 else out


def score_parameterize(raw: np.ndarray, tau) -> np.ndarray:
    """Map raw network rows to score rows: -tau + tau * V * softmax(raw).
    Rows sum to zero for any input."""
    raw = np.asarray(raw, dtype=float)
    vocab = raw.shape[-1]
    tau_col = np.asarray(tau, dtype=float)
    while tau_col.ndim < raw.ndim:
        tau_col = tau_col[..., None]
    return -tau_col + tau_col * vocab * softmax(raw)


def score_loss(raw: np.ndarray, x_log: np.ndarray, targets, tau) -> float:
    """Mean over positions of ||SM(delta - tau*x_log) - SM(raw)||^2; the
    tau^2 V^2 prefactor of the exact score difference is dropped so losses
    stay evenly scaled as tau decays."""
    raw = np.asarray(raw, dtype=float)
    p_star = softmax(_log_weights(x_log, targets, tau))
    q = softmax(raw)
    return float(np.mean(np.sum((p_star - q) ** 2, axis=-1)))


def score_loss_grad(raw: np.ndarray, x_log: np.ndarray, targets, tau) -> tuple:
    """(loss, dloss/draw) for the softmax-matching objective."""
    raw = np.asarray(raw, dtype=float)
    p_star = softmax(_log_weights(x_log, targets, tau))
    q = softmax(raw)
    diff = q - p_star
    n_rows = int(np.prod(raw.shape[:-1]))
    loss = float(np.sum(diff**2) / n_rows)
    inner = np.sum(q * diff, axis=-1, keepdims=True)
    draw = 2.0 * q * (diff - inner) / n_rows
    return loss, draw


def raw_score_loss_grad(raw: np.ndarray, x_prob: np.ndarray, targets, tau) -> tuple:
    """Literal regression of the raw head onto one_hot + tau * x (probability
    space, no softmax); kept behind a flag for comparison with the softmax
    objective."""
    raw = np.asarray(raw, dtype=float)
    tau_col = np.asarray(tau, dtype=float)
    while tau_col.ndim < raw.ndim - 1:
        tau_col = tau_col[..., None]
    target = one_hot(targets, raw.shape[-1]) + tau_col[..., None] * x_prob
    diff = raw - target
    n_rows = int(np.prod(raw.shape[:-1]))
    loss = float(np.sum(diff**2) / n_rows)
    return loss, 2.0 * diff / n_rows


def sm_train_step(
    params: net.Denoiser,
    opt: net.AdamState,
    batch: np.ndarray,
    rng: np.random.Generator,
    schedule: TemperatureSchedule,
    noise: NoiseConfig,
    loss_kind: str = "softmax",
) -> tuple:
    """One optimizer step of score matching on clean token sequences.

    Builds log-space interpolants, feeds their exponentials to the network,
    and regresses the raw head per the chosen objective. Returns (params, loss).
    """
    batch = np.atleast_2d(np.asarray(batch))
    if batch.size == 0:
        raise ValueError("empty batch")
    n = batch.shape[0]
    t = rng.random(n)
    tau = temperature_at(schedule, t)
    g = sample_gumbel(rng, batch.shape + (params.vocab,), noise)
    x_log = expconcrete_interpolant(batch, g, tau, params.vocab)
    states = np.exp(x_log)
    raw, _, cache = net.forward(params, states, t, return_cache=True)
    if loss_kind == "softmax":
        loss, draw = score_loss_grad(raw, x_log, batch, tau)
    elif loss_kind == "raw":
        loss, draw = raw_score_loss_grad(raw, states, batch, tau)
    else:
        raise ValueError(f"unknown loss {loss_kind!r}")
    grads = net.backward(params, cache, draw)
    params = net.adam_step(params, grads, opt)
    return params, loss


def sm_sample(
    params: net.Denoiser,
    eta: float,
    n_steps: int,
    schedule: TemperatureSchedule,
    rng: np.random.Generator,
    init_noise: NoiseConfig = NoiseConfig(),
    init_tau: float = 2.0,
) -> tuple:
    """Score-ascent sampling of one sequence; returns (tokens, trace_rows).

    The step size eta is independent of the time grid: t advances by
    1/n_steps per iteration while the state moves eta times the
    parameterized score, projected back onto the simplex."""
    tokens, rows = sm_sample_batch(
        params, 1, eta, n_steps, schedule, rng, init_noise, init_tau, want_trace=True
    )
    return tokens[0], rows


def sm_sample_batch(
    params: net.Denoiser,
    n: int,
    eta: float,
    n_steps: int,
    schedule: TemperatureSchedule,
    rng: np.random.Generator,
    init_noise: NoiseConfig = NoiseConfig(),
    init_tau: float = 2.0,
    want_trace: bool = False,
):
    if eta <= 0:
        raise ValueError("step size eta must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = initial_state(n, params.seq_len, params.vocab, init_tau, rng, init_noise)
    rows = []
    dt = 1.0 / n_steps
    for step in range(n_steps):
        t = step * dt
        tau = temperature_at(schedule, t)
        raw, _ = net.forward(params, x, t)
        s = score_parameterize(raw, tau)
        x = simplex_project(x + eta * s)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at ascent step {step}")
        if want_trace:
            rows.append(trace_row(step, t, tau, x[0]))
    tokens = np.argmax(x, axis=-1)
    return (tokens, rows) if want_trace else tokens
