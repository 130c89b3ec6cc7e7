"""Experiment orchestration: train a matcher on the toy task, generate
sequences, evaluate the factorized KL, and persist metrics, report,
checkpoint, and figures.

Substream layout (all spawned from fixed-tag seed sequences so a run is a
pure function of its config):

    [toy.seed, 0]     target distribution
    [toy.seed, 1]     training dataset
    [seed, 2]         network init
    [seed, 3]         training batches and interpolant noise
    [seed, 4]         generation (chunked; order fixed by chunk index)
    [seed, 5]         single traced trajectory
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flow, net, report, score
from .config import ExperimentConfig
from .simplex import simplex_project
from .toy import (
    ToySpec,
    chunked_map,
    empirical_kl,
    gen_toy_target,
    linear_baseline_velocity,
    sample_dataset,
    sample_uniform_simplex,
)

KL_DEFINITION = "sum over positions of KL(smoothed empirical || target)"


@dataclass
class RunResult:
    report: dict
    metrics: list
    wall_s: float
    params: net.Denoiser
    target: np.ndarray
    sequences: np.ndarray
    paths: dict = field(default_factory=dict)


def _rng(*tag) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(tag)))


def train_matcher(config: ExperimentConfig, dataset: np.ndarray, on_step=None):
    """Run the configured number of training steps; returns (params, metrics)
    with metrics rows (step, loss, wall_ms).

    The returned parameters are a Polyak average over the training tail,
    which removes most of the small-batch optimizer jitter from the final
    weights; the averaging window is steps/20.
    """
    spec = config.toy
    params = net.init_denoiser(spec.seq_len, spec.vocab, _rng(config.seed, 2))
    opt = net.AdamState(lr=config.training.learning_rate)
    train_rng = _rng(config.seed, 3)
    n_train = dataset.shape[0]
    decay = max(0.0, min(0.9995, 1.0 - 20.0 / config.training.steps))
    average = params.copy()
    metrics = []
    start = time.perf_counter()
    for step in range(config.training.steps):
        opt.lr = config.training.lr_at(step)
        batch = dataset[train_rng.integers(0, n_train, config.training.batch_size)]
        if config.matcher == "fm":
            params, loss = flow.fm_train_step(
                params, opt, batch, train_rng, config.schedule, config.noise,
                loss_kind=config.loss_kind,
            )
        elif config.matcher == "sm":
            params, loss = score.sm_train_step(
                params, opt, batch, train_rng, config.schedule, config.noise,
                loss_kind=config.loss_kind,
            )
        else:
            params, loss = _linear_train_step(params, opt, batch, train_rng)
        for (_, avg), (_, live) in zip(average.param_items(), params.param_items()):
            avg *= decay
            avg += (1.0 - decay) * live
        wall_ms = (time.perf_counter() - start) * 1e3
        metrics.append((step, loss, wall_ms))
        if on_step is not None:
            on_step(step, loss)
    average.version = params.version
    return average, metrics


def _linear_train_step(params, opt, batch, rng):
    """Baseline: straight-path interpolant from a flat-Dirichlet prior to the
    one-hot target, denoiser trained with the same NLL objective."""
    n = batch.shape[0]
    t = rng.random(n)
    x0 = sample_uniform_simplex(batch.shape + (params.vocab,), rng)
    onehot = np.identity(params.vocab)[batch]
    states = (1.0 - t[:, None, None]) * x0 + t[:, None, None] * onehot
    logits, _, cache = net.forward(params, states, t, return_cache=True)
    loss, dlogits = net.nll_loss_and_grad(logits, batch)
    grads = net.backward(params, cache, dlogits)
    params = net.adam_step(params, grads, opt)
    return params, loss


def _integrate_linear(params, states, n_steps):
    x = np.asarray(states, dtype=float)
    dt = 1.0 / n_steps
    for step in range(n_steps):
        t = step * dt
        _, probs = net.forward(params, x, t)
        x = simplex_project(x + dt * linear_baseline_velocity(x, probs, t))
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at integration step {step}")
    return x


def generate_sequences(
    config: ExperimentConfig, params: net.Denoiser, n: int | None = None
) -> np.ndarray:
    """Sample sequences from the trained matcher, chunked deterministically."""
    n = config.sampler.n_samples if n is None else n
    sampler = config.sampler.sampler()

    def chunk_task(i, size, rng):
        if config.matcher == "fm":
            return flow.fm_sample_batch(
                params, size, sampler, config.schedule, rng, config.noise
            )
        if config.matcher == "sm":
            return score.sm_sample_batch(
                params, size, config.sampler.eta, config.sampler.n_steps,
                config.schedule, rng, config.noise, config.sampler.init_tau,
            )
        x0 = sample_uniform_simplex((size, params.seq_len, params.vocab), rng)
        return flow.decode(_integrate_linear(params, x0, config.sampler.n_steps))

    return chunked_map(n, np.random.SeedSequence([config.seed, 4]), chunk_task)


def _traced_sample(config: ExperimentConfig, params: net.Denoiser):
    rng = _rng(config.seed, 5)
    if config.matcher == "sm":
        _, rows = score.sm_sample(
            params, config.sampler.eta, config.sampler.n_steps,
            config.schedule, rng, config.noise, config.sampler.init_tau,
        )
    else:
        _, rows = flow.fm_sample(
            params, config.sampler.sampler(), config.schedule, rng, config.noise
        )
    return flow.trace_header(params.seq_len), rows


def checkpoint_meta(config: ExperimentConfig) -> dict:
    return {
        "matcher": config.matcher,
        "schedule": {"tau_max": config.schedule.tau_max, "decay": config.schedule.decay},
        "noise": {
            "beta": config.noise.beta,
            "epsilon": config.noise.epsilon,
            "noise_free": config.noise.noise_free,
        },
        "sampler": {
            "n_steps": config.sampler.n_steps,
            "mode": config.sampler.mode,
            "eta": config.sampler.eta,
            "init_tau": config.sampler.init_tau,
        },
        "config_hash": config.config_hash(),
    }


def run_toy_experiment(config: ExperimentConfig, write: bool = True) -> RunResult:
    """Train, sample, evaluate KL, and (optionally) write all artifacts."""
    started = time.perf_counter()
    out = Path(config.output_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    spec: ToySpec = config.toy

    target = gen_toy_target(spec, _rng(spec.seed, 0))
    dataset = sample_dataset(target, spec.n_train, np.random.SeedSequence([spec.seed, 1]))

    params, metrics = train_matcher(config, dataset)
    sequences = generate_sequences(config, params)
    total_kl, per_position = empirical_kl(sequences, target)

    result_report = {
        "final_kl": total_kl,
        "kl_per_position": per_position.tolist(),
        "kl_definition": KL_DEFINITION,
        "config_hash": config.config_hash(),
        "git_rev": report.git_rev(),
        "seed": config.seed,
        "matcher": config.matcher,
        "n_samples": int(sequences.shape[0]),
        "train_steps": config.training.steps,
        "final_loss": metrics[-1][1],
    }
    wall_s = time.perf_counter() - started

    result = RunResult(
        report=result_report,
        metrics=metrics,
        wall_s=wall_s,
        params=params,
        target=target,
        sequences=sequences,
    )
    if write:
        result.paths["metrics"] = report.write_csv(
            out / "metrics.csv", report.METRICS_HEADER, metrics
        )
        result.paths["report"] = report.write_report(out / "report.json", result_report)
        net.save_checkpoint(out / "checkpoint.bin", params, checkpoint_meta(config))
        result.paths["checkpoint"] = out / "checkpoint.bin"
        (out / "config.json").write_text(config.to_json(), encoding="utf-8")
        header, rows = _traced_sample(config, params)
        result.paths["trace"] = report.write_csv(out / "trace.csv", header, rows)
        steps = [row[0] for row in metrics]
        losses = [row[1] for row in metrics]
        result.paths["loss_curve"] = report.plot_loss_curve(
            out / "loss_curve.png", steps, losses, title=f"{config.matcher} training loss"
        )
        counts = np.stack(
            [
                np.bincount(sequences[:, pos], minlength=spec.vocab)
                for pos in range(spec.seq_len)
            ]
        ).astype(float)
        result.paths["marginals"] = report.plot_marginals(
            out / "marginals.png", target, counts / sequences.shape[0]
        )
        result.paths["trace_figure"] = report.plot_trace(
            out / "trace.png", header, rows
        )
    return result


def train_only(config: ExperimentConfig) -> RunResult:
    """Training phase of run_toy_experiment, with checkpoint/metrics/figure."""
    started = time.perf_counter()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = config.toy
    target = gen_toy_target(spec, _rng(spec.seed, 0))
    dataset = sample_dataset(target, spec.n_train, np.random.SeedSequence([spec.seed, 1]))
    params, metrics = train_matcher(config, dataset)
    wall_s = time.perf_counter() - started
    result = RunResult(
        report={
            "config_hash": config.config_hash(),
            "git_rev": report.git_rev(),
            "seed": config.seed,
            "matcher": config.matcher,
            "train_steps": config.training.steps,
            "final_loss": metrics[-1][1],
        },
        metrics=metrics,
        wall_s=wall_s,
        params=params,
        target=target,
        sequences=np.empty((0, spec.seq_len), dtype=int),
    )
    result.paths["metrics"] = report.write_csv(
        out / "metrics.csv", report.METRICS_HEADER, metrics
    )
    net.save_checkpoint(out / "checkpoint.bin", params, checkpoint_meta(config))
    result.paths["checkpoint"] = out / "checkpoint.bin"
    (out / "config.json").write_text(config.to_json(), encoding="utf-8")
    result.paths["loss_curve"] = report.plot_loss_curve(
        out / "loss_curve.png",
        [row[0] for row in metrics],
        [row[1] for row in metrics],
        title=f"{config.matcher} training loss",
    )
    return result
