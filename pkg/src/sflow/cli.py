"""Command-line harness.

Subcommands: train-fm, train-sm, sample, guide, toy-kl, check. All runs are
reproducible from config + seed; the toy-kl report is byte-identical across
repeated runs of the same config.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import checks, flow, guidance, net, report, score
from .config import ConfigError, ExperimentConfig, load_config
from .experiment import run_toy_experiment, train_only
from .simplex import NoiseConfig, TemperatureSchedule


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    if args.output_dir is not None:
        config = dataclasses.replace(config, output_dir=args.output_dir)
    return config


def _add_config_args(p):
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--output-dir", default=None, help="override config output_dir")


def _restore(checkpoint_path):
    params, meta = net.load_checkpoint(checkpoint_path)
    schedule = TemperatureSchedule(**meta.get("schedule", {}))
    noise = NoiseConfig(**meta.get("noise", {}))
    sampler_meta = meta.get("sampler", {})
    return params, meta, schedule, noise, sampler_meta


def cmd_train(args, matcher: str) -> int:
    config = _load(args)
    if config.matcher != matcher:
        config = dataclasses.replace(config, matcher=matcher)
    result = train_only(config)
    print(
        f"trained {matcher} for {config.training.steps} steps: "
        f"final loss {result.metrics[-1][1]:.6f}, wall {result.wall_s:.1f}s"
    )
    print(f"checkpoint: {result.paths['checkpoint']}")
    return 0


def cmd_sample(args) -> int:
    params, meta, schedule, noise, sampler_meta = _restore(args.checkpoint)
    n_steps = args.steps or int(sampler_meta.get("n_steps", 100))
    rng = np.random.default_rng(args.seed)
    matcher = meta.get("matcher", "fm")
    init_tau = float(sampler_meta.get("init_tau", 2.0))
    if matcher == "sm":
        eta = args.eta or float(sampler_meta.get("eta", 0.5))
        tokens = score.sm_sample_batch(
            params, args.n, eta, n_steps, schedule, rng, noise, init_tau
        )
    else:
        sampler = flow.SamplerConfig(
            n_steps=n_steps, mode=sampler_meta.get("mode", "denoise"), init_tau=init_tau
        )
        tokens = flow.fm_sample_batch(params, args.n, sampler, schedule, rng, noise)
    lines = "\n".join(" ".join(map(str, row)) for row in tokens)
    if args.out:
        Path(args.out).write_text(lines + "\n", encoding="utf-8")
    else:
        print(lines)
    return 0


def cmd_guide(args) -> int:
    params, meta, schedule, noise, sampler_meta = _restore(args.checkpoint)
    if meta.get("matcher") == "sm":
        print("guide requires a flow-matching checkpoint", file=sys.stderr)
        return 1
    classifier = guidance.random_linear_classifier(
        params.seq_len, params.vocab, np.random.default_rng(args.classifier_seed)
    )
    gcfg = guidance.GuidanceConfig(
        gamma=args.gamma, n_candidates=args.candidates, top_k=args.top_k
    )
    sampler = flow.SamplerConfig(
        n_steps=args.steps or int(sampler_meta.get("n_steps", 100)),
        init_tau=float(sampler_meta.get("init_tau", 2.0)),
    )
    rng = np.random.default_rng(args.seed)
    out_dir = Path(args.out_dir)
    traces, scores = [], []
    for _ in range(args.n):
        tokens, rows = guidance.guided_sample(
            params, classifier, gcfg, sampler, schedule, rng, noise
        )
        traces.append(rows)
        scores.append(classifier.score(tokens))
        print(" ".join(map(str, tokens)))
    report.write_csv(
        out_dir / "guidance_trace.csv", guidance.GUIDANCE_TRACE_FIELDS, traces[0]
    )
    report.plot_guidance_trace(out_dir / "guidance_trace.png", traces)
    print(
        f"mean final classifier score over {args.n} guided samples: "
        f"{np.mean(scores):.4f} (achievable range {classifier.score_range():.4f})",
        file=sys.stderr,
    )
    return 0


def cmd_toy_kl(args) -> int:
    config = _load(args)
    result = run_toy_experiment(config)
    print(f"final_kl: {result.report['final_kl']:.6f}")
    print(f"report: {result.paths['report']}")
    print(f"wall: {result.wall_s:.1f}s")
    return 0


def cmd_check(_args) -> int:
    return 0 if checks.run_all() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sflow",
        description="Simplex flow/score matching harness with classifier guidance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-fm", help="train the flow matcher and write a checkpoint")
    _add_config_args(p)
    p.set_defaults(fn=lambda a: cmd_train(a, "fm"))

    p = sub.add_parser("train-sm", help="train the score matcher and write a checkpoint")
    _add_config_args(p)
    p.set_defaults(fn=lambda a: cmd_train(a, "sm"))

    p = sub.add_parser("sample", help="sample token sequences from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-n", type=int, default=10, help="number of sequences")
    p.add_argument("--steps", type=int, default=None, help="integration steps")
    p.add_argument("--eta", type=float, default=None, help="score-ascent step size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write sequences here instead of stdout")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("guide", help="classifier-guided sampling from a flow checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--gamma", type=float, default=10.0)
    p.add_argument("--candidates", type=int, default=10)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classifier-seed", type=int, default=0)
    p.add_argument("--out-dir", default="guide_run")
    p.set_defaults(fn=cmd_guide)

    p = sub.add_parser("toy-kl", help="full train/sample/KL experiment from a config")
    _add_config_args(p)
    p.set_defaults(fn=cmd_toy_kl)

    p = sub.add_parser("check", help="run the invariant suite; nonzero exit on failure")
    p.set_defaults(fn=cmd_check)

    return parser


def cli_dispatch(argv=None) -> int:
    """Parse argv and run; usage errors exit 2, check failures exit 1."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
