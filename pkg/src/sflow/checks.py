"""Invariant suite behind the `check` CLI subcommand.

Every check is self-contained, seeded, and fast; together they cover the
finite-difference oracles, tangency and boundary properties, the projection
contract, and the network gradient contract. Failures report the offending
magnitude so a regression is diagnosable from the one-line output.
"""

from __future__ import annotations

import time

import numpy as np

from . import flow, net, score
from .guidance import straight_through_grad
from .simplex import (
    NoiseConfig,
    TemperatureSchedule,
    expconcrete_interpolant,
    gs_interpolant,
    one_hot,
    sample_gumbel,
    simplex_project,
    temperature_at,
)

FD_TOL = 1e-4
VELOCITY_SUM_TOL = 1e-9
SCORE_SUM_TOL = 1e-7
PROP4_TOL = 1e-3


def check_velocity_fd(n_draws: int = 1000, seed: int = 101) -> tuple:
    """Training velocity vs central FD of the interpolant in t."""
    rng = np.random.default_rng(seed)
    schedule = TemperatureSchedule(tau_max=10.0, decay=3.0)
    noise = NoiseConfig(beta=2.0)
    h = 1e-5
    worst = 0.0
    for _ in range(n_draws):
        vocab = int(rng.integers(2, 24))
        k = int(rng.integers(vocab))
        g = sample_gumbel(rng, (vocab,), noise)
        t = rng.uniform(h, 1.0 - h)
        x = gs_interpolant(k, g, temperature_at(schedule, t), vocab)
        u = flow.conditional_velocity_train(x, k, g, schedule, t)
        up = gs_interpolant(k, g, temperature_at(schedule, t + h), vocab)
        down = gs_interpolant(k, g, temperature_at(schedule, t - h), vocab)
        fd = (up - down) / (2.0 * h)
        scale = np.maximum(np.maximum(np.abs(u), np.abs(fd)), 1e-8)
        worst = max(worst, float(np.max(np.abs(u - fd) / scale)))
    return worst <= FD_TOL, f"max rel err {worst:.3e} (tol {FD_TOL:g})"


def check_score_fd(n_draws: int = 1000, seed: int = 202) -> tuple:
    """Analytic conditional score vs central FD of the log-density."""
    rng = np.random.default_rng(seed)
    h = 1e-6
    worst = 0.0
    for _ in range(n_draws):
        vocab = int(rng.integers(2, 24))
        k = int(rng.integers(vocab))
        tau = rng.uniform(0.3, 10.0)
        g = sample_gumbel(rng, (vocab,), NoiseConfig(beta=2.0))
        x = expconcrete_interpolant(k, g, tau, vocab)
        s = score.conditional_score(x, k, tau)
        fd = np.empty(vocab)
        for i in range(vocab):
            bump = np.zeros(vocab)
            bump[i] = h
            fd[i] = (
                score.expconcrete_log_density(x + bump, k, tau)
                - score.expconcrete_log_density(x - bump, k, tau)
            ) / (2.0 * h)
        scale = np.maximum(np.maximum(np.abs(s), np.abs(fd)), 1e-8)
        worst = max(worst, float(np.max(np.abs(s - fd) / scale)))
    return worst <= FD_TOL, f"max rel err {worst:.3e} (tol {FD_TOL:g})"


def check_tangency(n_draws: int = 10_000, seed: int = 303) -> tuple:
    """Velocity, score, and straight-through rows each sum to zero."""
    rng = np.random.default_rng(seed)
    schedule = TemperatureSchedule()
    noise = NoiseConfig(beta=2.0)
    vocab = 12
    n = n_draws
    k = rng.integers(vocab, size=n)
    g = sample_gumbel(rng, (n, vocab), noise)
    t = rng.uniform(0.0, 1.0, size=n)
    tau = temperature_at(schedule, t)
    x = gs_interpolant(k, g, tau, vocab)
    u_train = flow.conditional_velocity_train(x, k, g, schedule, t)
    worst_v = float(np.max(np.abs(u_train.sum(axis=-1))))
    predicted = rng.dirichlet(np.ones(vocab), size=n)
    u_marg = flow.marginal_velocity(x, predicted, schedule, t)
    worst_v = max(worst_v, float(np.max(np.abs(u_marg.sum(axis=-1)))))
    x_log = expconcrete_interpolant(k, g, tau, vocab)
    s = score.conditional_score(x_log, k, tau)
    worst_s = float(np.max(np.abs(s.sum(axis=-1))))
    raw = rng.normal(size=(n, vocab))
    s_param = score.score_parameterize(raw, tau)
    worst_s = max(worst_s, float(np.max(np.abs(s_param.sum(axis=-1)))))
    worst_st = 0.0
    for i in range(0, n, max(1, n // 200)):
        row = straight_through_grad(x[i], int(k[i]), float(rng.normal()))
        worst_st = max(worst_st, abs(float(row.sum())))
    ok = (
        worst_v <= VELOCITY_SUM_TOL
        and worst_s <= SCORE_SUM_TOL
        and worst_st <= VELOCITY_SUM_TOL
    )
    return ok, (
        f"row sums: velocity {worst_v:.2e} (tol {VELOCITY_SUM_TOL:g}), "
        f"score {worst_s:.2e} (tol {SCORE_SUM_TOL:g}), "
        f"straight-through {worst_st:.2e}"
    )


def check_prop4(n_points: int = 200, seed: int = 404) -> tuple:
    """FD gradients of the two densities obey grad_gs = grad_ec / x - 1/x."""
    rng = np.random.default_rng(seed)
    h = 1e-6
    worst = 0.0
    for _ in range(n_points):
        vocab = int(rng.integers(2, 10))
        k = int(rng.integers(vocab))
        tau = rng.uniform(0.5, 4.0)
        x = rng.dirichlet(np.ones(vocab))
        x = np.clip(x, 5e-3, None)
        x /= x.sum()
        fd_gs = np.empty(vocab)
        fd_ec = np.empty(vocab)
        logx = np.log(x)
        for i in range(vocab):
            bump = np.zeros(vocab)
            bump[i] = h
            fd_gs[i] = (
                score.gs_log_density(x + bump, k, tau)
                - score.gs_log_density(x - bump, k, tau)
            ) / (2.0 * h)
            fd_ec[i] = (
                score.expconcrete_log_density(logx + bump, k, tau)
                - score.expconcrete_log_density(logx - bump, k, tau)
            ) / (2.0 * h)
        rhs = fd_ec / x - 1.0 / x
        scale = np.maximum(np.maximum(np.abs(fd_gs), np.abs(rhs)), 1e-8)
        worst = max(worst, float(np.max(np.abs(fd_gs - rhs) / scale)))
    return worst <= PROP4_TOL, f"max rel err {worst:.3e} (tol {PROP4_TOL:g})"


def check_grad(seed: int = 505) -> tuple:
    """Analytic gradients match FD on every layer; 2x corruption is caught."""
    rng = np.random.default_rng(seed)
    params = net.init_denoiser(3, 6, rng, hidden=(32, 32, 32))
    # nonzero final layer so the check exercises a generic point
    params.weights[-1] += rng.normal(scale=0.05, size=params.weights[-1].shape)
    probe = rng.dirichlet(np.ones(6), size=(4, 3))
    targets = rng.integers(6, size=(4, 3))
    errs = net.grad_check(params, probe, targets, rng.random(4), rng)
    healthy = errs["max"]

    def corrupt(grads):
        out = dict(grads)
        out["W1"] = 2.0 * out["W1"]
        return out

    errs_bad = net.grad_check(
        params, probe, targets, rng.random(4), rng, grad_transform=corrupt
    )
    ok = healthy <= FD_TOL and errs_bad["W1"] > 1e-2
    return ok, f"healthy max {healthy:.3e} (tol {FD_TOL:g}); corrupted W1 err {errs_bad['W1']:.3e}"


def check_boundaries(seed: int = 606) -> tuple:
    """Noise-free endpoints: near-uniform start, exact-argmax finish."""
    schedule = TemperatureSchedule(tau_max=10.0, decay=3.0)
    worst_ratio = 0.0
    bound = np.exp(1.0 / schedule.tau_max) * (1.0 + 1e-12)
    for vocab in (2, 8, 20, 512):
        zeros = np.zeros(vocab)
        for k in range(vocab):
            psi0 = gs_interpolant(k, zeros, temperature_at(schedule, 0.0), vocab)
            worst_ratio = max(worst_ratio, float(psi0.max() / psi0.min()))
            psi1 = gs_interpolant(k, zeros, temperature_at(schedule, 1.0), vocab)
            if int(np.argmax(psi1)) != k:
                return False, f"argmax(psi_1) != target at V={vocab}, k={k}"
    ok = worst_ratio <= bound
    return ok, f"psi_0 max/min {worst_ratio:.6f} (bound {bound:.6f}); psi_1 argmax exact"


def check_projection(seed: int = 707) -> tuple:
    """Idempotence, feasibility, and two frozen oracle values."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(2000, 7), scale=3.0)
    p = simplex_project(v)
    if not np.all(p >= 0) or np.max(np.abs(p.sum(axis=-1) - 1)) > 1e-9:
        return False, "projection output infeasible"
    if not np.array_equal(simplex_project(p), p):
        return False, "projection not idempotent"
    a = simplex_project(np.array([0.5, 0.7, 0.0]))
    b = simplex_project(np.array([-1.0, 2.0]))
    ok = np.allclose(a, [0.4, 0.6, 0.0], atol=1e-12) and np.allclose(
        b, [0.0, 1.0], atol=1e-12
    )
    return ok, f"known-value projections {'match' if ok else 'differ'}"


def check_log_consistency(seed: int = 808) -> tuple:
    """exp of the log-space interpolant equals the probability-space one."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(500):
        vocab = int(rng.integers(2, 40))
        k = int(rng.integers(vocab))
        tau = float(np.exp(rng.uniform(np.log(1e-3), np.log(1e3))))
        g = sample_gumbel(rng, (vocab,), NoiseConfig(beta=1.0))
        a = gs_interpolant(k, g, tau, vocab)
        b = np.exp(expconcrete_interpolant(k, g, tau, vocab))
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst <= 1e-12, f"max abs gap {worst:.2e} (tol 1e-12)"


ALL_CHECKS = (
    ("velocity-fd-agreement", check_velocity_fd),
    ("score-fd-agreement", check_score_fd),
    ("tangency", check_tangency),
    ("density-gradient-relation", check_prop4),
    ("network-gradients", check_grad),
    ("boundary-conditions", check_boundaries),
    ("simplex-projection", check_projection),
    ("log-space-consistency", check_log_consistency),
)


def run_all(verbose: bool = True) -> bool:
    all_ok = True
    for name, fn in ALL_CHECKS:
        start = time.perf_counter()
        ok, detail = fn()
        elapsed = time.perf_counter() - start
        all_ok &= ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({elapsed:.1f}s)")
    return all_ok
