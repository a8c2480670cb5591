"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The desk-scale scenario (criteria 3, 4, 5, 7, 9) runs the real pipeline once
through the command layer with ``configs/desk_m6.json`` and is shared by a
module fixture; expect several minutes on one CPU core.
"""

import contextlib
import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

import sarrm.trainer as trainer_mod
from oracles import central_difference, grid_constrained_optimum, long_form_lagrangian
from sarrm import config as run_config
from sarrm.channel import GeometryConfig, NetworkRealization, fading_gains, generate_realization
from sarrm.commands import cmd_eval, cmd_generate, cmd_train
from sarrm.executor import ExecutionConfig, execute
from sarrm.gnn import GraphNet
from sarrm.losses import loss_and_grad
from sarrm.metrics import evolution_curves, rate_metrics, read_metrics_csv
from sarrm.rate import dbm_to_watts
from sarrm.trainer import TrainConfig, train

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
P_MAX = dbm_to_watts(10)
NOISE = dbm_to_watts(-104)
METHODS = ["state-aug", "state-aug-ablated", "fr", "itlinq"]


class DualAudit:
    """Checks every background dual trajectory the trainer computes."""

    def __init__(self):
        self.calls = 0
        self.iterates = 0
        self.violations = []

    def check(self, mu0, slacks, step, out):
        self.calls += 1
        self.iterates += out.size
        if np.any(out < 0):
            self.violations.append("negative background dual iterate")
        neg = slacks < 0
        before, after = out[..., :-1, :], out[..., 1:, :]
        if not np.array_equal(after[neg], before[neg] - step * slacks[neg]):
            self.violations.append("violated window did not raise the dual by exactly step*|slack|")


@contextlib.contextmanager
def audited_training(audit):
    original = trainer_mod.dual_trajectory

    def wrapped(mu0, slacks, step):
        out = original(mu0, slacks, step)
        audit.check(mu0, np.asarray(slacks), step, out)
        return out

    trainer_mod.dual_trajectory = wrapped
    try:
        yield
    finally:
        trainer_mod.dual_trajectory = original


def audit_trace_duals(duals, slacks, step):
    """Problems found in one execution trace's dual iterates."""
    duals, slacks = np.asarray(duals), np.asarray(slacks)
    problems = []
    if np.any(duals < 0):
        problems.append("negative execution dual")
    neg = slacks < 0
    if not np.array_equal(duals[1:][neg], duals[:-1][neg] + step * np.abs(slacks[neg])):
        problems.append("execution dual step differs from step*|slack|")
    return problems


def read_trace_windows(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    m = sum(1 for k in rows[0] if k.startswith("slack"))
    return np.array([[float(r[f"slack{i}"]) for i in range(m)] for r in rows])


def read_trace_rates(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    m = sum(1 for k in rows[0] if k.startswith("f"))
    return np.array([[float(r[f"f{i}"]) for i in range(m)] for r in rows])


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    cfg = run_config.load(CONFIGS / "desk_m6.json")
    audit = DualAudit()
    t0 = time.perf_counter()
    cmd_generate(cfg, root / "data")
    with audited_training(audit):
        cmd_train(cfg, root / "data", root / "train")
    cmd_eval(cfg, root / "data", root / "eval", METHODS, checkpoint=root / "train")
    elapsed = time.perf_counter() - t0
    summaries = {m: json.loads((root / "eval" / f"summary_{m}.json").read_text()) for m in METHODS}
    return {"root": root, "cfg": cfg, "audit": audit, "elapsed": elapsed, "summaries": summaries}


# -- 1 ------------------------------------------------------------------------------


def test_criterion_1_gradient_oracle(report):
    t0 = time.perf_counter()
    worst = 0.0
    failures = 0
    for s in range(50):
        rng = np.random.default_rng(s)
        m, T = int(rng.integers(2, 5)), int(rng.integers(1, 6))
        real = generate_realization(GeometryConfig(m=m, seed=s))
        gains = fading_gains(real.long_term_gain, T, seed=s)
        net = GraphNet(widths=(6, 6), out_scale=P_MAX, g_ref=float(np.median(np.diag(real.long_term_gain))))
        flat = net.init_params(rng)
        mu = rng.uniform(0, 2, size=m)
        _, grad = loss_and_grad(net, flat, "lagrangian", mu=mu, gains=gains, f_min=0.4, noise=NOISE)
        fd = central_difference(lambda x: long_form_lagrangian(
            x, net.widths, P_MAX, net.g_ref, net.edge_decades, net.leak, mu, gains, 0.4, NOISE), flat)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-300)
        worst = max(worst, float(rel.max()))
        failures += int(rel.max() > 1e-4)
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and elapsed < 60
    report(1, ok, f"50 instances, worst per-coordinate relative error {worst:.2e} (limit 1e-4), "
                  f"{failures} failing, {elapsed:.1f} s (limit 60 s)")
    assert ok


# -- 2 ------------------------------------------------------------------------------


def test_criterion_2_permutation_equivariance(report):
    rng = np.random.default_rng(2024)
    real = generate_realization(GeometryConfig(m=6, seed=5))
    net = GraphNet(widths=(64, 64), out_scale=P_MAX, g_ref=float(np.median(np.diag(real.long_term_gain))))
    flat = net.init_params(rng)
    g = fading_gains(real.long_term_gain, 1, seed=5)[0]
    mu = rng.exponential(2.0, size=6)
    base = net.forward(flat, net.graph(g, mu))
    worst = 0.0
    for _ in range(20):
        perm = rng.permutation(6)
        out = net.forward(flat, net.graph(g[np.ix_(perm, perm)], mu[perm]))
        worst = max(worst, float(np.max(np.abs(base[perm] - out))))
    ok = worst <= 1e-6
    report(2, ok, f"20 permutations at m=6, max |pi.p(G,mu) - p(piGpi^T, pi mu)| = {worst:.2e} (limit 1e-6)")
    assert ok


# -- 3 ------------------------------------------------------------------------------


def test_criterion_3_dual_dynamics(desk, small_instance, report):
    problems = list(desk["audit"].violations) + list(small_instance["audit"].violations)
    root, cfg = desk["root"], desk["cfg"]
    n_exec = 0
    for m in ("state-aug", "state-aug-ablated"):
        for i, net in enumerate(desk["summaries"][m]["networks"]):
            slacks = read_trace_windows(root / "eval" / "traces" / m / f"net{i:04d}_windows.csv")
            problems += audit_trace_duals(net["duals"], slacks, cfg.execution.lr_dual)
            n_exec += 1
    for tr in small_instance["traces"]:
        problems += audit_trace_duals(tr.duals, tr.slacks, tr.meta["lr_dual"])
        n_exec += 1
    calls = desk["audit"].calls + small_instance["audit"].calls
    ok = not problems and calls > 0
    report(3, ok, f"{calls} training trajectory batches and {n_exec} executions audited; "
                  f"{len(problems)} problems{': ' + problems[0] if problems else ''}")
    assert ok


# -- 4 ------------------------------------------------------------------------------


def test_criterion_4_feasibility(desk, report):
    cfg = desk["cfg"]
    f_min = cfg.execution.f_min
    sa = desk["summaries"]["state-aug"]["networks"]
    post = np.concatenate([n["post_burn_in_rates"] for n in sa])
    frac_ok = float(np.mean(post >= f_min - 0.05))
    fr = desk["summaries"]["fr"]["networks"]
    fr_viol = float(np.mean([min(n["post_burn_in_rates"]) < f_min for n in fr]))
    n_nets = len(sa)
    ok = frac_ok >= 0.9 and fr_viol > 0.5 and n_nets >= 16 and desk["elapsed"] <= 1800
    report(4, ok, f"m={cfg.m}, {n_nets} test networks, T_exec={cfg.execution.T_exec}: "
                  f"{frac_ok:.1%} of users within 0.05 of f_min={f_min} (need >= 90%); "
                  f"full reuse violates in {fr_viol:.1%} of networks (need a majority); "
                  f"pipeline {desk['elapsed'] / 60:.1f} min (limit 30)")
    assert ok


# -- 5 ------------------------------------------------------------------------------


def test_criterion_5_regressor_shortens_transient(desk, report):
    reg = np.median([n["transient_length"] for n in desk["summaries"]["state-aug"]["networks"]])
    uni = np.median([n["transient_length"] for n in desk["summaries"]["state-aug-ablated"]["networks"]])
    n_nets = len(desk["summaries"]["state-aug"]["networks"])
    ok = reg < uni and n_nets >= 16
    report(5, ok, f"median steps to 90% of final min-rate over {n_nets} networks: "
                  f"regressor init {reg:g} vs uniform init {uni:g}")
    assert ok


# -- 6 ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_instance():
    gain = np.array([[2e-10, 5e-11], [1e-11, 4e-11]])
    f_min = 1.0
    real = NetworkRealization(np.zeros((2, 2)), np.array([[10.0, 0.0], [500.0, 0.0]]), gain, 0)
    cfg = TrainConfig(epochs=40, batch_size=32, train_size=32, T=100, N0=5, n_start=5, n_end=20,
                      f_min=f_min, seed=1, unit_fading=True, optimizer="adam", lr_policy=1e-3,
                      regressor_optimizer="adam", regressor_steps_per_epoch=20, lr_regressor=1e-2)
    audit = DualAudit()
    with audited_training(audit):
        res = train(cfg, [real] * cfg.train_size)
    ex = ExecutionConfig(T_exec=4000, f_min=f_min, unit_fading=True)
    traces = []
    for mode in ("regressor", "uniform"):
        tr = execute(res.policy_net, res.policy, real, ExecutionConfig(**{**ex.to_dict(), "init_mode": mode}),
                     seed=0, regressor_net=res.regressor_net, regressor=res.regressor)
        tr.meta["lr_dual"] = ex.lr_dual
        traces.append(tr)
    return {"gain": gain, "f_min": f_min, "audit": audit, "traces": traces}


def test_criterion_6_small_instance_near_optimal(small_instance, report):
    gain, f_min = small_instance["gain"], small_instance["f_min"]
    best, arg = grid_constrained_optimum(gain, NOISE, P_MAX, f_min, levels=11)
    tr = small_instance["traces"][0]
    x = tr.ergodic_rates(start=tr.T // 4)
    feasible = bool(np.all(x >= f_min - 0.05))
    ratio = float(x.sum() / best)
    ok = feasible and ratio >= 0.9
    report(6, ok, f"grid optimum {best:.4f} at p/P_max={tuple(round(a / P_MAX, 1) for a in arg)}; "
                  f"policy long-run rates {np.round(x, 3).tolist()} (f_min={f_min}), "
                  f"utility {x.sum():.4f} = {ratio:.1%} of optimum (need >= 90%)")
    assert ok


# -- 7 ------------------------------------------------------------------------------


def test_criterion_7_utility_tradeoff(desk, report):
    def medians(method):
        nets = desk["summaries"][method]["networks"]
        return (float(np.median([np.mean(n["ergodic_rates"]) for n in nets])),
                float(np.median([np.min(n["ergodic_rates"]) for n in nets])))

    sa_mean, sa_min = medians("state-aug")
    fr_mean, fr_min = medians("fr")
    ok = sa_mean < fr_mean and sa_min > fr_min
    report(7, ok, f"median mean rate {sa_mean:.3f} (state-aug) < {fr_mean:.3f} (FR); "
                  f"median min rate {sa_min:.3f} (state-aug) > {fr_min:.3f} (FR)")
    assert ok


# -- 8 ------------------------------------------------------------------------------


def test_criterion_8_determinism(tmp_path, report):
    cfg = run_config.load(CONFIGS / "smoke.json")
    cmd_generate(cfg, tmp_path / "data")
    for run in ("a", "b"):
        cmd_train(cfg, tmp_path / "data", tmp_path / run / "train")
        cmd_eval(cfg, tmp_path / "data", tmp_path / run / "eval", METHODS, checkpoint=tmp_path / run / "train")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    differing = [str(p) for p in files if (tmp_path / "a" / p).read_bytes() != (tmp_path / "b" / p).read_bytes()]
    ok = len(files) > 0 and not differing
    report(8, ok, f"{len(files)} CSV outputs compared across two train+eval runs; {len(differing)} differ")
    assert ok


# -- 9 ------------------------------------------------------------------------------


def test_criterion_9_metric_identities(desk, report):
    root = desk["root"]
    rows = read_metrics_csv(root / "eval" / "metrics.csv")
    bad_rows = [r["method"] for r in rows if not (r["min"] <= r["p5"] <= r["mean"])]
    worst = 0.0
    for m in METHODS:
        nets = sorted((root / "eval" / "traces" / m).glob("net*_steps.csv"))
        rates_ = [read_trace_rates(p) for p in nets]
        full = rate_metrics(np.stack([r.mean(axis=0) for r in rates_]))
        with open(root / "eval" / f"evolution_{m}.csv", newline="") as fh:
            last = list(csv.DictReader(fh))[-1]
        curves = evolution_curves(rates_, stride=desk["cfg"].eval["stride"])
        for k, v in zip(("mean", "min", "p5"), full):
            worst = max(worst, abs(float(last[k]) - v), abs(curves[k][-1] - v))
    ok = not bad_rows and worst <= 1e-12 and len(rows) == len(METHODS)
    report(9, ok, f"{len(rows)} metrics rows satisfy min <= p5 <= mean "
                  f"({len(bad_rows)} violations); evolution endpoint vs full-trace metrics max gap {worst:.1e}")
    assert ok
