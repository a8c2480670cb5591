"""Episode Lagrangian, window slacks and projected dual descent."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sarrm import rate
from sarrm.errors import ConfigError, DomainError, NumericError
from sarrm.gnn import GraphNet


def check_duals(mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    if not np.all(np.isfinite(mu)):
        raise NumericError("non-finite dual variable")
    if np.any(mu < 0):
        raise DomainError(f"dual variables must be non-negative, got min {mu.min()}")
    return mu


def dual_update(mu, slack, step: float) -> np.ndarray:
    """``max(mu - step * slack, 0)``: violated constraints (negative slack) raise their multiplier."""
    mu = check_duals(mu)
    if not step >= 0:
        raise DomainError(f"dual step size must be non-negative, got {step}")
    return np.maximum(mu - step * np.asarray(slack, dtype=np.float64), 0.0)


def rollout(net: GraphNet, params, mu, gains, noise: float) -> tuple[np.ndarray, np.ndarray]:
    """Powers and rates for every step of ``gains`` (``(..., T, m, m)``) with duals ``mu`` (``(..., m)``) held fixed."""
    mu = check_duals(mu)
    gains = np.asarray(gains, dtype=np.float64)
    feat = np.broadcast_to(mu[..., None, :], gains.shape[:-1])
    p = net.forward(params, net.graph(gains, feat))
    return p, rate.rates(gains, p, noise)


@dataclass
class EpisodeBatch:
    """Per-episode Lagrangian terms for a batch, plus the summed parameter gradient."""

    lagrangian: np.ndarray  # (B,)
    utility: np.ndarray  # (B,)
    penalty: np.ndarray  # (B,)
    powers: np.ndarray  # (B, T, m)
    rates: np.ndarray  # (B, T, m)
    grad: Optional[np.ndarray] = None  # sum over the batch


def episode_objective(net: GraphNet, params, mu, gains, f_min: float, noise: float,
                      need_grad: bool = True, chunk: int = 16) -> EpisodeBatch:
    """Lagrangian ``U(xbar) + mu^T g(xbar)`` for each episode and the gradient of their sum.

    ``mu`` is ``(B, m)``, ``gains`` is ``(B, T, m, m)``.  Episodes are processed
    in consecutive chunks of ``chunk`` and gradients accumulated in index order,
    so the result depends on ``chunk`` only through float summation order.
    """
    mu = check_duals(np.atleast_2d(mu))
    gains = np.asarray(gains, dtype=np.float64)
    if gains.ndim != 4 or gains.shape[0] != mu.shape[0] or gains.shape[-1] != mu.shape[-1]:
        raise ConfigError(f"gains {gains.shape} incompatible with duals {mu.shape}", field="gains")
    B, T, m, _ = gains.shape
    powers = np.empty((B, T, m))
    rates_ = np.empty((B, T, m))
    grad = np.zeros(net.n_params) if need_grad else None
    for lo in range(0, B, chunk):
        hi = min(lo + chunk, B)
        g, mu_c = gains[lo:hi], mu[lo:hi]
        feat = np.broadcast_to(mu_c[:, None, :], (hi - lo, T, m))
        graph = net.graph(g, feat)
        if need_grad:
            p, cache = net.forward(params, graph, keep=True)
        else:
            p = net.forward(params, graph)
        f = rate.rates(g, p, noise, check=False)
        powers[lo:hi], rates_[lo:hi] = p, f
        if need_grad:
            # dL/df_t = (1 + mu) / T for the sum-rate utility with min-rate slacks
            upstream = np.broadcast_to(((1.0 + mu_c) / T)[:, None, :], f.shape)
            dp = rate.rates_vjp(g, p, noise, upstream)
            try:
                grad += net.backward(params, cache, dp)
            except NumericError as exc:
                raise NumericError(f"{exc} in batch elements [{lo}, {hi})") from exc
    if not np.all(np.isfinite(rates_)):
        b = int(np.argwhere(~np.isfinite(rates_))[0][0])
        raise NumericError(f"non-finite rate in batch element {b}")
    xbar = rates_.mean(axis=1)
    util = xbar.sum(axis=1)
    pen = np.einsum("bi,bi->b", mu, xbar - f_min)
    return EpisodeBatch(util + pen, util, pen, powers, rates_, grad)


def lagrangian(net: GraphNet, params, mu, gains, f_min: float, noise: float) -> tuple[float, dict]:
    """Augmented Lagrangian of one episode with fixed duals ``mu``.

    Returns the value and a diagnostics dict with the utility and penalty
    terms, the ergodic rate vector and the slacks.
    """
    mu = check_duals(mu)
    gains = np.asarray(gains, dtype=np.float64)
    if gains.ndim != 3 or gains.shape[0] == 0:
        raise DomainError("need a non-empty (T, m, m) sequence of states")
    _, f = rollout(net, params, mu, gains, noise)
    xbar = rate.ergodic_average(f)
    return lagrangian_terms(xbar, mu, f_min)


def lagrangian_terms(xbar, mu, f_min: float) -> tuple[float, dict]:
    slack = rate.constraints(xbar, f_min)
    u = rate.utility(xbar)
    pen = float(np.dot(check_duals(mu), slack))
    return u + pen, {"utility": u, "penalty": pen, "ergodic_rates": np.asarray(xbar), "slack": slack}


def window_slacks(rates_, T0: int, f_min: float) -> np.ndarray:
    """Slack of each complete ``T0``-step window; ``rates_`` is ``(..., T, m)``, result ``(..., K, m)``."""
    rates_ = np.asarray(rates_, dtype=np.float64)
    T = rates_.shape[-2]
    if T0 < 1:
        raise DomainError(f"T0 must be >= 1, got {T0}")
    K = T // T0
    win = rates_[..., :K * T0, :].reshape(rates_.shape[:-2] + (K, T0, rates_.shape[-1]))
    return win.mean(axis=-2) - f_min


def window_constraint(net: GraphNet, params, mu_k, gains_window, f_min: float, noise: float) -> np.ndarray:
    """Slack of the window-average rate under powers chosen with duals ``mu_k``."""
    _, f = rollout(net, params, mu_k, gains_window, noise)
    return rate.constraints(rate.ergodic_average(f), f_min)


def dual_trajectory(mu0, slacks, step: float) -> np.ndarray:
    """Iterates ``mu_0 .. mu_K`` driven by precomputed window slacks ``(..., K, m)``."""
    mu = check_duals(mu0)
    slacks = np.asarray(slacks, dtype=np.float64)
    K = slacks.shape[-2]
    out = np.empty(slacks.shape[:-2] + (K + 1, slacks.shape[-1]))
    out[..., 0, :] = mu
    for k in range(K):
        mu = np.maximum(mu - step * slacks[..., k, :], 0.0)
        out[..., k + 1, :] = mu
    return out


@dataclass
class EpisodeTrace:
    """One run: per-step powers and rates, per-window duals and slacks.

    ``duals[k]`` is the iterate used during window ``k``; ``duals[K]`` is the
    iterate after the last update.
    """

    powers: np.ndarray  # (T, m)
    rates: np.ndarray  # (T, m)
    duals: np.ndarray  # (K + 1, m)
    window_rates: np.ndarray  # (K, m)
    slacks: np.ndarray  # (K, m)
    T0: int
    f_min: float
    lagrangian: float = float("nan")
    utility: float = float("nan")
    penalty: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.rates.shape[0]

    @property
    def K(self) -> int:
        return self.slacks.shape[0]

    def ergodic_rates(self, start: int = 0) -> np.ndarray:
        return rate.ergodic_average(self.rates[start:])

    def step_rows(self):
        m = self.rates.shape[1]
        header = ["t"] + [f"p{i}" for i in range(m)] + [f"f{i}" for i in range(m)]
        rows = [[t] + [repr(float(v)) for v in self.powers[t]] + [repr(float(v)) for v in self.rates[t]]
                for t in range(self.T)]
        return header, rows

    def window_rows(self):
        m = self.rates.shape[1]
        header = ["k"] + [f"mu{i}" for i in range(m)] + [f"slack{i}" for i in range(m)]
        rows = [[k] + [repr(float(v)) for v in self.duals[k]] + [repr(float(v)) for v in self.slacks[k]]
                for k in range(self.K)]
        return header, rows

    def to_csv(self, steps_path, windows_path) -> None:
        for path, (header, rows) in ((steps_path, self.step_rows()), (windows_path, self.window_rows())):
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows(rows)
