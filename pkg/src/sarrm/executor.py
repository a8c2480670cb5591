"""Online execution: the trained policy driven by dual descent on unseen networks."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from sarrm import seeding
from sarrm.channel import NetworkRealization, fading_gains
from sarrm.errors import ConfigError, DomainError
from sarrm.gnn import GraphNet, regressor_forward
from sarrm.lagrangian import EpisodeTrace, check_duals, lagrangian_terms
from sarrm import rate

INIT_MODES = ("regressor", "zeros", "uniform")


@dataclass
class ExecutionConfig:
    T_exec: int = 200
    T0: int = 5
    lr_dual: float = 2.0
    f_min: float = 0.5
    init_mode: str = "regressor"
    noise_dbm: float = -104.0
    unit_fading: bool = False

    def __post_init__(self):
        if self.T_exec < 1 or self.T0 < 1:
            raise ConfigError("T_exec and T0 must be >= 1", field="T_exec")
        if self.T_exec % self.T0:
            raise ConfigError(f"T_exec={self.T_exec} must be divisible by T0={self.T0}", field="T_exec")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"init_mode must be one of {INIT_MODES}", field="init_mode")
        if self.lr_dual < 0:
            raise ConfigError("must be non-negative", field="lr_dual")
        if self.f_min < 0:
            raise ConfigError("must be non-negative", field="f_min")

    @property
    def noise(self) -> float:
        return rate.dbm_to_watts(self.noise_dbm)

    def to_dict(self) -> dict:
        return asdict(self)


def execution_gains(real: NetworkRealization, cfg: ExecutionConfig, seed: int) -> np.ndarray:
    return fading_gains(real.long_term_gain, cfg.T_exec,
                        seeding.derive_seed(seed, seeding.EXEC_FADING), unit_fading=cfg.unit_fading)


def initial_duals(real: NetworkRealization, cfg: ExecutionConfig, seed: int,
                  regressor_net: Optional[GraphNet] = None, regressor=None) -> np.ndarray:
    if cfg.init_mode == "regressor":
        if regressor_net is None or regressor is None:
            raise ConfigError("init_mode 'regressor' needs a trained regressor", field="init_mode")
        return regressor_forward(regressor_net, regressor, real.long_term_gain)
    if cfg.init_mode == "zeros":
        return np.zeros(real.m)
    return seeding.rng_for(seed, seeding.EXEC_INIT).random(real.m)


def execute(policy_net: GraphNet, policy, realization: NetworkRealization, cfg: ExecutionConfig,
            seed: int, regressor_net: Optional[GraphNet] = None, regressor=None,
            mu0=None) -> EpisodeTrace:
    """Run one network for ``cfg.T_exec`` steps; duals update every ``cfg.T0`` steps."""
    return execute_many(policy_net, policy, [realization], cfg, [seed], regressor_net, regressor,
                        None if mu0 is None else [mu0])[0]


def execute_many(policy_net: GraphNet, policy, realizations: Sequence[NetworkRealization],
                 cfg: ExecutionConfig, seeds: Sequence[int], regressor_net: Optional[GraphNet] = None,
                 regressor=None, mu0=None) -> list[EpisodeTrace]:
    """Independent executions advanced in lockstep, one trace per realization."""
    if len(realizations) != len(seeds):
        raise ConfigError("need one seed per realization", field="seeds")
    if not realizations:
        return []
    ms = {r.m for r in realizations}
    if len(ms) != 1:
        raise ConfigError("realizations in one call must share the user count", field="realizations")
    m = ms.pop()
    if policy_net.d_in != 1:
        raise ConfigError(f"policy expects {policy_net.d_in} node features", field="policy")
    if regressor_net is not None and regressor_net.d_in != 1:
        raise ConfigError("regressor expects constant scalar node features", field="regressor")
    noise = cfg.noise
    n = len(realizations)
    gains = np.stack([execution_gains(r, cfg, s) for r, s in zip(realizations, seeds)])
    if mu0 is None:
        mu = np.stack([initial_duals(r, cfg, s, regressor_net, regressor)
                       for r, s in zip(realizations, seeds)])
    else:
        mu = np.stack([check_duals(v) for v in mu0])
    if mu.shape != (n, m):
        raise ConfigError(f"initial duals have shape {mu.shape}, expected {(n, m)}", field="mu0")
    K = cfg.T_exec // cfg.T0
    powers = np.empty((n, cfg.T_exec, m))
    rates_ = np.empty((n, cfg.T_exec, m))
    duals = np.empty((n, K + 1, m))
    window_rates = np.empty((n, K, m))
    slacks = np.empty((n, K, m))
    duals[:, 0] = mu
    for k in range(K):
        sl = slice(k * cfg.T0, (k + 1) * cfg.T0)
        g = gains[:, sl]
        feat = np.broadcast_to(mu[:, None, :], g.shape[:-1])
        p = policy_net.forward(policy, policy_net.graph(g, feat))
        f = rate.rates(g, p, noise)
        powers[:, sl], rates_[:, sl] = p, f
        window_rates[:, k] = f.mean(axis=1)
        slacks[:, k] = window_rates[:, k] - cfg.f_min
        mu = np.maximum(mu - cfg.lr_dual * slacks[:, k], 0.0)
        duals[:, k + 1] = mu
    traces = []
    for i in range(n):
        xbar = rates_[i].mean(axis=0)
        L, diag = lagrangian_terms(xbar, duals[i, 0], cfg.f_min)
        traces.append(EpisodeTrace(powers[i], rates_[i], duals[i], window_rates[i], slacks[i],
                                   cfg.T0, cfg.f_min, L, diag["utility"], diag["penalty"],
                                   meta={"seed": int(seeds[i]), "init_mode": cfg.init_mode}))
    return traces


def execute_fixed(powers_fn, realizations: Sequence[NetworkRealization], cfg: ExecutionConfig,
                  seeds: Sequence[int]) -> list[EpisodeTrace]:
    """Traces for a dual-free baseline; ``powers_fn(realization, gains) -> (T, m)`` powers."""
    traces = []
    K = cfg.T_exec // cfg.T0
    for real, seed in zip(realizations, seeds):
        g = execution_gains(real, cfg, seed)
        p = np.broadcast_to(np.asarray(powers_fn(real, g), dtype=np.float64), g.shape[:-1]).copy()
        f = rate.rates(g, p, cfg.noise)
        wr = f.reshape(K, cfg.T0, -1).mean(axis=1)
        xbar = f.mean(axis=0)
        traces.append(EpisodeTrace(p, f, np.zeros((K + 1, real.m)), wr, wr - cfg.f_min, cfg.T0, cfg.f_min,
                                   rate.utility(xbar), rate.utility(xbar), 0.0, meta={"seed": int(seed)}))
    return traces


def feasibility_report(trace: EpisodeTrace, f_min: float, burn_in: Optional[int] = None) -> dict:
    """Per-user time-averaged rate over ``[burn_in, T)`` against ``f_min``.

    ``burn_in`` defaults to a quarter of the trace.
    """
    T = trace.T
    if burn_in is None:
        burn_in = T // 4
    if not 0 <= burn_in < T:
        raise DomainError(f"burn_in={burn_in} must lie in [0, {T})")
    avg = trace.rates[burn_in:].mean(axis=0)
    margin = avg - f_min
    return {"feasible": margin >= 0, "margin": margin, "average": avg, "burn_in": burn_in}
