"""Offline primal-dual training of the state-augmented policy and the dual regressor.

One epoch walks the training set in batches.  Each batch element draws a dual
vector from the current sampling distribution, rolls out an episode of fresh
fast fading under that fixed dual, and contributes the gradient of its
episode Lagrangian to an ascent step.  The dual-descent dynamics run in the
background on the episode's window slacks; their tail iterates feed the
sampling distribution during the update window and, at the end, the targets
of the dual regressor.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from sarrm import seeding
from sarrm.channel import NetworkRealization, fading_gains
from sarrm.errors import ConfigError, NumericError, StateError
from sarrm.gnn import GraphNet, decode_array, encode_array
from sarrm.lagrangian import check_duals, dual_trajectory, episode_objective, window_slacks
from sarrm.rate import dbm_to_watts

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 128
    T: int = 200
    T0: int = 5
    K0: int = 5
    N0: int = 10
    n_start: int = 15
    n_end: int = 60
    lr_policy: Optional[float] = None  # None -> 0.1 / m
    lr_regressor: float = 1e-3
    lr_dual: float = 2.0
    f_min: float = 0.5
    p_max_dbm: float = 10.0
    noise_dbm: float = -104.0
    regressor_epochs: int = 50
    train_size: int = 256
    test_size: int = 128
    seed: int = 0
    optimizer: str = "sgd"
    regressor_optimizer: str = "gd"
    regressor_steps_per_epoch: int = 1
    dual_sampling: bool = True
    pinned_sampling: bool = False
    background_input: str = "sampled"
    widths: tuple = (64, 64)
    mu_scale: float = 1.0
    chunk: int = 16
    unit_fading: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.validate()

    @property
    def K(self) -> int:
        return self.T // self.T0

    @property
    def p_max(self) -> float:
        return dbm_to_watts(self.p_max_dbm)

    @property
    def noise(self) -> float:
        return dbm_to_watts(self.noise_dbm)

    @property
    def windows_open(self) -> bool:
        """Whether the dual sampling distribution is ever updated."""
        return self.dual_sampling and self.n_start < self.epochs

    def policy_lr(self, m: int) -> float:
        return self.lr_policy if self.lr_policy is not None else 0.1 / m

    def regressor_target_epoch(self) -> int:
        if self.windows_open:
            return min(self.n_end + self.N0, self.epochs - 1)
        return self.epochs - 1

    def validate(self) -> None:
        def need(cond, fld, msg):
            if not cond:
                raise ConfigError(msg, field=fld)

        for name in ("epochs", "batch_size", "T", "T0", "K0", "N0", "train_size", "chunk"):
            need(int(getattr(self, name)) >= 1, name, "must be >= 1")
        need(self.regressor_epochs >= 0, "regressor_epochs", "must be >= 0")
        need(self.test_size >= 0, "test_size", "must be >= 0")
        need(self.T % self.T0 == 0, "T", f"T={self.T} must be divisible by T0={self.T0}")
        need(self.K0 <= self.K, "K0", f"K0={self.K0} exceeds K=T/T0={self.K}")
        need(self.train_size % self.batch_size == 0, "train_size",
             f"train_size={self.train_size} must be a multiple of batch_size={self.batch_size}")
        for name in ("lr_regressor", "lr_dual"):
            need(getattr(self, name) > 0, name, "learning rates must be positive")
        need(self.lr_policy is None or self.lr_policy >= 0, "lr_policy", "must be non-negative")
        need(self.f_min >= 0, "f_min", "must be non-negative")
        need(self.mu_scale > 0, "mu_scale", "must be positive")
        need(self.optimizer in ("sgd", "adam"), "optimizer", "expected 'sgd' or 'adam'")
        need(self.regressor_optimizer in ("gd", "adam"), "regressor_optimizer", "expected 'gd' or 'adam'")
        need(self.regressor_steps_per_epoch >= 1, "regressor_steps_per_epoch", "must be >= 1")
        need(self.background_input in ("sampled", "trajectory"), "background_input",
             "expected 'sampled' or 'trajectory'")
        if self.windows_open:
            need(self.n_start < self.n_end <= self.epochs, "n_start",
                 f"need n_start < n_end <= epochs, got {self.n_start}, {self.n_end}, {self.epochs}")
            need(self.N0 <= self.n_end - self.n_start, "N0",
                 f"N0={self.N0} exceeds update window {self.n_end - self.n_start}")
            need(self.n_start + 1 >= self.N0, "n_start",
                 f"n_start={self.n_start} leaves fewer than N0={self.N0} epochs of history")
            need(self.epochs >= self.n_end + self.N0, "epochs",
                 f"epochs={self.epochs} must be >= n_end + N0 = {self.n_end + self.N0}")
        else:
            need(self.epochs >= self.N0, "epochs", f"epochs={self.epochs} must be >= N0={self.N0}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", field="train")
        return cls(**d)


# -- dual sampling distribution ----------------------------------------------------


@dataclass
class DualDistribution:
    """``initial``: iid U(0,1) per coordinate.  ``empirical``: uniform over a multiset of vectors."""

    mode: str = "initial"
    support: Optional[np.ndarray] = None  # (count, m)

    def __post_init__(self):
        if self.mode not in ("initial", "empirical"):
            raise ConfigError(f"unknown dual distribution mode {self.mode!r}", field="mode")
        if self.mode == "empirical":
            if self.support is None or len(self.support) == 0:
                raise StateError("empirical dual distribution has an empty support")
            self.support = check_duals(np.atleast_2d(self.support))

    def to_dict(self) -> dict:
        return {"mode": self.mode,
                "support": None if self.support is None else
                {"shape": list(self.support.shape), "data": encode_array(self.support)}}

    @classmethod
    def from_dict(cls, d: dict) -> "DualDistribution":
        sup = d.get("support")
        return cls(d["mode"], None if sup is None else decode_array(sup["data"], tuple(sup["shape"])))


def sample_duals(dist: DualDistribution, count: int, m: int, rng: np.random.Generator,
                 pinned: Optional[np.ndarray] = None) -> np.ndarray:
    """``count`` dual vectors.  ``pinned`` selects support rows by index instead of sampling."""
    if dist.mode == "initial":
        return rng.random((count, m))
    if dist.support is None or len(dist.support) == 0:
        raise StateError("cannot sample from an empty empirical dual distribution")
    if dist.support.shape[1] != m:
        raise ConfigError(f"support vectors have length {dist.support.shape[1]}, need {m}", field="support")
    if pinned is not None:
        return dist.support[np.asarray(pinned)].copy()
    idx = rng.integers(0, len(dist.support), size=count)
    return dist.support[idx].copy()


class DualTrajectoryBuffer:
    """Tail dual iterates of the most recent ``capacity`` epochs, keyed by epoch index."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1", field="N0")
        self.capacity = capacity
        self._epochs: "OrderedDict[int, np.ndarray]" = OrderedDict()

    def add(self, epoch: int, tails) -> None:
        """``tails``: ``(networks, K0, m)`` iterates of one epoch."""
        self._epochs[int(epoch)] = check_duals(tails).copy()
        while len(self._epochs) > self.capacity:
            self._epochs.pop(min(self._epochs))

    def epochs(self) -> list[int]:
        return sorted(self._epochs)

    def __len__(self):
        return len(self._epochs)

    def average(self, n: int, N0: int) -> np.ndarray:
        """Per-network mean over epochs ``n-N0+1 .. n`` and all stored tail iterates."""
        wanted = range(n - N0 + 1, n + 1)
        missing = [e for e in wanted if e not in self._epochs]
        if missing:
            raise StateError(f"dual history for epochs {missing} unavailable (have {self.epochs()})")
        stack = np.stack([self._epochs[e] for e in wanted])  # (N0, networks, K0, m)
        return stack.mean(axis=(0, 2))

    def partial_average(self) -> Optional[np.ndarray]:
        if not self._epochs:
            return None
        return np.stack([self._epochs[e] for e in self.epochs()]).mean(axis=(0, 2))

    def to_dict(self) -> dict:
        return {"capacity": self.capacity,
                "epochs": {str(e): {"shape": list(a.shape), "data": encode_array(a)}
                           for e, a in self._epochs.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "DualTrajectoryBuffer":
        buf = cls(d["capacity"])
        for e in sorted(d["epochs"], key=int):
            a = d["epochs"][e]
            buf._epochs[int(e)] = decode_array(a["data"], tuple(a["shape"]))
        return buf


def update_dual_distribution(buffer: DualTrajectoryBuffer, n: int, N0: int) -> DualDistribution:
    return DualDistribution("empirical", buffer.average(n, N0))


# -- optimizers -------------------------------------------------------------------


class Adam:
    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad) -> np.ndarray:
        """Descent direction scaled by the learning rate."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def to_dict(self) -> dict:
        return {"lr": self.lr, "t": self.t, "m": encode_array(self.m), "v": encode_array(self.v)}

    @classmethod
    def from_dict(cls, d: dict) -> "Adam":
        opt = cls(0, d["lr"])
        opt.t, opt.m, opt.v = d["t"], decode_array(d["m"]), decode_array(d["v"])
        return opt


# -- training state -----------------------------------------------------------------


@dataclass
class TrainState:
    epoch: int
    policy_net: GraphNet
    policy: np.ndarray
    dist: DualDistribution
    buffer: DualTrajectoryBuffer
    initial_dist: DualDistribution = field(default_factory=DualDistribution)
    frozen_dist: Optional[DualDistribution] = None
    optimizer: Optional[Adam] = None
    log: list = field(default_factory=list)
    targets: Optional[np.ndarray] = None


def median_direct_gain(dataset) -> float:
    return float(np.median(np.concatenate([np.diag(r.long_term_gain) for r in dataset])))


def init_state(cfg: TrainConfig, dataset) -> TrainState:
    m = dataset[0].m
    net = GraphNet(widths=cfg.widths, d_in=1, head="sigmoid", out_scale=cfg.p_max,
                   g_ref=median_direct_gain(dataset), feature_scale=cfg.mu_scale)
    params = net.init_params(seeding.rng_for(cfg.seed, seeding.PARAM_INIT, 0))
    opt = Adam(net.n_params, cfg.policy_lr(m)) if cfg.optimizer == "adam" else None
    return TrainState(0, net, params, DualDistribution(), DualTrajectoryBuffer(cfg.N0), optimizer=opt)


def epoch_gains(cfg: TrainConfig, dataset, epoch: int, idx) -> np.ndarray:
    """Fresh fast fading for dataset elements ``idx`` at ``epoch``: ``(len(idx), T, m, m)``."""
    return np.stack([
        fading_gains(dataset[i].long_term_gain, cfg.T,
                     seeding.derive_seed(cfg.seed, seeding.FADING, epoch, i), unit_fading=cfg.unit_fading)
        for i in idx
    ])


def background_tails(cfg: TrainConfig, net: GraphNet, params, mu, gains, rates_) -> np.ndarray:
    """Last ``K0`` background dual iterates per episode, ``(B, K0, m)``.

    With ``background_input='sampled'`` the decisions are those of the episode
    itself (policy fed the sampled dual); with ``'trajectory'`` each window is
    re-decided with the current background iterate.
    """
    if cfg.background_input == "sampled":
        traj = dual_trajectory(mu, window_slacks(rates_, cfg.T0, cfg.f_min), cfg.lr_dual)
    else:
        from sarrm.lagrangian import rollout

        B, T, m = rates_.shape
        traj = np.empty((B, cfg.K + 1, m))
        cur = np.array(mu, dtype=np.float64)
        traj[:, 0] = cur
        for k in range(cfg.K):
            g = gains[:, k * cfg.T0:(k + 1) * cfg.T0]
            _, f = rollout(net, params, cur, g, cfg.noise)
            cur = np.maximum(cur - cfg.lr_dual * (f.mean(axis=1) - cfg.f_min), 0.0)
            traj[:, k + 1] = cur
    return traj[:, cfg.K - cfg.K0 + 1:]


def train_epoch(state: TrainState, dataset, cfg: TrainConfig,
                grad_override: Optional[Callable[[np.ndarray, int], np.ndarray]] = None) -> dict:
    """Run epoch ``state.epoch`` in place; returns its log record.

    ``grad_override(params, batch_index)`` replaces the Lagrangian gradient sum
    for a batch (used to inject known gradients).
    """
    n = state.epoch
    net, m = state.policy_net, dataset[0].m
    lr = cfg.policy_lr(m)
    n_batches = len(dataset) // cfg.batch_size
    tails = np.empty((len(dataset), cfg.K0, m))
    sums = {"lagrangian": 0.0, "utility": 0.0, "penalty": 0.0, "min_rate": 0.0, "mean_rate": 0.0}
    grad_sq = 0.0
    for bi in range(n_batches):
        idx = np.arange(bi * cfg.batch_size, (bi + 1) * cfg.batch_size)
        rng = seeding.rng_for(cfg.seed, seeding.DUAL_SAMPLING, n, bi)
        mu = sample_duals(state.dist, cfg.batch_size, m, rng,
                          pinned=idx if (cfg.pinned_sampling and state.dist.mode == "empirical") else None)
        gains = epoch_gains(cfg, dataset, n, idx)
        res = episode_objective(net, state.policy, mu, gains, cfg.f_min, cfg.noise,
                                need_grad=grad_override is None, chunk=cfg.chunk)
        grad = res.grad if grad_override is None else np.asarray(grad_override(state.policy, bi))
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient in epoch {n}, batch {bi}")
        tails[idx] = background_tails(cfg, net, state.policy, mu, gains, res.rates)
        if state.optimizer is not None:
            # Adam minimizes; ascend on the Lagrangian
            state.policy = state.policy - state.optimizer.step(-grad / cfg.batch_size)
        else:
            state.policy = state.policy + (lr / cfg.batch_size) * grad
        xbar = res.rates.mean(axis=1)
        sums["lagrangian"] += res.lagrangian.sum()
        sums["utility"] += res.utility.sum()
        sums["penalty"] += res.penalty.sum()
        sums["min_rate"] += xbar.min(axis=1).sum()
        sums["mean_rate"] += xbar.mean(axis=1).sum()
        grad_sq += float(np.dot(grad, grad)) / cfg.batch_size ** 2
    state.buffer.add(n, tails)

    # distribution for epoch n+1
    if cfg.windows_open and cfg.n_start <= n < cfg.n_end:
        state.dist = update_dual_distribution(state.buffer, n, cfg.N0)
        if n == cfg.n_end - 1:
            state.frozen_dist = state.dist

    mubar = state.buffer.partial_average()
    record = {"epoch": n}
    record.update({k: float(v) / len(dataset) for k, v in sums.items()})
    record.update({
        "grad_norm": float(np.sqrt(grad_sq / n_batches)),
        "mubar_mean": float(mubar.mean()),
        "mubar_min": float(mubar.min()),
        "dist_mode": state.dist.mode,
    })
    state.log.append(record)
    state.epoch = n + 1
    return record


# -- dual regressor ------------------------------------------------------------------


def regression_loss_and_grad(net: GraphNet, params, gains, targets, need_grad=True):
    """``(1/(B m)) sum_b ||d(G_b) - target_b||^2`` and its gradient."""
    from sarrm.gnn import build_graph

    gains = np.asarray(gains, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    graph = build_graph(gains, np.ones(gains.shape[:-1] + (1,)), net.g_ref, net.edge_decades)
    out, cache = net.forward(params, graph, keep=True)
    diff = out - targets
    scale = 1.0 / diff.size
    loss = float(scale * np.sum(diff * diff))
    if not need_grad:
        return loss, None
    return loss, net.backward(params, cache, 2.0 * scale * diff)


def train_regressor(gains, targets, cfg: TrainConfig, g_ref: float,
                    params: Optional[np.ndarray] = None) -> tuple[GraphNet, np.ndarray, list]:
    """Fit the dual regressor on ``(long-term gain, averaged dual)`` pairs.

    Plain gradient descent halves the step until the loss does not increase;
    every backoff is logged.  Returns the network, parameters and per-epoch log.
    """
    targets = check_duals(targets)
    if len(targets) == 0:
        raise StateError("dual regression needs at least one training pair")
    net = GraphNet(widths=cfg.widths, d_in=1, head="softplus", out_scale=1.0, g_ref=g_ref)
    if params is None:
        params = net.init_params(seeding.rng_for(cfg.seed, seeding.PARAM_INIT, 1))
    lr = cfg.lr_regressor
    opt = Adam(net.n_params, lr) if cfg.regressor_optimizer == "adam" else None
    loss, grad = regression_loss_and_grad(net, params, gains, targets)
    history = [{"epoch": -1, "loss": loss, "lr": lr, "backoffs": 0}]
    for ep in range(cfg.regressor_epochs):
        backoffs = 0
        for _ in range(cfg.regressor_steps_per_epoch):
            if opt is not None:
                params = params - opt.step(grad)
                loss, grad = regression_loss_and_grad(net, params, gains, targets)
                continue
            while True:
                trial = params - lr * grad
                trial_loss, _ = regression_loss_and_grad(net, trial, gains, targets, need_grad=False)
                if trial_loss <= loss or lr < 1e-12:
                    break
                lr *= 0.5
                backoffs += 1
                log.info("regressor epoch %d: loss rose to %.6g, halving step to %.3g", ep, trial_loss, lr)
            if trial_loss > loss:
                break
            params = trial
            loss, grad = regression_loss_and_grad(net, params, gains, targets)
        history.append({"epoch": ep, "loss": loss, "lr": lr, "backoffs": backoffs})
    return net, params, history


# -- full run -------------------------------------------------------------------------


@dataclass
class TrainResult:
    policy_net: GraphNet
    policy: np.ndarray
    regressor_net: GraphNet
    regressor: np.ndarray
    log: list
    regressor_log: list
    dist: DualDistribution
    targets: np.ndarray


def state_to_dict(state: TrainState) -> dict:
    return {
        "format": "sarrm-train-state/1",
        "epoch": state.epoch,
        "policy_net": state.policy_net.config(),
        "policy": encode_array(state.policy),
        "dist": state.dist.to_dict(),
        "frozen_dist": None if state.frozen_dist is None else state.frozen_dist.to_dict(),
        "buffer": state.buffer.to_dict(),
        "optimizer": None if state.optimizer is None else state.optimizer.to_dict(),
        "log": state.log,
        "targets": None if state.targets is None else
        {"shape": list(state.targets.shape), "data": encode_array(state.targets)},
    }


def state_from_dict(d: dict) -> TrainState:
    if d.get("format") != "sarrm-train-state/1":
        raise ConfigError(f"unsupported train state format {d.get('format')!r}", field="format")
    return TrainState(
        epoch=d["epoch"],
        policy_net=GraphNet.from_config(d["policy_net"]),
        policy=decode_array(d["policy"]),
        dist=DualDistribution.from_dict(d["dist"]),
        buffer=DualTrajectoryBuffer.from_dict(d["buffer"]),
        frozen_dist=None if d["frozen_dist"] is None else DualDistribution.from_dict(d["frozen_dist"]),
        optimizer=None if d["optimizer"] is None else Adam.from_dict(d["optimizer"]),
        log=d["log"],
        targets=None if d.get("targets") is None else
        decode_array(d["targets"]["data"], tuple(d["targets"]["shape"])),
    )


def save_state(path, state: TrainState) -> None:
    Path(path).write_text(json.dumps(state_to_dict(state)))


def load_state(path) -> TrainState:
    return state_from_dict(json.loads(Path(path).read_text()))


def train(cfg: TrainConfig, dataset: list[NetworkRealization], state: Optional[TrainState] = None,
          checkpoint_dir=None, stop_after: Optional[int] = None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> Optional[TrainResult]:
    """Run (or resume) all epochs, then fit the regressor.

    ``stop_after`` ends the run after that many epochs in total (for
    interrupted-run tests); the function then returns ``None``.
    """
    if len(dataset) != cfg.train_size:
        raise ConfigError(f"dataset has {len(dataset)} realizations, config says {cfg.train_size}",
                          field="train_size")
    if len({r.m for r in dataset}) != 1:
        raise ConfigError("all training realizations must have the same user count", field="dataset")
    if state is None:
        state = init_state(cfg, dataset)
    target_epoch = cfg.regressor_target_epoch()
    while state.epoch < cfg.epochs:
        rec = train_epoch(state, dataset, cfg)
        if rec["epoch"] == target_epoch:
            state.targets = state.buffer.average(target_epoch, cfg.N0)
        log.debug("epoch %d: %s", rec["epoch"], rec)
        if on_epoch is not None:
            on_epoch(rec)
        if checkpoint_dir is not None and cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0:
            save_state(Path(checkpoint_dir) / "train_state.json", state)
        if stop_after is not None and state.epoch >= stop_after and state.epoch < cfg.epochs:
            return None
    if state.targets is None:
        raise StateError(f"regressor targets for epoch {target_epoch} were never recorded")
    targets = state.targets
    gains = np.stack([r.long_term_gain for r in dataset])
    reg_net, reg_params, reg_log = train_regressor(gains, targets, cfg, state.policy_net.g_ref)
    return TrainResult(state.policy_net, state.policy, reg_net, reg_params, state.log, reg_log,
                       state.dist, targets)


def write_log_csv(path, records: list[dict]) -> None:
    if not records:
        Path(path).write_text("")
        return
    keys = list(records[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in records:
            w.writerow([repr(float(r[k])) if isinstance(r[k], float) else r[k] for k in keys])
