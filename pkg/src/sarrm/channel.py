"""Network geometry, long-term gains and Rayleigh fast fading.

Gains are stored as real power gains ``|h|^2``.  ``gain[i, j]`` is the gain
from transmitter ``i`` to receiver ``j``; the direct links sit on the
diagonal.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from sarrm.errors import ConfigError, DomainError
from sarrm.seeding import FADING, rng_for


@dataclass(frozen=True)
class PathlossModel:
    """Dual-slope distance-dependent path loss.

    The gain is ``ref_gain * (d/ref_distance)**-slope_near`` up to the
    breakpoint and continues with ``slope_far`` beyond it.
    """

    ref_distance: float = 1.0
    ref_gain: float = 1.0
    slope_near: float = 2.0
    slope_far: float = 4.0
    breakpoint: float = 50.0

    def __post_init__(self):
        for name in ("ref_distance", "ref_gain", "breakpoint"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", field=name)
        if self.breakpoint < self.ref_distance:
            raise ConfigError("breakpoint must not be below ref_distance", field="breakpoint")
        if self.slope_near < 0 or self.slope_far < 0:
            raise ConfigError("slopes must be non-negative", field="slope_near/slope_far")

    def __call__(self, d):
        return pathloss(d, self)


DEFAULT_PATHLOSS = PathlossModel()


def pathloss(d, model: PathlossModel = DEFAULT_PATHLOSS):
    """Linear power gain at distance ``d`` meters (scalar or array)."""
    d_arr = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(d_arr)) or np.any(d_arr <= 0):
        raise DomainError(f"pathloss distance must be positive and finite, got {d}")
    near = model.ref_gain * (d_arr / model.ref_distance) ** (-model.slope_near)
    at_bp = model.ref_gain * (model.breakpoint / model.ref_distance) ** (-model.slope_near)
    far = at_bp * (d_arr / model.breakpoint) ** (-model.slope_far)
    out = np.where(d_arr <= model.breakpoint, near, far)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GeometryConfig:
    m: int
    density_mode: str = "fixed"
    rx_distance_range: tuple = (10.0, 100.0)
    shadowing_db: float = 7.0
    pathloss: PathlossModel = field(default_factory=PathlossModel)
    area_radius_override: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.m, (int, np.integer)) or self.m < 1:
            raise ConfigError(f"user count must be an integer >= 1, got {self.m!r}", field="m")
        if self.density_mode not in ("fixed", "variable"):
            raise ConfigError(f"expected 'fixed' or 'variable', got {self.density_mode!r}",
                              field="density_mode")
        object.__setattr__(self, "rx_distance_range", tuple(float(v) for v in self.rx_distance_range))
        if len(self.rx_distance_range) != 2:
            raise ConfigError("needs exactly two values", field="rx_distance_range")
        d_min, d_max = self.rx_distance_range
        if not 0 < d_min < d_max:
            raise ConfigError(f"need 0 < d_min < d_max, got {self.rx_distance_range}",
                              field="rx_distance_range")
        if not d_max < self.area_radius:
            raise ConfigError(f"d_max={d_max} must be below area_radius={self.area_radius:.1f}",
                              field="rx_distance_range")
        if self.area_radius_override is not None and not self.area_radius_override > 0:
            raise ConfigError("must be positive", field="area_radius_override")
        if self.shadowing_db < 0 or not math.isfinite(self.shadowing_db):
            raise ConfigError("must be finite and non-negative", field="shadowing_db")

    @property
    def area_radius(self) -> float:
        if self.area_radius_override is not None:
            return float(self.area_radius_override)
        return area_radius(self.m, self.density_mode)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rx_distance_range"] = list(self.rx_distance_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeometryConfig":
        d = dict(d)
        if "pathloss" in d and isinstance(d["pathloss"], dict):
            d["pathloss"] = PathlossModel(**d["pathloss"])
        return cls(**d)


def area_radius(m: int, density_mode: str) -> float:
    """Deployment radius in meters: grows with sqrt(m) at fixed density, 500 m otherwise."""
    if density_mode == "fixed":
        return math.sqrt(m / 20.0) * 1000.0
    if density_mode == "variable":
        return 500.0
    raise ConfigError(f"unknown density mode {density_mode!r}", field="density_mode")


@dataclass
class NetworkRealization:
    tx_positions: np.ndarray
    rx_positions: np.ndarray
    long_term_gain: np.ndarray
    seed: int

    @property
    def m(self) -> int:
        return self.long_term_gain.shape[0]

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "tx_positions": self.tx_positions.tolist(),
            "rx_positions": self.rx_positions.tolist(),
            "long_term_gain": self.long_term_gain.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkRealization":
        return cls(
            tx_positions=np.asarray(d["tx_positions"], dtype=np.float64),
            rx_positions=np.asarray(d["rx_positions"], dtype=np.float64),
            long_term_gain=np.asarray(d["long_term_gain"], dtype=np.float64),
            seed=int(d["seed"]),
        )

    def save(self, path) -> None:
        # repr-exact floats: json round-trips float64 bit-for-bit
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "NetworkRealization":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path) -> None:
        """Per-link dump: tx, rx, distance and linear gain."""
        lines = ["tx,rx,tx_x,tx_y,rx_x,rx_y,distance_m,gain"]
        for i in range(self.m):
            for j in range(self.m):
                dist = float(np.linalg.norm(self.tx_positions[i] - self.rx_positions[j]))
                vals = (self.tx_positions[i, 0], self.tx_positions[i, 1], self.rx_positions[j, 0],
                        self.rx_positions[j, 1], dist, self.long_term_gain[i, j])
                lines.append(f"{i},{j}," + ",".join(repr(float(v)) for v in vals))
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class NetworkState:
    t: int
    gain: np.ndarray


def realization_from_positions(tx, rx, cfg: GeometryConfig, rng: Optional[np.random.Generator] = None,
                               seed: int = 0) -> NetworkRealization:
    """Gains for given positions. Shadowing is drawn from ``rng`` unless ``cfg.shadowing_db == 0``."""
    tx = np.asarray(tx, dtype=np.float64).reshape(-1, 2)
    rx = np.asarray(rx, dtype=np.float64).reshape(-1, 2)
    if tx.shape != rx.shape:
        raise ConfigError(f"tx/rx position shapes differ: {tx.shape} vs {rx.shape}", field="positions")
    dist = np.linalg.norm(tx[:, None, :] - rx[None, :, :], axis=-1)
    gain = pathloss(np.atleast_2d(dist), cfg.pathloss)
    if cfg.shadowing_db > 0:
        if rng is None:
            raise ConfigError("shadowing requires a generator", field="shadowing_db")
        gain = gain * 10.0 ** (rng.normal(0.0, cfg.shadowing_db, size=gain.shape) / 10.0)
    gain = np.asarray(gain, dtype=np.float64).reshape(tx.shape[0], tx.shape[0])
    if not (np.all(np.isfinite(gain)) and np.all(gain > 0)):
        raise DomainError("generated gains must be positive and finite")
    return NetworkRealization(tx, rx, gain, seed)


def generate_realization(cfg: GeometryConfig) -> NetworkRealization:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(cfg.seed) & (2**64 - 1))))
    m = cfg.m
    radius = cfg.area_radius
    r = radius * np.sqrt(rng.random(m))
    theta = 2.0 * np.pi * rng.random(m)
    tx = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    d_min, d_max = cfg.rx_distance_range
    # area-uniform radius within the annulus
    rho = np.sqrt(rng.uniform(d_min**2, d_max**2, size=m))
    phi = 2.0 * np.pi * rng.random(m)
    rx = tx + np.stack([rho * np.cos(phi), rho * np.sin(phi)], axis=1)
    return realization_from_positions(tx, rx, cfg, rng=rng, seed=cfg.seed)


def sample_fading(rng: np.random.Generator, shape) -> np.ndarray:
    """Rayleigh power fading, Exp(1).  Floored at the smallest normal float so gains stay positive."""
    return np.maximum(rng.standard_exponential(size=shape), np.finfo(np.float64).tiny)


def fading_gains(long_term_gain: np.ndarray, T: int, seed: int, unit_fading: bool = False) -> np.ndarray:
    """``(T, m, m)`` stack of instantaneous gains; the array form of :func:`sample_fading_sequence`."""
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    g = np.asarray(long_term_gain, dtype=np.float64)
    if unit_fading:
        return np.broadcast_to(g, (T,) + g.shape).copy()
    rng = rng_for(seed, FADING)
    return g[None, :, :] * sample_fading(rng, (T,) + g.shape)


def sample_fading_sequence(real: NetworkRealization, T: int, seed: int,
                           unit_fading: bool = False) -> list[NetworkState]:
    gains = fading_gains(real.long_term_gain, T, seed, unit_fading=unit_fading)
    return [NetworkState(t, gains[t]) for t in range(T)]


def iter_states(gains: np.ndarray) -> Iterator[NetworkState]:
    for t in range(gains.shape[0]):
        yield NetworkState(t, gains[t])
