"""Reference policies: full reuse and ITLinQ-style greedy link scheduling."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from sarrm.errors import ConfigError, DomainError


@dataclass(frozen=True)
class ITLinQConfig:
    M: float = 25.0  # dB
    eta: float = 0.7
    priority: str = "by_snr"
    per_step: bool = False

    def __post_init__(self):
        if not math.isfinite(self.M):
            raise ConfigError("must be finite", field="M")
        if not 0 < self.eta <= 1:
            raise ConfigError(f"must lie in (0, 1], got {self.eta}", field="eta")
        if self.priority != "by_snr":
            raise ConfigError(f"unsupported priority {self.priority!r}", field="priority")

    def to_dict(self) -> dict:
        return asdict(self)


def full_reuse(m: int, p_max: float) -> np.ndarray:
    if m < 1:
        raise DomainError(f"need at least one user, got {m}")
    return np.full(m, float(p_max))


def itlinq_active_set(gain, noise: float, p_max: float, cfg: ITLinQConfig = ITLinQConfig()) -> list[int]:
    """Links admitted greedily in decreasing-SNR order.

    Link ``j`` joins when, against every admitted ``i``, both the interference it
    receives from ``i`` and the interference it causes at ``i`` are at most
    ``10**(M/10)`` times the victim's SNR to the power ``eta``.
    """
    gain = np.asarray(gain, dtype=np.float64)
    if gain.ndim != 2 or gain.shape[0] != gain.shape[1]:
        raise DomainError(f"expected a square gain matrix, got shape {gain.shape}")
    if not np.all(np.isfinite(gain)):
        raise DomainError("gains must be finite")
    if np.any(np.diag(gain) <= 0) or np.any(gain < 0):
        raise DomainError("ITLinQ needs positive direct gains and non-negative cross gains")
    snr = p_max * np.diag(gain) / noise
    inr = p_max * gain / noise  # inr[i, j]: from transmitter i at receiver j
    thr = 10.0 ** (cfg.M / 10.0) * snr ** cfg.eta
    # stable sort keeps index order among equal SNRs
    order = np.argsort(-snr, kind="stable")
    active: list[int] = []
    for j in order:
        if all(inr[i, j] <= thr[j] and inr[j, i] <= thr[i] for i in active):
            active.append(int(j))
    return sorted(active)


def itlinq_schedule(gain, noise: float, p_max: float, cfg: ITLinQConfig = ITLinQConfig()) -> np.ndarray:
    """Binary power allocation: ``p_max`` on the active set, 0 elsewhere."""
    p = np.zeros(np.asarray(gain).shape[0])
    p[itlinq_active_set(gain, noise, p_max, cfg)] = p_max
    return p
