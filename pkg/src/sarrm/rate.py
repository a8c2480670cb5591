"""Treat-interference-as-noise Shannon rates, sum-rate utility and min-rate slacks.

Array conventions: ``gain[..., j, i]`` is the power gain from transmitter ``j``
to receiver ``i``; ``p[..., j]`` the transmit power of ``j``.  Leading axes
(batch, time) broadcast.
"""

from __future__ import annotations

import math

import numpy as np

from sarrm.errors import DomainError, NumericError

LN2 = math.log(2.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w) + 30.0


def _check_finite(name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NumericError(f"non-finite {name} at index {idx}: {arr[idx]}")
    return arr


def _split(gain, p, noise):
    diag = np.diagonal(gain, axis1=-2, axis2=-1)
    off = gain * (1.0 - np.eye(gain.shape[-1]))
    # (p @ off)[i] = sum_{j != i} p_j G_ji
    interference = noise + np.einsum("...j,...ji->...i", p, off)
    signal = p * diag
    return signal, interference, off


def rates(gain, p, noise: float, check: bool = True) -> np.ndarray:
    """Per-receiver rate ``log2(1 + p_i G_ii / (N + sum_{j!=i} p_j G_ji))`` in bits/s/Hz."""
    if check:
        gain = _check_finite("gain", gain)
        p = _check_finite("power", p)
        if not noise > 0:
            raise DomainError(f"noise power must be positive, got {noise}")
    signal, interference, _ = _split(gain, p, noise)
    return np.log1p(signal / interference) / LN2


def rates_vjp(gain, p, noise: float, upstream) -> np.ndarray:
    """Vector-Jacobian product ``upstream @ d rates / d p``, same leading shape as ``p``."""
    signal, interference, off = _split(gain, p, noise)
    total = interference + signal
    a = upstream / (LN2 * total)
    b = upstream / (LN2 * interference)
    return np.einsum("...ji,...i->...j", gain, a) - np.einsum("...ji,...i->...j", off, b)


def sinr(gain, p, noise: float) -> np.ndarray:
    signal, interference, _ = _split(np.asarray(gain, dtype=np.float64),
                                     np.asarray(p, dtype=np.float64), noise)
    return signal / interference


def utility(x) -> float:
    """Sum-rate utility."""
    return float(np.sum(x))


def constraints(x, f_min: float) -> np.ndarray:
    """Min-rate constraint slacks ``x_i - f_min``; negative means violated."""
    if f_min < 0:
        raise DomainError(f"f_min must be non-negative, got {f_min}")
    return np.asarray(x, dtype=np.float64) - f_min


def ergodic_average(window) -> np.ndarray:
    """Elementwise time average of a sequence of rate vectors."""
    arr = np.asarray(window, dtype=np.float64)
    if arr.size == 0 or arr.shape[0] == 0:
        raise DomainError("ergodic average over an empty window")
    return arr.mean(axis=0)
