"""Rate metrics over pooled per-user ergodic rates, and their time evolution."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from sarrm.errors import DomainError

METRIC_COLUMNS = ["method", "m", "f_min", "mean", "min", "p5", "transient_length"]


def rate_metrics(pool) -> tuple[float, float, float]:
    """``(mean, min, 5th percentile)``; the percentile interpolates linearly between order statistics."""
    arr = np.asarray(pool, dtype=np.float64).ravel()
    if arr.size == 0:
        raise DomainError("rate metrics of an empty pool")
    return float(arr.mean()), float(arr.min()), float(np.percentile(arr, 5, method="linear"))


def running_averages(rates_) -> np.ndarray:
    """``out[t-1] = (1/t) sum_{tau < t} rates[tau]`` for ``t = 1..T``."""
    r = np.asarray(rates_, dtype=np.float64)
    t = np.arange(1, r.shape[0] + 1, dtype=np.float64)
    return np.cumsum(r, axis=0) / t.reshape((-1,) + (1,) * (r.ndim - 1))


def evolution_curves(traces: Sequence, stride: int = 1) -> dict:
    """Metrics of the pooled running ergodic averages at ``t = stride, 2*stride, ..., T``.

    ``traces`` are EpisodeTrace objects or ``(T, m)`` rate arrays; the endpoint
    ``T`` is always included.
    """
    arrs = [np.asarray(getattr(tr, "rates", tr), dtype=np.float64) for tr in traces]
    if not arrs:
        raise DomainError("no traces given")
    T = arrs[0].shape[0]
    if any(a.shape[0] != T for a in arrs):
        raise DomainError("traces must have equal length")
    if stride < 1:
        raise DomainError("stride must be >= 1")
    times = list(range(stride, T + 1, stride))
    if times[-1] != T:
        times.append(T)
    run = [running_averages(a) for a in arrs]
    out = {"t": np.array(times), "mean": [], "min": [], "p5": []}
    for t in times:
        pool = np.concatenate([r[t - 1] for r in run])
        mean, mn, p5 = rate_metrics(pool)
        out["mean"].append(mean)
        out["min"].append(mn)
        out["p5"].append(p5)
    for k in ("mean", "min", "p5"):
        out[k] = np.array(out[k])
    return out


def transient_length(rates_, frac: float = 0.9) -> int:
    """Steps until the running minimum-user rate stays at or above ``frac`` of its final value.

    Returns the smallest ``t`` (1-based number of elapsed steps) such that the
    running minimum rate is ``>= frac * final`` for every later step.
    """
    run_min = running_averages(rates_).min(axis=1)
    target = frac * run_min[-1]
    below = np.nonzero(run_min < target)[0]
    return 1 if below.size == 0 else int(below[-1]) + 2


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in METRIC_COLUMNS])


def read_metrics_csv(path) -> list[dict]:
    text = Path(path).read_text()
    if not text.strip():
        raise DomainError(f"metrics file {path} is empty")
    rows = list(csv.DictReader(text.splitlines()))
    if not rows:
        raise DomainError(f"metrics file {path} has no data rows")
    for r in rows:
        for k in ("m", "transient_length"):
            r[k] = int(float(r[k]))
        for k in ("f_min", "mean", "min", "p5"):
            r[k] = float(r[k])
    return rows
