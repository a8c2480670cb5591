"""Run configuration: one JSON file holding every section a pipeline needs.

Layout::

    {
      "seed": 0,
      "output_dir": "runs/default",
      "geometry":  {GeometryConfig fields except seed},
      "train":     {TrainConfig fields except seed},
      "execution": {ExecutionConfig fields; f_min / noise_dbm default to train's},
      "itlinq":    {ITLinQConfig fields},
      "eval":      {"burn_in_frac": 0.25, "stride": 10, "test_networks": null}
    }

Missing sections and keys take their defaults.  All randomness derives from
``seed``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from sarrm.baselines import ITLinQConfig
from sarrm.channel import GeometryConfig
from sarrm.errors import ConfigError
from sarrm.executor import ExecutionConfig
from sarrm.trainer import TrainConfig

EVAL_DEFAULTS = {"burn_in_frac": 0.25, "stride": 10, "test_networks": None}
SECTIONS = ("seed", "output_dir", "geometry", "train", "execution", "itlinq", "eval")


@dataclass
class RunConfig:
    seed: int
    output_dir: str
    geometry: GeometryConfig
    train: TrainConfig
    execution: ExecutionConfig
    itlinq: ITLinQConfig
    eval: dict = field(default_factory=lambda: dict(EVAL_DEFAULTS))
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def m(self) -> int:
        return self.geometry.m

    def to_dict(self) -> dict:
        geo = self.geometry.to_dict()
        geo.pop("seed")
        tr = self.train.to_dict()
        tr.pop("seed")
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "geometry": geo,
            "train": tr,
            "execution": self.execution.to_dict(),
            "itlinq": self.itlinq.to_dict(),
            "eval": dict(self.eval),
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def with_seed(self, seed: int) -> "RunConfig":
        d = self.to_dict()
        d["seed"] = int(seed)
        return from_dict(d)


def _section(d: dict, name: str) -> dict:
    sec = d.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError("section must be an object", field=name)
    return dict(sec)


def _build(cls, name, kwargs):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc), field=name) from exc
    except ConfigError as exc:
        raise ConfigError(str(exc), field=name) from exc


def from_dict(d: dict) -> RunConfig:
    d = copy.deepcopy(d)
    unknown = set(d) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}", field="config")
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"must be an unsigned 64-bit integer, got {seed!r}", field="seed")
    geo = _section(d, "geometry")
    geo.setdefault("m", 6)
    if "seed" in geo:
        raise ConfigError("per-section seeds are derived from the root seed", field="geometry.seed")
    geometry = _geometry(geo)
    tr = _section(d, "train")
    if "seed" in tr:
        raise ConfigError("per-section seeds are derived from the root seed", field="train.seed")
    train = _build(TrainConfig.from_dict, "train", {"d": {**tr, "seed": seed}})
    ex = _section(d, "execution")
    ex.setdefault("f_min", train.f_min)
    ex.setdefault("noise_dbm", train.noise_dbm)
    ex.setdefault("T0", train.T0)
    ex.setdefault("lr_dual", train.lr_dual)
    execution = _build(ExecutionConfig, "execution", ex)
    itlinq = _build(ITLinQConfig, "itlinq", _section(d, "itlinq"))
    ev = dict(EVAL_DEFAULTS)
    ev_in = _section(d, "eval")
    bad = set(ev_in) - set(EVAL_DEFAULTS)
    if bad:
        raise ConfigError(f"unknown keys {sorted(bad)}", field="eval")
    ev.update(ev_in)
    if not 0 <= ev["burn_in_frac"] < 1:
        raise ConfigError("must lie in [0, 1)", field="eval.burn_in_frac")
    if int(ev["stride"]) < 1:
        raise ConfigError("must be >= 1", field="eval.stride")
    return RunConfig(seed, str(d.get("output_dir", "runs/default")), geometry, train, execution, itlinq,
                     ev, raw=d)


def _geometry(geo: dict) -> GeometryConfig:
    try:
        return GeometryConfig.from_dict({**geo, "seed": 0})
    except TypeError as exc:
        raise ConfigError(str(exc), field="geometry") from exc
    except ConfigError as exc:
        raise ConfigError(str(exc), field="geometry") from exc


def load(path, seed: Optional[int] = None) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"no such file {path}", field="config") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}", field="config") from exc
    if not isinstance(d, dict):
        raise ConfigError("top level must be an object", field="config")
    if seed is not None:
        d["seed"] = int(seed)
    return from_dict(d)


def paper_defaults(m: int = 12, f_min: float = 0.5) -> dict:
    """Full-scale experiment settings."""
    return {
        "seed": 0,
        "output_dir": "runs/paper",
        "geometry": {"m": m, "density_mode": "fixed"},
        "train": {"epochs": 150, "batch_size": 128, "T": 200, "T0": 5, "K0": 5, "N0": 10,
                  "n_start": 15, "n_end": 60, "lr_policy": 0.1 / m, "lr_regressor": 1e-3,
                  "lr_dual": 2.0, "f_min": f_min, "regressor_epochs": 50,
                  "train_size": 256, "test_size": 128},
        "execution": {"T_exec": 200},
    }
