"""Pipeline steps behind the CLI subcommands.

Dataset directory::

    manifest.json      format tag, root seed, geometry, per-file seeds
    config.json        resolved run config
    train/0000.json    NetworkRealization dumps (positions + long-term gains)
    test/0000.json

Training output directory::

    config.json, policy.json, regressor.json   (checkpoint format in sarrm.gnn)
    train_state.json                             resumable trainer state
    train_log.csv, regressor_log.csv

Evaluation output directory::

    config.json, metrics.csv, summary_<method>.json, evolution_<method>.csv,
    traces/<method>/net<i>_steps.csv and net<i>_windows.csv
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from sarrm import seeding
from sarrm.baselines import full_reuse, itlinq_schedule
from sarrm.channel import GeometryConfig, NetworkRealization, generate_realization
from sarrm.config import RunConfig
from sarrm.errors import ConfigError, StateError
from sarrm.executor import ExecutionConfig, execute_fixed, execute_many, feasibility_report
from sarrm.gnn import load_params, save_params
from sarrm.metrics import evolution_curves, rate_metrics, read_metrics_csv, transient_length, \
    write_metrics_csv
from sarrm.rate import dbm_to_watts
from sarrm.svgplot import line_chart
from sarrm.trainer import load_state, save_state, train, write_log_csv, init_state

log = logging.getLogger(__name__)

DATASET_FORMAT = "sarrm-dataset/1"
METHODS = ("state-aug", "state-aug-ablated", "fr", "itlinq")


# -- generate -------------------------------------------------------------------------


def dataset_manifest(cfg: RunConfig) -> dict:
    geo = cfg.geometry.to_dict()
    geo.pop("seed")
    splits = {}
    for split, purpose, count in (("train", seeding.REALIZATION, cfg.train.train_size),
                                  ("test", seeding.TEST_REALIZATION, cfg.train.test_size)):
        splits[split] = [{"file": f"{split}/{i:04d}.json", "seed": seeding.derive_seed(cfg.seed, purpose, i)}
                         for i in range(count)]
    return {"format": DATASET_FORMAT, "seed": cfg.seed, "geometry": geo, **splits}


def cmd_generate(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    manifest = dataset_manifest(cfg)
    if out.exists() and any(out.iterdir()):
        existing = out / "manifest.json"
        if existing.exists() and json.loads(existing.read_text()) == manifest:
            log.info("dataset in %s already matches the manifest; nothing to do", out)
            return out
        raise StateError(f"output directory {out} is not empty and holds a different dataset")
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(exist_ok=True)
    geo = manifest["geometry"]
    for split in ("train", "test"):
        for entry in manifest[split]:
            real = generate_realization(GeometryConfig.from_dict({**geo, "seed": entry["seed"]}))
            real.save(out / entry["file"])
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    cfg.dump(out / "config.json")
    return out


def load_dataset(dataset_dir) -> tuple[list[NetworkRealization], list[NetworkRealization], dict]:
    root = Path(dataset_dir)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise StateError(f"{root} has no manifest.json; run 'generate' first")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != DATASET_FORMAT:
        raise ConfigError(f"unsupported dataset format {manifest.get('format')!r}", field="dataset")
    train_set = [NetworkRealization.load(root / e["file"]) for e in manifest["train"]]
    test_set = [NetworkRealization.load(root / e["file"]) for e in manifest["test"]]
    return train_set, test_set, manifest


# -- train ----------------------------------------------------------------------------


def cmd_train(cfg: RunConfig, dataset_dir, out_dir, resume: bool = False,
              stop_after: Optional[int] = None) -> Path:
    train_set, _, _ = load_dataset(dataset_dir)
    if not train_set:
        raise StateError("dataset has no training realizations")
    if train_set[0].m != cfg.m:
        raise ConfigError(f"dataset has m={train_set[0].m}, config has m={cfg.m}", field="geometry.m")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    state_path = out / "train_state.json"
    state = None
    if resume:
        if not state_path.exists():
            raise StateError(f"nothing to resume: {state_path} missing")
        state = load_state(state_path)
        log.info("resuming at epoch %d", state.epoch)
    else:
        state = init_state(cfg.train, train_set)

    def on_epoch(rec):
        log.info("epoch %d  L=%.4f  U=%.4f  min-rate=%.4f  |g|=%.3g", rec["epoch"], rec["lagrangian"],
                 rec["utility"], rec["min_rate"], rec["grad_norm"])

    result = train(cfg.train, train_set, state=state, checkpoint_dir=out, stop_after=stop_after,
                   on_epoch=on_epoch)
    save_state(state_path, state)
    write_log_csv(out / "train_log.csv", state.log)
    if result is None:
        return out
    save_params(out / "policy.json", result.policy_net, result.policy)
    save_params(out / "regressor.json", result.regressor_net, result.regressor)
    write_log_csv(out / "regressor_log.csv", result.regressor_log)
    return out


# -- eval -----------------------------------------------------------------------------


def _exec_seeds(cfg: RunConfig, count: int) -> list[int]:
    return [seeding.derive_seed(cfg.seed, seeding.EXEC_FADING, i) for i in range(count)]


def run_method(method: str, cfg: RunConfig, nets: Sequence[NetworkRealization], checkpoint=None,
               ablated_checkpoint=None):
    """Traces of one method over ``nets`` with common per-network fading seeds."""
    seeds = _exec_seeds(cfg, len(nets))
    ex = cfg.execution
    p_max = dbm_to_watts(cfg.train.p_max_dbm)
    if method == "fr":
        return execute_fixed(lambda r, g: full_reuse(r.m, p_max), nets, ex, seeds)
    if method == "itlinq":
        noise = ex.noise
        if cfg.itlinq.per_step:
            fn = lambda r, g: np.stack([itlinq_schedule(gt, noise, p_max, cfg.itlinq) for gt in g])
        else:
            fn = lambda r, g: itlinq_schedule(r.long_term_gain, noise, p_max, cfg.itlinq)
        return execute_fixed(fn, nets, ex, seeds)
    if method == "state-aug":
        if checkpoint is None:
            raise ConfigError("method 'state-aug' needs --checkpoint", field="method")
        pnet, pol = load_params(Path(checkpoint) / "policy.json")
        rnet, reg = load_params(Path(checkpoint) / "regressor.json")
        return execute_many(pnet, pol, nets, ex, seeds, rnet, reg)
    if method == "state-aug-ablated":
        src = ablated_checkpoint or checkpoint
        if src is None:
            raise ConfigError("method 'state-aug-ablated' needs a checkpoint", field="method")
        pnet, pol = load_params(Path(src) / "policy.json")
        ex_u = ExecutionConfig(**{**ex.to_dict(), "init_mode": "uniform"})
        return execute_many(pnet, pol, nets, ex_u, seeds)
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}", field="method")


def summarize(method: str, cfg: RunConfig, traces) -> tuple[dict, dict]:
    """Metrics row and JSON summary for one method."""
    ex = cfg.execution
    burn_in = int(cfg.eval["burn_in_frac"] * ex.T_exec)
    ergodic = np.stack([tr.ergodic_rates() for tr in traces])
    mean, mn, p5 = rate_metrics(ergodic)
    transients = [transient_length(tr.rates) for tr in traces]
    row = {"method": method, "m": int(ergodic.shape[1]), "f_min": float(ex.f_min), "mean": mean,
           "min": mn, "p5": p5, "transient_length": int(np.median(transients))}
    feas = [feasibility_report(tr, ex.f_min, burn_in) for tr in traces]
    summary = {
        "method": method,
        "f_min": ex.f_min,
        "burn_in": burn_in,
        "metrics": {"mean": mean, "min": mn, "p5": p5},
        "networks": [
            {"ergodic_rates": tr.ergodic_rates().tolist(),
             "post_burn_in_rates": f["average"].tolist(),
             "feasible": f["feasible"].tolist(),
             "transient_length": t,
             "duals": tr.duals.tolist()}
            for tr, f, t in zip(traces, feas, transients)
        ],
        "feasible_user_fraction": float(np.mean(np.concatenate([f["feasible"] for f in feas]))),
    }
    return row, summary


def cmd_eval(cfg: RunConfig, dataset_dir, out_dir, methods: Sequence[str], checkpoint=None,
             ablated_checkpoint=None, write_traces: bool = True) -> list[dict]:
    for mth in methods:
        if mth not in METHODS:
            raise ConfigError(f"unknown method {mth!r}; expected one of {METHODS}", field="method")
    _, test_set, _ = load_dataset(dataset_dir)
    limit = cfg.eval.get("test_networks")
    nets = test_set[:limit] if limit else test_set
    if not nets:
        raise StateError("dataset has no test realizations")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    rows = []
    for mth in methods:
        traces = run_method(mth, cfg, nets, checkpoint, ablated_checkpoint)
        row, summary = summarize(mth, cfg, traces)
        rows.append(row)
        (out / f"summary_{mth}.json").write_text(json.dumps(summary, indent=1) + "\n")
        curves = evolution_curves(traces, stride=int(cfg.eval["stride"]))
        with open(out / f"evolution_{mth}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean", "min", "p5"])
            for i, t in enumerate(curves["t"]):
                w.writerow([int(t), repr(float(curves["mean"][i])), repr(float(curves["min"][i])),
                            repr(float(curves["p5"][i]))])
        if write_traces:
            tdir = out / "traces" / mth
            tdir.mkdir(parents=True, exist_ok=True)
            for i, tr in enumerate(traces):
                tr.to_csv(tdir / f"net{i:04d}_steps.csv", tdir / f"net{i:04d}_windows.csv")
    write_metrics_csv(out / "metrics.csv", rows)
    return rows


# -- plot -----------------------------------------------------------------------------


def _read_columns(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise StateError(f"{path} has no rows")
    return {k: [r[k] for r in rows] for k in rows[0]}


def cmd_plot(metrics_csv, out_dir=None, train_log=None) -> list[Path]:
    """SVG charts from an evaluation's metrics CSV (and its evolution files, if present)."""
    metrics_csv = Path(metrics_csv)
    rows = read_metrics_csv(metrics_csv)
    out = Path(out_dir) if out_dir is not None else metrics_csv.parent
    out.mkdir(parents=True, exist_ok=True)
    written = []
    methods = list(dict.fromkeys(r["method"] for r in rows))
    for metric in ("mean", "min", "p5"):
        series = {}
        for mth in methods:
            ys = [r[metric] for r in rows if r["method"] == mth]
            series[mth] = (list(range(len(ys))), ys)
        path = out / f"metrics_{metric}.svg"
        path.write_text(line_chart(series, title=f"{metric} rate", xlabel="evaluation",
                                   ylabel="bits/s/Hz"))
        written.append(path)
    evo = {mth: metrics_csv.parent / f"evolution_{mth}.csv" for mth in methods}
    evo = {k: v for k, v in evo.items() if v.exists()}
    if evo:
        cols = {k: _read_columns(v) for k, v in evo.items()}
        for metric in ("mean", "min", "p5"):
            series = {k: ([float(t) for t in c["t"]], [float(v) for v in c[metric]]) for k, c in cols.items()}
            path = out / f"evolution_{metric}.svg"
            path.write_text(line_chart(series, title=f"running {metric} rate", xlabel="time step",
                                       ylabel="bits/s/Hz"))
            written.append(path)
    if train_log is not None:
        c = _read_columns(train_log)
        ep = [float(v) for v in c["epoch"]]
        series = {k: (ep, [float(v) for v in c[k]]) for k in ("utility", "min_rate", "mean_rate")}
        path = out / "training.svg"
        path.write_text(line_chart(series, title="training", xlabel="epoch", ylabel="bits/s/Hz"))
        written.append(path)
    return written
