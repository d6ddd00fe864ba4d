"""Experiment orchestration: parameter sweeps over the four error knobs
(truncation, step budget, score error, horizon) plus target discretization,
with transport-distance readout against a fresh reference cloud.

Every sweep cell derives its seed from (master seed, axis index, replicate),
so cells are independent and any one can be recomputed in isolation; a null
sweep (reference cloud vs reference cloud) estimates the Monte Carlo noise
floor that any claimed trend must clear.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import Config
from .metrics import w1
from .sampler import DivergedError, StepGridError, make_stepgrid, sample_backward
from .schedule import NoiseSchedule
from .scores import PerturbSpec, ZeroScore, exact_score, perturb
from .targets import CircleTarget, CompactTarget

__all__ = ["SweepResult", "run_sweep", "cell_seed", "null_floor",
           "build_field", "emit_grid", "write_sweep_csv"]

_NULL_AXIS_INDEX = 0x7FFFFFFF
_SEED_RULE = ("cell generator = SeedSequence((master_seed, axis_index, "
              "replicate)); child 0 seeds the trajectories, child 1 the "
              "reference cloud; null-floor cells use axis_index = 0x7FFFFFFF")


def cell_seed(master_seed: int, axis_index: int, replicate: int):
    return np.random.SeedSequence((master_seed, axis_index, replicate))


def build_field(cfg: Config, target: CompactTarget, sched: NoiseSchedule):
    """Score field for a run: exact, exactly-perturbed, or zero."""
    if cfg["run.mode"] == "zero":
        return ZeroScore(sched, target.d)
    base = exact_score(target, sched)
    M = cfg["run.M"]
    if M > 0:
        u = np.zeros(target.d)
        u[0] = 1.0
        spec = PerturbSpec(mode=cfg["run.perturb_mode"],
                           u=u if cfg["run.perturb_mode"] == "fixed" else None,
                           growth=cfg["run.perturb_growth"])
        return perturb(base, M, spec)
    return base


def _apply_axis(cfg: Config, axis: str, value: float) -> Config:
    if axis == "eps":
        return cfg.replace(**{"run.eps": value})
    if axis == "delta":
        return cfg.replace(**{"run.delta": value})
    if axis == "M":
        return cfg.replace(**{"run.M": value})
    if axis == "T":
        return cfg.replace(**{"schedule.T": value})
    if axis == "n_atoms":
        return cfg  # handled through target discretization
    raise ValueError(f"unknown sweep axis {axis!r}")


@dataclass(frozen=True)
class SweepResult:
    rows: list  # dicts: axis_value, replicate, w1, method, runtime
    noise_floor: dict
    config_digest: str
    master_seed: int

    def medians(self) -> dict:
        by_value = {}
        for row in self.rows:
            if not math.isnan(row["w1"]):
                by_value.setdefault(row["axis_value"], []).append(row["w1"])
        return {v: float(np.median(vals)) for v, vals in sorted(by_value.items())}


def _run_cell(cfg: Config, axis: str, axis_index: int, value: float,
              replicate: int, master_seed: int, base_dir: Path) -> dict:
    t0 = time.perf_counter()
    ss = cell_seed(master_seed, axis_index, replicate)
    traj_seed, ref_seed = ss.spawn(2)
    traj_master = int(traj_seed.generate_state(1)[0])
    try:
        cell_cfg = _apply_axis(cfg, axis, value)
        sched = cell_cfg.schedule()
        reference = cell_cfg.target(base_dir)
        if axis == "n_atoms":
            if not isinstance(reference, CircleTarget):
                raise ValueError("n_atoms axis expects a circle target")
            if cell_cfg["sweep.discretization"] == "grid":
                model_target = reference.grid_atoms(int(value))
            else:
                model_target = reference.as_empirical(int(value), ref_seed.spawn(1)[0])
        else:
            model_target = reference
        grid = make_stepgrid(sched, eps=cell_cfg["run.eps"],
                             delta=cell_cfg["run.delta"])
        field = build_field(cell_cfg, model_target, sched)
        n = cell_cfg["run.n"]
        cloud = sample_backward(
            field, sched, grid, n, traj_master,
            method=cell_cfg["run.mode"] if cell_cfg["run.mode"] in ("ei", "em") else "ei",
            init=cell_cfg["run.init"],
            target=model_target if cell_cfg["run.init"] == "forward" else None,
        )
        ref_cloud = reference.sample(n, ref_seed)
        est = w1(cloud, ref_cloud, seed=int(ref_seed.generate_state(1)[0]))
        return {"axis_value": value, "replicate": replicate, "w1": est.value,
                "method": est.method, "runtime": time.perf_counter() - t0}
    except (StepGridError, DivergedError, ValueError) as exc:
        return {"axis_value": value, "replicate": replicate, "w1": math.nan,
                "method": f"skipped:{type(exc).__name__}",
                "runtime": time.perf_counter() - t0}


def null_floor(cfg: Config, master_seed: int, base_dir: Path = Path("."),
               replicates: Optional[int] = None) -> dict:
    """Monte Carlo noise floor: distance between two independent reference
    clouds of the run size, medianized over replicates."""
    replicates = replicates or cfg["sweep.replicates"]
    reference = cfg.target(base_dir)
    n = cfg["run.n"]
    vals = []
    for rep in range(replicates):
        ss = cell_seed(master_seed, _NULL_AXIS_INDEX, rep)
        sa, sb = ss.spawn(2)
        est = w1(reference.sample(n, sa), reference.sample(n, sb),
                 seed=int(sb.generate_state(1)[0]))
        vals.append(est.value)
    vals = np.asarray(vals)
    return {"median": float(np.median(vals)), "mean": float(vals.mean()),
            "max": float(vals.max()), "replicates": int(replicates)}


def run_sweep(cfg: Config, master_seed: int = 0, threads: int = 4,
              base_dir: Path = Path(".")) -> SweepResult:
    axis = cfg["sweep.axis"]
    values = cfg["sweep.values"]
    if sorted(values) != list(values) and sorted(values, reverse=True) != list(values):
        raise ValueError("sweep.values must be monotone")
    replicates = cfg["sweep.replicates"]
    if replicates < 1:
        raise ValueError("sweep.replicates must be >= 1")

    cells = [(idx, value, rep)
             for idx, value in enumerate(values)
             for rep in range(replicates)]
    rows = [None] * len(cells)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futs = {
            pool.submit(_run_cell, cfg, axis, idx, value, rep, master_seed,
                        base_dir): i
            for i, (idx, value, rep) in enumerate(cells)
        }
        for fut, i in futs.items():
            rows[i] = fut.result()
    floor = null_floor(cfg, master_seed, base_dir)
    return SweepResult(rows=rows, noise_floor=floor,
                       config_digest=cfg.digest(), master_seed=master_seed)


def write_sweep_csv(result: SweepResult, cfg: Config, out_dir: Path,
                    stem: str = "sweep") -> dict:
    """Write the tidy CSV plus a JSON sidecar with full provenance; numeric
    columns hold full-precision decimal text so reruns are byte-identical."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis_value", "replicate", "w1", "method", "runtime"])
        for row in result.rows:
            writer.writerow([
                f"{row['axis_value']:.17g}", row["replicate"],
                f"{row['w1']:.17g}", row["method"], f"{row['runtime']:.3f}",
            ])
    sidecar = {
        "config": {k: cfg[k] for k in sorted(cfg.values) } if cfg.values else {},
        "config_canonical": cfg.canonical_text(),
        "config_digest": result.config_digest,
        "master_seed": result.master_seed,
        "seed_rule": _SEED_RULE,
        "noise_floor": result.noise_floor,
        "version": __version__,
        "axis": cfg["sweep.axis"],
        "medians": result.medians(),
    }
    json_path = out_dir / f"{stem}.json"
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return {"csv": csv_path, "json": json_path}


# -- score-field heatmaps -----------------------------------------------------


def emit_grid(field, t_range, x_range, resolution: int,
              exact_field=None) -> dict:
    """Heatmap of the score norm over (t, x1) with the remaining coordinates
    pinned to zero, plus the pointwise error norm when a second field is
    supplied.  Reproduces the blow-up of both quantities as t -> 0 and
    |x| grows."""
    if field.d < 1:
        raise ValueError("field must have d >= 1")
    ts = np.linspace(t_range[0], t_range[1], resolution)
    xs = np.linspace(x_range[0], x_range[1], resolution)
    norm_score = np.empty((resolution, resolution))
    norm_error = np.empty((resolution, resolution)) if exact_field else None
    for i, t in enumerate(ts):
        pts = np.zeros((resolution, field.d))
        pts[:, 0] = xs
        sc = field.score(t, pts)
        norm_score[:, i] = np.linalg.norm(np.atleast_2d(sc), axis=-1)
        if exact_field is not None:
            err = sc - exact_field.score(t, pts)
            norm_error[:, i] = np.linalg.norm(np.atleast_2d(err), axis=-1)
    return {"t": ts, "x1": xs, "norm_score": norm_score,
            "norm_error": norm_error}


def write_grid_csv(grid_result: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        has_err = grid_result["norm_error"] is not None
        header = ["t", "x1", "norm_score"] + (["norm_error"] if has_err else [])
        writer.writerow(header)
        for i, t in enumerate(grid_result["t"]):
            for j, x1 in enumerate(grid_result["x1"]):
                row = [f"{t:.17g}", f"{x1:.17g}",
                       f"{grid_result['norm_score'][j, i]:.17g}"]
                if has_err:
                    row.append(f"{grid_result['norm_error'][j, i]:.17g}")
                writer.writerow(row)
