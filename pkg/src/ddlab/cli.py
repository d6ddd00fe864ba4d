"""Command-line interface.

Subcommands:

* ``sample`` - run backward trajectories, write them to CSV;
* ``sweep``  - parameter sweep from a config file: tidy CSV + JSON sidecar
  + trend figure;
* ``verify`` - run the verification suites, optional JSON report, nonzero
  exit on any violation;
* ``bounds`` - evaluate the error-bound formulas, JSON report;
* ``grid``   - score-norm heatmap over (t, x1): CSV + figure.

Every delimited output gets a rendered figure next to it.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    BoundInputs,
    constants as bound_constants,
    corollary2,
    l2_theorem,
    prop4,
    theorem1,
    theorem3,
    CAVEAT,
)
from .config import Config, load_config
from .sampler import make_stepgrid, sample_backward
from .scores import exact_score
from .sweeps import build_field, emit_grid, run_sweep, write_grid_csv, write_sweep_csv
from .targets import (
    CircleTarget,
    DiracTarget,
    EmpiricalTarget,
    HypercubeTarget,
    two_atom_target,
)
from .verify import SUITES, run_all
from . import plots

_FIVE_ATOM_SEED = 20240817


def _preset_target(spec: str):
    """Compact target syntax: name[:key=val,...].

    Presets: dirac, two-atom (separation, d), five-atom (d, fixed cloud),
    hypercube (p, d, side), circle (radius, d, n for discretization).
    """
    name, _, rest = spec.partition(":")
    kw = {}
    if rest:
        for item in rest.split(","):
            k, _, v = item.partition("=")
            kw[k.strip()] = float(v)
    d = int(kw.get("d", 2))
    if name == "dirac":
        return DiracTarget(d=d)
    if name == "two-atom":
        return two_atom_target(kw.get("separation", 1.0), d=d)
    if name == "five-atom":
        rng = np.random.default_rng(_FIVE_ATOM_SEED)
        atoms = 0.4 * rng.standard_normal((5, d))
        atoms -= 0.5 * (atoms.min(axis=0) + atoms.max(axis=0))
        return EmpiricalTarget(d=d, atoms=atoms)
    if name == "hypercube":
        return HypercubeTarget(d=d, p=int(kw.get("p", 1)),
                               side=kw.get("side", 1.0))
    if name == "circle":
        circ = CircleTarget(d=d, radius=kw.get("radius", 1.0))
        if "n" in kw:
            return circ.grid_atoms(int(kw["n"]))
        return circ
    raise SystemExit(f"unknown target preset {name!r}")


def _base_config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    return cfg


def cmd_sample(args) -> int:
    cfg = _base_config(args)
    overrides = {}
    if args.T is not None:
        overrides["schedule.T"] = args.T
    if args.eps is not None:
        overrides["run.eps"] = args.eps
    if args.delta is not None:
        overrides["run.delta"] = args.delta
    if args.M is not None:
        overrides["run.M"] = args.M
    if args.mode is not None:
        overrides["run.mode"] = args.mode
    if args.n is not None:
        overrides["run.n"] = args.n
    cfg = cfg.replace(**overrides) if overrides else cfg

    target = _preset_target(args.target) if args.target else cfg.target()
    if args.schedule:
        name, _, rest = args.schedule.partition(":")
        kw = {"schedule.kind": name}
        for item in filter(None, rest.split(",")):
            k, _, v = item.partition("=")
            kw[f"schedule.{k.strip()}"] = float(v)
        cfg = cfg.replace(**kw)
    sched = cfg.schedule()
    grid = make_stepgrid(sched, eps=cfg["run.eps"], delta=cfg["run.delta"])
    field = build_field(cfg, target, sched)
    states = sample_backward(
        field, sched, grid, cfg["run.n"], args.seed,
        method=cfg["run.mode"] if cfg["run.mode"] in ("ei", "em") else "ei",
        init=cfg["run.init"],
        target=target if cfg["run.init"] == "forward" else None,
        store="full",
    )
    out = Path(args.traj_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    d = field.d
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["traj_id", "k", "t_k"] + [f"y_{j+1}" for j in range(d)])
        for i in range(states.shape[1]):
            for k in range(states.shape[0]):
                writer.writerow([i, k, f"{grid.ts[k]:.17g}"]
                                + [f"{v:.17g}" for v in states[k, i]])
    print(f"wrote {states.shape[1]} trajectories x {states.shape[0]} states "
          f"to {out} (K={grid.K})")
    return 0


def cmd_sweep(args) -> int:
    if not args.config:
        raise SystemExit("sweep needs --config with sweep.* keys")
    cfg = load_config(args.config)
    base_dir = Path(args.config).parent
    result = run_sweep(cfg, master_seed=args.seed, threads=args.threads,
                       base_dir=base_dir)
    out_dir = Path(args.out)
    paths = write_sweep_csv(result, cfg, out_dir)
    fig = plots.render_sweep(result, cfg["sweep.axis"], out_dir / "sweep.png")
    print(f"noise floor (median of {result.noise_floor['replicates']} null "
          f"cells): {result.noise_floor['median']:.4g}")
    for v, m in result.medians().items():
        print(f"  {cfg['sweep.axis']} = {v:<10g} median W1 = {m:.5g}")
    print(f"wrote {paths['csv']}, {paths['json']}, {fig}")
    return 0


def cmd_verify(args) -> int:
    cfg = _base_config(args)
    sched = cfg.schedule()
    targets = {}
    for spec in args.targets.split(";"):
        spec = spec.strip()
        if spec:
            targets[spec.replace(":", "_")] = _preset_target(spec)
    report = run_all(targets, sched, suite=args.suite,
                     n_probes=args.n_probes, seed=args.seed,
                     threads=args.threads)
    for line in report.summary_lines():
        print(line)
    print(f"suite={args.suite} checks={len(report.reports)} "
          f"violations={report.total_violations}")
    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(json.dumps(report.as_dict(), indent=2))
        print(f"wrote {args.json}")
    return 0 if report.passed else 1


def cmd_bounds(args) -> int:
    inputs = BoundInputs(
        d=args.d, diam=args.diam, beta_bar=args.beta_bar, T=args.T,
        eps=args.eps, delta=args.delta, M=args.M, Gamma=args.gamma,
        N=args.N, d_M=args.d_M, eta_w=args.eta_w, D=args.D, D1=args.D1,
    )
    which = args.which
    if which == "corollary2":
        report = {"inputs": {"eta": args.eta, "diam": args.diam,
                             "beta_bar": args.beta_bar, "d": args.d},
                  "parameters": corollary2(args.eta, args.diam,
                                           args.beta_bar, args.d, args.D),
                  "caveats": CAVEAT}
    else:
        fn = {"theorem1": theorem1, "theorem3": theorem3, "prop4": prop4}.get(which)
        if fn is not None:
            rep = fn(inputs)
        else:
            rep = l2_theorem(inputs, K=args.K, zeta=args.zeta)
        report = {
            "inputs": inputs.__dict__,
            "constants": rep.constants,
            "terms": {"discretization": rep.term_disc,
                      "mixing": rep.term_mixing,
                      "noising": rep.term_noising},
            "total": rep.total,
            "caveats": rep.caveat,
        }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(text)
        print(f"wrote {args.json}")
    else:
        print(text)
    return 0


def cmd_grid(args) -> int:
    cfg = _base_config(args)
    if args.T is not None:
        cfg = cfg.replace(**{"schedule.T": args.T})
    target = _preset_target(args.target)
    if target.d != 2:
        raise SystemExit("grid heatmaps use d = 2 targets "
                         "(second coordinate pinned to 0)")
    sched = cfg.schedule()
    exact = exact_score(target, sched)
    field = exact
    if args.M and args.M > 0:
        cfg2 = cfg.replace(**{"run.M": args.M})
        field = build_field(cfg2, target, sched)
    result = emit_grid(field, (args.t_min, args.t_max),
                       (-args.x_max, args.x_max), args.resolution,
                       exact_field=exact if field is not exact else None)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "grid.csv"
    write_grid_csv(result, csv_path)
    fig = plots.render_grid(result, out_dir / "grid.png")
    print(f"wrote {csv_path}, {fig}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ddlab",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=4, help="worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("sample", help="run backward trajectories to CSV")
    ps.add_argument("--target", default="dirac",
                    help="preset, e.g. two-atom:separation=1,d=2")
    ps.add_argument("--schedule", default="",
                    help="e.g. constant:beta0=1 or linear:beta0=0.1,betaT=20")
    ps.add_argument("--T", type=float)
    ps.add_argument("--eps", type=float)
    ps.add_argument("--delta", type=float)
    ps.add_argument("--M", type=float)
    ps.add_argument("--mode", choices=["ei", "em", "zero"])
    ps.add_argument("--n", type=int)
    ps.add_argument("--out", dest="traj_out", default="traj.csv",
                    help="trajectory CSV path")
    ps.set_defaults(fn=cmd_sample)

    pw = sub.add_parser("sweep", help="parameter sweep from a config file")
    pw.set_defaults(fn=cmd_sweep)

    pv = sub.add_parser("verify", help="run verification suites")
    pv.add_argument("--suite", choices=list(SUITES), default="all")
    pv.add_argument("--targets",
                    default="dirac;two-atom;five-atom;hypercube:p=1,d=2",
                    help="semicolon-separated target presets")
    pv.add_argument("--n-probes", type=int, default=1000)
    pv.add_argument("--json", help="write the machine-readable report here")
    pv.set_defaults(fn=cmd_verify)

    pb = sub.add_parser("bounds", help="evaluate error-bound formulas")
    pb.add_argument("--which", default="theorem1",
                    choices=["theorem1", "theorem3", "corollary2", "prop4",
                             "l2"])
    pb.add_argument("--d", type=int, default=2)
    pb.add_argument("--diam", type=float, default=1.0)
    pb.add_argument("--beta-bar", dest="beta_bar", type=float, default=1.0)
    pb.add_argument("--T", type=float, default=10.0)
    pb.add_argument("--eps", type=float, default=0.01)
    pb.add_argument("--delta", type=float, default=0.01)
    pb.add_argument("--M", type=float, default=0.0)
    pb.add_argument("--gamma", type=float, default=0.0,
                    help="Hessian-envelope exponent for the polynomial bound")
    pb.add_argument("--eta", type=float, default=1.0 / 32.0,
                    help="accuracy level for corollary2")
    pb.add_argument("--N", type=int, default=1)
    pb.add_argument("--d-M", dest="d_M", type=float, default=1.0)
    pb.add_argument("--eta-w", dest="eta_w", type=float, default=0.01)
    pb.add_argument("--D", type=float, default=1.0)
    pb.add_argument("--D1", type=float, default=1.0)
    pb.add_argument("--K", type=int, default=100, help="step count for l2")
    pb.add_argument("--zeta", type=float, default=0.5)
    pb.add_argument("--json", help="write the JSON report here")
    pb.set_defaults(fn=cmd_bounds)

    pg = sub.add_parser("grid", help="score-norm heatmap CSV + figure")
    pg.add_argument("--target", default="dirac:d=2")
    pg.add_argument("--T", type=float, default=1.0)
    pg.add_argument("--t-min", dest="t_min", type=float, default=1e-3)
    pg.add_argument("--t-max", dest="t_max", type=float, default=1.0)
    pg.add_argument("--x-max", dest="x_max", type=float, default=3.0)
    pg.add_argument("--resolution", type=int, default=128)
    pg.add_argument("--M", type=float, default=0.0,
                    help="also plot the error norm of a perturbed field")
    pg.set_defaults(fn=cmd_grid)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
