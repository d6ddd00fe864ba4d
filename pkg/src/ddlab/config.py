"""Run configuration: a single flat text file of dotted keys.

Format: one ``key = value`` per line, ``#`` comments, blank lines ignored.
Every key must be registered below; unknown keys are hard errors (silent
typos poison sweeps).  Example::

    schedule.kind = constant
    schedule.beta0 = 1.0
    schedule.T = 4.0
    target.variant = empirical
    target.d = 2
    target.atoms_file = atoms.csv
    run.eps = 0.01
    run.delta = 0.05
    run.n = 512
    sweep.axis = M
    sweep.values = 0, 0.005, 0.01, 0.02
    sweep.replicates = 16
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .schedule import NoiseSchedule
from .targets import (
    CircleTarget,
    CompactTarget,
    DiracTarget,
    EmpiricalTarget,
    HypercubeTarget,
)

__all__ = ["Config", "ConfigError", "load_config", "parse_config", "DEFAULTS"]


class ConfigError(ValueError):
    pass


def _choice(*options):
    def parse(v):
        if v not in options:
            raise ConfigError(f"expected one of {options}, got {v!r}")
        return v
    return parse


def _float_list(v):
    return [float(x) for x in v.replace(",", " ").split()]


# key -> (parser, default); None default means "required when used"
DEFAULTS = {
    "schedule.kind": (_choice("constant", "linear", "cosine"), "constant"),
    "schedule.beta0": (float, 1.0),
    "schedule.betaT": (float, 0.0),
    "schedule.T": (float, 4.0),
    "schedule.eta": (float, 0.008),
    "schedule.r": (float, 0.01),
    "target.variant": (_choice("dirac", "empirical", "hypercube", "circle"),
                       "dirac"),
    "target.d": (int, 2),
    "target.p": (int, 1),
    "target.side": (float, 1.0),
    "target.radius": (float, 1.0),
    "target.atoms_file": (str, ""),
    "run.eps": (float, 0.01),
    "run.delta": (float, 0.05),
    "run.M": (float, 0.0),
    "run.mode": (_choice("ei", "em", "zero"), "ei"),
    "run.init": (_choice("gaussian", "forward"), "gaussian"),
    "run.n": (int, 512),
    "run.perturb_mode": (_choice("fixed", "radial"), "fixed"),
    "run.perturb_growth": (_choice("affine", "flat"), "affine"),
    "sweep.axis": (_choice("eps", "delta", "M", "T", "n_atoms"), "M"),
    "sweep.values": (_float_list, [0.0, 0.005, 0.01, 0.02]),
    "sweep.replicates": (int, 16),
    "sweep.discretization": (_choice("grid", "iid"), "grid"),
}


@dataclass(frozen=True)
class Config:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values.get(key, DEFAULTS[key][1])

    def replace(self, **overrides) -> "Config":
        """New config with dotted keys overridden (underscores map to dots)."""
        vals = dict(self.values)
        for k, v in overrides.items():
            key = k.replace("__", ".")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            vals[key] = v
        return Config(vals)

    def canonical_text(self) -> str:
        lines = []
        for key in sorted(DEFAULTS):
            lines.append(f"{key} = {self[key]!r}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]

    # -- factories ---------------------------------------------------------

    def schedule(self) -> NoiseSchedule:
        kind = self["schedule.kind"]
        if kind == "constant":
            return NoiseSchedule(kind=kind, T=self["schedule.T"],
                                 beta0=self["schedule.beta0"])
        if kind == "linear":
            return NoiseSchedule(kind=kind, T=self["schedule.T"],
                                 beta0=self["schedule.beta0"],
                                 betaT=self["schedule.betaT"])
        return NoiseSchedule(kind=kind, T=self["schedule.T"],
                             eta=self["schedule.eta"], r=self["schedule.r"])

    def target(self, base_dir: Path = Path(".")) -> CompactTarget:
        variant = self["target.variant"]
        d = self["target.d"]
        if variant == "dirac":
            return DiracTarget(d=d)
        if variant == "hypercube":
            return HypercubeTarget(d=d, p=self["target.p"],
                                   side=self["target.side"])
        if variant == "circle":
            return CircleTarget(d=d, radius=self["target.radius"])
        path = self["target.atoms_file"]
        if not path:
            raise ConfigError("empirical target needs target.atoms_file")
        atoms = np.loadtxt(Path(base_dir) / path, delimiter=",", ndmin=2)
        if atoms.shape[1] != d:
            raise ConfigError(
                f"atoms file has {atoms.shape[1]} columns, target.d = {d}"
            )
        return EmpiricalTarget(d=d, atoms=atoms)


def parse_config(text: str) -> Config:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value': {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser = DEFAULTS[key][0]
        try:
            values[key] = parser(val)
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}")
    return Config(values)


def load_config(path) -> Config:
    return parse_config(Path(path).read_text())
