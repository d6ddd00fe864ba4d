"""Evaluators for the quantitative convergence bounds and their constants.

These are transcription checks and trend predictors, not acceptance oracles:
the bounds contain an unspecified universal constant (exposed as ``D`` with
default 1) and are astronomically loose at desk scale.  Every report carries a
caveat saying so.

The total error splits into three terms:

* discretization/score error  ~ exp(kappa/eps) (M + sqrt(delta)) / eps^2,
* mixing error                ~ exp(kappa/eps) exp(-T/beta_bar),
* residual-noise error        ~ sqrt(eps),

with ``kappa = diam^2 (1 + beta_bar) / 2``.  The reported total is the sum of
the three per-term evaluations with their sharpest published constants; the
aggregated single-constant form is also exposed under ``constants``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "BoundInputs",
    "BoundReport",
    "HypothesisError",
    "theorem1",
    "theorem3",
    "corollary2",
    "prop4",
    "l2_theorem",
    "tstar",
    "constants",
    "CAVEAT",
]

CAVEAT = (
    "modulo an unspecified universal constant (D defaults to 1); "
    "valid as a transcription/trend check only, never as a numeric target"
)


class HypothesisError(ValueError):
    """Raised when an evaluator's hypotheses fail; names the violated bound."""


@dataclass(frozen=True)
class BoundInputs:
    d: int
    diam: float
    beta_bar: float
    T: float
    eps: float
    delta: float
    M: float
    Gamma: float = 0.0
    N: int = 1
    d_M: float = 1.0
    eta_w: float = 0.01
    D: float = 1.0
    D1: float = 1.0


@dataclass(frozen=True)
class BoundReport:
    total: float
    term_disc: float
    term_mixing: float
    term_noising: float
    constants: dict = field(default_factory=dict)
    caveat: str = CAVEAT


def _check_hypotheses(b: BoundInputs):
    for name in ("eps", "M", "delta"):
        val = getattr(b, name)
        if val > 1.0 / 32.0:
            raise HypothesisError(f"requires {name} <= 1/32, got {name}={val}")
        if val < 0:
            raise HypothesisError(f"requires {name} >= 0, got {name}={val}")
    t_floor = 2.0 * b.beta_bar * (1.0 + math.log(1.0 + b.diam))
    if b.T < t_floor:
        raise HypothesisError(
            f"requires T >= 2 beta_bar (1 + log(1 + diam)) = {t_floor}, got T={b.T}"
        )


def _kappa(diam: float, beta_bar: float) -> float:
    return diam**2 * (1.0 + beta_bar) / 2.0


def _log_diam(diam: float) -> float:
    return 1.0 + math.log(1.0 + diam)


def tstar(T: float, beta_bar: float, diam: float) -> float:
    """Start of the contraction window, T - 2 beta_bar (1 + log(1 + diam))."""
    val = T - 2.0 * beta_bar * _log_diam(diam)
    if val < 0:
        raise HypothesisError(
            "contraction window is empty: T < 2 beta_bar (1 + log(1 + diam))"
        )
    return val


def constants(b: BoundInputs) -> dict:
    """All named constants, evaluated exactly on the inputs."""
    ld = _log_diam(b.diam)
    return {
        "kappa": _kappa(b.diam, b.beta_bar),
        "t_star": b.T - 2.0 * b.beta_bar * ld,
        # aggregated single-constant form of the headline bound
        "D0": b.D * (1.0 + b.beta_bar) ** 7 * (1.0 + b.d + b.diam**4) * ld,
        # local drift-mismatch constant
        "C0": (1.0 + b.beta_bar) ** 3.5
        * (4.0 + 256.0 * b.d + 43664.0 * (1.0 + b.diam) ** 4),
        # sharpest published discretization-term constant
        "D0_disc": (1.0 + b.beta_bar) ** 7
        * (8.0 + 512.0 * b.d + 87328.0 * (1.0 + b.diam) ** 4) * ld,
        # second-moment cap of the discrete backward chain
        "K0": 5.0 * b.d + 320.0 * (1.0 + b.diam) ** 2,
        # mid-step increment cap of the interpolation process
        "L0": 64.0 * b.d + 20544.0 * (1.0 + b.diam) ** 2,
    }


def theorem1(b: BoundInputs) -> BoundReport:
    """Headline three-term bound with exponential eps-dependence."""
    _check_hypotheses(b)
    c = constants(b)
    kappa = c["kappa"]
    blow = math.exp(kappa / b.eps)
    term_disc = c["D0_disc"] * blow * (b.M + math.sqrt(b.delta)) / b.eps**2
    term_mixing = blow * math.exp(-b.T / b.beta_bar) * (math.sqrt(b.d) + b.diam)
    term_noising = math.sqrt(2.0 * b.beta_bar) * (b.diam + math.sqrt(b.d)) \
        * math.sqrt(b.eps)
    aggregate = c["D0"] * (blow * (b.M + math.sqrt(b.delta)) / b.eps**2
                           + blow * math.exp(-b.T / b.beta_bar)
                           + math.sqrt(b.eps))
    c["aggregate_form"] = aggregate
    return BoundReport(
        total=term_disc + term_mixing + term_noising,
        term_disc=term_disc, term_mixing=term_mixing,
        term_noising=term_noising, constants=c,
    )


def theorem3(b: BoundInputs) -> BoundReport:
    """Polynomial-in-1/eps variant under a sharpened Hessian envelope
    ``|hess log p_t| <= Gamma / sigma_t^2``."""
    if b.Gamma < 0:
        raise HypothesisError("requires Gamma >= 0")
    _check_hypotheses(b)
    c = constants(b)
    ld = _log_diam(b.diam)
    gexp = math.exp(3.0 * (1.0 + b.beta_bar) ** 2 * (b.Gamma + 2.0) * ld)
    disc_const = 4.0 * (4.0 + 256.0 * b.d + 43664.0 * (1.0 + b.diam) ** 4) * gexp
    mix_const = math.exp(2.0 * (b.Gamma + 2.0) * (1.0 + b.beta_bar) ** 2 * ld) \
        * (math.sqrt(b.d) + b.diam)
    term_disc = disc_const * (b.M + math.sqrt(b.delta)) / b.eps ** (b.Gamma + 2.0)
    term_mixing = mix_const * math.exp(-b.T / b.beta_bar) / b.eps**b.Gamma
    term_noising = math.sqrt(2.0 * b.beta_bar) * (b.diam + math.sqrt(b.d)) \
        * math.sqrt(b.eps)
    c["D0_poly"] = b.D * (1.0 + b.d + (1.0 + b.diam) ** 4) * gexp
    c["D0_poly_disc"] = disc_const
    c["aggregate_form"] = c["D0_poly"] * (
        (b.M + math.sqrt(b.delta)) / b.eps ** (b.Gamma + 2.0)
        + math.exp(-b.T / b.beta_bar) / b.eps**b.Gamma
        + math.sqrt(b.eps)
    )
    return BoundReport(
        total=term_disc + term_mixing + term_noising,
        term_disc=term_disc, term_mixing=term_mixing,
        term_noising=term_noising, constants=c,
    )


def corollary2(eta: float, diam: float, beta_bar: float, d: int,
               D: float = 1.0) -> dict:
    """Minimal parameter set achieving a target accuracy level eta, and the
    resulting bound 4 D0 eta."""
    if not (0.0 < eta <= 1.0 / 32.0):
        raise HypothesisError("requires eta in (0, 1/32]")
    kappa = _kappa(diam, beta_bar)
    ld = _log_diam(diam)
    params = {
        "T": max(beta_bar * (kappa + 1.0) / eta**2, 2.0 * beta_bar * ld),
        "M": math.exp(-kappa / eta**2) * eta**5,
        "delta": math.exp(-2.0 * kappa / eta**2) * eta**10,
        "gamma_K": eta**2,
    }
    D0 = D * (1.0 + beta_bar) ** 7 * (1.0 + d + diam**4) * ld
    params["bound"] = 4.0 * D0 * eta
    params["kappa"] = kappa
    params["D0"] = D0
    # the returned set re-validates the main evaluator's hypotheses
    theorem1(BoundInputs(d=d, diam=diam, beta_bar=beta_bar, T=params["T"],
                         eps=params["gamma_K"], delta=params["delta"],
                         M=params["M"], D=D))
    return params


def prop4(b: BoundInputs) -> BoundReport:
    """Three-term bound plus the empirical-target statistical term
    ``D1 N^{-1/(d_M + eta_w)}``."""
    if b.N < 1:
        raise HypothesisError("requires N >= 1")
    if b.d_M <= 0 or b.eta_w <= 0:
        raise HypothesisError("requires d_M > 0 and eta_w > 0")
    base = theorem1(b)
    stat = b.D1 * float(b.N) ** (-1.0 / (b.d_M + b.eta_w))
    c = dict(base.constants)
    c["statistical_term"] = stat
    return BoundReport(
        total=base.total + stat,
        term_disc=base.term_disc, term_mixing=base.term_mixing,
        term_noising=base.term_noising, constants=c,
    )


def l2_theorem(b: BoundInputs, K: int, zeta: float) -> BoundReport:
    """Mean-square-error variant: thresholding at level M/zeta adds a
    ``K zeta`` coupling term; K comes from the actual step grid."""
    if not (0.0 < zeta <= 1.0):
        raise HypothesisError("requires zeta in (0, 1]")
    if b.M / zeta > 1.0 / 32.0:
        raise HypothesisError(
            f"requires M/zeta <= 1/32, got {b.M / zeta}"
        )
    _check_hypotheses(b)
    ld = _log_diam(b.diam)
    kappa = _kappa(b.diam, b.beta_bar)
    blow = math.exp(kappa / b.eps)
    D0 = b.D * (1.0 + b.beta_bar) ** 5 * (1.0 + b.d + b.diam**4) * ld
    term_disc = D0 * blow * (b.M / zeta + math.sqrt(b.delta)) / b.eps**2
    term_mixing = D0 * blow * math.exp(-b.T / b.beta_bar)
    term_noising = D0 * math.sqrt(b.eps)
    coupling = D0 * K * zeta
    return BoundReport(
        total=coupling + term_disc + term_mixing + term_noising,
        term_disc=term_disc, term_mixing=term_mixing,
        term_noising=term_noising,
        constants={"D0": D0, "kappa": kappa, "coupling_term": coupling},
    )
