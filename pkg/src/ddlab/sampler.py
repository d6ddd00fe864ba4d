"""Forward sampling and backward-in-time discretizations.

The backward sampler integrates the time-reversed diffusion with an
exponential-integrator step that treats the linear part of the drift exactly:

    Y_{k+1} = Y_k + g1_k (Y_k + 2 s(T - t_k, Y_k)) + sqrt(2 g2_k) Z_k,
    g1_k = exp(A_k) - 1,   g2_k = (exp(2 A_k) - 1) / 2,
    A_k  = int_{T-t_{k+1}}^{T-t_k} beta_u du.

A plain Euler step of the same interpolation is provided for comparison on a
matched Gaussian stream.  The step grid is built backwards from the truncation
time so the last step is exactly ``eps`` and every earlier step satisfies the
per-step stiffness budget ``gamma_k * beta / sigma^2 <= delta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .schedule import NoiseSchedule
from .scores import ScoreField
from .targets import CompactTarget

__all__ = [
    "StepGrid",
    "Trajectory",
    "make_stepgrid",
    "audit_stepgrid",
    "forward_sample",
    "backward_ei",
    "backward_em",
    "sample_backward",
    "one_step_pair",
    "tangent_flow",
    "TangentFlowRecord",
    "thresholded_pair",
    "ddpm_convert",
    "moment_audit",
    "increment_audit",
    "trajectory_seed",
    "DivergedError",
]

_DIVERGENCE_GUARD = 1e6
_MAX_STEPS = 2_000_000


class StepGridError(ValueError):
    """Raised for infeasible step-grid requests."""


class DivergedError(RuntimeError):
    """Raised when a trajectory leaves the guard box, with the step index."""

    def __init__(self, step: int, value: float):
        super().__init__(
            f"trajectory diverged at step {step} (|Y| reached {value:.3g}); "
            "large score-error levels legitimately blow up - reduce M or delta"
        )
        self.step = step


@dataclass(frozen=True)
class StepGrid:
    """Backward-time grid t_0 = 0 < ... < t_K = T - eps < t_{K+1} = T."""

    ts: np.ndarray
    eps: float
    delta: float

    @property
    def K(self) -> int:
        return len(self.ts) - 2

    @property
    def gammas(self) -> np.ndarray:
        return np.diff(self.ts)

    @property
    def T(self) -> float:
        return float(self.ts[-1])


@dataclass(frozen=True)
class Trajectory:
    """States Y_0 .. Y_K of one backward run (the step into [0, eps] is
    never taken)."""

    states: np.ndarray  # (K+1, d)
    seed: object
    grid: StepGrid


def make_stepgrid(sched: NoiseSchedule, eps: float, delta: float) -> StepGrid:
    """Build the grid backwards from t_{K+1} = T.

    The final step is pinned to ``gamma_K = eps``; earlier steps take the
    largest size whose certified stiffness bound
    ``gamma * beta(T - t_k) / sigma^2(T - t_{k+1})`` stays at ``delta`` (both
    factors are monotone over the step, so the product certifies the true
    supremum).  Constant schedules use the equivalent closed form
    ``gamma = delta / (beta0 + 1/(2 (T - t_{k+1})))``; otherwise the step is
    found by bisection.  The leftover first step may be shorter than its
    budget allows.
    """
    T = sched.T
    if not (0.0 < eps < T):
        raise StepGridError(f"need 0 < eps < T, got eps={eps}, T={T}")
    if not (0.0 < delta <= 0.5):
        raise StepGridError(f"need 0 < delta <= 1/2, got delta={delta}")

    rev = [T, T - eps]
    while rev[-1] > 0.0:
        t_next = rev[-1]
        s_rev = T - t_next  # reversed time of the step's right endpoint
        if sched.kind == "constant":
            gamma = delta / (sched.beta0 + 1.0 / (2.0 * s_rev))
        else:
            sigma2 = -math.expm1(-2.0 * sched.integral(0.0, s_rev))

            def excess(g):
                return g * float(sched.beta(min(s_rev + g, T))) / sigma2 - delta

            hi = delta * sigma2 / float(sched.beta(s_rev))
            # beta is non-decreasing, so excess(hi) >= 0 and a root exists.
            gamma = hi if excess(hi) <= 0 else brentq(excess, 0.0, hi,
                                                      xtol=1e-15, rtol=1e-12)
        gamma = min(gamma, t_next)
        rev.append(t_next - gamma)
        if len(rev) > _MAX_STEPS:
            raise StepGridError(
                f"step grid exceeds {_MAX_STEPS} steps; relax eps or delta"
            )
    rev[-1] = 0.0
    ts = np.asarray(rev[::-1])
    return StepGrid(ts=ts, eps=float(eps), delta=float(delta))


def audit_stepgrid(sched: NoiseSchedule, grid: StepGrid) -> float:
    """Worst slack of the certified per-step stiffness bound (k < K);
    non-negative for grids built by make_stepgrid."""
    T = sched.T
    ts = grid.ts
    margins = []
    for k in range(grid.K):
        beta_k = float(sched.beta(T - ts[k]))
        sigma2 = -math.expm1(-2.0 * sched.integral(0.0, T - ts[k + 1]))
        margins.append(grid.delta - (ts[k + 1] - ts[k]) * beta_k / sigma2)
    return float(min(margins))


def _ei_coefficients(sched: NoiseSchedule, grid: StepGrid):
    """Per-step (g1, g2, beta at the step's score time) for all K steps."""
    T = sched.T
    ts = grid.ts
    K = grid.K
    a = np.array([sched.integral(T - ts[k + 1], T - ts[k]) for k in range(K)])
    g1 = np.expm1(a)
    g2 = 0.5 * np.expm1(2.0 * a)
    beta_rev = np.array([float(sched.beta(T - ts[k])) for k in range(K)])
    return g1, g2, beta_rev


def _guard(y: np.ndarray, k: int):
    amax = float(np.abs(y).max())
    if not np.isfinite(amax) or amax > _DIVERGENCE_GUARD:
        raise DivergedError(k, amax)


def trajectory_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Splitting rule for trajectory workers: stream index = trajectory index."""
    return np.random.SeedSequence(master_seed, spawn_key=(index,))


def forward_sample(target: CompactTarget, sched: NoiseSchedule, t: float,
                   n: int, seed) -> np.ndarray:
    """Exact draws of the noised target at time t: m_t X_0 + sigma_t Z."""
    rng = np.random.default_rng(seed)
    x0 = target.sample(n, rng)
    if t == 0.0:
        return x0
    ev = sched.eval(t)
    return ev.m * x0 + math.sqrt(ev.sigma2) * rng.standard_normal(x0.shape)


def backward_ei(field: ScoreField, sched: NoiseSchedule, grid: StepGrid,
                y0: np.ndarray, seed) -> Trajectory:
    """One exponential-integrator trajectory Y_0 .. Y_K from y0."""
    rng = np.random.default_rng(seed)
    g1, g2, _ = _ei_coefficients(sched, grid)
    T = sched.T
    y = np.asarray(y0, dtype=float).copy()
    states = [y.copy()]
    for k in range(grid.K):
        s = field.score(T - grid.ts[k], y)
        y = y + g1[k] * (y + 2.0 * s) \
            + math.sqrt(2.0 * g2[k]) * rng.standard_normal(y.shape)
        _guard(y, k)
        states.append(y.copy())
    return Trajectory(states=np.asarray(states), seed=seed, grid=grid)


def backward_em(field: ScoreField, sched: NoiseSchedule, grid: StepGrid,
                y0: np.ndarray, seed) -> Trajectory:
    """Euler counterpart of backward_ei on the same Gaussian stream: an
    identical seed consumes identical draws in identical order."""
    rng = np.random.default_rng(seed)
    gammas = grid.gammas
    T = sched.T
    y = np.asarray(y0, dtype=float).copy()
    states = [y.copy()]
    for k in range(grid.K):
        t_rev = T - grid.ts[k]
        beta = float(sched.beta(t_rev))
        s = field.score(t_rev, y)
        y = y + gammas[k] * beta * (y + 2.0 * s) \
            + math.sqrt(2.0 * beta * gammas[k]) * rng.standard_normal(y.shape)
        _guard(y, k)
        states.append(y.copy())
    return Trajectory(states=np.asarray(states), seed=seed, grid=grid)


def one_step_pair(field: ScoreField, sched: NoiseSchedule, t_k: float,
                  gamma: float, y0: np.ndarray, z: np.ndarray):
    """Matched-noise single step of both schemes from backward time t_k.

    Both updates consume the same standard normal ``z`` (pass zeros to
    compare the conditional means alone).  Returns ``(y_ei, y_em)``.
    """
    T = sched.T
    y0 = np.asarray(y0, dtype=float)
    z = np.asarray(z, dtype=float)
    a = sched.integral(T - t_k - gamma, T - t_k)
    beta = float(sched.beta(T - t_k))
    s = field.score(T - t_k, y0)
    y_ei = y0 + math.expm1(a) * (y0 + 2.0 * s) + math.sqrt(math.expm1(2.0 * a)) * z
    y_em = y0 + gamma * beta * (y0 + 2.0 * s) + math.sqrt(2.0 * beta * gamma) * z
    return y_ei, y_em


def sample_backward(field: ScoreField, sched: NoiseSchedule, grid: StepGrid,
                    n: int, master_seed: int, *, method: str = "ei",
                    init: str = "gaussian", target: Optional[CompactTarget] = None,
                    store: str = "terminal", chunk: Optional[int] = None):
    """Batch of n independent backward trajectories.

    Trajectory ``i`` draws all of its randomness from the generator seeded by
    ``trajectory_seed(master_seed, i)`` (initial condition first, then the K
    step noises), so results are bit-reproducible and independent of batching.
    ``init='gaussian'`` starts from the reference normal; ``init='forward'``
    starts from the exact forward law of ``target`` at time T, isolating the
    mixing term of the error budget.

    Returns ``(K+1, n, d)`` states for ``store='full'`` or ``(n, d)`` terminal
    states for ``store='terminal'``.
    """
    if method not in ("ei", "em"):
        raise ValueError("method must be 'ei' or 'em'")
    if init not in ("gaussian", "forward"):
        raise ValueError("init must be 'gaussian' or 'forward'")
    if init == "forward" and target is None:
        raise ValueError("init='forward' needs the target")
    d = field.d
    K = grid.K
    T = sched.T
    g1, g2, beta_rev = _ei_coefficients(sched, grid)
    gammas = grid.gammas
    if chunk is None:
        chunk = max(1, min(8192, int(32e6 / (max(K, 1) * d * 8))))

    if init == "forward":
        ev_T = sched.eval(T)

    out_full = np.empty((K + 1, n, d)) if store == "full" else None
    out_term = np.empty((n, d))

    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        c = hi - lo
        noise = np.empty((c, K + 1, d))
        y = np.empty((c, d))
        for i in range(c):
            rng = np.random.default_rng(trajectory_seed(master_seed, lo + i))
            draws = rng.standard_normal((K + 1, d))
            noise[i] = draws
            if init == "gaussian":
                y[i] = draws[K]  # last slot doubles as the initial draw
            else:
                x0 = target.sample(1, rng)[0]
                y[i] = ev_T.m * x0 + math.sqrt(ev_T.sigma2) * draws[K]
        if store == "full":
            out_full[0, lo:hi] = y
        for k in range(K):
            t_rev = T - grid.ts[k]
            s = field.score(t_rev, y)
            if method == "ei":
                y = y + g1[k] * (y + 2.0 * s) \
                    + math.sqrt(2.0 * g2[k]) * noise[:, k, :]
            else:
                y = y + gammas[k] * beta_rev[k] * (y + 2.0 * s) \
                    + math.sqrt(2.0 * beta_rev[k] * gammas[k]) * noise[:, k, :]
            _guard(y, k)
            if store == "full":
                out_full[k + 1, lo:hi] = y
        out_term[lo:hi] = y

    return out_full if store == "full" else out_term


# -- tangent flow ---------------------------------------------------------------

@dataclass(frozen=True)
class TangentFlowRecord:
    """Operator-norm trace of the flow derivative along one backward path."""

    times: np.ndarray
    norms: np.ndarray
    final: np.ndarray

    @property
    def max_norm(self) -> float:
        return float(self.norms.max())


def _substep_times(sched: NoiseSchedule, s: float, t: float, level: float):
    """Backward-time partition of [s, t] with per-step stiffness <= level.

    The budget is ``h * beta(T-u) / sigma^2(T-u-h) <= level`` (rate taken at
    the step's stiffest end); a short fixed-point iteration settles h.
    """
    times = [s]
    T = sched.T
    while times[-1] < t:
        u = times[-1]
        beta_u = float(sched.beta(T - u))
        h = level * (-math.expm1(-2.0 * sched.integral(0.0, T - u))) / beta_u
        for _ in range(3):
            end = min(u + h, t)
            sigma2_end = -math.expm1(-2.0 * sched.integral(0.0, T - end))
            h = level * sigma2_end / beta_u
        times.append(min(u + h, t))
        if len(times) > _MAX_STEPS:
            raise StepGridError("tangent-flow substep grid blew up")
    return np.asarray(times)


def tangent_flow(field: ScoreField, sched: NoiseSchedule, s: float, t: float,
                 x: np.ndarray, seed, *, level: float = 0.0125) -> TangentFlowRecord:
    """Co-simulate the backward path from (s, x) and the d x d matrix flow

        dJ/du = beta_{T-u} (Id + 2 hess log p_{T-u}(Y_u)) J,   J(s) = Id,

    with explicit-midpoint steps (the Hessian is evaluated at the midpoint
    state of each substep, itself simulated at half resolution).  The flow is
    stiff near the truncation time, hence the conservative substep budget.
    """
    if not (0.0 <= s <= t <= sched.T):
        raise ValueError("need 0 <= s <= t <= T")
    rng = np.random.default_rng(seed)
    T = sched.T
    d = field.d
    times = _substep_times(sched, s, t, level)
    y = np.asarray(x, dtype=float).copy()
    J = np.eye(d)
    norms = [1.0]

    def drift_matrix(u, state):
        beta = float(sched.beta(T - u))
        return beta * (np.eye(d) + 2.0 * field.hessian(T - u, state))

    for i in range(len(times) - 1):
        u0, u1 = times[i], times[i + 1]
        um = 0.5 * (u0 + u1)
        h = u1 - u0
        # path: two exact-linear-part substeps to land on the midpoint state
        y_mid = _ei_substep(field, sched, u0, um, y, rng)
        # explicit midpoint: half Euler step, then full step with midpoint slope
        J_half = J + 0.5 * h * (drift_matrix(u0, y) @ J)
        J = J + h * (drift_matrix(um, y_mid) @ J_half)
        y = _ei_substep(field, sched, um, u1, y_mid, rng)
        _guard(y, i)
        norms.append(float(np.linalg.norm(J, 2)))
    return TangentFlowRecord(times=times, norms=np.asarray(norms), final=J)


def _ei_substep(field, sched, u0, u1, y, rng):
    a = sched.integral(sched.T - u1, sched.T - u0)
    s = field.score(sched.T - u0, y)
    return y + math.expm1(a) * (y + 2.0 * s) \
        + math.sqrt(math.expm1(2.0 * a)) * rng.standard_normal(y.shape)


# -- thresholded coupling ---------------------------------------------------------

def thresholded_pair(exact: ScoreField, approx: ScoreField, zeta: float,
                     M: float, sched: NoiseSchedule, grid: StepGrid, seed):
    """Coupled pair on common noise: Y always uses the approximate field; the
    companion copies Y until Y first lands where the score error exceeds
    ``(M/zeta)/sigma^2`` (strictly), then continues with the exact field.

    Returns ``(traj, traj_star, divergence_step)`` with ``divergence_step``
    the first threshold crossing, or None.
    """
    if not (0.0 < zeta <= 1.0):
        raise ValueError("zeta must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    T = sched.T
    d = exact.d
    g1, g2, _ = _ei_coefficients(sched, grid)
    y = rng.standard_normal(d)
    y_star = y.copy()
    states = [y.copy()]
    states_star = [y_star.copy()]
    diverged: Optional[int] = None
    for k in range(grid.K):
        t_rev = T - grid.ts[k]
        sigma2 = sched.eval(t_rev).sigma2
        z = rng.standard_normal(d)
        if diverged is None:
            err = float(np.linalg.norm(approx.score(t_rev, y) - exact.score(t_rev, y)))
            # strict crossing with an ulp-scale tie allowance: an error that
            # saturates the threshold exactly must not count as exceeding it
            if err > (M / zeta) / sigma2 * (1.0 + 1e-9):
                diverged = k
        y = y + g1[k] * (y + 2.0 * approx.score(t_rev, y)) \
            + math.sqrt(2.0 * g2[k]) * z
        if diverged is None:
            y_star = y.copy()
        else:
            y_star = y_star + g1[k] * (y_star + 2.0 * exact.score(t_rev, y_star)) \
                + math.sqrt(2.0 * g2[k]) * z
        _guard(y, k)
        _guard(y_star, k)
        states.append(y.copy())
        states_star.append(y_star.copy())
    return (
        Trajectory(states=np.asarray(states), seed=seed, grid=grid),
        Trajectory(states=np.asarray(states_star), seed=seed, grid=grid),
        diverged,
    )


# -- discrete-time bookkeeping ----------------------------------------------------

def ddpm_convert(sched: NoiseSchedule, grid: StepGrid) -> dict:
    """Per-step decay factors of the equivalent discrete-time parameterization.

    Row k covers the reversed-time slice [T - t_{K+1-k}, T - t_{K-k}] (row 0
    is the truncated slice [0, eps]); the cumulative product telescopes to
    the squared mean decay, which is returned for verification.
    """
    T = sched.T
    ts = grid.ts
    K = grid.K
    ks = np.arange(K + 1)
    ints = np.array([
        sched.integral(T - ts[K + 1 - k], T - ts[K - k]) for k in ks
    ])
    alpha = np.exp(-2.0 * ints)
    alpha_bar = np.cumprod(alpha)
    m_sq = np.array([math.exp(-2.0 * sched.integral(0.0, T - ts[K - k]))
                     for k in ks])
    return {
        "k": ks,
        "alpha": alpha,
        "alpha_bar": alpha_bar,
        "beta_ddpm": 1.0 - alpha,
        "m_sq": m_sq,
    }


# -- audits -----------------------------------------------------------------------

@dataclass(frozen=True)
class MomentAuditReport:
    max_second_moment: float
    argmax_step: int
    cap: float
    passed: bool


def moment_audit(states: np.ndarray, diam: float) -> MomentAuditReport:
    """Compare per-step empirical second moments against the a-priori cap
    ``5 d + 320 (1 + diam)^2`` (valid for error level and step budget both
    <= 1/32; the cap is loose, so a failure indicates a bug, not noise)."""
    states = np.asarray(states)  # (K+1, n, d)
    d = states.shape[-1]
    cap = 5.0 * d + 320.0 * (1.0 + diam) ** 2
    moments = (states**2).sum(axis=-1).mean(axis=-1)
    k = int(np.argmax(moments))
    return MomentAuditReport(
        max_second_moment=float(moments[k]), argmax_step=k, cap=cap,
        passed=bool(moments[k] <= cap),
    )


@dataclass(frozen=True)
class IncrementAuditReport:
    worst_ratio: float
    argmax_step: int
    cap_constant: float
    passed: bool


def increment_audit(states: np.ndarray, field: ScoreField,
                    sched: NoiseSchedule, grid: StepGrid,
                    diam: float) -> IncrementAuditReport:
    """Mid-step increment audit of the interpolation process.

    Within step k the interpolation is an explicit linear map of the stored
    state plus independent noise, so the mid-step mean-square increment is
    computable from the stored states alone:

        E|Ybar_mid - Y_k|^2 = (e^a - 1)^2 E|Y_k + 2 s_k|^2 + (e^{2a} - 1) d,

    with ``a`` the rate integral over the half step.  The audit compares this
    against ``L0 beta_{T-t_k} gamma_k`` with ``L0 = 64 d + 20544 (1+diam)^2``.
    """
    states = np.asarray(states)
    d = states.shape[-1]
    T = sched.T
    L0 = 64.0 * d + 20544.0 * (1.0 + diam) ** 2
    worst, arg = -math.inf, 0
    for k in range(grid.K):
        t_k, t_next = grid.ts[k], grid.ts[k + 1]
        t_mid = 0.5 * (t_k + t_next)
        a = sched.integral(T - t_mid, T - t_k)
        beta = float(sched.beta(T - t_k))
        drift = states[k] + 2.0 * field.score(T - t_k, states[k])
        lhs = math.expm1(a) ** 2 * float((drift**2).sum(-1).mean()) \
            + math.expm1(2.0 * a) * d
        ratio = lhs / (L0 * beta * (t_next - t_k))
        if ratio > worst:
            worst, arg = ratio, k
    return IncrementAuditReport(worst_ratio=float(worst), argmax_step=arg,
                                cap_constant=L0, passed=bool(worst <= 1.0))
