"""Passivity residuals, stability bounds, Gronwall estimates and mollified limits."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .boundary_io import estimate_phi_bound_boundary, simulate_boundary
from .comparison import build_ugs_gains
from .distributed_io import estimate_phi_bound, simulate
from .errors import BlowUpInLimitError, IncompleteTrajectoryError, InvalidParameterError
from .operator_core import estimate_growth_bound
from .semilinear import (
    DEFAULT_SEED,
    LipschitzLedger,
    _admissible_point,
    constant_ledger,
    make_ledger_from_samples,
)
from .signals import Signal, l2_norm_running, zero_signal
from .storage import quadratic_storage

GRONWALL_SLACK = 1.1
UGS_SLACK = 0.05
_RHO_GRID = np.geomspace(1e-2, 1e3, 16)


def _trapz(grid, vals):
    vals = np.asarray(vals, dtype=float)
    return float(np.sum(0.5 * np.diff(grid) * (vals[1:] + vals[:-1])))


def _l2(grid, samples):
    s = np.asarray(samples, dtype=float).reshape(len(grid), -1)
    return float(np.sqrt(max(_trapz(grid, np.sum(s * s, axis=1)), 0.0)))


# passivity


@dataclass(frozen=True)
class PassivityReport:
    """Discrete balance V(t_k+1) - V(t_k) - int supply on every interval and cumulatively.

    ``max_violation`` is the largest positive residual (0 when the balance
    holds everywhere), so the report passes iff max_violation <= tolerance.
    """

    kind: str
    params: dict
    intervals: np.ndarray
    residuals: np.ndarray
    cumulative: np.ndarray
    max_violation: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.max_violation <= self.tolerance)

    def to_dict(self, series=True):
        out = {"kind": self.kind, "params": dict(self.params),
               "max_violation": self.max_violation, "tolerance": self.tolerance,
               "pass": self.passed,
               "max_interval_residual": float(self.residuals.max(initial=0.0)),
               "final_cumulative_residual": float(self.cumulative[-1])}
        if series:
            out["residuals"] = [[float(a), float(b), float(r)]
                                for (a, b), r in zip(self.intervals, self.residuals)]
            out["cumulative"] = [float(c) for c in self.cumulative]
        return out


def passivity_tolerance(dt, n_cells=None, c=1.0):
    """tol = c (dt + 1/n_cells); the cell term is dropped when n_cells is None or 0."""
    return float(c) * (float(dt) + (1.0 / n_cells if n_cells else 0.0))


def _balance(traj, u, V, supply, kind, params, n_cells, c, tolerance):
    if traj.outputs is None:
        raise IncompleteTrajectoryError("trajectory carries no outputs")
    grid = traj.grid
    if grid.size < 2:
        raise IncompleteTrajectoryError("trajectory needs at least two grid points")
    inputs = traj.inputs if traj.inputs is not None else u.sample(grid)
    inputs = np.asarray(inputs, dtype=float).reshape(grid.size, -1)
    outputs = np.asarray(traj.outputs, dtype=float).reshape(grid.size, -1)
    vs = V.along(grid, traj.states)
    s = supply(inputs, outputs)
    integral = 0.5 * np.diff(grid) * (s[1:] + s[:-1])
    res = np.diff(vs) - integral
    cum = np.concatenate([[0.0], np.cumsum(res)])
    worst = max(0.0, float(res.max()), float(cum.max()))
    tol = passivity_tolerance(traj.dt, n_cells, c) if tolerance is None else float(tolerance)
    return PassivityReport(kind, params, np.column_stack([grid[:-1], grid[1:]]), res, cum,
                           worst, tol)


def check_scattering_passivity(traj, u, V, alpha, beta, n_cells=None, c=1.0, tolerance=None):
    """Residuals of dV <= alpha |u|^2 - beta |y|^2."""
    a, b = float(alpha), float(beta)

    def supply(us, ys):
        return a * np.sum(us * us, axis=1) - b * np.sum(ys * ys, axis=1)

    return _balance(traj, u, V, supply, "scattering", {"alpha": a, "beta": b}, n_cells, c,
                    tolerance)


def check_impedance_passivity(traj, u, V, sigma_min, n_cells=None, c=1.0, tolerance=None):
    """Residuals of dV <= u^T y - sigma |y|^2."""
    sig = float(sigma_min)

    def supply(us, ys):
        return np.sum(us * ys, axis=1) - sig * np.sum(ys * ys, axis=1)

    return _balance(traj, u, V, supply, "impedance", {"sigma_min": sig}, n_cells, c, tolerance)


def scattering_from_impedance(sigma_min):
    """(alpha, beta) = (1/(2 sigma), sigma/2) by Young's inequality."""
    s = float(sigma_min)
    if not s > 0:
        raise InvalidParameterError("sigma_min must be positive")
    return 1.0 / (2.0 * s), 0.5 * s


# stability


@dataclass(frozen=True)
class UgsReport:
    passed: bool
    max_ratio: float
    worst_time: float
    slack: float
    norms: np.ndarray
    bounds: np.ndarray

    def to_dict(self, series=False):
        out = {"kind": "ugs", "pass": self.passed, "max_ratio": self.max_ratio,
               "worst_time": self.worst_time, "slack": self.slack}
        if series:
            out["norms"] = self.norms.tolist()
            out["bounds"] = self.bounds.tolist()
        return out


def check_ugs(traj, x0, u, gains, slack=UGS_SLACK):
    """||x(t)|| <= (1 + slack) (sigma(||x0||) + gamma(||u||_[0,t],2)) at every grid time."""
    grid = traj.grid
    norms = traj.norms()
    x0 = np.asarray(x0, dtype=float)
    g = traj.inner_product
    if g is None:
        n0 = float(np.linalg.norm(x0))
    else:
        g = np.asarray(g, dtype=float)
        n0 = float(np.sqrt(max(x0 @ (g * x0 if g.ndim == 1 else g @ x0), 0.0)))
    inputs = traj.inputs if traj.inputs is not None else u.sample(grid)
    un = l2_norm_running(grid, inputs)
    s0 = gains.sigma(n0)
    bounds = np.array([s0 + gains.gamma(r) for r in un])
    allowed = (1.0 + slack) * bounds
    excess = norms - allowed
    ok = bool(np.all(excess <= 1e-12))
    ratios = np.where(bounds > 0, norms / np.maximum(bounds, 1e-300),
                      np.where(norms > 1e-12, np.inf, 0.0))
    k = int(np.argmax(ratios))
    return UgsReport(ok, float(ratios[k]), float(grid[k]), float(slack), norms, bounds)


# mollification


def _smoothstep(y):
    y = np.clip(y, 0.0, 1.0)
    return y ** 3 * (10.0 - 15.0 * y + 6.0 * y * y)


def _cutoff(t, n):
    """C^2 cutoff: 0 below 1/(2n), 1 on [1/n, n-1], 0 above n."""
    rise = _smoothstep((t - 0.5 / n) * 2.0 * n)
    fall = _smoothstep(n - t)
    return rise * fall


def mollify_input(u, n, horizon=None, points_per_width=40):
    """C^2 compactly supported approximant of u at level n.

    u (extended by zero to t < 0) is convolved with a quintic bump of width
    1/n and multiplied by a C^2 cutoff supported in (1/(2n), n).  The result is
    tabulated on a grid of spacing 1/(points_per_width n) and interpolated by
    a cubic spline; ``horizon`` limits the tabulated range to [0, horizon].
    """
    if not n >= 1:
        raise InvalidParameterError(f"mollification level must be >= 1, got {n!r}")
    n = float(n)
    if getattr(u, "name", "") == "zero":
        return zero_signal(u.dim)
    p = int(points_per_width) + int(points_per_width) % 2
    h = 1.0 / (n * p)
    t_hi = n if horizon is None else min(n, float(horizon) + 1.0 / n)
    m = int(np.ceil(t_hi / h))
    offsets = h * np.arange(-p // 2, p // 2 + 1)
    kernel = _smoothstep(1.0 - 2.0 * n * np.abs(offsets))
    kernel /= kernel.sum()
    s = h * np.arange(-p // 2, m + p // 2 + 1)
    samples = np.array([u(si) if si >= 0 else np.zeros(u.dim) for si in s]).reshape(-1, u.dim)
    conv = np.column_stack([np.convolve(samples[:, j], kernel[::-1], mode="valid")
                            for j in range(u.dim)])
    t = h * np.arange(m + 1)
    vals = conv * _cutoff(t, n)[:, None]
    spline = CubicSpline(t, vals, axis=0)
    dspline = spline.derivative()
    zero = np.zeros(u.dim)
    t_end = t[-1]

    def value(tt):
        if tt <= 0.0 or tt >= n:
            return zero
        return spline(min(tt, t_end))

    def derivative(tt):
        if tt <= 0.0 or tt >= n or tt > t_end:
            return zero
        return dspline(tt)

    return Signal(value, u.dim, derivative, name="mollified",
                  params={"level": n, "source": getattr(u, "name", "signal")})


# constants for the continuity estimates


@dataclass(frozen=True)
class EstimateConstants:
    """Sampled (lower-bound) constants entering the Gronwall-type estimates."""

    horizon: float
    growth: object
    phi: object
    ledger: object
    gains: object
    storage: object
    alpha: Optional[float]
    beta: Optional[float]
    k_rho: object
    trials: int

    @property
    def sup_factor(self):
        return self.growth.sup_factor

    @property
    def c_phi(self):
        return self.phi.value

    def rho(self, x01, u1, x02, u2):
        """sigma(|x01|) + gamma(|u1|) + sigma(|x02|) + gamma(|u2|)."""
        if self.gains is None:
            return 0.0
        s, g = self.gains.sigma, self.gains.gamma
        return s(x01) + g(u1) + s(x02) + g(u2)

    def to_dict(self):
        return {"horizon": self.horizon, "growth": self.growth.to_dict(),
                "sup_factor": self.sup_factor, "c_phi": self.phi.to_dict(),
                "alpha": self.alpha, "beta": self.beta, "trials": self.trials}


def estimate_k_rho(storage, rho_grid=None, samples=40, seed=DEFAULT_SEED):
    """Sampled sup of ||dV(t, x)|| over t + ||x|| <= rho, made monotone by a running max."""
    grid = _RHO_GRID if rho_grid is None else np.asarray(rho_grid, dtype=float)
    rng = np.random.default_rng(seed)
    n = storage.dim
    est = np.zeros(grid.size)
    for i, rho in enumerate(grid):
        best = 0.0
        for j in range(samples):
            if j == 0:
                d = rng.normal(size=n)
                t, x = 0.0, d * rho / storage.norm(d)
            else:
                t, x = _admissible_point(rng, n, rho, storage.norm)
            best = max(best, storage.derivative_norm(t, x))
        est[i] = best
    return LipschitzLedger(grid, np.maximum.accumulate(est))


def _ledger_of(system, seed):
    f = system.f
    if f is None or getattr(f, "is_zero", False):
        return constant_ledger(0.0)
    if f.lipschitz_ledger is not None:
        return f.lipschitz_ledger
    return make_ledger_from_samples(f, _RHO_GRID, 40, dim=system.dim, family=system.family,
                                    seed=seed)


def estimate_constants(system, horizon, storage=None, alpha=None, beta=None, trials=8,
                       dt=None, seed=DEFAULT_SEED, method="auto"):
    """Growth bound, input-map bound, Lipschitz ledger, UGS gains and K_rho on [0, horizon]."""
    dt = horizon / 200.0 if dt is None else dt
    growth = estimate_growth_bound(system.family, horizon, trials=trials, dt=dt, seed=seed,
                                   method=method)
    if system.kind == "boundary":
        phi = estimate_phi_bound_boundary(system, horizon, trials=trials, dt=dt, seed=seed,
                                          method=method)
    else:
        phi = estimate_phi_bound(system, horizon, trials=trials, dt=dt, seed=seed, method=method)
    ledger = _ledger_of(system, seed)
    storage = quadratic_storage(system.family) if storage is None else storage
    gains = None if alpha is None else build_ugs_gains(storage.lower, storage.upper, alpha)
    k_rho = estimate_k_rho(storage, seed=seed)
    return EstimateConstants(float(horizon), growth, phi, ledger, gains, storage,
                             None if alpha is None else float(alpha),
                             None if beta is None else float(beta), k_rho, int(trials))


def gronwall_solution_bound(constants, dx0, du, rho, t0):
    """(S |dx0| + C |du|) exp(S L_{t0 + rho} t0) with S = sup M e^{omega t}."""
    s = constants.sup_factor
    lip = constants.ledger(t0 + rho)
    with np.errstate(over="ignore"):
        factor = float(np.exp(s * lip * t0))
    return (s * dx0 + constants.c_phi * du) * factor


def output_bound(constants, dx0, du, dx_sup, rho, t0):
    """psi_upper(|dx0|) + alpha |du|^2 + 2 K_rho L_rho |dx|_inf t0 at rho' = t0 + rho."""
    r = t0 + rho
    m_rho = constants.k_rho(r) * constants.ledger(r)
    return constants.storage.upper(dx0) + constants.alpha * du ** 2 + 2.0 * m_rho * dx_sup * t0


def simulate_any(system, x0, u, t_end, dt, method="auto", scheme="euler"):
    if system.kind == "boundary":
        return simulate_boundary(system, x0, u, t_end, dt, method=method, scheme=scheme)
    return simulate(system, x0, u, t_end, dt, method=method, scheme=scheme)


# pairwise Gronwall check


@dataclass(frozen=True)
class GronwallReport:
    measured: float
    predicted: float
    slack: float
    dx0: float
    du: float
    rho: float
    reestimated: bool = False
    failure_kind: Optional[str] = None

    @property
    def ratio(self):
        if self.predicted > 0:
            return self.measured / self.predicted
        return 0.0 if self.measured <= 1e-14 else float("inf")

    @property
    def passed(self):
        return bool(self.measured <= self.slack * self.predicted + 1e-14)

    def to_dict(self):
        return {"kind": "gronwall_pair", "measured": self.measured, "predicted": self.predicted,
                "ratio": self.ratio, "slack": self.slack, "dx0": self.dx0, "du": self.du,
                "rho": self.rho, "reestimated": self.reestimated,
                "failure_kind": self.failure_kind, "pass": self.passed}


def _pair_quantities(system, tr1, tr2, u1, u2):
    grid = tr1.grid
    fam = system.family
    dx0 = fam.norm(tr1.states[0] - tr2.states[0])
    us1, us2 = u1.sample(grid), u2.sample(grid)
    du = _l2(grid, us1 - us2)
    dx = float(np.max(fam.norms(tr1.states - tr2.states)))
    return dx0, du, dx, fam.norm(tr1.states[0]), _l2(grid, us1), fam.norm(tr2.states[0]), \
        _l2(grid, us2)


def _check_blowup(traj, label):
    if traj.blew_up:
        raise BlowUpInLimitError(f"{label} blew up at t={traj.max_time}")


def gronwall_pair_check(system, datum1, datum2, t0, dt, constants=None, storage=None, alpha=None,
                        slack=GRONWALL_SLACK, trials=8, seed=DEFAULT_SEED, method="auto",
                        scheme="euler"):
    """Sup-norm gap of two solutions against the Gronwall prediction.

    Both data must already be classical.  When the sampled constants give a
    bound that is exceeded, they are re-estimated with four times the trials
    before the check is declared failed.
    """
    (x01, u1), (x02, u2) = datum1, datum2
    tr1 = simulate_any(system, x01, u1, t0, dt, method, scheme)
    tr2 = simulate_any(system, x02, u2, t0, dt, method, scheme)
    _check_blowup(tr1, "first solution")
    _check_blowup(tr2, "second solution")
    dx0, du, dx, n1, un1, n2, un2 = _pair_quantities(system, tr1, tr2, u1, u2)
    if constants is None:
        constants = estimate_constants(system, t0, storage, alpha, trials=trials, seed=seed,
                                       method=method)
    rho = constants.rho(n1, un1, n2, un2)
    pred = gronwall_solution_bound(constants, dx0, du, rho, t0)
    pred = float(pred)
    rep = GronwallReport(dx, pred, slack, dx0, du, rho)
    if rep.passed:
        return rep
    more = estimate_constants(system, t0, constants.storage, constants.alpha, constants.beta,
                              trials=4 * constants.trials, seed=seed + 1, method=method)
    pred = max(pred, float(gronwall_solution_bound(more, dx0, du, rho, t0)))
    ok = dx <= slack * pred + 1e-14
    kind = "constant_estimate_insufficiency" if ok else "violation_beyond_slack"
    return GronwallReport(dx, pred, slack, dx0, du, rho, True, kind)


# limit process


@dataclass(frozen=True)
class WellPosednessReport:
    levels: list
    solution_gaps: list
    output_gaps: list
    gronwall_bounds: list
    output_lhs: list
    output_bounds: list
    decreasing: bool
    within_gronwall: bool
    within_output: bool
    reestimated: bool = False
    failure_kind: Optional[str] = None
    constants: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.decreasing and self.within_gronwall and self.within_output)

    def to_dict(self):
        return {"kind": "wellposedness", "levels": list(self.levels),
                "solution_gaps": list(self.solution_gaps), "output_gaps": list(self.output_gaps),
                "gronwall_bounds": list(self.gronwall_bounds),
                "output_lhs": list(self.output_lhs), "output_bounds": list(self.output_bounds),
                "decreasing": self.decreasing, "within_gronwall": self.within_gronwall,
                "within_output": self.within_output, "reestimated": self.reestimated,
                "failure_kind": self.failure_kind, "constants": dict(self.constants),
                "pass": self.passed}


def _strictly_decreasing(gaps, floor=1e-12):
    return all(b < a or (a <= floor and b <= floor) for a, b in zip(gaps, gaps[1:]))


def wellposedness_convergence(system, x0, u, levels, t0, dt, storage=None, alpha=None,
                              beta=None, constants=None, slack=GRONWALL_SLACK, trials=8,
                              seed=DEFAULT_SEED, method="auto", scheme="euler"):
    """Simulate classical approximations (mollified u, projected x0) at increasing levels.

    Consecutive solution gaps are compared with the Gronwall solution
    estimate and beta-weighted output gaps with the output estimate.
    """
    levels = [float(n) for n in levels]
    if len(levels) < 2 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise InvalidParameterError("levels must be increasing with at least two entries")
    runs = []
    for n in levels:
        un = mollify_input(u, n, horizon=t0)
        xn, un = system.prepare_datum(x0, un)
        traj = simulate_any(system, xn, un, t0, dt, method, scheme)
        _check_blowup(traj, f"level {n:g}")
        runs.append((traj, un))
    if constants is None:
        constants = estimate_constants(system, t0, storage, alpha, beta, trials=trials,
                                       seed=seed, method=method)
    if constants.alpha is None or constants.beta is None:
        raise InvalidParameterError("the output estimate needs alpha and beta")

    def evaluate(const):
        sols, outs, gb, lhs, ob = [], [], [], [], []
        for (t1, u1), (t2, u2) in zip(runs, runs[1:]):
            dx0, du, dx, n1, un1, n2, un2 = _pair_quantities(system, t1, t2, u1, u2)
            rho = const.rho(n1, un1, n2, un2)
            dy = _l2(t1.grid, t1.outputs - t2.outputs)
            sols.append(dx)
            outs.append(dy)
            gb.append(float(gronwall_solution_bound(const, dx0, du, rho, t0)))
            lhs.append(float(const.beta * dy * dy))
            ob.append(float(output_bound(const, dx0, du, dx, rho, t0)))
        return sols, outs, gb, lhs, ob

    sols, outs, gb, lhs, ob = evaluate(constants)
    within_g = all(s <= slack * b + 1e-14 for s, b in zip(sols, gb))
    within_o = all(a <= b + 1e-14 for a, b in zip(lhs, ob))
    reestimated, kind = False, None
    if not (within_g and within_o):
        more = estimate_constants(system, t0, constants.storage, constants.alpha, constants.beta,
                                  trials=4 * constants.trials, seed=seed + 1, method=method)
        _, _, gb2, _, ob2 = evaluate(more)
        gb = [max(a, b) for a, b in zip(gb, gb2)]
        ob = [max(a, b) for a, b in zip(ob, ob2)]
        within_g = all(s <= slack * b + 1e-14 for s, b in zip(sols, gb))
        within_o = all(a <= b + 1e-14 for a, b in zip(lhs, ob))
        reestimated = True
        kind = ("constant_estimate_insufficiency" if within_g and within_o
                else "violation_beyond_slack")
    return WellPosednessReport([int(n) if n.is_integer() else n for n in levels], sols, outs, gb,
                               lhs, ob, _strictly_decreasing(sols), within_g, within_o,
                               reestimated, kind, constants.to_dict())
