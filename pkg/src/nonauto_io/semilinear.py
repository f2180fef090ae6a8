"""Mild solutions of x' = A(t) x + f(t, x) + forcing(t), Lipschitz ledgers, blow-up detection."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidStateError, NoContractionError
from .operator_core import CheckResult, Stepper, ValidationReport

BLOW_UP_THRESHOLD = 1e12
DEFAULT_SEED = 20240601


@dataclass(frozen=True)
class LipschitzLedger:
    """Continuous, non-decreasing piecewise-linear rho -> L_rho."""

    rho_grid: np.ndarray
    values: np.ndarray

    def __call__(self, rho):
        g, v = self.rho_grid, self.values
        rho = float(rho)
        if rho <= g[-1]:
            return float(np.interp(rho, g, v))
        slope = 0.0 if len(g) < 2 else max(0.0, (v[-1] - v[-2]) / (g[-1] - g[-2]))
        return float(v[-1] + slope * (rho - g[-1]))


def constant_ledger(value):
    return LipschitzLedger(np.array([0.0, 1.0]), np.array([float(value)] * 2))


@dataclass(frozen=True)
class Nonlinearity:
    """f(t, x) with a ledger of Lipschitz constants on bounded sets."""

    apply: Callable[[float, np.ndarray], np.ndarray]
    lipschitz_ledger: Optional[Callable[[float], float]] = None
    vanishes_at_zero: bool = True
    dim: Optional[int] = None
    is_zero: bool = False

    def __call__(self, t, x):
        return np.asarray(self.apply(t, x), dtype=float)

    def validate(self, dim=None, family=None, rho_grid=None, pairs=200, times=None, seed=0):
        dim = dim or self.dim
        rng = np.random.default_rng(seed)
        norm = family.norm if family is not None else np.linalg.norm
        checks = []
        times = np.linspace(0.0, 5.0, 20) if times is None else np.asarray(times)
        if self.vanishes_at_zero:
            worst = max(norm(self(t, np.zeros(dim))) for t in times)
            checks.append(CheckResult("vanishes_at_zero", worst <= 1e-12, worst))
        if self.lipschitz_ledger is not None:
            grid = np.linspace(0.1, 10.0, 50) if rho_grid is None else np.asarray(rho_grid)
            vals = np.array([self.lipschitz_ledger(r) for r in grid])
            drop = float(max(0.0, -np.min(np.diff(vals)))) if len(vals) > 1 else 0.0
            checks.append(CheckResult("ledger_monotone", drop == 0.0, drop))
            worst = 0.0
            for _ in range(pairs):
                rho = float(rng.choice(grid))
                t, x = _admissible_point(rng, dim, rho, norm)
                _, y = _admissible_point(rng, dim, rho - t, norm, t_fixed=0.0)
                d = norm(x - y)
                if d == 0:
                    continue
                ratio = norm(self(t, x) - self(t, y)) / d
                worst = max(worst, ratio / max(self.lipschitz_ledger(rho), 1e-300))
            checks.append(CheckResult("empirical_lipschitz", worst <= 1 + 1e-9,
                                      max(0.0, worst - 1.0)))
        return ValidationReport(checks)


def zero_nonlinearity(dim=None):
    return Nonlinearity(lambda t, x: np.zeros_like(x, dtype=float), constant_ledger(0.0),
                        True, dim, is_zero=True)


def linear_nonlinearity(matrix, lipschitz=None):
    """f(t, x) = K x with a constant ledger (Euclidean operator norm unless given)."""
    k = np.asarray(matrix, dtype=float)
    lip = float(np.linalg.norm(k, 2)) if lipschitz is None else float(lipschitz)
    return Nonlinearity(lambda t, x: k @ x, constant_ledger(lip), True, k.shape[0])


@dataclass
class Trajectory:
    grid: np.ndarray
    states: np.ndarray
    outputs: Optional[np.ndarray] = None
    inputs: Optional[np.ndarray] = None
    max_time: Optional[float] = None
    blew_up: bool = False
    inner_product: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.grid.ndim != 1 or np.any(np.diff(self.grid) <= 0):
            raise InvalidStateError("trajectory grid must be strictly increasing")
        if self.states.shape[0] != self.grid.size:
            raise InvalidStateError("one state per grid point is required")
        if self.blew_up and self.max_time is None:
            raise InvalidStateError("a blown-up trajectory must record its maximal time")

    def norms(self):
        g = self.inner_product
        s = self.states
        if g is None:
            return np.linalg.norm(s, axis=1)
        g = np.asarray(g)
        q = np.einsum("ij,ij->i", s * g, s) if g.ndim == 1 else np.einsum("ij,ij->i", s @ g, s)
        return np.sqrt(np.maximum(q, 0.0))

    @property
    def dt(self):
        return float(self.grid[1] - self.grid[0]) if self.grid.size > 1 else 0.0


def time_grid(s, t_end, dt):
    k = int(np.floor((t_end - s) / dt + 1e-9))
    return s + dt * np.arange(k + 1)


def _admissible_point(rng, dim, rho, norm, t_fixed=None):
    """Random (t, x) with t + ||x|| <= rho."""
    rho = max(float(rho), 0.0)
    if t_fixed is not None:
        t = t_fixed
    else:
        t = 0.0 if rng.uniform() < 0.5 else rng.uniform(0.0, 0.5 * rho)
    d = rng.normal(size=dim)
    nd = norm(d)
    r = rho - t
    if rng.uniform() < 0.5:
        r *= rng.uniform() ** (1.0 / max(dim, 1))
    return t, (d / nd * r if nd > 0 else d)


def solve_mild(family, f, forcing, s, x_s, t_end, dt, method="auto", scheme="euler",
               threshold=BLOW_UP_THRESHOLD):
    """Exponential integrator for the mild formulation.

    ``scheme="euler"``:  x+ = E x + h E_half (f(tau, x) + forcing(tau)),
    ``scheme="rk2"`` adds the two-stage correction (h/2) E_half (f(t+, a) - f(t, x)).
    ``forcing`` may be None.  Integration stops once ||x|| > threshold.
    """
    x = np.array(x_s, dtype=float)
    if x.ndim != 1 or x.shape[0] != family.dim:
        raise InvalidStateError(f"state has shape {x.shape}, expected ({family.dim},)")
    if not dt > 0:
        raise InvalidStateError("dt must be positive")
    grid = time_grid(s, t_end, dt)
    states = np.empty((grid.size, family.dim))
    states[0] = x
    stepper = Stepper(family, dt, method)
    skip_f = f is None or getattr(f, "is_zero", False)
    blew_up, max_time, last = False, None, grid.size - 1
    for k in range(grid.size - 1):
        tau = grid[k] + 0.5 * dt
        load = None
        if not skip_f:
            fx = f(tau, x)
            load = fx
        if forcing is not None:
            fz = forcing(tau)
            load = fz if load is None else load + fz
        a = stepper.step(x, tau, load)
        if scheme == "rk2" and not skip_f:
            a = a + 0.5 * dt * stepper.half(f(grid[k + 1], a) - f(grid[k], x), tau)
        x = a
        states[k + 1] = x
        nx = family.norm(x) if np.all(np.isfinite(x)) else np.inf
        if nx > threshold:
            blew_up, max_time, last = True, float(grid[k + 1]), k + 1
            break
    return Trajectory(grid[: last + 1], states[: last + 1], max_time=max_time, blew_up=blew_up,
                      inner_product=family.inner_product,
                      extras={"method": stepper.method, "scheme": scheme})


def _trapezoid_sweep(stepper, grid, x_s, loads):
    """y_{k+1} = E_k (y_k + h/2 F_k) + h/2 F_{k+1}; composite trapezoid of the convolution."""
    h = stepper.h
    out = np.empty((grid.size, x_s.size))
    out[0] = x_s
    y = x_s
    for k in range(grid.size - 1):
        tau = grid[k] + 0.5 * h
        if loads is None:
            y = stepper.step(y, tau)
        else:
            y = stepper.step(y + 0.5 * h * loads[k], tau) + 0.5 * h * loads[k + 1]
        out[k + 1] = y
    return out


def picard_refine(family, f, forcing, s, x_s, t_end, dt, iterations, method="auto"):
    """Fixed-point iteration on the integral equation, trapezoidal quadrature."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    x_s = np.asarray(x_s, dtype=float)
    grid = time_grid(s, t_end, dt)
    stepper = Stepper(family, dt, method)
    current = _trapezoid_sweep(stepper, grid, x_s, None)
    forcing_vals = None
    if forcing is not None:
        forcing_vals = np.array([forcing(t) for t in grid])
    diffs = []
    prev_size = float(np.max(family.norms(current)))
    for _ in range(iterations):
        loads = np.array([f(t, xk) for t, xk in zip(grid, current)])
        if forcing_vals is not None:
            loads = loads + forcing_vals
        nxt = _trapezoid_sweep(stepper, grid, x_s, loads)
        size = float(np.max(family.norms(nxt))) if np.all(np.isfinite(nxt)) else np.inf
        if size > 1e6 * max(prev_size, 1e-300) and size > 1e-12:
            raise NoContractionError(f"iterate norm grew from {prev_size!r} to {size!r}")
        diffs.append(float(np.max(family.norms(nxt - current))))
        current, prev_size = nxt, size
    return Trajectory(grid, current, inner_product=family.inner_product,
                      extras={"sweep_differences": diffs})


def _jacobian(f, t, x, eps):
    fx = f(t, x)
    jac = np.empty((fx.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = eps
        jac[:, j] = (f(t, x + e) - f(t, x - e)) / (2 * eps)
    return jac


def make_ledger_from_samples(f, rho_grid, samples_per_rho, dim=None, family=None,
                             seed=DEFAULT_SEED, jacobian_probes=None):
    """Estimate L_rho on {t + ||x|| <= rho} by sampled difference quotients.

    Besides random pairs, each rho gets a few pairs aligned with the dominant
    singular direction of a finite-difference Jacobian, which finds the worst
    ratio of linear parts that random pairs miss in high dimension.
    """
    dim = dim or getattr(f, "dim", None)
    if dim is None:
        raise ValueError("state dimension is required")
    grid = np.asarray(rho_grid, dtype=float)
    if grid.ndim != 1 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("rho_grid must be increasing and positive")
    rng = np.random.default_rng(seed)
    norm = family.norm if family is not None else np.linalg.norm
    if jacobian_probes is None:
        jacobian_probes = min(4, samples_per_rho) if dim <= 256 else 0
    est = np.zeros(grid.size)
    for i, rho in enumerate(grid):
        best = 0.0
        for _ in range(samples_per_rho):
            t, x = _admissible_point(rng, dim, rho, norm)
            _, y = _admissible_point(rng, dim, rho - t, norm, t_fixed=0.0)
            d = norm(x - y)
            if d > 0:
                best = max(best, norm(f(t, x) - f(t, y)) / d)
        for _ in range(jacobian_probes):
            t, x = _admissible_point(rng, dim, rho, norm)
            eps = 1e-6 * (1.0 + norm(x))
            jac = _jacobian(f, t, x, eps)
            if family is not None:
                r = family.gram_factor()
                scaled = (r[:, None] * jac) / r[None, :] if r.ndim == 1 else r @ jac @ np.linalg.inv(r)
            else:
                scaled = jac
            _, _, vt = np.linalg.svd(scaled)
            v = vt[0]
            if family is not None:
                r = family.gram_factor()
                v = v / r if r.ndim == 1 else np.linalg.solve(r, v)
            step = 1e-3 * rho / max(norm(v), 1e-300)
            y = x + step * v
            if norm(x - step * v) < norm(y):
                y = x - step * v
            if norm(y) + t > rho:
                y = x * (1 - 1e-3)
            d = norm(x - y)
            if d > 0:
                best = max(best, norm(f(t, x) - f(t, y)) / d)
        est[i] = best
    return LipschitzLedger(grid, np.maximum.accumulate(est))
