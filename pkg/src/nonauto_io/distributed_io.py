"""Systems x' = A(t) x + f(t, x) + B(t) u,  y = C(t) x with bounded B(t), C(t)."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidSpecError, InvalidStateError
from .operator_core import CheckResult, Stepper, ValidationReport, _step_count
from .semilinear import (
    DEFAULT_SEED,
    LipschitzLedger,
    Nonlinearity,
    _trapezoid_sweep,
    solve_mild,
    zero_nonlinearity,
)
from .signals import l2_norm_running, random_smooth_signal

COLLOCATION_TOL = 1e-12


def _is_zero_signal(u):
    return getattr(u, "name", "") == "zero"


@dataclass(frozen=True)
class DistributedIoSystem:
    """Bounded input/output operators on top of an OperatorFamily."""

    family: object
    b_at: Callable[[float], np.ndarray]
    c_at: Callable[[float], np.ndarray]
    f: Nonlinearity = None
    input_dim: int = 1
    b_constant: bool = False
    name: str = "distributed"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.f is None:
            object.__setattr__(self, "f", zero_nonlinearity(self.family.dim))

    kind = "distributed"

    @property
    def dim(self):
        return self.family.dim

    def input_operator_at(self, t):
        return np.asarray(self.b_at(t), dtype=float).reshape(self.dim, self.input_dim)

    def output_operator_at(self, t):
        return np.asarray(self.c_at(t), dtype=float).reshape(self.input_dim, self.dim)

    def output(self, t, x):
        return self.output_operator_at(t) @ x

    def adjoint_input(self, t):
        """B(t)^* with respect to the state inner product (U carries the Euclidean one)."""
        return self.family.gram_apply(self.input_operator_at(t)).T

    def with_nonlinearity(self, f):
        return DistributedIoSystem(self.family, self.b_at, self.c_at, f, self.input_dim,
                                   self.b_constant, self.name, dict(self.meta))

    def validate(self, times=None, pairs=50, seed=0):
        """Sampled local Lipschitz check of t -> B(t)."""
        times = np.linspace(0.0, 5.0, 51) if times is None else np.asarray(times, dtype=float)
        bs = [self.input_operator_at(t) for t in times]
        slopes = [np.linalg.norm(b1 - b0, 2) / (t1 - t0)
                  for (t0, b0), (t1, b1) in zip(zip(times, bs), zip(times[1:], bs[1:]))]
        worst = float(max(slopes)) if slopes else 0.0
        return ValidationReport([CheckResult("b_lipschitz", np.isfinite(worst), worst,
                                             f"max finite-difference slope {worst:.6g}")],
                                ["measurability of t -> C(t) x(t) follows from continuity"])

    def prepare_datum(self, x0, u):
        return np.asarray(x0, dtype=float), u

    def forcing(self, u):
        if _is_zero_signal(u):
            return None
        return lambda t: self.input_operator_at(t) @ u(t)


def simulate(system, x0, u, t_end, dt, method="auto", scheme="euler", threshold=None):
    """Mild solution with forcing B(t) u(t); outputs y_k = C(t_k) x_k."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dim,):
        raise InvalidStateError(f"initial state has shape {x0.shape}, expected ({system.dim},)")
    kw = {} if threshold is None else {"threshold": threshold}
    traj = solve_mild(system.family, system.f, system.forcing(u), 0.0, x0, t_end, dt,
                      method=method, scheme=scheme, **kw)
    traj.outputs = np.array([system.output(t, x) for t, x in zip(traj.grid, traj.states)])
    traj.inputs = u.sample(traj.grid)
    return traj


def _uniform_grid(t, dt):
    k = _step_count(t, dt)
    return np.linspace(0.0, t, k + 1)


def input_map_phi(system, u, t, dt=1e-3, method="auto"):
    """Phi_t(u) = int_0^t T(t,s) B(s) u(s) ds by the composite trapezoid rule."""
    if t <= 0 or _is_zero_signal(u):
        return np.zeros(system.dim)
    grid = _uniform_grid(t, dt)
    stepper = Stepper(system.family, grid[1] - grid[0], method)
    loads = np.array([system.input_operator_at(s) @ u(s) for s in grid])
    return _trapezoid_sweep(stepper, grid, np.zeros(system.dim), loads)[-1]


@dataclass(frozen=True)
class PhiBound:
    """Sampled estimate of C_{t0} = sup_{t <= t0} ||Phi_t||; a lower bound on the true value."""

    value: float
    horizon: float
    trials: int
    sampled: float
    gramian: float
    lower_bound: bool = True

    def to_dict(self):
        return {"value": self.value, "horizon": self.horizon, "trials": self.trials,
                "sampled": self.sampled, "gramian": self.gramian,
                "is_lower_bound": self.lower_bound}


def _gramian_bound(family, input_at, grid, stepper):
    """max_k sqrt(lambda_max(G S_k)) with S_k the trapezoidal reachability gramian at t_k."""
    n = family.dim
    h = stepper.h
    z = np.zeros((n, n))
    best = 0.0
    g = family.gram_matrix()
    for k in range(grid.size - 1):
        b = input_at(grid[k])
        w = 0.5 * h if k == 0 else h
        z = z + w * (b @ b.T)
        tau = grid[k] + 0.5 * h
        z = stepper.step(stepper.step(z, tau).T, tau).T
        bn = input_at(grid[k + 1])
        s = z + 0.5 * h * (bn @ bn.T)
        s = 0.5 * (s + s.T)
        lam = float(np.max(np.real(np.linalg.eigvals(g @ s))))
        best = max(best, np.sqrt(max(lam, 0.0)))
    return best


def phi_bound_generic(family, input_at, input_dim, phi_of, horizon, trials, dt, seed,
                      method="auto", gramian=True):
    """Shared estimator; ``phi_of(u, grid, stepper)`` returns Phi on the whole grid."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = _uniform_grid(horizon, dt)
    stepper = Stepper(family, grid[1] - grid[0], method)
    rng = np.random.default_rng(seed)
    sampled = 0.0
    max_freq = max(2.0, 2.0 / horizon)
    for _ in range(trials):
        u = random_smooth_signal(rng, input_dim, modes=4, max_frequency=max_freq)
        phis = phi_of(u, grid, stepper)
        un = l2_norm_running(grid, u.sample(grid))
        ok = un > 1e-12
        if ok.any():
            sampled = max(sampled, float(np.max(family.norms(phis[ok]) / un[ok])))
    gram = _gramian_bound(family, input_at, grid, stepper) if gramian else 0.0
    return PhiBound(max(sampled, gram), float(horizon), int(trials), sampled, gram)


def estimate_phi_bound(system, horizon, trials=8, dt=None, seed=DEFAULT_SEED, method="auto",
                       gramian=True):
    """Lower estimate of C_{t0}: random band-limited inputs plus the discrete gramian."""
    dt = horizon / 400.0 if dt is None else dt

    def phi_of(u, grid, stepper):
        loads = np.array([system.input_operator_at(s) @ u(s) for s in grid])
        return _trapezoid_sweep(stepper, grid, np.zeros(system.dim), loads)

    return phi_bound_generic(system.family, system.input_operator_at, system.input_dim, phi_of,
                             horizon, trials, dt, seed, method, gramian)


@dataclass(frozen=True)
class CollocatedSpec:
    """Open loop with C(t) = B(t)^* M(t) and a static damping controller g."""

    base: DistributedIoSystem
    g: Callable[[np.ndarray], np.ndarray]
    damping_constant: float
    g_lipschitz: Optional[Callable[[float], float]] = None

    def validate(self, times=None, samples=500, seed=0):
        times = np.linspace(0.0, 5.0, 50) if times is None else np.asarray(times, dtype=float)
        base = self.base
        rng = np.random.default_rng(seed)
        fam = base.family
        col = 0.0
        for t in times:
            c = base.output_operator_at(t)
            target = base.adjoint_input(t) @ fam.m_matrix(t)
            col = max(col, float(np.abs(c - target).max()) / max(1.0, np.abs(c).max()))
        checks = [CheckResult("collocation", col <= COLLOCATION_TOL, col)]
        k = base.input_dim
        worst = 0.0
        for _ in range(samples):
            y = rng.normal(size=k) * 10.0 ** rng.uniform(-3, 3)
            gy = np.asarray(self.g(y), dtype=float)
            gap = self.damping_constant * float(y @ y) - float(y @ gy)
            worst = max(worst, gap / max(float(y @ y), 1e-300))
        checks.append(CheckResult("damping", worst <= 1e-12, max(worst, 0.0)))
        g0 = float(np.linalg.norm(self.g(np.zeros(k))))
        checks.append(CheckResult("g_vanishes_at_zero", g0 <= 1e-14, g0))
        ratios = []
        for _ in range(100):
            y1, y2 = rng.uniform(-10, 10, size=(2, k))
            d = np.linalg.norm(y1 - y2)
            if d > 0:
                ratios.append(np.linalg.norm(np.asarray(self.g(y1)) - np.asarray(self.g(y2))) / d)
        lip = float(max(ratios)) if ratios else 0.0
        checks.append(CheckResult("g_locally_lipschitz", bool(np.isfinite(lip)), lip))
        if self.damping_constant <= 0:
            checks.append(CheckResult("damping_positive", False, -self.damping_constant))
        return ValidationReport(checks)


def _collocated_ledger(spec, rho_grid):
    """L_rho <= sup_{t<=rho} ||B(t)|| ||C(t)|| L_g(sup ||C|| rho)."""
    base = spec.base
    fam = base.family
    r = fam.gram_factor()
    r_inv = None if r.ndim == 1 else np.linalg.inv(r)
    vals = []
    for rho in rho_grid:
        bn = cn = 0.0
        for t in np.linspace(0.0, rho, 21):
            b = base.input_operator_at(t)
            c = base.output_operator_at(t)
            if r.ndim == 1:
                bs, cs = r[:, None] * b, c / r[None, :]
            else:
                bs, cs = r @ b, c @ r_inv
            bn = max(bn, float(np.linalg.norm(bs, 2)))
            cn = max(cn, float(np.linalg.norm(cs, 2)))
        vals.append(bn * cn * float(spec.g_lipschitz(cn * rho)))
    return LipschitzLedger(np.asarray(rho_grid, dtype=float), np.maximum.accumulate(vals))


def build_collocated_closed_loop(spec, validate=True, rho_grid=None):
    """Closed loop with f(t, x) = -B(t) g(C(t) x) and the same B, C."""
    if validate:
        rep = spec.validate()
        if not rep.passed:
            bad = [c.name for c in rep.checks if not c.passed]
            raise InvalidSpecError(f"collocated spec violates {', '.join(bad)}")
    base = spec.base
    g = spec.g

    def apply(t, x):
        return -base.input_operator_at(t) @ np.asarray(g(base.output(t, x)), dtype=float)

    ledger = None
    if spec.g_lipschitz is not None:
        grid = np.geomspace(1e-2, 1e3, 26) if rho_grid is None else rho_grid
        ledger = _collocated_ledger(spec, grid)
    f = Nonlinearity(apply, ledger, True, base.dim)
    meta = dict(base.meta)
    meta.update({"controller": "static", "damping_constant": float(spec.damping_constant)})
    return DistributedIoSystem(base.family, base.b_at, base.c_at, f, base.input_dim,
                               base.b_constant, base.name + "+static", meta)

