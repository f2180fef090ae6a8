"""Nonlinear dynamic controllers and their interconnection with boundary pH systems."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .boundary_io import BoundaryIoSystem
from .errors import InvalidInterconnectionError, InvalidSpecError, InvalidStateError
from .operator_core import CheckResult, OperatorFamily, ValidationReport, memo_recent
from .semilinear import Nonlinearity, make_ledger_from_samples

GRAD_REL_TOL = 1e-5


@dataclass(frozen=True)
class DynamicController:
    """v1' = K v2,  v2' = -grad P(v1) - R_c(t, K v2) + B_c u_c,  y_c = B_c^T K v2 + S_c u_c."""

    K_c: np.ndarray
    B_c: np.ndarray
    S_c: np.ndarray
    potential: Callable[[np.ndarray], float]
    grad_potential: Callable[[np.ndarray], np.ndarray]
    damping: Callable[[float, np.ndarray], np.ndarray]
    potential_envelopes: Optional[tuple] = None
    name: str = "dynamic"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for attr in ("K_c", "B_c", "S_c"):
            object.__setattr__(self, attr, np.atleast_2d(np.asarray(getattr(self, attr), dtype=float)))

    @property
    def m_c(self):
        return self.K_c.shape[0]

    @property
    def input_dim(self):
        return self.B_c.shape[1]

    @property
    def sigma_min(self):
        return float(np.linalg.eigvalsh(0.5 * (self.S_c + self.S_c.T)).min())

    def validate(self, samples=200, seed=0, times=None):
        rng = np.random.default_rng(seed)
        mc, k = self.m_c, self.input_dim
        times = np.linspace(0.0, 5.0, 11) if times is None else times
        checks = []
        kc = self.K_c
        sym = float(np.abs(kc - kc.T).max())
        kmin = float(np.linalg.eigvalsh(0.5 * (kc + kc.T)).min())
        checks.append(CheckResult("K_c_spd", sym <= 1e-14 and kmin > 0, max(sym, -kmin, 0.0)))
        if self.B_c.shape != (mc, k) or self.S_c.shape != (k, k):
            checks.append(CheckResult("dimensions", False, 1.0,
                                      f"B_c {self.B_c.shape}, S_c {self.S_c.shape}, m_c {mc}"))
            return ValidationReport(checks)
        sig = self.sigma_min
        worst = 0.0
        for _ in range(samples):
            y = rng.normal(size=k)
            worst = max(worst, sig * (y @ y) - y @ self.S_c @ y)
        checks.append(CheckResult("S_c_positive", sig > 0 and worst <= 1e-12 * max(sig, 1.0),
                                  max(worst, -sig, 0.0)))
        p0 = abs(float(self.potential(np.zeros(mc))))
        low = np.inf
        for _ in range(samples):
            v = rng.normal(size=mc) * 10.0 ** rng.uniform(-2, 2)
            low = min(low, float(self.potential(v)))
        checks.append(CheckResult("potential_positive_definite", p0 <= 1e-14 and low > 0,
                                  max(p0, -low, 0.0)))
        ray = 0.0
        for _ in range(20):
            d = rng.normal(size=mc)
            d /= np.linalg.norm(d)
            vals = [float(self.potential(r * d)) for r in (10.0, 100.0, 1000.0)]
            if not (vals[0] < vals[1] < vals[2]):
                ray = 1.0
        checks.append(CheckResult("potential_radially_unbounded", ray == 0.0, ray,
                                  "sampled along 20 rays at radii 10, 100, 1000"))
        g0 = float(np.linalg.norm(self.grad_potential(np.zeros(mc))))
        checks.append(CheckResult("grad_potential_vanishes_at_zero", g0 <= 1e-12, g0))
        gerr = 0.0
        for _ in range(100):
            v = rng.normal(size=mc)
            eps = 1e-6 * max(1.0, np.linalg.norm(v))
            fd = np.array([(self.potential(v + eps * e) - self.potential(v - eps * e)) / (2 * eps)
                           for e in np.eye(mc)])
            g = np.asarray(self.grad_potential(v), dtype=float)
            gerr = max(gerr, float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-8)))
        checks.append(CheckResult("grad_potential_consistent", gerr <= GRAD_REL_TOL, gerr))
        dneg = d0 = 0.0
        for _ in range(samples):
            t = float(rng.choice(times))
            w = rng.normal(size=mc) * 10.0 ** rng.uniform(-2, 2)
            dneg = max(dneg, -float(w @ np.asarray(self.damping(t, w), dtype=float)))
        for t in times:
            d0 = max(d0, float(np.linalg.norm(self.damping(t, np.zeros(mc)))))
        checks.append(CheckResult("damping_nonnegative", dneg <= 0.0, max(dneg, 0.0)))
        checks.append(CheckResult("damping_vanishes_at_zero", d0 <= 1e-14, d0))
        return ValidationReport(checks)

    def energy(self, v):
        v = np.asarray(v, dtype=float)
        mc = self.m_c
        v1, v2 = v[:mc], v[mc:]
        return float(self.potential(v1)) + 0.5 * float(v2 @ self.K_c @ v2)


def _split(ctrl, v, u_c):
    v = np.asarray(v, dtype=float)
    u_c = np.atleast_1d(np.asarray(u_c, dtype=float))
    mc = ctrl.m_c
    if v.shape != (2 * mc,) or u_c.shape != (ctrl.input_dim,):
        raise InvalidStateError(
            f"controller state {v.shape} / input {u_c.shape} do not match m_c={mc}, k={ctrl.input_dim}")
    return v[:mc], v[mc:], u_c


def controller_rhs(ctrl, t, v, u_c):
    v1, v2, u_c = _split(ctrl, v, u_c)
    kv2 = ctrl.K_c @ v2
    dv2 = (-np.asarray(ctrl.grad_potential(v1), dtype=float)
           - np.asarray(ctrl.damping(t, kv2), dtype=float) + ctrl.B_c @ u_c)
    return np.concatenate([kv2, dv2])


def controller_output(ctrl, t, v, u_c):
    _, v2, u_c = _split(ctrl, v, u_c)
    return ctrl.B_c.T @ (ctrl.K_c @ v2) + ctrl.S_c @ u_c


# vocabulary shared by scenario files

def quadratic_potential(Q):
    q = np.atleast_2d(np.asarray(Q, dtype=float))
    return (lambda v: 0.5 * float(v @ q @ v)), (lambda v: q @ v)


def quartic_potential(a, b):
    """a/2 |v|^2 + b/4 sum v_i^4."""
    a, b = float(a), float(b)
    return (lambda v: 0.5 * a * float(v @ v) + 0.25 * b * float(np.sum(v ** 4)),
            lambda v: a * v + b * v ** 3)


def vocabulary_map(spec):
    """(function, lipschitz(r)) for the closed map vocabulary: linear, cubic, saturation, tabulated.

    Maps act componentwise (vectors) or by a matrix gain (linear).
    """
    kind = spec.get("kind")
    if kind == "linear":
        gain = np.asarray(spec.get("gain", 1.0), dtype=float)
        if gain.ndim == 2:
            lip = float(np.linalg.norm(gain, 2))
            return (lambda y: gain @ y), (lambda r: lip)
        g = float(gain)
        return (lambda y: g * np.asarray(y, dtype=float)), (lambda r: abs(g))
    if kind == "cubic":
        lin, cub = float(spec.get("linear", 1.0)), float(spec.get("cubic", 1.0))
        return (lambda y: lin * np.asarray(y) + cub * np.asarray(y) ** 3,
                lambda r: abs(lin) + 3.0 * abs(cub) * r * r)
    if kind == "saturation":
        lim, gain = float(spec.get("limit", 1.0)), float(spec.get("gain", 1.0))
        return (lambda y: lim * np.tanh(gain * np.asarray(y) / lim)), (lambda r: abs(gain))
    if kind == "tabulated":
        xs = np.asarray(spec["x"], dtype=float)
        ys = np.asarray(spec["y"], dtype=float)
        if xs.ndim != 1 or xs.size < 2 or xs[0] != 0 or np.any(np.diff(xs) <= 0):
            raise InvalidSpecError("tabulated map needs increasing x starting at 0")
        slope_end = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        lip = float(np.max(np.abs(np.diff(ys) / np.diff(xs))))

        def fn(y):
            y = np.asarray(y, dtype=float)
            a = np.abs(y)
            out = np.interp(a, xs, ys) + np.where(a > xs[-1], slope_end * (a - xs[-1]), 0.0)
            return np.sign(y) * out
        return fn, (lambda r: lip)
    raise InvalidSpecError(f"unknown map kind {kind!r}")


def _controller_ledger(ctrl, rho_grid, samples=60, seed=0):
    """Sampled Lipschitz ledger of (v1, v2) -> (0, v1 - grad P(v1) - R_c(t, K v2))."""
    mc = ctrl.m_c
    gram = np.zeros((2 * mc, 2 * mc))
    gram[:mc, :mc] = np.eye(mc)
    gram[mc:, mc:] = ctrl.K_c
    small = OperatorFamily(2 * mc, lambda t: np.zeros((2 * mc, 2 * mc)), lambda t: np.ones(2 * mc),
                           1.0, 1.0, gram, a0_constant=True, m_constant=True)

    def g(t, v):
        v1, v2 = v[:mc], v[mc:]
        return np.concatenate([np.zeros(mc), v1 - np.asarray(ctrl.grad_potential(v1))
                               - np.asarray(ctrl.damping(t, ctrl.K_c @ v2))])

    return make_ledger_from_samples(g, rho_grid, samples, dim=2 * mc, family=small, seed=seed)


def build_closed_loop_ph(open_sys, ctrl, rho_grid=None, validate=True):
    """Standard feedback interconnection u_plant = u - y_c, u_c = y_plant."""
    if not isinstance(open_sys, BoundaryIoSystem):
        raise InvalidInterconnectionError("the dynamic controller closes a boundary system")
    k = open_sys.input_dim
    if ctrl.input_dim != k or open_sys.c0_trace.shape[0] != k:
        raise InvalidInterconnectionError(
            f"controller port dimension {ctrl.input_dim} differs from plant port dimension {k}")
    if validate:
        rep = ctrl.validate()
        if not rep.passed:
            bad = [c.name for c in rep.checks if not c.passed]
            raise InvalidInterconnectionError(f"controller violates {', '.join(bad)}")
    fam = open_sys.family
    n, mc = open_sys.dim, ctrl.m_c
    kc, bc, sc = ctrl.K_c, ctrl.B_c, ctrl.S_c
    g = open_sys.injection
    b0, c0 = open_sys.b0_trace, open_sys.c0_trace
    a0 = sp.csr_matrix(fam.a0_matrix(0.0))
    a0_cl = sp.bmat([
        [a0 - sp.csr_matrix(g @ sc @ c0), None, sp.csr_matrix(-g @ bc.T @ kc)],
        [None, sp.csr_matrix((mc, mc)), sp.csr_matrix(kc)],
        [sp.csr_matrix(bc @ c0), -sp.identity(mc), None],
    ], format="csr")
    gram_p = np.asarray(fam.inner_product, dtype=float)
    if gram_p.ndim == 1 and np.allclose(kc, np.diag(np.diag(kc))):
        gram = np.concatenate([gram_p, np.ones(mc), np.diag(kc)])
    else:
        gp = np.diag(gram_p) if gram_p.ndim == 1 else gram_p
        gram = sp.block_diag([gp, np.eye(mc), kc]).toarray()
    ones = np.ones(2 * mc)
    m_inner = fam.m_at

    def m_at(t):
        m = m_inner(t)
        if sp.issparse(m):
            return sp.block_diag([m, sp.identity(2 * mc)], format="csr")
        m = np.asarray(m, dtype=float)
        if m.ndim == 1:
            return np.concatenate([m, ones])
        return sp.block_diag([m, np.eye(2 * mc)]).toarray()

    family = OperatorFamily(n + 2 * mc, lambda t: a0_cl, memo_recent(m_at),
                            min(fam.m_lower, 1.0), max(fam.m_upper, 1.0), gram,
                            monotone=fam.monotone, a0_constant=True, m_constant=fam.m_constant,
                            name=fam.name + "+dynamic")
    b0_cl = np.hstack([b0 + sc @ c0, np.zeros((k, mc)), bc.T @ kc])
    c0_cl = np.hstack([c0, np.zeros((k, 2 * mc))])
    g_cl = np.vstack([g, np.zeros((2 * mc, k))])

    def f_apply(t, x):
        v1 = x[n:n + mc]
        v2 = x[n + mc:]
        out = np.zeros_like(x)
        out[n + mc:] = (v1 - np.asarray(ctrl.grad_potential(v1), dtype=float)
                        - np.asarray(ctrl.damping(t, kc @ v2), dtype=float))
        return out

    grid = np.geomspace(1e-2, 1e3, 16) if rho_grid is None else rho_grid
    f = Nonlinearity(f_apply, _controller_ledger(ctrl, grid), True, n + 2 * mc)
    meta = dict(open_sys.meta)
    meta.update({"controller": "dynamic", "plant_dim": n, "m_c": mc,
                 "sigma_min": ctrl.sigma_min})
    return BoundaryIoSystem(family, b0_cl, c0_cl, g_cl, f, open_sys.n_cells,
                            name=open_sys.name + "+dynamic", meta=meta)
