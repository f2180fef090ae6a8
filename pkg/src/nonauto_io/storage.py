"""Storage functions V(t, x) with comparison envelopes."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .comparison import ComparisonFn
from .errors import IncompleteEnvelopeError, InvalidStateError
from .operator_core import CheckResult, ValidationReport

GRAD_REL_TOL = 1e-5
_FD_T = 1e-5


def _dual_norm(gram, g):
    """Norm of the functional h -> g^T h on (R^n, <., .>_G)."""
    gram = np.asarray(gram, dtype=float)
    if gram.ndim == 1:
        return float(np.sqrt(np.sum(g * g / gram)))
    return float(np.sqrt(max(g @ np.linalg.solve(gram, g), 0.0)))


def _norm(gram, x):
    gram = np.asarray(gram, dtype=float)
    q = x @ (gram * x) if gram.ndim == 1 else x @ gram @ x
    return float(np.sqrt(max(q, 0.0)))


@dataclass(frozen=True)
class StorageFunction:
    """V(t, x) >= 0 with envelopes lower(||x||) <= V(t, x) <= upper(||x||).

    ``gradient(t, x)`` returns (dV/dt, grad_x V) with grad_x the Euclidean
    gradient; when omitted it is obtained by central differences.
    """

    evaluate: Callable[[float, np.ndarray], float]
    lower: ComparisonFn
    upper: ComparisonFn
    inner_product: np.ndarray
    gradient: Optional[Callable] = None
    name: str = "storage"
    params: dict = field(default_factory=dict)

    @property
    def dim(self):
        return int(np.shape(self.inner_product)[0])

    def __call__(self, t, x):
        return float(self.evaluate(float(t), np.asarray(x, dtype=float)))

    def along(self, grid, states):
        return np.array([self(t, x) for t, x in zip(grid, states)])

    def norm(self, x):
        return _norm(self.inner_product, np.asarray(x, dtype=float))

    def grad(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.gradient is not None:
            dt, gx = self.gradient(float(t), x)
            return float(dt), np.asarray(gx, dtype=float)
        return self.fd_grad(t, x)

    def fd_grad(self, t, x, rel_step=1e-6):
        x = np.asarray(x, dtype=float)
        ht = _FD_T
        if t >= ht:
            dt = (self(t + ht, x) - self(t - ht, x)) / (2 * ht)
        else:
            dt = (self(t + ht, x) - self(t, x)) / ht
        eps = rel_step * max(1.0, float(np.abs(x).max(initial=0.0)))
        gx = np.empty_like(x)
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = eps
            gx[j] = (self(t, x + e) - self(t, x - e)) / (2 * eps)
        return dt, gx

    def derivative_norm(self, t, x):
        """Norm of dV(t, x) on R x X: sqrt(|dV/dt|^2 + ||grad_x V||_*^2)."""
        dt, gx = self.grad(t, x)
        return float(np.hypot(dt, _dual_norm(self.inner_product, gx)))

    def validate(self, times=None, samples=500, grad_points=100, radius=10.0, seed=0):
        """Zero at zero, sampled envelope sandwich, analytic gradient against differences."""
        rng = np.random.default_rng(seed)
        times = np.linspace(0.0, 5.0, 11) if times is None else np.asarray(times, dtype=float)
        n = self.dim
        zero = max(abs(self(t, np.zeros(n))) for t in times)
        checks = [CheckResult("vanishes_at_zero", zero <= 1e-14, zero)]
        worst_lo = worst_hi = 0.0
        for _ in range(samples):
            t = float(rng.uniform(times[0], times[-1]))
            x = rng.normal(size=n) * 10.0 ** rng.uniform(-3, np.log10(radius))
            r = self.norm(x)
            v = self(t, x)
            scale = max(v, 1e-300)
            worst_lo = max(worst_lo, (self.lower(r) - v) / scale)
            worst_hi = max(worst_hi, (v - self.upper(r)) / scale)
        checks.append(CheckResult("lower_envelope", worst_lo <= 1e-10, worst_lo))
        checks.append(CheckResult("upper_envelope", worst_hi <= 1e-10, worst_hi))
        if self.gradient is not None:
            gerr = 0.0
            for _ in range(grad_points):
                t = float(rng.uniform(max(times[0], 2 * _FD_T), times[-1]))
                x = rng.normal(size=n)
                dt, gx = self.grad(t, x)
                fdt, fgx = self.fd_grad(t, x)
                ref = np.hypot(abs(fdt), np.linalg.norm(fgx))
                err = np.hypot(dt - fdt, np.linalg.norm(gx - fgx)) / max(ref, 1e-12)
                gerr = max(gerr, float(err))
            checks.append(CheckResult("gradient_consistent", gerr <= GRAD_REL_TOL, gerr))
        return ValidationReport(checks)


def _quadratic_parts(family):
    def value(t, x):
        return 0.5 * family.inner(family.m_apply(t, x), x)

    def gradient(t, x):
        dm = family.m_dot(t)
        dt = 0.5 * family.inner(dm @ x, x)
        return dt, family.gram_apply(family.m_apply(t, x))

    return value, gradient


def quadratic_storage(family):
    """V(t, x) = 1/2 <M(t) x, x> with envelopes m_lower r^2/2 and m_upper r^2/2."""
    value, gradient = _quadratic_parts(family)
    lo, hi = float(family.m_lower), float(family.m_upper)
    return StorageFunction(value, ComparisonFn(lambda r: 0.5 * lo * r * r),
                           ComparisonFn(lambda r: 0.5 * hi * r * r), family.inner_product,
                           gradient, name="quadratic", params={"m_lower": lo, "m_upper": hi})


def _potential_envelopes(ctrl, envelopes):
    env = envelopes if envelopes is not None else ctrl.potential_envelopes
    if env is None:
        raise IncompleteEnvelopeError(
            "the controller potential needs explicit lower and upper envelopes")
    if len(env) == 3 and env[0] == "quadratic":
        q_lo, q_hi = float(env[1]), float(env[2])
        if not 0 < q_lo <= q_hi:
            raise IncompleteEnvelopeError(f"quadratic envelope constants {q_lo}, {q_hi}")
        return ("quadratic", q_lo, q_hi)
    if len(env) != 2 or not all(isinstance(e, ComparisonFn) for e in env):
        raise IncompleteEnvelopeError(
            "potential envelopes must be ('quadratic', q_lo, q_hi) or two ComparisonFn")
    return tuple(env)


def closed_loop_ph_storage(open_family, ctrl, potential_envelopes=None):
    """V = 1/2 <H x_p, x_p> + P(v1) + 1/2 v2^T K v2 on the state (x_p, v1, v2).

    Envelopes for P are taken from the controller or the argument, either as
    ("quadratic", q_lo, q_hi) meaning q_lo |v|^2/2 <= P(v) <= q_hi |v|^2/2 or
    as a pair of ComparisonFn.
    """
    env = _potential_envelopes(ctrl, potential_envelopes)
    n, mc = open_family.dim, ctrl.m_c
    kc = ctrl.K_c
    plant_value, plant_grad = _quadratic_parts(open_family)
    gram_p = np.asarray(open_family.inner_product, dtype=float)
    if gram_p.ndim == 1 and np.allclose(kc, np.diag(np.diag(kc))):
        gram = np.concatenate([gram_p, np.ones(mc), np.diag(kc)])
    else:
        gp = np.diag(gram_p) if gram_p.ndim == 1 else gram_p
        gram = np.zeros((n + 2 * mc, n + 2 * mc))
        gram[:n, :n] = gp
        gram[n:n + mc, n:n + mc] = np.eye(mc)
        gram[n + mc:, n + mc:] = kc

    def split(x):
        if x.shape != (n + 2 * mc,):
            raise InvalidStateError(f"closed-loop state has shape {x.shape}, expected ({n + 2 * mc},)")
        return x[:n], x[n:n + mc], x[n + mc:]

    def value(t, x):
        xp, v1, v2 = split(x)
        return plant_value(t, xp) + float(ctrl.potential(v1)) + 0.5 * float(v2 @ kc @ v2)

    def gradient(t, x):
        xp, v1, v2 = split(x)
        dt, gp = plant_grad(t, xp)
        return dt, np.concatenate([gp, np.asarray(ctrl.grad_potential(v1), dtype=float), kc @ v2])

    m_lo, m_hi = float(open_family.m_lower), float(open_family.m_upper)
    if env[0] == "quadratic":
        c_lo = min(m_lo, env[1], 1.0)
        c_hi = max(m_hi, env[2], 1.0)
        lower = ComparisonFn(lambda r: 0.5 * c_lo * r * r)
        upper = ComparisonFn(lambda r: 0.5 * c_hi * r * r)
        params = {"lower_coefficient": c_lo, "upper_coefficient": c_hi}
    else:
        p_lo, p_hi = env
        c_hi = max(m_hi, 1.0)
        s3 = np.sqrt(3.0)

        # one of the three block norms is at least r / sqrt(3)
        def lower_fn(r):
            return min(m_lo * r * r / 6.0, p_lo(r / s3), r * r / 6.0)

        lower = ComparisonFn(lower_fn, domain_hint=p_lo.domain_hint * s3,
                             is_unbounded=p_lo.is_unbounded)
        upper = ComparisonFn(lambda r: 0.5 * c_hi * r * r + p_hi(r), domain_hint=p_hi.domain_hint,
                             is_unbounded=True)
        params = {"lower_coefficient": None, "upper_coefficient": c_hi}
    params.update({"plant_dim": n, "m_c": mc})
    return StorageFunction(value, lower, upper, gram, gradient, name="closed_loop_ph",
                           params=params)
