"""Factorized operator families A(t) = A0(t) M(t) and their evolution systems."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidIntervalError, InvalidStateError

EXPM_MAX_DIM = 512
M_DIFF_STEP = 1e-5


def memo_recent(fn, size=8):
    """Cache fn(t) for the most recent ``size`` arguments; samplers are pure in t."""
    store = {}

    def wrapped(t):
        t = float(t)
        hit = store.get(t)
        if hit is None:
            if len(store) >= size:
                store.pop(next(iter(store)))
            hit = store[t] = fn(t)
        return hit

    return wrapped


def _dense(a):
    return a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)


def _m_dense(m, n):
    m = _dense(m)
    return np.diag(m) if m.ndim == 1 else m


@dataclass(frozen=True)
class OperatorFamily:
    """A(t) = A0(t) M(t) on R^n with the inner product <x, y> = x^T G y.

    ``m_at`` may return a 1-D array, read as a diagonal matrix.  The Gram
    matrix ``inner_product`` may likewise be a 1-D array of weights.
    ``a0_at`` may return a dense array or a scipy sparse matrix.
    """

    dim: int
    a0_at: Callable[[float], object]
    m_at: Callable[[float], np.ndarray]
    m_lower: float
    m_upper: float
    inner_product: np.ndarray
    monotone: bool = False
    a0_constant: bool = False
    m_constant: bool = False
    m_dot_at: Optional[Callable[[float], np.ndarray]] = None
    name: str = "family"
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    # inner-product helpers
    @property
    def gram_is_diagonal(self):
        return np.ndim(self.inner_product) == 1

    def gram_apply(self, x):
        g = self.inner_product
        if np.ndim(g) == 1:
            return g * x if np.ndim(x) == 1 else g[:, None] * x
        return g @ x

    def gram_matrix(self):
        g = np.asarray(self.inner_product, dtype=float)
        return np.diag(g) if g.ndim == 1 else g

    def inner(self, x, y):
        return float(np.dot(x, self.gram_apply(y)))

    def norm(self, x):
        return float(np.sqrt(max(self.inner(x, x), 0.0)))

    def norms(self, states):
        s = np.asarray(states, dtype=float)
        g = self.inner_product
        if np.ndim(g) == 1:
            q = np.einsum("ij,ij->i", s * g, s)
        else:
            q = np.einsum("ij,ij->i", s @ g, s)
        return np.sqrt(np.maximum(q, 0.0))

    def gram_factor(self):
        """Upper factor R with G = R^T R, so that ||x|| = |R x|."""
        if "chol" not in self._cache:
            g = np.asarray(self.inner_product, dtype=float)
            if g.ndim == 1:
                self._cache["chol"] = np.sqrt(g)
            else:
                self._cache["chol"] = sla.cholesky(0.5 * (g + g.T), lower=False)
        return self._cache["chol"]

    def operator_norm(self, mat):
        """Norm of a matrix acting on (R^n, <.,.>)."""
        r = self.gram_factor()
        mat = _dense(mat)
        if r.ndim == 1:
            scaled = (r[:, None] * mat) / r[None, :]
        else:
            scaled = r @ mat @ np.linalg.inv(r)
        return float(sla.svdvals(scaled)[0])

    # operators
    def m_matrix(self, t):
        return _m_dense(self.m_at(t), self.dim)

    def m_dot(self, t):
        if self.m_dot_at is not None:
            return _m_dense(self.m_dot_at(t), self.dim)
        h = M_DIFF_STEP
        if t >= h:
            return (self.m_matrix(t + h) - self.m_matrix(t - h)) / (2 * h)
        return (self.m_matrix(t + h) - self.m_matrix(t)) / h

    def m_apply(self, t, x):
        m = self.m_at(t)
        if sp.issparse(m):
            return m @ x
        m = np.asarray(m, dtype=float)
        if m.ndim == 1:
            return m * x if np.ndim(x) == 1 else m[:, None] * x
        return m @ x

    def a0_matrix(self, t):
        if self.a0_constant:
            if "a0" not in self._cache:
                self._cache["a0"] = self.a0_at(0.0)
            return self._cache["a0"]
        return self.a0_at(t)

    def a_at(self, t):
        """A(t) = A0(t) M(t), sparse when A0 is sparse."""
        a0 = self.a0_matrix(t)
        m = self.m_at(t)
        if sp.issparse(a0):
            if np.ndim(m) == 1 and not sp.issparse(m):
                return sp.csr_matrix(a0 @ sp.diags(np.asarray(m, dtype=float)))
            return sp.csr_matrix(a0 @ (m if sp.issparse(m) else sp.csr_matrix(_dense(m))))
        a0 = np.asarray(a0, dtype=float)
        if np.ndim(m) == 1 and not sp.issparse(m):
            return a0 * np.asarray(m, dtype=float)[None, :]
        return a0 @ _dense(m)

    def a_apply(self, t, x):
        return self.a0_matrix(t) @ self.m_apply(t, x)

    @property
    def autonomous(self):
        return self.a0_constant and self.m_constant


@dataclass
class CheckResult:
    name: str
    passed: bool
    violation: float
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed),
                "violation": float(self.violation), "detail": self.detail}


@dataclass
class ValidationReport:
    checks: list
    unchecked: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def get(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks],
                "unchecked_assumptions": list(self.unchecked)}


@dataclass(frozen=True)
class GrowthBound:
    horizon: float
    m_const: float
    omega: float
    samples: int = 0

    def bound(self, elapsed):
        return self.m_const * np.exp(self.omega * elapsed)

    @property
    def sup_factor(self):
        """max over [0, horizon] of M exp(omega t)."""
        return self.m_const * max(1.0, float(np.exp(self.omega * self.horizon)))

    def to_dict(self):
        return {"horizon": self.horizon, "m_const": self.m_const, "omega": self.omega,
                "samples": self.samples}


def _relative_eigs(family, sym):
    """Eigenvalues of the G-self-adjoint operator whose Gram form is ``sym``."""
    g = np.asarray(family.inner_product, dtype=float)
    if g.ndim == 1:
        s = 1.0 / np.sqrt(g)
        return np.linalg.eigvalsh(s[:, None] * sym * s[None, :])
    return sla.eigh(sym, g, eigvals_only=True)


def validate_family(family, times, n_random=200, seed=0):
    """Sampled check of symmetry, bounds, dissipativity and (if flagged) monotonicity of M."""
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise InvalidIntervalError("times must be non-empty, non-negative and increasing")
    rng = np.random.default_rng(seed)
    g = family.gram_matrix()
    n = family.dim
    sym_v = lo_v = hi_v = diss_v = mono_v = 0.0
    worst_t = {"bounds_lower": None, "bounds_upper": None}
    prev_m = None
    for t in times:
        m = family.m_matrix(t)
        gm = g @ m
        scale = max(1.0, np.abs(gm).max())
        sym_v = max(sym_v, np.abs(gm - gm.T).max() / scale)
        eig = _relative_eigs(family, 0.5 * (gm + gm.T))
        if family.m_lower - eig.min() > lo_v:
            lo_v, worst_t["bounds_lower"] = family.m_lower - eig.min(), float(t)
        if eig.max() - family.m_upper > hi_v:
            hi_v, worst_t["bounds_upper"] = eig.max() - family.m_upper, float(t)
        a0 = _dense(family.a0_matrix(t))
        ga = g @ a0
        sym = 0.5 * (ga + ga.T)
        if n <= EXPM_MAX_DIM:
            diss_v = max(diss_v, float(_relative_eigs(family, sym).max()))
        xs = rng.normal(size=(n_random, n))
        xs /= family.norms(xs)[:, None]
        diss_v = max(diss_v, float(np.max(np.einsum("ij,jk,ik->i", xs, sym, xs))))
        if family.monotone and prev_m is not None:
            d = g @ (m - prev_m)
            mono_v = max(mono_v, float(_relative_eigs(family, 0.5 * (d + d.T)).max()))
        prev_m = m
    atol = 1e-10
    diss_tol = 1e-10 * max(1.0, np.abs(g @ _dense(family.a0_matrix(times[0]))).max())
    checks = [
        CheckResult("symmetry", sym_v <= 1e-12, sym_v),
        CheckResult("bounds_lower", lo_v <= atol, lo_v,
                    "" if worst_t["bounds_lower"] is None else f"worst at t={worst_t['bounds_lower']}"),
        CheckResult("bounds_upper", hi_v <= atol, hi_v,
                    "" if worst_t["bounds_upper"] is None else f"worst at t={worst_t['bounds_upper']}"),
        CheckResult("dissipativity", diss_v <= diss_tol, max(diss_v, 0.0)),
    ]
    if family.monotone:
        checks.append(CheckResult("monotone_decreasing", mono_v <= atol, max(mono_v, 0.0)))
    unchecked = ["differentiability of t -> A0(t)x and t -> M(t) is assumed, not verified"]
    return ValidationReport(checks, unchecked)


class Stepper:
    """One frozen-coefficient step of length h: x -> e^{h A(tau)} x + h E_half F.

    ``method`` is ``"expm"`` (Pade scaling and squaring, E_half = e^{h A / 2})
    or ``"midpoint"`` (Cayley factor, E_half = (I - h A / 2)^{-1}).
    """

    def __init__(self, family, h, method="auto"):
        if method == "auto":
            method = "expm" if family.dim <= EXPM_MAX_DIM else "midpoint"
        if method not in ("expm", "midpoint"):
            raise ValueError(f"unknown integrator {method!r}")
        self.family = family
        self.h = float(h)
        self.method = method
        self._tau = None
        self._ops = None
        self._fast = None
        if method == "midpoint":
            self._prepare_fast_sparse()

    def _prepare_fast_sparse(self):
        fam = self.family
        if not fam.a0_constant:
            return
        a0 = fam.a0_matrix(0.0)
        m0 = fam.m_at(0.0)
        if not sp.issparse(a0) or sp.issparse(m0) or np.ndim(m0) != 1:
            return
        n = fam.dim
        a0c = sp.csc_matrix(a0)
        a0c.sum_duplicates()
        pattern = sp.csc_matrix(abs(a0c) + sp.identity(n, format="csc"))
        pattern.sum_duplicates()
        pattern.sort_indices()
        # A0 values aligned with the (A0 + I) pattern
        lookup = {}
        cols = np.repeat(np.arange(n), np.diff(pattern.indptr))
        for k, (r, c) in enumerate(zip(pattern.indices, cols)):
            lookup[(r, c)] = k
        a0coo = a0c.tocoo()
        a0_data = np.zeros(pattern.nnz)
        for r, c, v in zip(a0coo.row, a0coo.col, a0coo.data):
            a0_data[lookup[(r, c)]] += v
        diag = np.zeros(pattern.nnz)
        for i in range(n):
            diag[lookup[(i, i)]] = 1.0
        self._fast = {
            "indices": pattern.indices.copy(), "indptr": pattern.indptr.copy(),
            "a0": a0_data, "cols": cols, "diag": diag, "a0csr": sp.csr_matrix(a0),
        }

    def _build(self, tau):
        fam, h = self.family, self.h
        if self.method == "expm":
            a = _dense(fam.a_at(tau))
            e_half = sla.expm(0.5 * h * a)
            return ("expm", e_half @ e_half, e_half)
        if self._fast is not None:
            fs = self._fast
            m = np.asarray(fam.m_at(tau), dtype=float)
            a_data = fs["a0"] * m[fs["cols"]]
            lhs = sp.csc_matrix((fs["diag"] - 0.5 * h * a_data, fs["indices"], fs["indptr"]),
                                shape=(fam.dim, fam.dim))
            lu = spla.splu(lhs)
            return ("sparse", lu, (fs["a0csr"], m))
        a = fam.a_at(tau)
        if sp.issparse(a):
            lhs = sp.csc_matrix(sp.identity(fam.dim) - 0.5 * h * a)
            return ("sparse", spla.splu(lhs), a)
        a = np.asarray(a, dtype=float)
        return ("dense", sla.lu_factor(np.eye(fam.dim) - 0.5 * h * a), a)

    def ops(self, tau):
        if self.family.autonomous:
            if self._ops is None:
                self._ops = self._build(0.0)
            return self._ops
        if tau != self._tau:
            self._ops = self._build(tau)
            self._tau = tau
        return self._ops

    @staticmethod
    def _a_times(a, x):
        if isinstance(a, tuple):
            a0, m = a
            return a0 @ (m * x if x.ndim == 1 else m[:, None] * x)
        return a @ x

    @staticmethod
    def _solve(kind, fac, rhs):
        if kind == "sparse":
            return fac.solve(rhs)
        return sla.lu_solve(fac, rhs)

    def step(self, x, tau, forcing=None):
        kind, p, q = self.ops(tau)
        h = self.h
        if kind == "expm":
            out = p @ x
            if forcing is not None:
                out = out + h * (q @ forcing)
            return out
        rhs = x + 0.5 * h * self._a_times(q, x)
        if forcing is not None:
            rhs = rhs + h * forcing
        return self._solve(kind, p, rhs)

    def half(self, v, tau):
        """Apply the forcing weight E_half to v."""
        kind, p, q = self.ops(tau)
        if kind == "expm":
            return q @ v
        return self._solve(kind, p, v)


def _step_count(span, dt):
    return max(1, int(np.ceil(span / dt - 1e-9)))


def evolve_linear(family, s, t, x_s, dt, method="auto"):
    """Product of frozen exponentials approximating T(t, s) x_s (midpoint freezing)."""
    if not dt > 0 or t < s:
        raise InvalidIntervalError(f"need dt > 0 and t >= s, got dt={dt!r}, s={s!r}, t={t!r}")
    x = np.asarray(x_s, dtype=float)
    if x.shape[0] != family.dim:
        raise InvalidStateError(f"state has dimension {x.shape[0]}, expected {family.dim}")
    if t == s:
        return x.copy()
    k = _step_count(t - s, dt)
    h = (t - s) / k
    stepper = Stepper(family, h, method)
    for j in range(k):
        x = stepper.step(x, s + (j + 0.5) * h)
    return x


def propagator(family, s, t, dt, method="auto"):
    """Matrix of the discrete evolution T(t, s)."""
    return evolve_linear(family, s, t, np.eye(family.dim), dt, method)


def estimate_growth_bound(family, horizon, trials=8, dt=None, seed=0, method="auto",
                          evaluations=25):
    """Fit (M, omega) with ||T(t,s)|| <= M e^{omega (t-s)} over sampled pairs.

    For each sampled start time s (s = 0 is always included) the full
    propagator is advanced over [s, horizon] and its operator norm is recorded
    at ``evaluations`` intermediate times.
    """
    if not horizon > 0 or trials < 1:
        raise InvalidIntervalError("horizon must be positive and trials >= 1")
    if dt is None:
        dt = horizon / 200.0
    rng = np.random.default_rng(seed)
    starts = np.concatenate([[0.0], rng.uniform(0.0, horizon, size=trials - 1)])
    elapsed, norms = [], []
    for s in starts:
        span = horizon - s
        if span <= 0:
            continue
        k = _step_count(span, dt)
        h = span / k
        stepper = Stepper(family, h, method)
        p = np.eye(family.dim)
        marks = set(np.unique(np.linspace(1, k, min(evaluations, k)).round().astype(int)))
        for j in range(k):
            p = stepper.step(p, s + (j + 0.5) * h)
            if j + 1 in marks:
                elapsed.append((j + 1) * h)
                norms.append(family.operator_norm(p))
    elapsed, norms = np.array(elapsed), np.array(norms)
    return _fit_growth(horizon, elapsed, norms)


def _fit_growth(horizon, elapsed, norms):
    long = elapsed >= 0.25 * horizon
    rates = np.abs(np.log(np.maximum(norms[long], 1e-300))) / elapsed[long] if long.any() else [0.0]
    omega_hat = float(np.max(rates)) if len(rates) else 0.0
    cands = []
    for c in (-2.0, -1.0, 0.0, 1.0, 2.0):
        om = c * omega_hat
        m_const = max(1.0, float(np.max(norms * np.exp(-om * elapsed))) if norms.size else 1.0)
        cands.append((m_const * np.exp(om * horizon), m_const, om))
    top = min(c[0] for c in cands)
    tied = [c for c in cands if c[0] <= top * (1 + 1e-9)]
    best = min(tied, key=lambda c: (c[1], c[2]))
    return GrowthBound(horizon=float(horizon), m_const=best[1], omega=best[2],
                       samples=int(norms.size))
