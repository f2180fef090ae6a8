"""Vibrating string, Timoshenko beam and Euler-Bernoulli beam with tip mass."""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .boundary_io import PortHamiltonianSpec
from .distributed_io import DistributedIoSystem
from .errors import InvalidProfileError
from .operator_core import OperatorFamily

_DIRECTIONS = ("decreasing", "increasing", "none")
_T_SAMPLES = np.linspace(0.0, 10.0, 41)


@dataclass(frozen=True)
class CoefficientProfile:
    """Positive coefficient (t, z) -> value with declared bounds and time monotonicity.

    ``value_at`` must broadcast over an array of positions.
    """

    value_at: Callable[[float, np.ndarray], np.ndarray]
    monotone_in_t: str = "none"
    bounds: tuple = (1.0, 1.0)
    name: str = "profile"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.monotone_in_t not in _DIRECTIONS:
            raise InvalidProfileError(f"monotone_in_t must be one of {_DIRECTIONS}")
        lo, hi = self.bounds
        if not 0 < lo <= hi:
            raise InvalidProfileError(f"bounds must satisfy 0 < lower <= upper, got {self.bounds}")

    def __call__(self, t, z=0.0):
        return np.broadcast_to(np.asarray(self.value_at(t, np.asarray(z, dtype=float)),
                                          dtype=float), np.shape(z)).copy()

    def samples(self, times=None, zetas=None):
        times = _T_SAMPLES if times is None else np.asarray(times, dtype=float)
        zetas = np.linspace(0.0, 1.0, 11) if zetas is None else np.asarray(zetas, dtype=float)
        return np.array([self(t, zetas) for t in times])

    def is_monotone(self, direction, times=None, zetas=None):
        vals = self.samples(times, zetas)
        d = np.diff(vals, axis=0)
        if direction == "increasing":
            return bool(np.all(d >= 0))
        if direction == "decreasing":
            return bool(np.all(d <= 0))
        return True

    def validate(self, times=None, zetas=None):
        """Raise InvalidProfileError if bounds or declared monotonicity fail on samples."""
        vals = self.samples(times, zetas)
        lo, hi = self.bounds
        if vals.min() < lo * (1 - 1e-12) or vals.max() > hi * (1 + 1e-12):
            raise InvalidProfileError(
                f"{self.name}: sampled range [{vals.min()}, {vals.max()}] leaves bounds {self.bounds}")
        if not self.is_monotone(self.monotone_in_t, times, zetas):
            raise InvalidProfileError(f"{self.name}: not {self.monotone_in_t} in t")
        return True


def constant_profile(value, name="constant"):
    v = float(value)
    return CoefficientProfile(lambda t, z: np.full(np.shape(z), v), "none", (v, v), name,
                              {"kind": "constant", "value": v})


def saturating_profile(base, delta, name="saturating"):
    """base + delta * t / (1 + t); monotone in the direction of delta."""
    b, d = float(base), float(delta)
    direction = "increasing" if d > 0 else "decreasing" if d < 0 else "none"
    lo, hi = sorted((b, b + d))
    return CoefficientProfile(lambda t, z: np.full(np.shape(z), b + d * t / (1.0 + t)),
                              direction, (lo, hi), name,
                              {"kind": "saturating", "base": b, "delta": d})


def _require(profile, direction, role):
    """Ex. assumptions: time-constant profiles qualify for either direction."""
    if profile.monotone_in_t == direction:
        profile.validate()
        return
    if profile.monotone_in_t == "none" and profile.is_monotone(direction):
        profile.validate()
        return
    raise InvalidProfileError(f"{role} must be {direction} in t, declared {profile.monotone_in_t}")


def default_string_profiles():
    return saturating_profile(1.0, 0.1, "rho"), saturating_profile(2.0, -1.0, "tension")


def _diag_hamiltonian(parts):
    """parts: list of (profile, invert) giving diagonal entries value or 1/value."""
    m = len(parts)

    def ham(t, z):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.zeros((z.size, m, m))
        for i, (prof, inv) in enumerate(parts):
            v = np.asarray(prof.value_at(t, z), dtype=float)
            out[:, i, i] = 1.0 / v if inv else v
        return out

    lower = min(1.0 / p.bounds[1] if inv else p.bounds[0] for p, inv in parts)
    upper = max(1.0 / p.bounds[0] if inv else p.bounds[1] for p, inv in parts)
    return ham, lower, upper


def make_vibrating_string(rho=None, tension=None, interval=(0.0, 1.0)):
    """String clamped at a, force input and velocity output at b."""
    if rho is None or tension is None:
        d_rho, d_t = default_string_profiles()
        rho = d_rho if rho is None else rho
        tension = d_t if tension is None else tension
    _require(rho, "increasing", "rho")
    _require(tension, "decreasing", "tension")
    ham, lower, upper = _diag_hamiltonian([(rho, True), (tension, False)])
    return PortHamiltonianSpec(
        field_dim=2,
        p0=np.zeros((2, 2)),
        p1=np.array([[0.0, 1.0], [1.0, 0.0]]),
        hamiltonian=ham,
        interval=tuple(interval),
        wb1=np.array([[0.0, 0.0, 1.0, 0.0]]),
        wb2=np.array([[0.0, 1.0, 0.0, 0.0]]),
        wc=np.array([[1.0, 0.0, 0.0, 0.0]]),
        m_lower=lower,
        m_upper=upper,
        name="string",
    )


TIMOSHENKO_P1 = np.array([[0.0, 1.0, 0.0, 0.0],
                          [1.0, 0.0, 0.0, 0.0],
                          [0.0, 0.0, 0.0, 1.0],
                          [0.0, 0.0, 1.0, 0.0]])
TIMOSHENKO_P0 = np.array([[0.0, 0.0, 0.0, -1.0],
                          [0.0, 0.0, 0.0, 0.0],
                          [0.0, 0.0, 0.0, 0.0],
                          [1.0, 0.0, 0.0, 0.0]])


def default_timoshenko_profiles():
    return (saturating_profile(1.0, 0.1, "rho"), saturating_profile(2.0, -0.5, "EI"),
            saturating_profile(1.0, 0.1, "I_r"), saturating_profile(2.0, -0.5, "K"))


def make_timoshenko_beam(rho=None, EI=None, I_r=None, K=None, interval=(0.0, 1.0)):
    """State (w_z - phi, rho w_t, phi_z, I_r phi_t), clamped at a, force and moment at b."""
    defaults = default_timoshenko_profiles()
    rho, EI, I_r, K = (d if p is None else p for p, d in zip((rho, EI, I_r, K), defaults))
    _require(rho, "increasing", "rho")
    _require(I_r, "increasing", "I_r")
    _require(EI, "decreasing", "EI")
    _require(K, "decreasing", "K")
    ham, lower, upper = _diag_hamiltonian([(K, False), (rho, True), (EI, False), (I_r, True)])
    sel = np.eye(8)
    return PortHamiltonianSpec(
        field_dim=4,
        p0=TIMOSHENKO_P0.copy(),
        p1=TIMOSHENKO_P1.copy(),
        hamiltonian=ham,
        interval=tuple(interval),
        wb1=sel[[5, 7]],
        wb2=sel[[0, 2]],
        wc=sel[[1, 3]],
        m_lower=lower,
        m_upper=upper,
        name="timoshenko",
    )


def default_eb_profiles():
    lam = CoefficientProfile(lambda t, z: np.full(np.shape(z), 1.0 + 1.0 / (1.0 + t)),
                             "decreasing", (1.0, 2.0), "lambda",
                             {"kind": "custom", "formula": "1 + 1/(1+t)"})
    return lam, saturating_profile(1.0, 0.2, "kappa")


def _curvature_matrix(n, h):
    """Curvatures at nodes 0..n from deflections w_1..w_{n+1} (w_0 = 0, w_{-1} = w_1)."""
    rows, cols, vals = [0], [0], [2.0]
    for i in range(1, n + 1):
        for j, v in ((i - 1, 1.0), (i, -2.0), (i + 1, 1.0)):
            if j >= 1:
                rows.append(i)
                cols.append(j - 1)
                vals.append(v)
    return sp.csr_matrix((np.array(vals) / h ** 2, (rows, cols)), shape=(n + 1, n + 1))


def make_euler_bernoulli_tip_mass(lam=None, kappa=None, rho=1.0, m_tip=1.0, J_tip=1.0,
                                  interval=(0.0, 1.0), n_cells=16):
    """Finite-difference E-B beam clamped at a with a tip body at b.

    State: deflections w_1..w_{n+1} (w_{n+1} a ghost node carrying the tip
    slope), momenta rho w_t at nodes 1..n-1, tip velocity, tip angular
    velocity.  The operator has the dissipative sign of the reformulated
    generator (-d^4/dz^4 on the momentum block).
    """
    d_lam, d_kappa = default_eb_profiles()
    lam = d_lam if lam is None else lam
    kappa = d_kappa if kappa is None else kappa
    if not (lam.monotone_in_t == "decreasing" or
            (lam.monotone_in_t == "none" and lam.is_monotone("decreasing"))):
        raise InvalidProfileError("flexural rigidity lambda must be decreasing in t")
    lam.validate()
    if n_cells < 4:
        raise InvalidProfileError("n_cells must be at least 4")
    n = int(n_cells)
    a, b = interval
    h = (b - a) / n
    rho, m_tip, J_tip = float(rho), float(m_tip), float(J_tip)
    curv = _curvature_matrix(n, h)
    trap = np.full(n + 1, h)
    trap[0] = trap[-1] = h / 2
    g1 = (curv.T @ sp.diags(trap) @ curv).tocsr()
    nz = n + 1
    # P: (momenta, tip velocity, tip angular velocity) -> deflection velocities
    pr, pc, pv = [], [], []
    for i in range(n - 1):
        pr.append(i)
        pc.append(i)
        pv.append(1.0 / rho)
    pr.append(n - 1)
    pc.append(n - 1)
    pv.append(1.0)
    # ghost velocity v_{n+1} = v_{n-1} + 2 h x4
    pr += [n, n]
    pc += [n - 2, n]
    pv += [1.0 / rho, 2.0 * h]
    p = sp.csr_matrix((pv, (pr, pc)), shape=(n + 1, nz))
    gz = np.concatenate([np.full(n - 1, h / rho), [m_tip, J_tip]])
    lower = -sp.diags(1.0 / gz) @ p.T @ g1
    a0 = sp.bmat([[None, p], [lower, None]], format="csr")
    dim = (n + 1) + nz
    gram = sp.block_diag([g1, sp.diags(gz)]).toarray()
    lam_lo, lam_hi = lam.bounds
    ones = np.ones(nz)

    def m_at(t):
        return np.concatenate([np.full(n + 1, float(lam(t))), ones])

    family = OperatorFamily(dim, lambda t: a0, m_at, min(lam_lo, 1.0), max(lam_hi, 1.0), gram,
                            monotone=True, a0_constant=True, m_constant=False,
                            name="euler_bernoulli_tip")
    x4 = dim - 1
    kappa_fn = kappa if callable(kappa) else (lambda t: float(kappa))

    def b_at(t):
        out = np.zeros((dim, 1))
        out[x4, 0] = float(kappa_fn(t)) / J_tip
        return out

    def c_at(t):
        out = np.zeros((1, dim))
        out[0, x4] = float(kappa_fn(t))
        return out

    meta = {"n_cells": n, "h": h, "rho": rho, "m_tip": m_tip, "J_tip": J_tip,
            "blocks": {"deflection": [0, n + 1], "momentum": [n + 1, 2 * n],
                       "tip_velocity": 2 * n, "tip_angular_velocity": x4}}
    return DistributedIoSystem(family, b_at, c_at, None, 1, False, "euler_bernoulli_tip", meta)
