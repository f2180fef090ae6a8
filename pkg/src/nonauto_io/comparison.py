"""Comparison functions of class K / K-infinity and the stability gains built from them."""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    InconsistentEnvelopeError,
    InvalidFunctionError,
    InvalidParameterError,
    OutOfRangeError,
)

DEFAULT_DOMAIN_HINT = 1e6
_GRID_POINTS = 100


@dataclass(frozen=True)
class ComparisonFn:
    """Strictly increasing map [0, inf) -> [0, inf) vanishing at zero.

    Parameters
    ----------
    evaluate : callable
        Scalar function r -> value.
    domain_hint : float
        Largest argument used when inverting numerically.
    is_unbounded : bool
        True for class K-infinity functions.
    """

    evaluate: Callable[[float], float]
    domain_hint: float = DEFAULT_DOMAIN_HINT
    is_unbounded: bool = True

    def __call__(self, r):
        return float(self.evaluate(float(r)))

    def sample_grid(self, points=_GRID_POINTS):
        return np.linspace(0.0, self.domain_hint, points)

    def check(self, points=_GRID_POINTS):
        """Return (ok, message) for the zero-at-zero and monotonicity invariants."""
        if abs(self(0.0)) > 1e-12:
            return False, f"value at zero is {self(0.0)!r}"
        grid = self.sample_grid(points)
        vals = np.array([self(r) for r in grid])
        if not np.all(np.isfinite(vals)):
            return False, "non-finite sample"
        if np.any(np.diff(vals) <= 0.0):
            k = int(np.argmax(np.diff(vals) <= 0.0))
            return False, f"not strictly increasing between {grid[k]!r} and {grid[k + 1]!r}"
        return True, "ok"


def make_power_fn(coefficient, exponent, domain_hint=DEFAULT_DOMAIN_HINT):
    """r -> coefficient * r**exponent, a class K-infinity function."""
    if not (coefficient > 0 and exponent > 0):
        raise InvalidParameterError(
            f"coefficient and exponent must be positive, got {coefficient!r}, {exponent!r}"
        )
    c, p = float(coefficient), float(exponent)
    return ComparisonFn(lambda r: c * r**p, domain_hint=domain_hint, is_unbounded=True)


def _check_monotone_samples(fn, points=_GRID_POINTS):
    grid = fn.sample_grid(points)
    vals = np.array([fn(r) for r in grid])
    if not np.all(np.isfinite(vals)) or np.any(np.diff(vals) <= 0.0):
        raise InvalidFunctionError("function is not strictly increasing on its sample grid")
    return grid, vals


def invert(fn, y, rel_tol=1e-12, validate=True):
    """Solve fn(r) = y for r in [0, fn.domain_hint] by bracketing bisection."""
    y = float(y)
    if y < 0:
        raise OutOfRangeError(f"cannot invert at negative value {y!r}")
    if validate:
        grid, vals = _check_monotone_samples(fn)
    else:
        grid = np.array([0.0, fn.domain_hint])
        vals = np.array([fn(0.0), fn(fn.domain_hint)])
    top = vals[-1]
    if y > top:
        raise OutOfRangeError(f"value {y!r} exceeds fn(domain_hint) = {top!r}")
    if y <= vals[0]:
        return 0.0
    # narrow the bracket with the samples already computed
    k = int(np.searchsorted(vals, y, side="left"))
    lo, hi = float(grid[max(k - 1, 0)]), float(grid[min(k, len(grid) - 1)])
    if vals[min(k, len(grid) - 1)] == y:
        return hi
    while hi - lo > rel_tol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fn(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class UgsGains:
    sigma: ComparisonFn
    gamma: ComparisonFn
    alpha: float


def build_ugs_gains(psi_lower, psi_upper, alpha, points=_GRID_POINTS):
    """sigma = psi_lower^{-1}(2 psi_upper(r)),  gamma = psi_lower^{-1}(2 alpha r^2)."""
    if not alpha > 0:
        raise InvalidParameterError(f"alpha must be positive, got {alpha!r}")
    hint = min(psi_lower.domain_hint, psi_upper.domain_hint)
    for r in np.linspace(0.0, hint, points):
        lo, up = psi_lower(r), psi_upper(r)
        if lo > up * (1 + 1e-12) + 1e-15:
            raise InconsistentEnvelopeError(f"psi_lower({r!r}) = {lo!r} > psi_upper = {up!r}")
    _check_monotone_samples(psi_lower, points)
    top = psi_lower(psi_lower.domain_hint)

    # largest arguments for which the inversion stays in range
    sigma_hint = invert(psi_upper, min(top / 2.0, psi_upper(psi_upper.domain_hint)))
    gamma_hint = float(np.sqrt(top / (2.0 * alpha)))
    a = float(alpha)

    def sigma(r):
        return invert(psi_lower, 2.0 * psi_upper(r), validate=False)

    def gamma(r):
        return invert(psi_lower, 2.0 * a * r * r, validate=False)

    unbounded = psi_lower.is_unbounded and psi_upper.is_unbounded
    return UgsGains(
        sigma=ComparisonFn(sigma, domain_hint=sigma_hint, is_unbounded=unbounded),
        gamma=ComparisonFn(gamma, domain_hint=gamma_hint, is_unbounded=psi_lower.is_unbounded),
        alpha=a,
    )
