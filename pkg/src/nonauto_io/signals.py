"""Input signals t -> R^k with optional analytic time derivatives."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

_FD_STEP = 1e-6


@dataclass(frozen=True)
class Signal:
    """A vector-valued signal on [0, inf).

    ``derivative`` may be omitted, in which case it is approximated by a
    central difference (one-sided at t = 0).
    """

    value: Callable[[float], np.ndarray]
    dim: int
    derivative: Optional[Callable[[float], np.ndarray]] = None
    name: str = "signal"
    params: dict = field(default_factory=dict)

    def __call__(self, t):
        return np.asarray(self.value(float(t)), dtype=float).reshape(self.dim)

    def dot(self, t):
        if self.derivative is not None:
            return np.asarray(self.derivative(float(t)), dtype=float).reshape(self.dim)
        h = _FD_STEP
        if t >= h:
            return (self(t + h) - self(t - h)) / (2 * h)
        return (self(t + h) - self(t)) / h

    def sample(self, times):
        return np.array([self(t) for t in np.asarray(times, dtype=float)]).reshape(-1, self.dim)

    def __add__(self, other):
        if other.dim != self.dim:
            raise ValueError("signal dimensions differ")
        return Signal(
            lambda t: self(t) + other(t),
            self.dim,
            lambda t: self.dot(t) + other.dot(t),
            name=f"({self.name}+{other.name})",
        )

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    def scaled(self, c):
        c = float(c)
        return Signal(lambda t: c * self(t), self.dim, lambda t: c * self.dot(t),
                      name=f"{c}*{self.name}")


def zero_signal(dim):
    z = np.zeros(dim)
    return Signal(lambda t: z, dim, lambda t: z, name="zero")


def constant_signal(value):
    v = np.atleast_1d(np.asarray(value, dtype=float))
    z = np.zeros_like(v)
    return Signal(lambda t: v, v.size, lambda t: z, name="constant", params={"value": v.tolist()})


def sinusoid_signal(amplitude, frequency, phase=0.0, offset=0.0):
    """a * sin(2 pi f t + phase) + offset, componentwise."""
    a = np.atleast_1d(np.asarray(amplitude, dtype=float))
    f = np.broadcast_to(np.asarray(frequency, dtype=float), a.shape).copy()
    ph = np.broadcast_to(np.asarray(phase, dtype=float), a.shape).copy()
    off = np.broadcast_to(np.asarray(offset, dtype=float), a.shape).copy()
    w = 2 * np.pi * f
    return Signal(
        lambda t: a * np.sin(w * t + ph) + off,
        a.size,
        lambda t: a * w * np.cos(w * t + ph),
        name="sinusoid",
    )


def sin2_ramp_signal(amplitude, period=1.0):
    """a * sin^2(pi t / period); vanishes with its first derivative at t = 0."""
    a = np.atleast_1d(np.asarray(amplitude, dtype=float))
    w = np.pi / float(period)
    return Signal(
        lambda t: a * np.sin(w * t) ** 2,
        a.size,
        lambda t: a * w * np.sin(2 * w * t),
        name="sin2",
    )


def step_signal(time, amplitude):
    a = np.atleast_1d(np.asarray(amplitude, dtype=float))
    z = np.zeros_like(a)
    t0 = float(time)
    return Signal(lambda t: a if t >= t0 else z, a.size, lambda t: z, name="step")


def tabulated_signal(times, values):
    """Piecewise-linear interpolation of samples; constant beyond the ends."""
    ts = np.asarray(times, dtype=float)
    vs = np.asarray(values, dtype=float)
    if vs.ndim == 1:
        vs = vs[:, None]
    if ts.ndim != 1 or ts.size < 2 or vs.shape[0] != ts.size:
        raise ValueError("tabulated signal needs at least two (time, value) rows")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("tabulated times must be strictly increasing")
    dim = vs.shape[1]
    slopes = np.diff(vs, axis=0) / np.diff(ts)[:, None]

    def value(t):
        return np.array([np.interp(t, ts, vs[:, j]) for j in range(dim)])

    def derivative(t):
        if t <= ts[0] or t >= ts[-1]:
            return np.zeros(dim)
        k = int(np.searchsorted(ts, t, side="right")) - 1
        return slopes[k]

    return Signal(value, dim, derivative, name="tabulated")


def random_smooth_signal(rng, dim, modes=4, max_frequency=2.0, amplitude=1.0):
    """Random band-limited signal: a sum of sinusoids plus a constant."""
    amps = rng.normal(size=(modes, dim)) * amplitude / np.sqrt(modes)
    freqs = rng.uniform(0.0, max_frequency, size=(modes, dim))
    phases = rng.uniform(0.0, 2 * np.pi, size=(modes, dim))
    const = rng.normal(size=dim) * amplitude / np.sqrt(modes)
    w = 2 * np.pi * freqs

    def value(t):
        return const + np.sum(amps * np.sin(w * t + phases), axis=0)

    def derivative(t):
        return np.sum(amps * w * np.cos(w * t + phases), axis=0)

    return Signal(value, dim, derivative, name="random")


def l2_norm_running(times, samples):
    """Running trapezoidal L2 norm ||u||_{[0,t_k],2} on a grid."""
    sq = np.sum(np.asarray(samples, dtype=float).reshape(len(times), -1) ** 2, axis=1)
    dt = np.diff(np.asarray(times, dtype=float))
    acc = np.concatenate([[0.0], np.cumsum(0.5 * dt * (sq[1:] + sq[:-1]))])
    return np.sqrt(acc)
