import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from nonauto_io.errors import InvalidStateError, NoContractionError
from nonauto_io.operator_core import evolve_linear
from nonauto_io.semilinear import (
    LipschitzLedger,
    Nonlinearity,
    Trajectory,
    constant_ledger,
    linear_nonlinearity,
    make_ledger_from_samples,
    picard_refine,
    solve_mild,
    zero_nonlinearity,
)

from conftest import constant_family, string_closed_loop


def scalar(a=0.0):
    return constant_family([[a]])


def sine_term(c=0.1):
    return Nonlinearity(lambda t, x: c * np.sin(x), constant_ledger(c), True, 1)


def test_linear_case_matches_evolve():
    fam = constant_family([[-0.3, 1.0], [-1.0, 0.0]], m=[2.0, 1.0])
    x0 = np.array([1.0, 0.2])
    traj = solve_mild(fam, zero_nonlinearity(2), None, 0.0, x0, 1.0, 1e-3)
    np.testing.assert_allclose(traj.states[-1], evolve_linear(fam, 0.0, 1.0, x0, 1e-3),
                               atol=1e-12)


def test_scalar_decay():
    f = Nonlinearity(lambda t, x: 0.0 * x, constant_ledger(0.0), True, 1)
    traj = solve_mild(scalar(-1.0), f, None, 0.5, np.array([1.0]), 1.5, 1e-4)
    np.testing.assert_allclose(traj.states[:, 0], np.exp(-(traj.grid - 0.5)), atol=1e-6)


def test_blow_up_detected():
    f = Nonlinearity(lambda t, x: x * x, None, True, 1)
    traj = solve_mild(scalar(), f, None, 0.0, np.array([1.0]), 2.0, 1e-5)
    assert traj.blew_up
    # exact solution 1 / (1 - t) leaves every bounded set at t = 1
    assert abs(traj.max_time - 1.0) <= 0.05
    assert abs(traj.states[-1, 0]) >= 1e12


def test_dimension_mismatch():
    with pytest.raises(InvalidStateError):
        solve_mild(scalar(), zero_nonlinearity(1), None, 0.0, np.ones(2), 1.0, 0.1)


def test_equilibrium_is_zero():
    fam = constant_family([[-0.3, 1.0], [-1.0, 0.0]])
    f = Nonlinearity(lambda t, x: -x ** 3, None, True, 2)
    traj = solve_mild(fam, f, None, 0.0, np.zeros(2), 3.0, 1e-2)
    assert np.max(np.abs(traj.states)) <= 1e-12


def test_picard_linear_fixed_point():
    fam = constant_family([[-1.0]])
    traj = picard_refine(fam, zero_nonlinearity(1), None, 0.0, np.array([1.0]), 1.0, 1e-3, 1)
    assert traj.extras["sweep_differences"][0] == 0.0
    np.testing.assert_allclose(traj.states[:, 0], np.exp(-traj.grid), atol=1e-6)


def test_picard_agrees_with_solver():
    fam = scalar(-1.0)
    f = sine_term()
    pic = picard_refine(fam, f, None, 0.0, np.array([1.0]), 1.0, 1e-3, 8)
    fine = solve_mild(fam, f, None, 0.0, np.array([1.0]), 1.0, 1e-5)
    assert abs(pic.states[-1, 0] - fine.states[-1, 0]) <= 1e-4
    coarse = solve_mild(fam, f, None, 0.0, np.array([1.0]), 1.0, 1e-3)
    assert np.max(np.abs(pic.states - coarse.states)) <= 10 * 1e-3


def test_picard_contracts_geometrically():
    fam = scalar(-1.0)
    lip, horizon = 0.1, 1.0
    pic = picard_refine(fam, sine_term(lip), None, 0.0, np.array([1.0]), horizon, 1e-3, 6)
    d = pic.extras["sweep_differences"]
    for a, b in zip(d, d[1:]):
        if a > 1e-14:
            assert b / a <= lip * horizon + 0.1


def test_picard_divergence_raises():
    f = Nonlinearity(lambda t, x: 1e9 * x ** 3, None, True, 1)
    with pytest.raises(NoContractionError):
        picard_refine(scalar(), f, None, 0.0, np.array([1.0]), 1.0, 1e-2, 5)


def test_ledger_linear_and_quadratic():
    lin = make_ledger_from_samples(lambda t, x: -x, [1.0, 2.0, 5.0, 10.0], 200, dim=3)
    for rho in (1.0, 2.0, 5.0, 10.0):
        assert lin(rho) == pytest.approx(1.0, rel=0.05)
    sq = make_ledger_from_samples(lambda t, x: x * x, np.linspace(1.0, 10.0, 10), 400, dim=1)
    for rho in np.linspace(1.0, 10.0, 10):
        assert sq(rho) == pytest.approx(2 * rho, rel=0.10)
        assert sq(rho) <= 2 * rho * (1 + 1e-9)
    assert np.all(np.diff(sq.values) >= 0)


def test_ledger_extrapolates_monotonically():
    led = LipschitzLedger(np.array([1.0, 2.0]), np.array([1.0, 3.0]))
    assert led(0.5) == 1.0 and led(1.5) == 2.0 and led(4.0) == 7.0


def test_nonlinearity_validation():
    good = linear_nonlinearity(np.array([[0.0, 2.0], [0.0, 0.0]]))
    assert good.validate().passed
    wrong = Nonlinearity(lambda t, x: x ** 3, constant_ledger(1.0), True, 2)
    assert not wrong.validate().get("empirical_lipschitz").passed
    shifted = Nonlinearity(lambda t, x: x + 1.0, constant_ledger(1.0), True, 2)
    assert not shifted.validate().get("vanishes_at_zero").passed


def test_trajectory_invariants():
    with pytest.raises(InvalidStateError):
        Trajectory([0.0, 0.0], np.zeros((2, 1)))
    with pytest.raises(InvalidStateError):
        Trajectory([0.0, 1.0], np.zeros((3, 1)))
    with pytest.raises(InvalidStateError):
        Trajectory([0.0, 1.0], np.zeros((2, 1)), blew_up=True)


def test_rk2_scheme_is_more_accurate():
    fam = scalar(-1.0)
    f = sine_term(0.5)
    ref = solve_ivp(lambda t, x: -x + 0.5 * np.sin(x), (0, 1), [1.0], rtol=1e-12,
                    atol=1e-14).y[0, -1]
    e1 = abs(solve_mild(fam, f, None, 0.0, np.array([1.0]), 1.0, 1e-2).states[-1, 0] - ref)
    e2 = abs(solve_mild(fam, f, None, 0.0, np.array([1.0]), 1.0, 1e-2,
                        scheme="rk2").states[-1, 0] - ref)
    assert e2 < e1


def test_convergence_order_string_closed_loop():
    _, _, closed, _ = string_closed_loop(8)
    fam, f = closed.family, closed.f
    rng = np.random.default_rng(3)
    x0 = 0.5 * rng.normal(size=closed.dim)
    t_end = 0.5
    ref = solve_ivp(lambda t, x: fam.a_apply(t, x) + f(t, x), (0.0, t_end), x0,
                    method="DOP853", rtol=1e-12, atol=1e-13).y[:, -1]
    errs = [fam.norm(solve_mild(fam, f, None, 0.0, x0, t_end, dt, method="expm").states[-1] - ref)
            for dt in (4e-3, 2e-3, 1e-3)]
    for a, b in zip(errs, errs[1:]):
        assert a / b >= 1.8


@settings(max_examples=25, deadline=None)
@given(c=st.floats(0.0, 2.0), seed=st.integers(0, 1000))
def test_ledger_bounds_observed_quotients(c, seed):
    f = Nonlinearity(lambda t, x: c * np.tanh(x), None, True, 2)
    led = make_ledger_from_samples(f, [0.5, 1.0, 2.0], 50, dim=2, seed=seed)
    assert np.all(np.diff(led.values) >= 0)
    assert led(2.0) <= c * (1 + 1e-9) + 1e-12
