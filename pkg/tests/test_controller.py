import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from nonauto_io.boundary_io import discretize_ph, project_classical_datum, simulate_boundary
from nonauto_io.controller import (
    DynamicController,
    build_closed_loop_ph,
    controller_output,
    controller_rhs,
    quadratic_potential,
    quartic_potential,
    vocabulary_map,
)
from nonauto_io.errors import InvalidInterconnectionError, InvalidSpecError, InvalidStateError
from nonauto_io.examples import make_timoshenko_beam
from nonauto_io.signals import sin2_ramp_signal, sinusoid_signal, zero_signal
from nonauto_io.verify import check_impedance_passivity

from conftest import linear_controller, string_closed_loop


def controller(mc=2, k=1, damping=None, b_c=None, s_c=None, potential=None):
    p, gp = quadratic_potential(np.eye(mc)) if potential is None else potential
    b_c = np.ones((mc, k)) if b_c is None else b_c
    s_c = np.eye(k) if s_c is None else s_c
    damping = (lambda t, w: np.zeros_like(w)) if damping is None else damping
    return DynamicController(np.eye(mc), b_c, s_c, p, gp, damping, ("quadratic", 1.0, 1.0))


def test_rhs_equilibrium():
    ctrl = controller(damping=lambda t, w: w)
    assert np.array_equal(controller_rhs(ctrl, 0.3, np.zeros(4), np.zeros(1)), np.zeros(4))


def test_rhs_dimension_mismatch():
    with pytest.raises(InvalidStateError):
        controller_rhs(controller(), 0.0, np.zeros(3), np.zeros(1))
    with pytest.raises(InvalidStateError):
        controller_output(controller(), 0.0, np.zeros(4), np.zeros(2))


def test_undamped_oscillator_conserves_energy():
    ctrl = controller()
    v0 = np.array([1.0, -0.5, 0.2, 0.8])
    sol = solve_ivp(lambda t, v: controller_rhs(ctrl, t, v, np.zeros(1)), (0.0, 10.0), v0,
                    method="DOP853", rtol=1e-12, atol=1e-12, dense_output=True)
    e0 = ctrl.energy(v0)
    for t in np.linspace(0.0, 10.0, 51):
        assert abs(ctrl.energy(sol.sol(t)) - e0) <= 1e-6
    # closed form: v1(t) = v1(0) cos t + v2(0) sin t
    np.testing.assert_allclose(sol.sol(10.0)[:2], v0[:2] * np.cos(10) + v0[2:] * np.sin(10),
                               atol=1e-8)


def test_linear_damping_dissipates_energy():
    ctrl = controller(damping=lambda t, w: w)
    rng = np.random.default_rng(0)
    v0 = rng.normal(size=4)
    sol = solve_ivp(lambda t, v: controller_rhs(ctrl, t, v, np.zeros(1)), (0.0, 5.0), v0,
                    method="DOP853", rtol=1e-11, atol=1e-12, dense_output=True)
    energies = [ctrl.energy(sol.sol(t)) for t in np.linspace(0.0, 5.0, 40)]
    assert all(b < a for a, b in zip(energies, energies[1:]))


def test_output_cases():
    ctrl = controller(s_c=np.array([[2.0]]))
    assert np.array_equal(controller_output(ctrl, 0.0, np.zeros(4), np.zeros(1)), np.zeros(1))
    v = np.array([3.0, -1.0, 0.0, 0.0])
    assert np.array_equal(controller_output(ctrl, 0.0, v, np.array([1.5])), [3.0])
    free = controller(b_c=np.zeros((2, 1)))
    rng = np.random.default_rng(1)
    outs = {float(controller_output(free, 0.0, rng.normal(size=4), np.array([0.5]))[0])
            for _ in range(20)}
    assert outs == {0.5}


def test_validation_accepts_and_rejects():
    assert controller(damping=lambda t, w: w).validate().passed
    bad_k = DynamicController(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones((2, 1)), np.eye(1),
                              *quadratic_potential(np.eye(2)), lambda t, w: w)
    assert not bad_k.validate().get("K_c_spd").passed
    neg = controller(damping=lambda t, w: -w)
    assert not neg.validate().get("damping_nonnegative").passed
    p, _ = quadratic_potential(np.eye(2))
    wrong_grad = controller(potential=(p, lambda v: 2 * v))
    assert not wrong_grad.validate().get("grad_potential_consistent").passed
    flat = controller(potential=(lambda v: float(np.tanh(v @ v)), lambda v: 0 * v))
    assert not flat.validate().get("potential_radially_unbounded").passed


def test_quartic_potential_gradient():
    p, gp = quartic_potential(1.0, 0.5)
    v = np.array([0.3, -1.2])
    eps = 1e-6
    fd = [(p(v + eps * e) - p(v - eps * e)) / (2 * eps) for e in np.eye(2)]
    np.testing.assert_allclose(gp(v), fd, rtol=1e-7)


def test_vocabulary():
    lin, lip = vocabulary_map({"kind": "linear", "gain": 2.0})
    assert np.array_equal(lin(np.array([1.0, -2.0])), [2.0, -4.0]) and lip(5.0) == 2.0
    cub, lip = vocabulary_map({"kind": "cubic", "linear": 1.0, "cubic": 1.0})
    assert cub(np.array([2.0]))[0] == 10.0 and lip(2.0) == 13.0
    sat, _ = vocabulary_map({"kind": "saturation", "limit": 2.0, "gain": 1.0})
    assert abs(sat(np.array([100.0]))[0]) <= 2.0
    tab, _ = vocabulary_map({"kind": "tabulated", "x": [0.0, 1.0, 2.0], "y": [0.0, 1.0, 3.0]})
    np.testing.assert_allclose(tab(np.array([-1.5, 0.5, 3.0])), [-2.0, 0.5, 5.0])
    with pytest.raises(InvalidSpecError):
        vocabulary_map({"kind": "exp"})


def test_interconnection_dimension_mismatch():
    open_sys = discretize_ph(make_timoshenko_beam(), 8)
    with pytest.raises(InvalidInterconnectionError):
        build_closed_loop_ph(open_sys, linear_controller(1))


def test_closed_loop_equilibrium(string16):
    _, _, closed, _ = string16
    traj = simulate_boundary(closed, np.zeros(closed.dim), zero_signal(1), 2.0, 1e-2)
    assert np.max(np.abs(traj.states)) == 0.0 and np.max(np.abs(traj.outputs)) == 0.0


def test_closed_loop_structure(string16):
    open_sys, ctrl, closed, _ = string16
    assert closed.dim == open_sys.dim + 2 * ctrl.m_c
    rep = closed.validate()
    assert rep.passed
    x = np.random.default_rng(0).normal(size=closed.dim)
    # quadratic potential and linear damping: f = -K v2
    np.testing.assert_allclose(closed.f(0.0, x)[-1], -x[-1], atol=1e-15)
    np.testing.assert_allclose(closed.f(0.0, x)[:-1], 0.0)


def test_closed_loop_impedance(string16):
    open_sys, ctrl, closed, storage = string16
    u = sin2_ramp_signal(1.0)
    x0, _ = project_classical_datum(closed, 0.3 * np.random.default_rng(3).normal(size=closed.dim), u)
    traj = simulate_boundary(closed, x0, u, 1.0, 1e-3, method="midpoint")
    rep = check_impedance_passivity(traj, u, storage, ctrl.sigma_min, n_cells=16)
    assert rep.passed


def test_decoupled_controller_feedthrough_balance():
    p, gp = quadratic_potential(np.eye(1))
    ctrl = DynamicController(np.eye(1), np.zeros((1, 1)), 0.5 * np.eye(1), p, gp,
                             lambda t, w: w, ("quadratic", 1.0, 1.0))
    open_sys, _, closed, storage = string_closed_loop(16, ctrl)
    u = sin2_ramp_signal(0.5)
    x0, _ = project_classical_datum(closed, np.zeros(closed.dim), u)
    traj = simulate_boundary(closed, x0, u, 1.0, 1e-3, method="midpoint")
    assert check_impedance_passivity(traj, u, storage, 0.5, n_cells=16).passed
    # the controller block never moves
    assert np.max(np.abs(traj.states[:, open_sys.dim:])) == 0.0


def test_linear_closed_loop_superposition(string16):
    _, _, closed, _ = string16
    rng = np.random.default_rng(8)
    u1, u2 = sin2_ramp_signal(1.0), sinusoid_signal(0.5, 1.0, offset=0.0)
    x1, _ = project_classical_datum(closed, rng.normal(size=closed.dim), u1)
    x2, _ = project_classical_datum(closed, rng.normal(size=closed.dim), u2)
    a = simulate_boundary(closed, x1, u1, 0.5, 1e-3).states
    b = simulate_boundary(closed, x2, u2, 0.5, 1e-3).states
    ab = simulate_boundary(closed, x1 + x2, u1 + u2, 0.5, 1e-3).states
    assert np.max(np.abs(ab - a - b)) <= 1e-9


@settings(max_examples=10, deadline=None)
@given(t=st.floats(0.0, 5.0))
def test_augmented_right_inverse(t):
    _, _, closed, _ = string_closed_loop(8)
    np.testing.assert_allclose(closed.b_at(t) @ closed.right_inverse_at(t), [[1.0]], atol=1e-10)
