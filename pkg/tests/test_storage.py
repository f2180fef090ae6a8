import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from nonauto_io.comparison import ComparisonFn, make_power_fn
from nonauto_io.controller import DynamicController, quartic_potential
from nonauto_io.errors import IncompleteEnvelopeError, InvalidStateError
from nonauto_io.operator_core import OperatorFamily
from nonauto_io.semilinear import solve_mild, zero_nonlinearity
from nonauto_io.storage import StorageFunction, closed_loop_ph_storage, quadratic_storage

from conftest import constant_family, linear_controller


def test_identity_weight():
    st_ = quadratic_storage(constant_family(-np.eye(3)))
    x = np.array([1.0, 2.0, -2.0])
    assert st_(0.7, x) == pytest.approx(4.5)
    assert st_.lower(3.0) == st_.upper(3.0) == 4.5
    assert st_(1.0, np.zeros(3)) == 0.0


def test_diagonal_weight_arithmetic():
    st_ = quadratic_storage(constant_family(-np.eye(2), m=[1.0, 4.0]))
    x = np.array([1.0, 1.0])
    r = st_.norm(x)
    assert r == pytest.approx(np.sqrt(2))
    assert st_(0.0, x) == pytest.approx(2.5)
    assert st_.lower(r) == pytest.approx(1.0) and st_.upper(r) == pytest.approx(4.0)
    assert st_.validate().passed


def test_gradient_of_time_varying_storage():
    gram = np.array([[2.0, 0.5], [0.5, 1.0]])

    def m_at(t):
        # G M(t) symmetric, so M(t) is self-adjoint in the weighted inner product
        return np.linalg.solve(gram, np.array([[2.0 - t / (1 + t), 0.2], [0.2, 1.5]]))

    eigs = [sla.eigh(gram @ m_at(t), gram, eigvals_only=True) for t in np.linspace(0, 10, 101)]
    fam = OperatorFamily(2, lambda t: -np.eye(2), m_at, float(np.min(eigs)), float(np.max(eigs)),
                         gram)
    st_ = quadratic_storage(fam)
    rep = st_.validate(times=np.linspace(0.0, 3.0, 7))
    assert rep.passed, rep.to_dict()
    dt, gx = st_.grad(1.0, np.array([1.0, -1.0]))
    fdt, fgx = st_.fd_grad(1.0, np.array([1.0, -1.0]))
    assert dt == pytest.approx(fdt, rel=1e-6)
    np.testing.assert_allclose(gx, fgx, rtol=1e-6)


def test_validate_flags_bad_envelope():
    bad = StorageFunction(lambda t, x: float(x @ x), make_power_fn(1.0, 2), make_power_fn(0.5, 2),
                          np.ones(2))
    rep = bad.validate()
    assert not rep.get("upper_envelope").passed
    assert rep.get("lower_envelope").passed


def test_closed_loop_storage_reductions():
    plant = constant_family(np.zeros((3, 3)), m=[2.0, 1.0, 1.5])
    ctrl = linear_controller()
    st_ = closed_loop_ph_storage(plant, ctrl)
    xp = np.array([1.0, -1.0, 0.5])
    plant_v = quadratic_storage(plant)(0.0, xp)
    assert st_(0.0, np.concatenate([xp, [0.0, 0.0]])) == pytest.approx(plant_v)
    assert st_(0.0, np.array([0.0, 0.0, 0.0, 3.0, -2.0])) == pytest.approx(0.5 * 9 + 0.5 * 4)
    with pytest.raises(InvalidStateError):
        st_(0.0, np.zeros(4))


def test_closed_loop_storage_sandwich_quadratic(string16):
    *_, storage = string16
    rep = storage.validate(samples=500)
    assert rep.passed, rep.to_dict()


def test_closed_loop_storage_sandwich_quartic():
    plant = constant_family(np.zeros((2, 2)), m=[0.5, 2.0])
    p, gp = quartic_potential(1.0, 0.5)
    env = (make_power_fn(0.5, 2), ComparisonFn(lambda r: 0.5 * r * r + 0.125 * r ** 4))
    ctrl = DynamicController(np.diag([1.0, 2.0]), np.ones((2, 1)), np.eye(1), p, gp,
                             lambda t, w: w, env)
    st_ = closed_loop_ph_storage(plant, ctrl)
    assert st_.validate(samples=500, radius=10.0).passed


def test_missing_envelopes():
    plant = constant_family(np.zeros((2, 2)))
    p, gp = quartic_potential(1.0, 1.0)
    ctrl = DynamicController(np.eye(1), np.ones((1, 1)), np.eye(1), p, gp, lambda t, w: w)
    with pytest.raises(IncompleteEnvelopeError):
        closed_loop_ph_storage(plant, ctrl)
    with pytest.raises(IncompleteEnvelopeError):
        closed_loop_ph_storage(plant, ctrl, ("quadratic", 0.0, 1.0))


def test_closed_loop_storage_matches_quadratic_form(string16):
    _, _, closed, storage = string16
    quad = quadratic_storage(closed.family)
    rng = np.random.default_rng(0)
    for _ in range(20):
        t, x = rng.uniform(0, 5), rng.normal(size=closed.dim)
        assert storage(t, x) == pytest.approx(quad(t, x), rel=1e-12)


def test_storage_decreases_along_dissipative_flow(string16):
    open_sys, *_ = string16
    fam = open_sys.family
    st_ = quadratic_storage(fam)
    rng = np.random.default_rng(1)
    x0 = open_sys.kernel_projector(0.0) @ rng.normal(size=fam.dim)
    incs = []
    for dt in (1e-2, 5e-3):
        traj = solve_mild(fam, zero_nonlinearity(fam.dim), None, 0.0, x0, 1.0, dt)
        v = st_.along(traj.grid, traj.states)
        incs.append(np.max(np.diff(v)) / dt ** 2)
    # per-step increase bounded by C dt^2 with the same C on the finer grid
    assert incs[0] <= 1.0
    assert incs[1] <= max(incs[0], 0.0) + 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.floats(0.0, 5.0))
def test_derivative_norm_dominates_directional_change(seed, t):
    fam = constant_family(-np.eye(3), m=[1.0, 2.0, 3.0], gram=[1.0, 0.5, 2.0])
    st_ = quadratic_storage(fam)
    rng = np.random.default_rng(seed)
    x, d = rng.normal(size=(2, 3))
    eps = 1e-6
    change = abs(st_(t, x + eps * d) - st_(t, x - eps * d)) / (2 * eps)
    assert change <= st_.derivative_norm(t, x) * fam.norm(d) * (1 + 1e-6) + 1e-9
