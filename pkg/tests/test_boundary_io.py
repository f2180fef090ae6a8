import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonauto_io.boundary_io import (
    BoundaryIoSystem,
    PortHamiltonianSpec,
    build_right_inverse,
    check_impedance_passivity_h1,
    discretize_ph,
    input_map_phi_boundary,
    project_classical_datum,
    simulate_boundary,
)
from nonauto_io.errors import (
    CompatibilityError,
    InvalidBoundaryError,
    NoRightInverseError,
    UnsupportedOrderError,
)
from nonauto_io.examples import constant_profile, make_timoshenko_beam, make_vibrating_string
from nonauto_io.operator_core import evolve_linear, validate_family
from nonauto_io.signals import constant_signal, sin2_ramp_signal, sinusoid_signal, zero_signal

from conftest import constant_family


def unit_string():
    return make_vibrating_string(constant_profile(1.0), constant_profile(1.0))


def unit_timoshenko():
    one = constant_profile(1.0)
    return make_timoshenko_beam(one, one, one, one)


def transport_spec(inflow=True):
    ham = lambda t, z: np.ones((np.size(z), 1, 1))  # noqa: E731
    wb2 = [[1.0, 0.0]] if inflow else [[0.0, 1.0]]
    wc = [[0.0, 1.0]] if inflow else [[1.0, 0.0]]
    return PortHamiltonianSpec(1, np.zeros((1, 1)), np.ones((1, 1)), ham, (0.0, 1.0),
                               np.zeros((0, 2)), np.array(wb2), np.array(wc), 1.0, 1.0,
                               name="transport")


@pytest.fixture(scope="module")
def string8():
    return discretize_ph(make_vibrating_string(), 8)


def test_string_boundary_matrix_rank():
    spec = unit_string()
    w = spec.w_matrix()
    np.testing.assert_array_equal(w, [[0, 0, 1, 0], [0, 1, 0, 0], [1, 0, 0, 0]])
    assert np.linalg.matrix_rank(w) == 3
    assert spec.validate().passed


def test_string_discretization_valid(string8):
    assert string8.meta["scheme"] == "staggered"
    # nodes 1..8 carry the velocity (node 0 is clamped) and 8 cells carry the strain
    assert string8.dim == 16
    assert validate_family(string8.family, [0.0, 0.5, 1.0]).passed
    assert string8.validate().passed


def test_transport_spectrum_is_stable():
    sys_ = discretize_ph(transport_spec(), 16)
    assert sys_.meta["scheme"] == "upwind"
    a = sys_.family.a_at(0.0)
    eig = np.linalg.eigvals(a.toarray() if hasattr(a, "toarray") else a)
    assert eig.real.max() <= 1e-10


def test_discretize_errors():
    spec = unit_string()
    with pytest.raises(UnsupportedOrderError):
        discretize_ph(PortHamiltonianSpec(**{**spec.__dict__, "order": 2}), 8)
    bad = PortHamiltonianSpec(**{**spec.__dict__, "wc": np.array([[0.0, 1.0, 0.0, 0.0]])})
    with pytest.raises(InvalidBoundaryError):
        discretize_ph(bad, 8)


def test_impedance_identity_zero_state(string8):
    x = np.zeros(string8.dim)
    amax = string8.maximal_a0()
    assert string8.family.inner(x, amax @ x) == 0.0
    assert float((string8.b0_trace @ x) @ (string8.c0_trace @ x)) == 0.0


def test_impedance_identity_string_exact():
    rep = check_impedance_passivity_h1(discretize_ph(unit_string(), 16))
    assert rep.max_violation <= 1e-10


def test_impedance_identity_timoshenko_refinement():
    reps = [check_impedance_passivity_h1(discretize_ph(unit_timoshenko(), n)) for n in (16, 32)]
    assert all(r.passed for r in reps)
    assert reps[1].max_violation <= reps[0].max_violation + 1e-12


def test_equilibrium(string8):
    traj = simulate_boundary(string8, np.zeros(string8.dim), zero_signal(1), 1.0, 1e-2)
    assert np.max(np.abs(traj.states)) == 0.0 and np.max(np.abs(traj.outputs)) == 0.0


def test_zero_input_matches_linear_evolution(string8):
    rng = np.random.default_rng(0)
    x0 = string8.kernel_projector(0.0) @ rng.normal(size=string8.dim)
    traj = simulate_boundary(string8, x0, zero_signal(1), 1.0, 1e-3)
    ref = evolve_linear(string8.family, 0.0, 1.0, x0, 1e-3)
    assert np.max(np.abs(traj.states[-1] - ref)) <= 1e-12


def test_incompatible_datum_rejected(string8):
    with pytest.raises(CompatibilityError):
        simulate_boundary(string8, np.zeros(string8.dim), constant_signal(1.0), 0.1, 1e-2)


def test_variation_of_constants_residual(string8):
    u = sin2_ramp_signal(1.0)
    rng = np.random.default_rng(2)
    x0, _ = project_classical_datum(string8, rng.normal(size=string8.dim), u)
    scaled = []
    for dt in (2e-3, 1e-3):
        traj = simulate_boundary(string8, x0, u, 1.0, dt)
        res = 0.0
        for k in np.linspace(0, traj.grid.size - 1, 11).astype(int)[1:]:
            t = traj.grid[k]
            lin = evolve_linear(string8.family, 0.0, t, x0, dt)
            phi = input_map_phi_boundary(string8, u, t, dt=dt)
            res = max(res, string8.family.norm(traj.states[k] - lin - phi))
        scaled.append(res / dt)
    assert scaled[0] <= 10.0
    assert scaled[1] <= 1.5 * scaled[0] + 1e-9


def test_phi_boundary_trivial(string8):
    assert np.array_equal(input_map_phi_boundary(string8, zero_signal(1), 1.0),
                          np.zeros(string8.dim))
    assert np.array_equal(input_map_phi_boundary(string8, sin2_ramp_signal(1.0), 0.0),
                          np.zeros(string8.dim))


def test_projection(string8):
    rng = np.random.default_rng(5)
    u = sinusoid_signal(1.0, 1.0, phase=0.3)
    x0, _ = project_classical_datum(string8, rng.normal(size=string8.dim), u)
    again, _ = project_classical_datum(string8, x0, u)
    assert np.max(np.abs(again - x0)) <= 1e-12
    c = constant_signal(0.7)
    xc, _ = project_classical_datum(string8, np.zeros(string8.dim), c)
    r = string8.right_inverse_at(0.0)
    np.testing.assert_allclose(xc, r @ [0.7], atol=1e-15)
    np.testing.assert_allclose(string8.b_at(0.0) @ xc, [0.7], rtol=1e-14)


def coordinate_system(i=1, n=4, gram=None):
    fam = constant_family(-np.eye(n), gram=gram)
    b0 = np.zeros((1, n))
    b0[0, i] = 1.0
    return BoundaryIoSystem(fam, b0, b0.copy(), np.zeros((n, 1)))


def test_right_inverse_coordinate_functional():
    sys_ = coordinate_system(gram=np.array([1.0, 3.0, 0.5, 2.0]))
    r = sys_.right_inverse_at(0.4)
    np.testing.assert_allclose(r[:, 0], [0.0, 1.0, 0.0, 0.0], atol=1e-15)
    assert np.max(np.abs(sys_.right_inverse_dt(0.4))) <= 1e-6
    assert sys_.validate().passed


def test_right_inverse_rank_deficient():
    fam = constant_family(-np.eye(3))
    with pytest.raises(NoRightInverseError):
        BoundaryIoSystem(fam, np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((3, 1)))


def test_right_inverse_identity_timoshenko():
    sys_ = discretize_ph(make_timoshenko_beam(), 16)
    for t in np.linspace(0.0, 3.0, 7):
        np.testing.assert_allclose(sys_.b_at(t) @ sys_.right_inverse_at(t), np.eye(2),
                                   atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.floats(0.0, 5.0))
def test_right_inverse_is_minimum_norm(seed, t):
    sys_ = discretize_ph(make_vibrating_string(), 8)
    r, _ = build_right_inverse(sys_)
    rng = np.random.default_rng(seed)
    b = sys_.b_at(t)
    ri = r(t)[:, 0]
    # every other preimage of 1 differs by a kernel element and is at least as long
    z = rng.normal(size=sys_.dim)
    k = z - ri * (b @ z)[0]
    assert abs((b @ k)[0]) <= 1e-9 * max(1.0, np.abs(z).max())
    assert sys_.family.norm(ri + k) >= sys_.family.norm(ri) * (1 - 1e-12)
