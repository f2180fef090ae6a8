import numpy as np
import pytest

from nonauto_io.boundary_io import discretize_ph
from nonauto_io.controller import (
    DynamicController,
    build_closed_loop_ph,
    quadratic_potential,
    vocabulary_map,
)
from nonauto_io.distributed_io import CollocatedSpec, build_collocated_closed_loop
from nonauto_io.examples import make_euler_bernoulli_tip_mass, make_vibrating_string
from nonauto_io.operator_core import OperatorFamily
from nonauto_io.storage import closed_loop_ph_storage, quadratic_storage


def constant_family(a0, m=None, gram=None, monotone=False):
    a0 = np.atleast_2d(np.asarray(a0, dtype=float))
    n = a0.shape[0]
    m = np.ones(n) if m is None else np.asarray(m, dtype=float)
    gram = np.ones(n) if gram is None else np.asarray(gram, dtype=float)
    mm = np.diag(m) if m.ndim == 1 else m
    ev = np.linalg.eigvalsh(0.5 * (mm + mm.T))
    return OperatorFamily(n, lambda t: a0, lambda t: m, float(ev.min()), float(ev.max()), gram,
                          monotone=monotone, a0_constant=True, m_constant=True)


def linear_controller(k=1, damping_gain=1.0, s_c=1.0, b_c=1.0):
    p, gp = quadratic_potential(np.eye(k))
    return DynamicController(np.eye(k), b_c * np.eye(k), s_c * np.eye(k), p, gp,
                             lambda t, w: damping_gain * w, ("quadratic", 1.0, 1.0))


def string_closed_loop(n_cells=16, ctrl=None):
    open_sys = discretize_ph(make_vibrating_string(), n_cells)
    ctrl = linear_controller() if ctrl is None else ctrl
    closed = build_closed_loop_ph(open_sys, ctrl)
    return open_sys, ctrl, closed, closed_loop_ph_storage(open_sys.family, ctrl)


def eb_cubic_closed_loop(n_cells=8):
    base = make_euler_bernoulli_tip_mass(n_cells=n_cells)
    g, lip = vocabulary_map({"kind": "cubic", "linear": 1.0, "cubic": 1.0})
    closed = build_collocated_closed_loop(CollocatedSpec(base, g, 1.0, lip))
    return base, closed, quadratic_storage(closed.family)


@pytest.fixture(scope="session")
def string16():
    return string_closed_loop(16)


@pytest.fixture(scope="session")
def eb8():
    return eb_cubic_closed_loop(8)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
        terminalreporter.write_line(mod.RESULTS[key])
