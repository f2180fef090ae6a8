"""Boundary-controlled port-Hamiltonian systems of order one.

The discrete model is x' = A0 M(t) x + f(t, x) + G u with a homogeneous
operator A0 (u = 0) and an injection matrix G.  Boundary input and output are
trace maps u = B0 M(t) x and y = C0 M(t) x, and the maximal operator is
A0 + G B0.
"""

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import (
    CompatibilityError,
    InvalidBoundaryError,
    InvalidSpecError,
    InvalidStateError,
    NoRightInverseError,
    UnsupportedOrderError,
)
from .operator_core import (
    CheckResult,
    OperatorFamily,
    Stepper,
    ValidationReport,
    _step_count,
    memo_recent,
)
from .semilinear import Nonlinearity, _trapezoid_sweep, solve_mild, zero_nonlinearity

R_DIFF_STEP = 1e-5
_SAMPLE_TIMES = np.linspace(0.0, 5.0, 11)


def _is_zero_signal(u):
    return getattr(u, "name", "") == "zero"


@dataclass(frozen=True)
class PortHamiltonianSpec:
    """x_t = P1 d/dz (H x) + P0 H x on (a, b) with boundary matrices over ((Hx)(b), (Hx)(a)).

    ``hamiltonian(t, z)`` must accept an array of positions and return an
    array of shape (len(z), m, m).
    """

    field_dim: int
    p0: np.ndarray
    p1: np.ndarray
    hamiltonian: Callable[[float, np.ndarray], np.ndarray]
    interval: tuple
    wb1: np.ndarray
    wb2: np.ndarray
    wc: np.ndarray
    m_lower: float
    m_upper: float
    order: int = 1
    monotone: bool = True
    name: str = "ph"

    @property
    def input_dim(self):
        return np.atleast_2d(self.wb2).shape[0]

    def h_values(self, t, zetas):
        zetas = np.asarray(zetas, dtype=float)
        m = self.field_dim
        try:
            vals = np.asarray(self.hamiltonian(t, zetas), dtype=float)
            if vals.shape == (zetas.size, m, m):
                return vals
        except (TypeError, ValueError):
            pass
        return np.array([np.asarray(self.hamiltonian(t, z), dtype=float).reshape(m, m)
                         for z in zetas])

    def w_matrix(self):
        m = self.field_dim
        rows = [np.reshape(w, (-1, 2 * m)) for w in (self.wb1, self.wb2, self.wc)]
        return np.vstack(rows)

    def validate(self, times=None, points=21, pairs=50, seed=0):
        times = _SAMPLE_TIMES if times is None else np.asarray(times, dtype=float)
        m = self.field_dim
        p0 = np.asarray(self.p0, dtype=float)
        p1 = np.asarray(self.p1, dtype=float)
        checks = []
        sym = float(np.abs(p1 - p1.T).max())
        checks.append(CheckResult("p1_symmetric", sym <= 1e-14, sym))
        sv = np.linalg.svd(p1, compute_uv=False)
        checks.append(CheckResult("p1_invertible", sv.min() > 1e-12 * sv.max(), float(sv.min())))
        d = float(np.linalg.eigvalsh(p0 + p0.T).max())
        checks.append(CheckResult("p0_dissipative", d <= 1e-14, max(d, 0.0)))
        a, b = self.interval
        zs = np.linspace(a, b, points)
        lo = hi = asym = 0.0
        hs = []
        for t in times:
            vals = self.h_values(t, zs)
            hs.append(vals)
            asym = max(asym, float(np.abs(vals - vals.transpose(0, 2, 1)).max()))
            eig = np.linalg.eigvalsh(0.5 * (vals + vals.transpose(0, 2, 1)))
            lo = max(lo, self.m_lower - float(eig.min()))
            hi = max(hi, float(eig.max()) - self.m_upper)
        checks.append(CheckResult("h_symmetric", asym <= 1e-14, asym))
        checks.append(CheckResult("h_lower_bound", lo <= 1e-12, max(lo, 0.0)))
        checks.append(CheckResult("h_upper_bound", hi <= 1e-12, max(hi, 0.0)))
        if self.monotone:
            inc = 0.0
            for h0, h1 in zip(hs, hs[1:]):
                inc = max(inc, float(np.linalg.eigvalsh(h1 - h0).max()))
            checks.append(CheckResult("h_monotone_decreasing", inc <= 1e-12, max(inc, 0.0)))
        w = self.w_matrix()
        rank = int(np.linalg.matrix_rank(w))
        need = m * self.order + self.input_dim
        checks.append(CheckResult("w_full_rank", rank == need and w.shape[0] == need,
                                  float(need - rank), f"rank {rank}, required {need}"))
        return ValidationReport(checks)


@dataclass(frozen=True)
class IdentityReport:
    """Sampled check of <x, A0max x> <= (B0 x)^T (C0 x)."""

    max_violation: float
    tolerance: float
    trials: int
    n_cells: int

    @property
    def passed(self):
        return self.max_violation <= self.tolerance

    def to_dict(self):
        return {"kind": "impedance_identity", "max_violation": self.max_violation,
                "tolerance": self.tolerance, "trials": self.trials,
                "n_cells": self.n_cells, "pass": self.passed}


@dataclass(frozen=True)
class BoundaryIoSystem:
    """Discretized boundary control system with Fattorini data."""

    family: OperatorFamily
    b0_trace: np.ndarray
    c0_trace: np.ndarray
    injection: np.ndarray
    f: Nonlinearity = None
    n_cells: int = 0
    right_inverse_at: Optional[Callable] = None
    right_inverse_dt: Optional[Callable] = None
    name: str = "boundary"
    meta: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    kind = "boundary"

    def __post_init__(self):
        if self.f is None:
            object.__setattr__(self, "f", zero_nonlinearity(self.family.dim))
        if self.right_inverse_at is None:
            r, rd = build_right_inverse(self)
            object.__setattr__(self, "right_inverse_at", r)
            object.__setattr__(self, "right_inverse_dt", rd)
        elif self.right_inverse_dt is None:
            object.__setattr__(self, "right_inverse_dt", _fd_derivative(self.right_inverse_at))

    @property
    def dim(self):
        return self.family.dim

    @property
    def input_dim(self):
        return self.b0_trace.shape[0]

    def b_at(self, t):
        return self.family.m_apply(t, self.b0_trace.T).T

    def c_at(self, t):
        return self.family.m_apply(t, self.c0_trace.T).T

    def output(self, t, x):
        return self.c0_trace @ self.family.m_apply(t, x)

    def input_operator_at(self, t):
        """The matrix through which u enters the discrete equation (x' = ... + G u)."""
        return self.injection

    def maximal_a0(self):
        """A0 + G B0, the discrete counterpart of the unrestricted differential operator."""
        if "a0max" not in self._cache:
            a0 = self.family.a0_matrix(0.0)
            a0 = a0.toarray() if sp.issparse(a0) else np.asarray(a0)
            self._cache["a0max"] = a0 + self.injection @ self.b0_trace
        return self._cache["a0max"]

    def kernel_projector(self, t):
        r = self.right_inverse_at(t)
        return np.eye(self.dim) - r @ self.b_at(t)

    def with_nonlinearity(self, f):
        return BoundaryIoSystem(self.family, self.b0_trace, self.c0_trace, self.injection, f,
                                self.n_cells, self.right_inverse_at, self.right_inverse_dt,
                                self.name, dict(self.meta))

    def prepare_datum(self, x0, u):
        return project_classical_datum(self, x0, u)

    def validate(self, times=None):
        times = _SAMPLE_TIMES if times is None else np.asarray(times, dtype=float)
        ri = ker = 0.0
        for t in times:
            b = self.b_at(t)
            r = self.right_inverse_at(t)
            ri = max(ri, float(np.abs(b @ r - np.eye(self.input_dim)).max()))
            ker = max(ker, float(np.abs(b @ self.kernel_projector(t)).max()))
        return ValidationReport(
            [CheckResult("right_inverse", ri <= 1e-10, ri),
             CheckResult("kernel_consistency", ker <= 1e-10, ker)],
            ["equality of the domains of the differential operator and the trace is not "
             "distinguishable on the discrete space"])


def _fd_derivative(func, step=R_DIFF_STEP):
    def deriv(t):
        if t >= step:
            return (func(t + step) - func(t - step)) / (2 * step)
        return (func(t + step) - func(t)) / step
    return deriv


def build_right_inverse(system, times=None):
    """Minimum-norm right inverse R(t) = W^{-1} B^T (B W^{-1} B^T)^{-1} and its FD derivative."""
    fam = system.family
    b0 = np.asarray(system.b0_trace, dtype=float)
    gram = np.asarray(fam.inner_product, dtype=float)
    if gram.ndim == 1:
        def winv(m):
            return m / gram[:, None]
    else:
        def winv(m):
            return np.linalg.solve(gram, m)

    def r_at(t):
        b = fam.m_apply(t, b0.T).T
        wb = winv(b.T)
        s = b @ wb
        if s.shape == (1, 1):
            return wb / s[0, 0]
        return np.linalg.solve(s, wb.T).T

    for t in (_SAMPLE_TIMES if times is None else times):
        b = fam.m_apply(t, b0.T).T
        sv = np.linalg.svd(b, compute_uv=False)
        if sv.size == 0 or sv.min() <= 1e-12 * max(sv.max(), 1e-300):
            raise NoRightInverseError(f"boundary input map is rank deficient at t={t}")
    r_at = memo_recent(r_at)
    return r_at, _fd_derivative(r_at)


def _bipartition(p1):
    """Connected components of the off-diagonal pattern of P1 with a 2-colouring, or None."""
    m = p1.shape[0]
    if np.any(np.abs(np.diag(p1)) > 0):
        return None
    adj = np.abs(p1) > 0
    color = -np.ones(m, dtype=int)
    comps = []
    for s in range(m):
        if color[s] >= 0:
            continue
        color[s] = 0
        comp, stack = [s], [s]
        while stack:
            i = stack.pop()
            for j in np.nonzero(adj[i])[0]:
                if color[j] < 0:
                    color[j] = 1 - color[i]
                    comp.append(j)
                    stack.append(j)
                elif color[j] == color[i]:
                    return None
        comps.append(sorted(comp))
    return color, comps


def _boundary_solution(w_b1, w_b2, m, q_idx, p_idx):
    """Solve the boundary rows for the cell-group efforts at the ends.

    Returns (eliminated ends, unknown trace indices, known trace indices,
    F_known, F_u) with z = F_known q + F_u u, or None if unsupported.
    """
    k = w_b2.shape[0]
    w = np.vstack([w_b1, w_b2])
    rhs_sel = np.vstack([np.zeros((w_b1.shape[0], k)), np.eye(k)])
    consumed = np.zeros(w.shape[0], dtype=bool)
    eliminated = {}
    for end, off in (("b", 0), ("a", m)):
        cols = [off + i for i in q_idx]
        others = np.setdiff1d(np.arange(2 * m), cols)
        rows = [r for r in range(w_b1.shape[0]) if np.allclose(w_b1[r, others], 0.0)
                and np.any(w_b1[r, cols] != 0)]
        eliminated[end] = bool(rows) and np.linalg.matrix_rank(w_b1[np.ix_(rows, cols)]) == len(cols)
        if eliminated[end]:
            consumed[rows] = True
    unknown, known, dead = [], [], []
    for end, off in (("b", 0), ("a", m)):
        if eliminated[end]:
            dead += [off + i for i in p_idx]
        else:
            unknown += [off + i for i in p_idx]
            known += [off + i for i in q_idx]
    rem = ~consumed
    w_rem = w[rem]
    if dead and not np.allclose(w_rem[:, dead], 0.0):
        return None
    s = w_rem[:, unknown]
    if s.shape[0] != s.shape[1] or (s.size and np.linalg.matrix_rank(s) < s.shape[0]):
        return None
    if not s.size:
        return eliminated, unknown, known, np.zeros((0, len(known))), np.zeros((0, k))
    s_inv = np.linalg.inv(s)
    return (eliminated, unknown, known, -s_inv @ w_rem[:, known], s_inv @ rhs_sel[rem])


def _h_diag_only(spec, zetas, q_idx, p_idx):
    for t in (0.0, 1.0, 5.0):
        vals = spec.h_values(t, zetas)
        off = vals.copy()
        off[:, np.arange(spec.field_dim), np.arange(spec.field_dim)] = 0.0
        if np.abs(off[:, q_idx][:, :, p_idx]).max(initial=0.0) > 0:
            raise InvalidSpecError("H must not couple the node and cell variable groups")
        if np.abs(off).max(initial=0.0) > 0:
            return False
    return True


def discretize_ph(spec, n_cells):
    """Structure-preserving finite differences for an order-one pH spec."""
    if spec.order != 1:
        raise UnsupportedOrderError(f"only order N=1 is supported, got {spec.order}")
    if n_cells < 4:
        raise InvalidBoundaryError("n_cells must be at least 4")
    m = spec.field_dim
    w = spec.w_matrix()
    k = spec.input_dim
    if w.shape[0] != m + k or np.linalg.matrix_rank(w) < m + k:
        raise InvalidBoundaryError(f"stacked boundary matrix must have full row rank {m + k}")
    p1 = np.asarray(spec.p1, dtype=float)
    w_b1 = np.reshape(np.asarray(spec.wb1, dtype=float), (-1, 2 * m))
    w_b2 = np.reshape(np.asarray(spec.wb2, dtype=float), (-1, 2 * m))
    part = _bipartition(p1)
    if part is not None:
        color, comps = part
        for flips in product((0, 1), repeat=len(comps)):
            q = sorted(i for c, fl in zip(comps, flips) for i in c if color[i] == fl)
            p = sorted(set(range(m)) - set(q))
            sol = _boundary_solution(w_b1, w_b2, m, q, p)
            if sol is not None:
                return _staggered(spec, n_cells, q, p, sol)
    return _upwind(spec, n_cells)


def _make_family(spec, dim, a0, gram, zeta_of_state, comp_of_state, diag_only, blocks, name):
    a, b = spec.interval
    span = b - a
    m = spec.field_dim

    if diag_only:
        def m_at(t):
            return spec.h_values(t, zeta_of_state)[np.arange(dim), comp_of_state, comp_of_state]
    else:
        def m_at(t):
            mats = []
            for zs, idx in blocks:
                vals = spec.h_values(t, zs)[:, idx][:, :, idx]
                mats.append(sp.block_diag(list(vals), format="csr"))
            return sp.block_diag(mats, format="csr")

    return OperatorFamily(dim, lambda t: a0, memo_recent(m_at), spec.m_lower, spec.m_upper, gram,
                          monotone=spec.monotone, a0_constant=True, m_constant=False,
                          name=name)


def _staggered(spec, n, q_idx, p_idx, sol):
    eliminated, unknown, known, f_known, f_u = sol
    m = spec.field_dim
    nq, np_ = len(q_idx), len(p_idx)
    a, b = spec.interval
    h = (b - a) / n
    p1 = np.asarray(spec.p1, dtype=float)
    p0 = np.asarray(spec.p0, dtype=float)
    p1_qp = p1[np.ix_(q_idx, p_idx)]
    p1_pq = p1[np.ix_(p_idx, q_idx)]
    i0 = 1 if eliminated["a"] else 0
    i1 = n - 1 if eliminated["b"] else n
    nodes = np.arange(i0, i1 + 1)
    nn = nodes.size
    node_w = np.full(nn, h)
    if i0 == 0:
        node_w[0] = h / 2
    if i1 == n:
        node_w[-1] = h / 2
    cell_w = np.full(n, h)

    # nodes x cells difference for the node equations
    d = sp.lil_matrix((nn, n))
    interp = sp.lil_matrix((nn, n))
    for r, i in enumerate(nodes):
        if i >= 1:
            d[r, i - 1] -= 1.0 / node_w[r]
        if i <= n - 1:
            d[r, i] += 1.0 / node_w[r]
        if 1 <= i <= n - 1:
            interp[r, i - 1] = 0.5
            interp[r, i] = 0.5
        else:
            interp[r, 0 if i == 0 else n - 1] = 1.0
    # cells x nodes difference for the cell equations
    dc = sp.lil_matrix((n, nn))
    for j in range(n):
        for i, sgn in ((j + 1, 1.0), (j, -1.0)):
            if i0 <= i <= i1:
                dc[j, i - i0] += sgn / h
    d, interp, dc = d.tocsr(), interp.tocsr(), dc.tocsr()
    interp_adj = sp.diags(1.0 / cell_w) @ interp.T @ sp.diags(node_w)

    nqd, npd = nn * nq, n * np_
    dim = nqd + npd
    a_qq = sp.kron(sp.identity(nn), p0[np.ix_(q_idx, q_idx)])
    a_qp = sp.kron(d, p1_qp) + sp.kron(interp, p0[np.ix_(q_idx, p_idx)])
    a_pq = sp.kron(dc, p1_pq) + sp.kron(interp_adj, p0[np.ix_(p_idx, q_idx)])
    a_pp = sp.kron(sp.identity(n), p0[np.ix_(p_idx, p_idx)])
    a0 = sp.bmat([[a_qq, a_qp], [a_pq, a_pp]], format="lil")

    # state index of a trace entry (node value or None)
    def q_state(end, comp):
        node = n if end == "b" else 0
        if not i0 <= node <= i1:
            return None
        return (node - i0) * nq + q_idx.index(comp)

    def trace_end(idx):
        return ("b", idx) if idx < m else ("a", idx - m)

    # boundary efforts z = F_known q + F_u u enter the end-node equations
    zc = np.zeros((dim, len(unknown)))
    for c, idx in enumerate(unknown):
        end, comp = trace_end(idx)
        node = n if end == "b" else 0
        row0 = (node - i0) * nq
        wgt = node_w[node - i0]
        sgn = 1.0 if end == "b" else -1.0
        zc[row0:row0 + nq, c] = sgn * p1_qp[:, p_idx.index(comp)] / wgt
    sq = np.zeros((len(known), dim))
    for r, idx in enumerate(known):
        end, comp = trace_end(idx)
        sq[r, q_state(end, comp)] = 1.0
    a0 = sp.csr_matrix(a0) + sp.csr_matrix(zc @ f_known @ sq)
    a0.eliminate_zeros()
    injection = zc @ f_u

    # trace on effort vectors: node values and linear extrapolation of cell values
    trace = np.zeros((2 * m, dim))
    for idx in range(2 * m):
        end, comp = trace_end(idx)
        if comp in q_idx:
            s = q_state(end, comp)
            if s is not None:
                trace[idx, s] = 1.0
        else:
            pc = p_idx.index(comp)
            c_near, c_far = (n - 1, n - 2) if end == "b" else (0, 1)
            trace[idx, nqd + c_near * np_ + pc] = 1.5
            trace[idx, nqd + c_far * np_ + pc] = -0.5
    w_b2 = np.reshape(np.asarray(spec.wb2, dtype=float), (-1, 2 * m))
    w_c = np.reshape(np.asarray(spec.wc, dtype=float), (-1, 2 * m))

    node_z = a + h * nodes
    cell_z = a + h * (np.arange(n) + 0.5)
    zeta_of_state = np.concatenate([np.repeat(node_z, nq), np.repeat(cell_z, np_)])
    comp_of_state = np.concatenate([np.tile(q_idx, nn), np.tile(p_idx, n)])
    gram = np.concatenate([np.repeat(node_w, nq), np.repeat(cell_w, np_)])
    diag_only = _h_diag_only(spec, np.concatenate([node_z, cell_z]), q_idx, p_idx)
    blocks = [(node_z, q_idx), (cell_z, p_idx)]
    fam = _make_family(spec, dim, sp.csr_matrix(a0), gram, zeta_of_state, comp_of_state,
                       diag_only, blocks, spec.name)
    meta = {"scheme": "staggered", "node_group": [int(i) for i in q_idx],
            "cell_group": [int(i) for i in p_idx],
            "eliminated": {k: bool(v) for k, v in eliminated.items()}, "h": h, "spec": spec.name}
    return BoundaryIoSystem(fam, w_b2 @ trace, w_c @ trace, injection, None, n,
                            name=spec.name, meta=meta)


def _upwind(spec, n):
    """Characteristic upwind finite volumes; dissipative, used when P1 is not bipartite."""
    m = spec.field_dim
    a, b = spec.interval
    h = (b - a) / n
    p1 = np.asarray(spec.p1, dtype=float)
    p0 = np.asarray(spec.p0, dtype=float)
    lam, vec = np.linalg.eigh(p1)
    pos, neg = lam > 0, lam < 0
    p_plus = vec[:, pos] @ np.diag(lam[pos]) @ vec[:, pos].T
    p_minus = vec[:, neg] @ np.diag(lam[neg]) @ vec[:, neg].T
    proj_plus = vec[:, pos] @ vec[:, pos].T
    proj_minus = vec[:, neg] @ vec[:, neg].T
    w_b1 = np.reshape(np.asarray(spec.wb1, dtype=float), (-1, 2 * m))
    w_b2 = np.reshape(np.asarray(spec.wb2, dtype=float), (-1, 2 * m))
    w_c = np.reshape(np.asarray(spec.wc, dtype=float), (-1, 2 * m))
    k = w_b2.shape[0]
    w_b = np.vstack([w_b1, w_b2])
    # e(b) = proj_minus e_N + V+ alpha,  e(a) = proj_plus e_1 + V- beta
    basis = np.zeros((2 * m, m))
    basis[:m, :pos.sum()] = vec[:, pos]
    basis[m:, pos.sum():] = vec[:, neg]
    s = w_b @ basis
    if np.linalg.matrix_rank(s) < m:
        raise InvalidBoundaryError("boundary rows do not determine the incoming characteristics")
    s_inv = np.linalg.inv(s)
    dim = n * m
    out = np.zeros((2 * m, dim))
    out[:m, (n - 1) * m:] = proj_minus
    out[m:, :m] = proj_plus
    rhs_u = np.vstack([np.zeros((w_b1.shape[0], k)), np.eye(k)])
    # full boundary efforts as functions of the state and of u
    tr_x = out - basis @ s_inv @ w_b @ out
    tr_u = basis @ s_inv @ rhs_u
    ones = np.ones(n - 1)
    up, down = sp.diags(ones, 1), sp.diags(ones, -1)
    has_right = sp.diags(np.r_[ones, 0.0])
    has_left = sp.diags(np.r_[0.0, ones])
    a0 = (sp.kron(up, p_plus) + sp.kron(has_right, p_minus)
          - sp.kron(has_left, p_plus) - sp.kron(down, p_minus)) / h
    a0 = a0 + sp.kron(sp.identity(n), p0)
    a0 = sp.csr_matrix(a0)
    # boundary fluxes P1 e(b) at the right face of cell N and P1 e(a) at the left face of cell 1
    face = np.zeros((dim, 2 * m))
    face[(n - 1) * m:, :m] = p1 / h
    face[:m, m:] = -p1 / h
    a0 = a0 + sp.csr_matrix(face @ tr_x)
    injection = face @ tr_u
    extrap = np.zeros((2 * m, dim))
    extrap[:m, (n - 1) * m:] = 1.5 * np.eye(m)
    extrap[:m, (n - 2) * m:(n - 1) * m] = -0.5 * np.eye(m)
    extrap[m:, :m] = 1.5 * np.eye(m)
    extrap[m:, m:2 * m] = -0.5 * np.eye(m)
    cell_z = a + h * (np.arange(n) + 0.5)
    zeta_of_state = np.repeat(cell_z, m)
    comp_of_state = np.tile(np.arange(m), n)
    gram = np.full(dim, h)
    diag_only = _h_diag_only(spec, cell_z, list(range(m)), [])
    fam = _make_family(spec, dim, a0, gram, zeta_of_state, comp_of_state, diag_only,
                       [(cell_z, list(range(m)))], spec.name)
    meta = {"scheme": "upwind", "h": h, "spec": spec.name}
    return BoundaryIoSystem(fam, w_b2 @ extrap, w_c @ extrap, injection, None, n,
                            name=spec.name, meta=meta)


def check_impedance_passivity_h1(system, trials=200, seed=0, c=1.0, tolerance=None):
    """max over random unit states of <x, (A0 + G B0) x> - (B0 x)^T (C0 x)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    fam = system.family
    rng = np.random.default_rng(seed)
    amax = system.maximal_a0()
    xs = rng.normal(size=(trials, system.dim))
    xs /= fam.norms(xs)[:, None]
    lhs = np.einsum("ij,ij->i", fam.gram_apply(xs.T).T, xs @ amax.T)
    rhs = np.einsum("ij,ij->i", xs @ system.b0_trace.T, xs @ system.c0_trace.T)
    viol = float(np.max(lhs - rhs))
    tol = c / max(system.n_cells, 1) if tolerance is None else float(tolerance)
    return IdentityReport(max(viol, 0.0), tol, int(trials), int(system.n_cells))


def _fattorini_forcing(system, u):
    fam = system.family
    g = system.injection
    r_at, rd_at = system.right_inverse_at, system.right_inverse_dt

    def forcing(t):
        ut = u(t)
        r = r_at(t)
        ru = r @ ut
        return fam.a_apply(t, ru) + g @ ut - rd_at(t) @ ut - r @ u.dot(t)

    return forcing


def simulate_boundary(system, x0, u, t_end, dt, method="auto", scheme="euler",
                      compat_tol=1e-8, threshold=None):
    """Integrate xi = x - R(t) u(t) and map back; outputs y = C(t) x."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dim,):
        raise InvalidStateError(f"initial state has shape {x0.shape}, expected ({system.dim},)")
    u0 = u(0.0)
    res = float(np.max(np.abs(system.b_at(0.0) @ x0 - u0), initial=0.0))
    if res > compat_tol * max(1.0, float(np.max(np.abs(u0), initial=0.0))):
        raise CompatibilityError(f"B(0) x0 differs from u(0) by {res:.3e}")
    kw = {} if threshold is None else {"threshold": threshold}
    if _is_zero_signal(u):
        traj = solve_mild(system.family, system.f, None, 0.0, x0, t_end, dt, method=method,
                          scheme=scheme, **kw)
        xi = traj.states.copy()
    else:
        r_at = system.right_inverse_at
        f = system.f
        f_xi = None
        if f is not None and not getattr(f, "is_zero", False):
            f_xi = Nonlinearity(lambda t, xi: f(t, xi + r_at(t) @ u(t)),
                                f.lipschitz_ledger, f.vanishes_at_zero, f.dim)
        xi0 = x0 - r_at(0.0) @ u0
        traj = solve_mild(system.family, f_xi, _fattorini_forcing(system, u), 0.0, xi0, t_end,
                          dt, method=method, scheme=scheme, **kw)
        xi = traj.states.copy()
        states = np.empty_like(xi)
        outputs = np.empty((traj.grid.size, system.input_dim))
        for k, t in enumerate(traj.grid):
            states[k] = xi[k] + r_at(t) @ u(t)
            outputs[k] = system.output(t, states[k])
        traj.states = states
        traj.outputs = outputs
    traj.extras["xi"] = xi
    if traj.outputs is None:
        traj.outputs = np.array([system.output(t, x) for t, x in zip(traj.grid, traj.states)])
    traj.inputs = u.sample(traj.grid)
    return traj


def _phi_sweep(system, u, grid, stepper):
    """Phi on every grid point: T(t,0)(-R(0)u(0)) + int T F + R(t) u(t)."""
    r_at = system.right_inverse_at
    forcing = _fattorini_forcing(system, u)
    loads = np.array([forcing(s) for s in grid])
    y0 = -r_at(0.0) @ u(0.0)
    sweep = _trapezoid_sweep(stepper, grid, y0, loads)
    return sweep + np.array([r_at(t) @ u(t) for t in grid])


def input_map_phi_boundary(system, u, t, dt=1e-3, method="auto"):
    if t <= 0 or _is_zero_signal(u):
        return np.zeros(system.dim)
    k = _step_count(t, dt)
    grid = np.linspace(0.0, t, k + 1)
    stepper = Stepper(system.family, grid[1] - grid[0], method)
    return _phi_sweep(system, u, grid, stepper)[-1]


def estimate_phi_bound_boundary(system, horizon, trials=8, dt=None, seed=None, method="auto",
                                gramian=True):
    """Lower estimate of C_{t0} for the boundary input map (gramian with B := G)."""
    from .distributed_io import phi_bound_generic
    from .semilinear import DEFAULT_SEED

    dt = horizon / 400.0 if dt is None else dt
    g = system.injection

    def phi_of(u, grid, stepper):
        return _phi_sweep(system, u, grid, stepper)

    return phi_bound_generic(system.family, lambda t: g, system.input_dim, phi_of, horizon,
                             trials, dt, DEFAULT_SEED if seed is None else seed, method, gramian)


def project_classical_datum(system, x0, u):
    """Closest compatible state: x0 - R(0)(B(0) x0 - u(0)), a G-orthogonal projection."""
    x0 = np.asarray(x0, dtype=float)
    r = system.right_inverse_at(0.0)
    b = system.b_at(0.0)
    return x0 - r @ (b @ x0 - u(0.0)), u
