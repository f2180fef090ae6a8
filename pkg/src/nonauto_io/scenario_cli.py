"""Declarative scenarios: build a system from a TOML file, simulate, verify, write artifacts."""

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .boundary_io import discretize_ph, project_classical_datum
from .comparison import ComparisonFn, build_ugs_gains, make_power_fn
from .controller import (
    DynamicController,
    build_closed_loop_ph,
    quadratic_potential,
    quartic_potential,
    vocabulary_map,
)
from .distributed_io import CollocatedSpec, DistributedIoSystem, build_collocated_closed_loop
from .errors import ConfigError, NonautoIoError
from .examples import (
    constant_profile,
    make_euler_bernoulli_tip_mass,
    make_timoshenko_beam,
    make_vibrating_string,
    saturating_profile,
)
from .operator_core import OperatorFamily
from .semilinear import DEFAULT_SEED
from .signals import (
    constant_signal,
    sin2_ramp_signal,
    sinusoid_signal,
    step_signal,
    tabulated_signal,
    zero_signal,
)
from .storage import closed_loop_ph_storage, quadratic_storage
from .verify import (
    check_impedance_passivity,
    check_scattering_passivity,
    check_ugs,
    mollify_input,
    scattering_from_impedance,
    simulate_any,
    wellposedness_convergence,
)

BUNDLED_DIR = Path(__file__).with_name("scenarios")
KNOWN_CHECKS = ("equilibrium", "impedance", "scattering", "ugs", "wellposedness")
_SMOOTH_INPUTS = ("zero", "constant", "sinusoid", "sin2")
EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


@dataclass
class Scenario:
    name: str
    path: Path
    system: dict
    controller: dict
    input: dict
    initial_state: dict
    numerics: dict
    checks: list
    output: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED


# parsing


def _section(doc, key, required=True):
    val = doc.get(key)
    if val is None:
        if required:
            raise ConfigError(f"missing section [{key}]", key)
        return {}
    if not isinstance(val, dict):
        raise ConfigError(f"[{key}] must be a table", key)
    return val


def _positive(numerics, key, kind=float):
    if key not in numerics:
        raise ConfigError("is required", f"numerics.{key}")
    try:
        val = kind(numerics[key])
    except (TypeError, ValueError):
        raise ConfigError("must be a number", f"numerics.{key}") from None
    if not val > 0:
        raise ConfigError(f"must be positive, got {val!r}", f"numerics.{key}")
    return val


def load_scenario(path, overrides=None):
    """Parse and validate a scenario file; ``overrides`` may set dt, n_cells, t_end, seed."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"scenario file {path} does not exist", "path") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}", None) from None
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    numerics = dict(_section(doc, "numerics"))
    for key in ("dt", "n_cells", "t_end"):
        if key in overrides:
            numerics[key] = overrides[key]
    numerics["dt"] = _positive(numerics, "dt")
    numerics["t_end"] = _positive(numerics, "t_end")
    system = _section(doc, "system")
    if system.get("kind") in ("string", "timoshenko", "euler_bernoulli_tip"):
        numerics["n_cells"] = _positive(numerics, "n_cells", int)
    if "kind" not in system:
        raise ConfigError("is required", "system.kind")
    checks = doc.get("checks", [])
    if not isinstance(checks, list):
        raise ConfigError("checks must be an array of tables", "checks")
    for i, chk in enumerate(checks):
        if not isinstance(chk, dict) or chk.get("name") not in KNOWN_CHECKS:
            raise ConfigError(f"unknown check {chk!r}; known: {', '.join(KNOWN_CHECKS)}",
                              f"checks[{i}].name")
    inp = _section(doc, "input", required=False) or {"kind": "zero"}
    init = _section(doc, "initial_state", required=False) or {"kind": "zero"}
    for sec, key in ((inp, "input"), (init, "initial_state")):
        if "file" in sec:
            f = (path.parent / sec["file"]).resolve()
            if not f.exists():
                raise ConfigError(f"{sec['file']} does not exist", f"{key}.file")
            sec["file"] = str(f)
    seed = int(overrides.get("seed", doc.get("seed", DEFAULT_SEED)))
    return Scenario(doc.get("name", path.stem), path, system,
                    _section(doc, "controller", required=False) or {"kind": "none"},
                    inp, init, numerics, checks, _section(doc, "output", required=False), seed)


# building


def _profile(spec, field_name):
    if spec is None:
        return None
    kind = spec.get("kind")
    try:
        if kind == "constant":
            return constant_profile(spec["value"], field_name)
        if kind == "saturating":
            return saturating_profile(spec["base"], spec["delta"], field_name)
    except KeyError as exc:
        raise ConfigError(f"profile {field_name} misses {exc}", f"system.profiles.{field_name}") \
            from None
    raise ConfigError(f"profile {field_name}: unknown kind {kind!r}",
                      f"system.profiles.{field_name}.kind")


def _matrix(spec, key, where):
    if key not in spec:
        raise ConfigError("is required", f"{where}.{key}")
    return np.atleast_2d(np.asarray(spec[key], dtype=float))


def build_open_system(sc):
    sysd = sc.system
    kind = sysd["kind"]
    prof = sysd.get("profiles", {})
    n = sc.numerics.get("n_cells")
    try:
        if kind == "string":
            spec = make_vibrating_string(_profile(prof.get("rho"), "rho"),
                                         _profile(prof.get("tension"), "tension"))
            return discretize_ph(spec, n)
        if kind == "timoshenko":
            spec = make_timoshenko_beam(*(_profile(prof.get(k), k) for k in ("rho", "EI", "I_r", "K")))
            return discretize_ph(spec, n)
        if kind == "euler_bernoulli_tip":
            return make_euler_bernoulli_tip_mass(
                _profile(prof.get("lambda"), "lambda"), _profile(prof.get("kappa"), "kappa"),
                rho=sysd.get("rho", 1.0), m_tip=sysd.get("m_tip", 1.0),
                J_tip=sysd.get("J_tip", 1.0), n_cells=n)
    except NonautoIoError as exc:
        raise ConfigError(f"system: {exc}", "system") from None
    if kind == "custom":
        a0 = _matrix(sysd, "a0", "system")
        dim = a0.shape[0]
        m = np.broadcast_to(np.asarray(sysd.get("m", 1.0), dtype=float), (dim,)).copy()
        gram = np.broadcast_to(np.asarray(sysd.get("gram", 1.0), dtype=float), (dim,)).copy()
        b = _matrix(sysd, "b", "system").reshape(dim, -1)
        c = _matrix(sysd, "c", "system").reshape(b.shape[1], dim)
        fam = OperatorFamily(dim, lambda t: a0, lambda t: m, float(m.min()), float(m.max()), gram,
                             monotone=True, a0_constant=True, m_constant=True, name="custom")
        return DistributedIoSystem(fam, lambda t: b, lambda t: c, None, b.shape[1], True, "custom",
                                   {"kind": "custom"})
    raise ConfigError(f"unknown system kind {kind!r}", "system.kind")


def _potential(spec, mc):
    kind = spec.get("kind", "quadratic")
    if kind == "quadratic":
        q = np.asarray(spec.get("Q", np.eye(mc)), dtype=float).reshape(mc, mc)
        ev = np.linalg.eigvalsh(0.5 * (q + q.T))
        p, gp = quadratic_potential(q)
        return p, gp, ("quadratic", float(ev.min()), float(ev.max()))
    if kind == "quartic":
        a, b = float(spec.get("a", 1.0)), float(spec.get("b", 1.0))
        p, gp = quartic_potential(a, b)
        lower = make_power_fn(0.5 * a, 2.0)
        upper = ComparisonFn(lambda r: 0.5 * a * r * r + 0.25 * b * r ** 4)
        return p, gp, (lower, upper)
    raise ConfigError(f"unknown potential kind {kind!r}", "controller.potential.kind")


def build_system(sc):
    """(closed-loop system, storage, sigma, controller description)."""
    open_sys = build_open_system(sc)
    ctl = sc.controller
    kind = ctl.get("kind", "none")
    try:
        if kind == "none":
            return open_sys, quadratic_storage(open_sys.family), float(ctl.get("sigma", 0.0))
        if kind == "static":
            if open_sys.kind != "distributed":
                raise ConfigError("a static controller needs a distributed system", "controller.kind")
            g, g_lip = vocabulary_map(ctl.get("g", {"kind": "linear", "gain": 1.0}))
            sigma = float(ctl.get("sigma", ctl.get("damping_constant", 0.0)))
            closed = build_collocated_closed_loop(CollocatedSpec(open_sys, g, sigma, g_lip))
            return closed, quadratic_storage(closed.family), sigma
        if kind == "dynamic":
            k = open_sys.input_dim
            kc = np.asarray(ctl.get("K_c", np.eye(k)), dtype=float)
            mc = np.atleast_2d(kc).shape[0]
            bc = np.asarray(ctl.get("B_c", np.eye(mc, k)), dtype=float).reshape(mc, k)
            sc_mat = np.asarray(ctl.get("S_c", np.eye(k)), dtype=float).reshape(k, k)
            p, gp, env = _potential(ctl.get("potential", {}), mc)
            damp, _ = vocabulary_map(ctl.get("damping", {"kind": "linear", "gain": 1.0}))
            ctrl = DynamicController(kc, bc, sc_mat, p, gp, lambda t, w: damp(w), env)
            closed = build_closed_loop_ph(open_sys, ctrl)
            return closed, closed_loop_ph_storage(open_sys.family, ctrl), ctrl.sigma_min
    except ConfigError:
        raise
    except NonautoIoError as exc:
        raise ConfigError(f"controller: {exc}", "controller") from None
    raise ConfigError(f"unknown controller kind {kind!r}", "controller.kind")


def build_input(sc, dim):
    spec = sc.input
    kind = spec.get("kind", "zero")
    try:
        if kind == "zero":
            return zero_signal(dim)
        if kind == "constant":
            return constant_signal(np.broadcast_to(spec["value"], (dim,)))
        if kind == "sinusoid":
            return sinusoid_signal(np.broadcast_to(spec["amplitude"], (dim,)),
                                   spec.get("frequency", 1.0), spec.get("phase", 0.0),
                                   spec.get("offset", 0.0))
        if kind == "sin2":
            return sin2_ramp_signal(np.broadcast_to(spec["amplitude"], (dim,)),
                                    spec.get("period", 1.0))
        if kind == "step":
            return step_signal(spec.get("time", 0.0), np.broadcast_to(spec["amplitude"], (dim,)))
        if kind == "tabulated":
            data = np.loadtxt(spec["file"], delimiter=",", ndmin=2)
            if data.shape[1] != dim + 1:
                raise ConfigError(f"tabulated input needs {dim + 1} columns", "input.file")
            return tabulated_signal(data[:, 0], data[:, 1:])
    except KeyError as exc:
        raise ConfigError(f"input misses {exc}", f"input.{exc.args[0]}") from None
    raise ConfigError(f"unknown input kind {kind!r}", "input.kind")


def build_initial_state(sc, system):
    spec = sc.initial_state
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return np.zeros(system.dim)
    if kind == "random":
        rng = np.random.default_rng(int(spec.get("seed", sc.seed)))
        return rng.normal(size=system.dim) * float(spec.get("scale", 1.0))
    if kind == "file":
        x = np.loadtxt(spec["file"], delimiter=",").ravel()
        if x.size != system.dim:
            raise ConfigError(f"initial state file has {x.size} entries, expected {system.dim}",
                              "initial_state.file")
        return x
    raise ConfigError(f"unknown initial_state kind {kind!r}", "initial_state.kind")


# running


def _n_cells(system):
    return getattr(system, "n_cells", 0) or system.meta.get("n_cells") or None


def run_scenario(sc, out_dir):
    """Simulate and verify; returns (report dict, passed)."""
    system, storage, sigma = build_system(sc)
    u = build_input(sc, system.input_dim)
    num = sc.numerics
    dt, t_end = num["dt"], num["t_end"]
    method = num.get("method", "auto")
    scheme = num.get("scheme", "euler")
    if system.kind == "boundary" and u.name not in _SMOOTH_INPUTS:
        level = num.get("mollify_level")
        if level is None:
            raise ConfigError("boundary systems need a smooth input; set numerics.mollify_level",
                              "numerics.mollify_level")
        u = mollify_input(u, level, horizon=t_end)
    x0 = build_initial_state(sc, system)
    if system.kind == "boundary":
        x0, u = project_classical_datum(system, x0, u)
    traj = simulate_any(system, x0, u, t_end, dt, method, scheme)
    n_cells = _n_cells(system)
    reports = {}
    for chk in sc.checks:
        name = chk["name"]
        c = float(chk.get("c", 1.0))
        tol = chk.get("tolerance")
        sig = float(chk.get("sigma", sigma))
        if name == "equilibrium":
            tol = 1e-12 if tol is None else float(tol)
            xm = float(np.max(traj.norms()))
            ym = float(np.max(np.abs(traj.outputs)))
            reports[name] = {"kind": "equilibrium", "max_state_norm": xm, "max_output": ym,
                             "tolerance": tol, "pass": xm <= tol and ym <= tol}
        elif name == "impedance":
            reports[name] = check_impedance_passivity(traj, u, storage, sig, n_cells, c, tol).to_dict()
        elif name == "scattering":
            alpha, beta = _scattering_params(chk, sig)
            reports[name] = check_scattering_passivity(traj, u, storage, alpha, beta, n_cells, c,
                                                       tol).to_dict()
        elif name == "ugs":
            alpha, _ = _scattering_params(chk, sig)
            gains = build_ugs_gains(storage.lower, storage.upper, alpha)
            reports[name] = check_ugs(traj, x0, u, gains, float(chk.get("slack", 0.05))).to_dict()
        elif name == "wellposedness":
            alpha, beta = _scattering_params(chk, sig)
            t0 = float(chk.get("t0", t_end))
            wp_input = build_input(sc, system.input_dim)
            rep = wellposedness_convergence(system, x0, wp_input, chk.get("levels", [4, 8, 16, 32]),
                                            t0, float(chk.get("dt", dt)), storage, alpha, beta,
                                            seed=sc.seed, method=method, scheme=scheme)
            reports[name] = rep.to_dict()
    res_col = _residual_column(traj, u, storage, sigma)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_timeseries(out_dir / "timeseries.csv", traj, storage, res_col)
    failing = sorted(k for k, r in reports.items() if not r["pass"])
    report = {
        "scenario": sc.name,
        "seed": sc.seed,
        "system": {"name": system.name, "kind": system.kind, "dim": int(system.dim),
                   "input_dim": int(system.input_dim), "n_cells": n_cells, "sigma": sigma},
        "numerics": {k: v for k, v in sorted(num.items())},
        "trajectory": {"points": int(traj.grid.size), "blew_up": bool(traj.blew_up),
                       "max_time": traj.max_time},
        "checks": reports,
        "failing": failing,
        "pass": not failing and not traj.blew_up,
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(_json_safe(report), fh, sort_keys=True, indent=1)
        fh.write("\n")
    return report, report["pass"]


def _scattering_params(chk, sigma):
    if "alpha" in chk and "beta" in chk:
        return float(chk["alpha"]), float(chk["beta"])
    if sigma <= 0:
        raise ConfigError("scattering parameters need sigma > 0 or explicit alpha and beta",
                          f"checks.{chk['name']}")
    return scattering_from_impedance(sigma)


def _residual_column(traj, u, storage, sigma):
    rep = check_impedance_passivity(traj, u, storage, sigma, tolerance=np.inf)
    return np.concatenate([[0.0], rep.residuals])


def write_timeseries(path, traj, storage, residuals):
    ins = np.asarray(traj.inputs, dtype=float).reshape(traj.grid.size, -1)
    outs = np.asarray(traj.outputs, dtype=float).reshape(traj.grid.size, -1)
    vs = storage.along(traj.grid, traj.states)
    header = (["t", "norm_x", "V"] + [f"u_{i + 1}" for i in range(ins.shape[1])]
              + [f"y_{i + 1}" for i in range(outs.shape[1])] + ["residual"])
    table = np.column_stack([traj.grid, traj.norms(), vs, ins, outs, residuals])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in table:
            w.writerow([f"{v:.17g}" for v in row])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


# command line


def resolve_scenario(arg):
    p = Path(arg)
    if p.exists():
        return p
    for cand in (BUNDLED_DIR / arg, BUNDLED_DIR / f"{arg}.toml"):
        if cand.exists():
            return cand
    return p


def _overrides(args):
    return {"dt": args.dt, "n_cells": args.n_cells, "t_end": args.t_end, "seed": args.seed}


def run_one(path, out_dir, overrides):
    """Run a single scenario file; returns (exit code, message)."""
    try:
        sc = load_scenario(path, overrides)
        target = Path(out_dir) if out_dir else Path(sc.output.get("dir", f"out/{sc.name}"))
        report, ok = run_scenario(sc, target)
    except ConfigError as exc:
        return EXIT_CONFIG, f"config error in {path}: {exc}"
    if ok:
        return EXIT_PASS, f"{sc.name}: all checks passed -> {target}"
    names = ", ".join(report["failing"]) or "trajectory blew up"
    return EXIT_FAIL, f"{sc.name}: failing checks: {names} -> {target}"


def _batch(directory, out_root, overrides):
    files = sorted(Path(directory).glob("*.toml"))
    if not files:
        return EXIT_CONFIG, [f"no scenario files in {directory}"]
    root = Path(out_root or "out")
    with ProcessPoolExecutor() as pool:
        futures = [pool.submit(run_one, str(f), str(root / f.stem), overrides) for f in files]
        results = [fut.result() for fut in futures]
    return max(code for code, _ in results), [msg for _, msg in results]


def build_parser():
    ap = argparse.ArgumentParser(prog="nonauto-io", description=__doc__)
    sub = ap.add_subparsers(dest="command")
    run = sub.add_parser("run", help="run a scenario file (or a bundled scenario name)")
    run.add_argument("scenario", nargs="?")
    run.add_argument("--batch", metavar="DIR", help="run every *.toml in DIR concurrently")
    run.add_argument("--out", metavar="DIR", help="output directory")
    run.add_argument("--dt", type=float)
    run.add_argument("--n-cells", type=int)
    run.add_argument("--t-end", type=float)
    run.add_argument("--seed", type=int)
    sub.add_parser("list", help="list bundled scenarios")
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "list":
        for f in sorted(BUNDLED_DIR.glob("*.toml")):
            print(f.stem)
        return EXIT_PASS
    if args.command != "run":
        ap.print_help(sys.stderr)
        return EXIT_CONFIG
    overrides = _overrides(args)
    if args.batch:
        code, msgs = _batch(args.batch, args.out, overrides)
        for m in msgs:
            print(m, file=sys.stderr if code else sys.stdout)
        return code
    if not args.scenario:
        print("run needs a scenario path or --batch DIR", file=sys.stderr)
        return EXIT_CONFIG
    code, msg = run_one(resolve_scenario(args.scenario), args.out, overrides)
    print(msg, file=sys.stderr if code else sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())
