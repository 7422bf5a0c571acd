"""Command-line frontend: structural analysis, linearization, surrogate
conversion, simulation, trajectory optimization and state estimation.

Commands read a sectioned key=value config (INI syntax), write CSV outputs
plus a gnuplot script where a plot is meaningful, and drop a `run.json`
manifest (config hash, seed, versions — no timestamps, so reruns are
byte-identical) into the output directory.

Exit codes: 0 success, 1 numerical failure, 2 usage/IO error.
"""

import argparse
import configparser
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

import ctrlkit
from ctrlkit.eigen import eigenvalues
from ctrlkit.errors import CtrlkitError, ParseError
from ctrlkit.estimation import EkfState, ekf_predict, ekf_update
from ctrlkit.linctl import (
    feedback_control,
    find_equilibrium,
    linearize,
    pole_place,
)
from ctrlkit.model_ir import parse_model
from ctrlkit.models import BUILTIN, load_builtin
from ctrlkit.mpc import (
    Mlp,
    MpcProblem,
    SqpConfig,
    nlp_constraints,
    rollout_check,
    save_solution,
    sqp_solve,
)
from ctrlkit.sim import Trajectory, rk4_step, simulate
from ctrlkit.structural import causal_field, causalize
from ctrlkit.surrogate import (
    FeatureMap,
    convert_reactor_model,
    learn_block,
    reactor_feature_map,
    replace_block,
    save_surrogate,
    REACTOR_RANGES,
)

USAGE_ERROR = 2
NUMERICAL_ERROR = 1


class UsageError(Exception):
    pass


# ------------------------------------------------------------- config I/O


def _read_config(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str  # model coordinates are case-sensitive
    try:
        cp.read_string(p.read_text(encoding="utf-8"))
    except configparser.Error as e:
        raise UsageError(f"bad config {path}: {e}") from e
    return cp, hashlib.sha256(p.read_bytes()).hexdigest(), p.parent


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _names(text):
    return [v for v in text.replace(",", " ").split() if v]


def _pins(section):
    pins = {}
    for key, value in section.items():
        if key.startswith("pin."):
            pins[key[4:]] = float(value)
    return pins


def _load_model(cfg, base=None):
    if "model" not in cfg:
        raise UsageError("config needs a [model] section")
    sec = cfg["model"]
    if "builtin" in sec:
        name = sec["builtin"]
        if name not in BUILTIN:
            raise UsageError(f"unknown builtin model {name!r}")
        model = load_builtin(name)
    elif "path" in sec:
        p = Path(sec["path"])
        if base is not None and not p.is_absolute():
            p = Path(base) / p
        if not p.is_file():
            raise UsageError(f"model file not found: {p}")
        model = parse_model(p.read_text(encoding="utf-8"))
    else:
        raise UsageError("[model] needs `builtin` or `path`")
    model = causalize(model)
    if sec.getboolean("convert", False):
        model, _ = convert_reactor_model(model)
    return model


def _manifest(outdir, command, config_hash, seed):
    data = {
        "command": command,
        "config_sha256": config_hash,
        "seed": seed,
        "versions": {
            "ctrlkit": ctrlkit.__version__,
            "numpy": np.__version__,
            "python": "%d.%d" % sys.version_info[:2],
        },
    }
    (Path(outdir) / "run.json").write_text(
        json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_matrix_csv(path, m):
    with open(path, "w") as fh:
        for row in np.atleast_2d(m):
            fh.write(",".join("%.17g" % v for v in row) + "\n")


# ---------------------------------------------------------------- commands


def cmd_blt(args):
    p = Path(args.model)
    if p.is_file():
        text = p.read_text(encoding="utf-8")
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
    elif args.model in BUILTIN:
        from ctrlkit.models import builtin_text

        text = builtin_text(args.model)
        digest = hashlib.sha256(text.encode()).hexdigest()
    else:
        raise UsageError(f"model file not found: {args.model}")
    model = causalize(parse_model(text))
    print(model.blt.describe())
    out = _outdir(args)
    _manifest(out, "blt", digest, args.seed)
    return 0


def cmd_linearize(args):
    cfg, digest, base = _read_config(args.config)
    model = _load_model(cfg, base)
    f = causal_field(model)
    names = model.state_names + model.input_names
    sec = cfg["equilibrium"] if "equilibrium" in cfg else cfg["DEFAULT"]
    pins = _pins(sec)
    guess = _floats(sec["guess"]) if "guess" in sec else None
    eq = find_equilibrium(f, len(model.state_names), pinned=pins or None,
                          guess=guess, names=names)
    lm = linearize(f, eq)
    out = _outdir(args)
    _write_matrix_csv(out / "A.csv", lm.A)
    _write_matrix_csv(out / "B.csv", lm.B)
    eig = eigenvalues(lm.A)
    with open(out / "eigenvalues.csv", "w") as fh:
        fh.write("re,im\n")
        for v in eig:
            fh.write("%.17g,%.17g\n" % (v.real, v.imag))
    _manifest(out, "linearize", digest, args.seed)
    return 0


def cmd_convert(args):
    cfg, digest, base = _read_config(args.config)
    model = _load_model(cfg, base)
    sec = cfg["convert"] if "convert" in cfg else cfg["DEFAULT"]
    seed = args.seed if args.seed is not None else sec.getint("seed", 0)
    out = _outdir(args)
    report = out / "report.txt"
    newton = [b for b in model.blt.blocks if b.tag == "newton"]
    if not newton:
        report.write_text("nothing to replace\n", encoding="utf-8")
        _manifest(out, "convert", digest, seed)
        return 0
    n = sec.getint("samples", 200)
    if "features" in cfg:
        fsec = cfg["features"]
        bases = {k[5:]: v for k, v in fsec.items() if k.startswith("base.")}
        fm = FeatureMap.from_spec(bases, _names(fsec["terms"]))
        ranges = {k[6:]: tuple(_floats(v)) for k, v in fsec.items()
                  if k.startswith("range.")}
        s = learn_block(model, newton[0], fm, ranges, n=n, seed=seed)
        converted = replace_block(model, newton[0], s)
    else:
        converted, s = convert_reactor_model(model, n=n, seed=seed)
    save_surrogate(s, out / "surrogate.txt")
    pure = not converted.has_newton_blocks()
    report.write_text(
        "pure triangular: %s\n" % ("true" if pure else "false"),
        encoding="utf-8")
    _manifest(out, "convert", digest, seed)
    return 0


def _build_controller(model, f, cfg):
    if "controller" not in cfg:
        return None, [], None
    sec = cfg["controller"]
    names = model.state_names + model.input_names
    eq = find_equilibrium(
        f, len(model.state_names), pinned=_pins(sec) or None,
        guess=_floats(sec["guess"]) if "guess" in sec else None,
        names=names)
    lm = linearize(f, eq)
    law = pole_place(lm, [complex(v) for v in _names(sec["poles"])])
    return (lambda x: feedback_control(law, x)), model.input_names, law


def cmd_simulate(args):
    cfg, digest, base = _read_config(args.config)
    model = _load_model(cfg, base)
    sec = cfg["simulate"] if "simulate" in cfg else cfg["DEFAULT"]
    f = causal_field(model)
    controller, input_labels, _ = _build_controller(model, f, cfg)
    if controller is None and model.input_names:
        u_const = np.array(_floats(sec["input"]) if "input" in sec
                           else [0.0] * len(model.input_names))
        controller = lambda x: u_const
        input_labels = model.input_names
    x0 = _floats(sec["x0"]) if "x0" in sec else [0.0] * len(
        model.state_names)
    T = float(sec.get("t", "10"))
    dt = float(sec.get("dt", "0.01"))
    out = _outdir(args)
    csv_path = out / "trajectory.csv"
    if T == 0:
        labels = ["t"] + model.state_names + list(input_labels)
        csv_path.write_text(",".join(labels) + "\n", encoding="utf-8")
        _manifest(out, "simulate", digest, args.seed)
        return 0
    traj = simulate(f, controller, x0, T, dt=dt,
                    state_labels=model.state_names,
                    input_labels=input_labels)
    traj.write_csv(csv_path)
    if traj.error:
        with open(csv_path, "a") as fh:
            fh.write("# error: %s\n" % traj.error)
    _write_sim_plot(out / "plot.gp", "trajectory.csv",
                    model.state_names, input_labels)
    _manifest(out, "simulate", digest, args.seed)
    return NUMERICAL_ERROR if traj.error else 0


def _write_sim_plot(path, csv_name, state_labels, input_labels):
    cols = state_labels + list(input_labels)
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 't'",
        "plot " + ", \\\n     ".join(
            "'%s' using 1:%d with lines" % (csv_name, k + 2)
            for k in range(len(cols))),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_mpc(args):
    cfg, digest, base = _read_config(args.config)
    model = _load_model(cfg, base)
    f = causal_field(model)
    sec = cfg["mpc"] if "mpc" in cfg else cfg["DEFAULT"]
    n = len(model.state_names)
    T = float(sec.get("t", "3.0"))
    N = int(sec.get("n", "50"))
    hidden = int(sec.get("hidden", "30"))
    seed = args.seed if args.seed is not None else sec.getint("seed", 0)
    problem = MpcProblem(
        f=f,
        z0=np.array(_floats(sec["z0"]) if "z0" in sec else [0.0] * n),
        zN=np.array(_floats(sec["zn"]) if "zn" in sec else [0.0] * n),
        u_max=float(sec.get("u_max", "10")),
        t_grid=np.linspace(0.0, T, N + 1),
        state_net=Mlp(hidden=hidden, d=n),
        input_net=Mlp(hidden=hidden, d=len(model.input_names)),
    )
    sqp = SqpConfig(
        seed=seed,
        max_iter=int(sec.get("max_iter", "2000")),
        constraint_tol=float(sec.get("constraint_tol", "1e-5")),
        boundary_tol=float(sec.get("boundary_tol", "1e-4")),
    )
    w, report = sqp_solve(problem, sqp)
    out = _outdir(args)
    save_solution(problem, w, out / "solution.txt")
    report.write_csv(out / "report.csv")
    mpc_traj, ode_traj = rollout_check(problem, w)
    mpc_traj.state_labels = model.state_names
    mpc_traj.input_labels = model.input_names
    ode_traj.state_labels = model.state_names
    ode_traj.input_labels = model.input_names
    mpc_traj.write_csv(out / "mpc_trajectory.csv")
    ode_traj.write_csv(out / "ode_trajectory.csv")
    _write_mpc_plot(out / "plot.gp", model.state_names, model.input_names)
    _manifest(out, "mpc", digest, seed)
    return 0 if report.converged else NUMERICAL_ERROR


def _write_mpc_plot(path, state_labels, input_labels):
    k_u = len(state_labels) + 2
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 't'",
        "set multiplot layout 2,1",
        "plot " + ", \\\n     ".join(
            ["'mpc_trajectory.csv' using 1:%d with lines" % (k + 2)
             for k in range(len(state_labels))]
            + ["'ode_trajectory.csv' using 1:%d with lines dashtype 2"
               % (k + 2) for k in range(len(state_labels))]),
        "plot 'mpc_trajectory.csv' using 1:%d with lines" % k_u,
        "unset multiplot",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_ekf(args):
    cfg, digest, base = _read_config(args.config)
    model = _load_model(cfg, base)
    f = causal_field(model)
    sec = cfg["ekf"] if "ekf" in cfg else cfg["DEFAULT"]
    n = len(model.state_names)
    m = len(model.input_names)
    dt = float(sec.get("dt", "0.01"))
    steps = int(sec.get("steps", "100"))
    seed = args.seed if args.seed is not None else sec.getint("seed", 0)
    q = float(sec.get("q", "1e-5"))
    r = float(sec.get("r", "1e-4"))
    x_true = np.array(_floats(sec["x0"]) if "x0" in sec else [0.0] * n)
    x_est = np.array(
        _floats(sec["x0_est"]) if "x0_est" in sec else [0.0] * n)
    u = np.array(_floats(sec["input"]) if "input" in sec else [0.0] * m)
    measured = (_names(sec["measure"]) if "measure" in sec
                else model.state_names[:1])
    try:
        idx = [model.state_names.index(name) for name in measured]
    except ValueError as e:
        raise UsageError(f"unknown measured state: {e}") from e
    from ctrlkit.autodiff import VectorFunction

    h = VectorFunction(n, len(idx), lambda v, p: [v[i] for i in idx])
    Q = q * np.eye(n)
    R = r * np.eye(len(idx))
    state = EkfState(x_hat=x_est.copy(), P=np.eye(n) * float(
        sec.get("p0", "1.0")))
    rng = np.random.default_rng(seed)
    out = _outdir(args)
    with open(out / "estimates.csv", "w") as fh:
        fh.write("t," + ",".join("true_%s" % s for s in model.state_names)
                 + "," + ",".join("est_%s" % s for s in model.state_names)
                 + "\n")

        def row(t):
            vals = [t, *x_true, *state.x_hat]
            fh.write(",".join("%.17g" % v for v in vals) + "\n")

        row(0.0)
        for k in range(steps):
            x_true = rk4_step(f, x_true, u, dt)
            state = ekf_predict(state, f, u, Q, dt)
            z = x_true[idx] + rng.normal(scale=np.sqrt(r), size=len(idx))
            state = ekf_update(state, h, z, R)
            row((k + 1) * dt)
    _manifest(out, "ekf", digest, seed)
    return 0


# -------------------------------------------------------------- entrypoint


def build_parser():
    ap = argparse.ArgumentParser(
        prog="ctrlkit",
        description="equation-model analysis, control and estimation")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config RNG seed")
    sub = ap.add_subparsers(dest="command", required=True)

    p_blt = sub.add_parser("blt", parents=[common],
                           help="print the block schedule")
    p_blt.add_argument("model", help="model file or builtin name")

    for name in ("linearize", "convert", "simulate", "mpc", "ekf"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--config", required=True)
    return ap


COMMANDS = {
    "blt": cmd_blt,
    "linearize": cmd_linearize,
    "convert": cmd_convert,
    "simulate": cmd_simulate,
    "mpc": cmd_mpc,
    "ekf": cmd_ekf,
}


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return USAGE_ERROR if e.code not in (0, None) else 0
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return NUMERICAL_ERROR
    except CtrlkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return NUMERICAL_ERROR
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
