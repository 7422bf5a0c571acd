"""End-to-end acceptance suite.

Each test pins one headline capability of the package at an explicit
numeric tolerance: cart-pole and reactor linearization against reference
values and a finite-difference oracle, structural analysis of the
index-two reactor, the learned replacement of its implicit block,
steady-state and pole-placement control, the swing-up trajectory
optimizer, filter correctness against a hand-rolled Kalman filter, and
byte-level determinism of the command-line frontend.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from ctrlkit.autodiff import VectorFunction, check_fd, jacobian
from ctrlkit.cli import main as cli_main
from ctrlkit.estimation import EkfState, ekf_predict, ekf_update
from ctrlkit.linctl import (
    feedback_control,
    find_equilibrium,
    linearize,
    pole_place,
)
from ctrlkit.eigen import eigenvalues
from ctrlkit.model_ir import incidence
from ctrlkit.models import load_builtin
from ctrlkit.mpc import (
    Mlp,
    MpcProblem,
    SqpConfig,
    default_pendulum_problem,
    net_dt,
    net_eval,
    nlp_constraints,
    rollout_check,
    sqp_solve,
)
from ctrlkit.sim import simulate
from ctrlkit.structural import (
    blt_sort,
    causal_field,
    causalize,
    index_reduce,
    maximum_matching,
)
from ctrlkit.surrogate import (
    REACTOR_RANGES,
    convert_reactor_model,
    learn_block,
    reactor_feature_map,
    replace_block,
)

PRESETS = Path(__file__).resolve().parents[1] / "src/ctrlkit/presets"


@pytest.fixture(scope="module")
def pendulum_field():
    return causal_field(causalize(load_builtin("pendulum")))


@pytest.fixture(scope="module")
def reactor_model():
    return causalize(load_builtin("reactor"))


@pytest.fixture(scope="module")
def converted_reactor(reactor_model):
    model, _ = convert_reactor_model(reactor_model)
    return model


@pytest.fixture(scope="module")
def reactor_field(converted_reactor):
    return causal_field(converted_reactor)


@pytest.fixture(scope="module")
def reactor_equilibrium(reactor_field, converted_reactor):
    names = (converted_reactor.state_names
             + converted_reactor.input_names)
    return find_equilibrium(reactor_field, 3,
                            pinned={"V": 50.0, "C_B": 11.0},
                            guess=[50, 11, 17, 9, 9], names=names)


def _fd_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        cols.append((np.array(f.fn(list(xp), ()), dtype=float)
                     - np.array(f.fn(list(xm), ()), dtype=float)) / (2 * h))
    return np.column_stack(cols)


# 1 -- cart-pole linearization ------------------------------------------------

def test_pendulum_linearization_reference_values(pendulum_field):
    t0 = time.perf_counter()
    names = ["x", "v", "theta", "omega", "F"]
    eq = find_equilibrium(pendulum_field, 4,
                          pinned={"x": 0.0, "theta": math.pi},
                          guess=[0, 0, 3.1, 0, 0], names=names)
    lm = linearize(pendulum_field, eq)
    # reference entries for the upright cart-pole
    assert lm.A[1, 1] == pytest.approx(-0.1818, rel=1e-3)
    assert lm.A[1, 2] == pytest.approx(2.6727, rel=1e-3)
    assert lm.A[3, 1] == pytest.approx(-0.4545, rel=1e-3)
    assert lm.A[3, 2] == pytest.approx(31.18, rel=1e-3)
    assert lm.B[1, 0] == pytest.approx(1.818, rel=1e-3)
    assert lm.B[3, 0] == pytest.approx(4.5454, rel=1e-3)
    # full matrices against a central-difference oracle
    point = np.concatenate([eq.x_ss, eq.u_ss])
    fd = _fd_jacobian(pendulum_field, point)
    ab = np.hstack([lm.A, lm.B])
    assert np.max(np.abs(ab - fd)) <= 1e-3 * max(1.0, np.max(np.abs(fd)))
    assert time.perf_counter() - t0 < 1.0


# 2 -- reactor structural analysis --------------------------------------------

def test_reactor_structure_one_dummy_one_implicit_block():
    t0 = time.perf_counter()
    work, dummies = index_reduce(load_builtin("reactor"))
    assert dummies == {"der(C_A)": "C_A"}
    blt = blt_sort(work, maximum_matching(incidence(work)))
    big = [b for b in blt.blocks if len(b.eqs) > 1]
    assert len(big) == 1
    assert len(big[0].eqs) == 3
    assert set(big[0].unknowns) == {"der(C_A)", "der(C_B)", "R_A"}
    assert time.perf_counter() - t0 < 1.0


# 3 -- learned replacement weights --------------------------------------------

def test_reactor_surrogate_weights(reactor_model):
    t0 = time.perf_counter()
    block = [b for b in reactor_model.blt.blocks if b.tag == "newton"][0]
    s = learn_block(reactor_model, block, reactor_feature_map(),
                    REACTOR_RANGES, n=1000, seed=42)
    w = s.weights
    want = np.array([
        [100 / 3, 0, -0.2, 0, -2 / 3, -2 / 3, 0, 0, 0, 0],
        [50 / 3, 0, -0.1, 0, -1 / 3, -1 / 3, 0, 0, 0, 0],
        [50 / 3, 0, 0.2, 0, -1 / 3, 2 / 3, 0, 0, 0, 0],
    ])
    significant = want != 0
    assert np.max(np.abs(w[significant] - want[significant])) <= 1e-3
    assert np.max(np.abs(w[~significant])) <= 1e-6
    # the reaction-equilibrium constraint forces the C_A row to be twice
    # the C_B row
    assert np.max(np.abs(w[1] - w[0] / 2)) <= 1e-9
    assert time.perf_counter() - t0 < 5.0


# 4 -- pure triangularity after replacement -----------------------------------

def test_converted_reactor_pure_triangular(reactor_model, converted_reactor):
    assert not converted_reactor.has_newton_blocks()
    f_dae = causal_field(reactor_model)
    f_ode = causal_field(converted_reactor)
    rng = np.random.default_rng(11)
    for _ in range(100):
        z = [rng.uniform(20, 90), rng.uniform(1, 20), rng.uniform(1, 30),
             rng.uniform(1, 18), rng.uniform(1, 18)]
        a = np.array(f_dae.fn(z, ()), dtype=float)
        b = np.array(f_ode.fn(z, ()), dtype=float)
        assert np.max(np.abs(a - b)) <= 1e-6


# 5 -- steady state ------------------------------------------------------------

def test_reactor_steady_state(reactor_equilibrium):
    eq = reactor_equilibrium
    assert eq.u_ss[0] == pytest.approx(9.705, abs=1e-3)
    assert eq.u_ss[1] == pytest.approx(9.705, abs=1e-3)
    assert eq.x_ss[2] == pytest.approx(17.0, abs=0.05)


# 6 -- reactor linearization, placement, closed loop ----------------------------

def test_reactor_linearization_and_pole_placement(
        reactor_field, reactor_equilibrium, converted_reactor):
    lm = linearize(reactor_field, reactor_equilibrium)
    a_ref = np.array([[0, 0, 0],
                      [-0.022, -0.2941, 0],
                      [0.0660, 0.3, -0.1941]])
    b_ref = np.array([[1, -1],
                      [0.1867, -0.0733],
                      [-0.3400, 0]])
    assert np.max(np.abs(lm.A - a_ref)) <= 1e-3
    assert np.max(np.abs(lm.B - b_ref)) <= 1e-3

    poles = [-0.1, -0.5, -0.3]
    law = pole_place(lm, poles)
    eig = sorted(eigenvalues(lm.A - lm.B @ law.K).real)
    assert np.max(np.abs(np.array(eig) - sorted(poles))) <= 1e-6

    traj = simulate(reactor_field, lambda x: feedback_control(law, x),
                    [48.0, 12.0, 19.0], T=60.0, dt=0.01)
    assert not traj.error
    x_ss = reactor_equilibrium.x_ss
    rel = np.abs(traj.final_state() - x_ss) / np.abs(x_ss)
    assert np.max(rel) <= 0.01


# 7 -- swing-up trajectory optimization -----------------------------------------

SWINGUP_SEEDS = (0, 1, 11, 6, 12)


def test_swingup_parameter_counts(pendulum_field):
    p = default_pendulum_problem(pendulum_field)
    assert p.state_net.n_params == 184
    assert p.input_net.n_params == 91


def test_swingup_feasible_for_majority_of_seeds(pendulum_field):
    p = default_pendulum_problem(pendulum_field)
    passed = 0
    for seed in SWINGUP_SEEDS:
        cfg = SqpConfig(seed=seed, constraint_tol=1e-5, boundary_tol=1e-4)
        t0 = time.perf_counter()
        w, report = sqp_solve(p, cfg)
        assert time.perf_counter() - t0 <= 600.0
        assert report.iterations <= 2000
        if not report.converged:
            continue
        eqc, ineq = nlp_constraints(p, w)
        if eqc[0] > 1e-4 or np.max(np.abs(eqc[1:])) > 1e-3:
            continue
        if np.min(ineq) < -1e-6:
            continue
        mpc_traj, ode_traj = rollout_check(p, w)
        if np.max(np.abs(mpc_traj.inputs)) > 10.0 + 1e-6:
            continue
        if abs(ode_traj.states[-1][2] - math.pi) > 0.15:
            continue
        passed += 1
        if passed >= 3:
            break
    assert passed >= 3


# 8 -- derivative correctness --------------------------------------------------

def test_fd_agreement_on_shipped_fields(pendulum_field, reactor_field):
    # the unconverted reactor sweep is excluded: its Newton block refuses
    # dual inputs by design and must be replaced by the learned surrogate
    # before differentiating
    rng = np.random.default_rng(21)
    for _ in range(100):
        x = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1),
                      rng.uniform(0, 2 * np.pi), rng.uniform(-1, 1),
                      rng.uniform(-5, 5)])
        assert check_fd(pendulum_field, x) <= 1e-5
        z = np.array([rng.uniform(20, 90), rng.uniform(1, 20),
                      rng.uniform(1, 30), rng.uniform(1, 18),
                      rng.uniform(1, 18)])
        assert check_fd(reactor_field, z) <= 1e-5


def test_fd_agreement_on_constraint_function():
    # scalar integrator with small nets keeps the finite-difference sweep
    # over the full weight vector fast while exercising the same code path
    # as the swing-up problem
    f = VectorFunction(2, 1, lambda v, params: [v[1]])
    p = MpcProblem(f=f, z0=np.array([0.0]), zN=np.array([1.0]),
                   u_max=5.0, t_grid=np.linspace(0, 1, 11),
                   state_net=Mlp(hidden=4, d=1),
                   input_net=Mlp(hidden=4, d=1))

    def both(wv, params):
        eqc, ineq = nlp_constraints(p, wv)
        return list(eqc) + list(ineq)

    g = VectorFunction(p.n_params, 3 + 2 * 11,
                       lambda wv, params: both(np.asarray(wv), params))
    rng = np.random.default_rng(3)
    for _ in range(100):
        w = rng.uniform(-0.5, 0.5, size=p.n_params)
        assert check_fd(g, w) <= 1e-5


def test_fd_agreement_on_network_time_derivative():
    net = Mlp(hidden=6, d=2)
    rng = np.random.default_rng(5)
    for _ in range(100):
        w = rng.uniform(-1, 1, size=net.n_params)
        t = rng.uniform(0, 1)
        h = 1e-6
        fd = (net_eval(net, w, np.array([t + h]))
              - net_eval(net, w, np.array([t - h]))) / (2 * h)
        ad = net_dt(net, w, np.array([t]))
        assert np.max(np.abs(ad - fd)) <= 1e-5


def test_batched_network_evaluation_matches_loop():
    net = Mlp(hidden=6, d=3)
    rng = np.random.default_rng(9)
    w = rng.uniform(-1, 1, size=net.n_params)
    ts = rng.uniform(0, 1, size=40)
    batch = net_eval(net, w, ts)
    loop = np.vstack([net_eval(net, w, np.array([t])) for t in ts])
    assert np.array_equal(batch, loop)
    batch_d = net_dt(net, w, ts)
    loop_d = np.vstack([net_dt(net, w, np.array([t])) for t in ts])
    assert np.array_equal(batch_d, loop_d)


# 9 -- filter equals Kalman filter on a linear system ----------------------------

def test_ekf_matches_linear_kalman_filter():
    rng = np.random.default_rng(13)
    n, m = 4, 2
    # random stable system: shift a random matrix's spectrum left
    a = rng.standard_normal((n, n))
    a -= (np.max(np.linalg.eigvals(a).real) + 0.5) * np.eye(n)
    b = rng.standard_normal((n, 1))
    h_mat = rng.standard_normal((m, n))
    u = np.array([0.7])
    dt, q, r = 0.01, 1e-4, 1e-3

    f = VectorFunction(n + 1, n,
                       lambda v, p: list(a @ np.asarray(v[:n])
                                         + b @ np.asarray(v[n:])))
    h = VectorFunction(n, m, lambda v, p: list(h_mat @ np.asarray(v)))
    Q = q * np.eye(n)
    R = r * np.eye(m)

    state = EkfState(x_hat=np.zeros(n), P=np.eye(n))
    x_kf = np.zeros(n)
    p_kf = np.eye(n)
    phi = np.eye(n) + a * dt

    def rk4(x):
        g = lambda x: a @ x + b @ u
        k1 = g(x)
        k2 = g(x + dt / 2 * k1)
        k3 = g(x + dt / 2 * k2)
        k4 = g(x + dt * k3)
        return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    x_true = rng.standard_normal(n)
    for _ in range(100):
        x_true = rk4(x_true)
        z = h_mat @ x_true + rng.normal(scale=np.sqrt(r), size=m)

        state = ekf_predict(state, f, u, Q, dt)
        state = ekf_update(state, h, z, R)

        x_kf = rk4(x_kf)
        p_kf = phi @ p_kf @ phi.T + Q * dt
        s = h_mat @ p_kf @ h_mat.T + R
        gain = np.linalg.solve(s.T, (p_kf @ h_mat.T).T).T
        x_kf = x_kf + gain @ (z - h_mat @ x_kf)
        joseph = np.eye(n) - gain @ h_mat
        p_kf = joseph @ p_kf @ joseph.T + gain @ R @ gain.T

        assert np.max(np.abs(state.x_hat - x_kf)) <= 1e-10
        assert np.max(np.abs(state.P - p_kf)) <= 1e-10


# 10 -- CLI determinism ----------------------------------------------------------

@pytest.mark.parametrize("command,config,files", [
    ("linearize", "linearize_pendulum.ini",
     ("A.csv", "B.csv", "eigenvalues.csv", "run.json")),
    ("convert", "convert_reactor.ini",
     ("surrogate.txt", "report.txt", "run.json")),
    ("simulate", "simulate_reactor.ini",
     ("trajectory.csv", "plot.gp", "run.json")),
    ("ekf", "ekf_pendulum.ini", ("estimates.csv", "run.json")),
])
def test_cli_outputs_are_deterministic(tmp_path, capsys, command, config,
                                       files):
    d1, d2 = tmp_path / "first", tmp_path / "second"
    for d in (d1, d2):
        code = cli_main([command, "--config",
                         str(PRESETS / config), "--out", str(d)])
        capsys.readouterr()
        assert code == 0
    for name in files:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
    manifest = json.loads((d1 / "run.json").read_text())
    assert manifest["command"] == command
