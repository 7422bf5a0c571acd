"""Block surrogates: sampling, least-squares fit, block replacement."""

import numpy as np
import pytest

from ctrlkit.autodiff import jacobian
from ctrlkit.errors import CtrlkitError, RankDeficiencyError
from ctrlkit.expr import eval_expr
from ctrlkit.model_ir import parse_model
from ctrlkit.models import load_builtin
from ctrlkit.structural import causal_field, causalize
from ctrlkit.surrogate import (
    REACTOR_RANGES,
    FeatureMap,
    LinearSurrogate,
    TrainingSet,
    convert_reactor_model,
    fit,
    learn_block,
    load_surrogate,
    reactor_feature_map,
    replace_block,
    sample_block,
    save_surrogate,
    surrogate_residual,
)


@pytest.fixture(scope="module")
def reactor_model():
    return causalize(load_builtin("reactor"))


@pytest.fixture(scope="module")
def newton_block(reactor_model):
    return [b for b in reactor_model.blt.blocks if b.tag == "newton"][0]


@pytest.fixture(scope="module")
def reactor_surrogate(reactor_model, newton_block):
    return learn_block(reactor_model, newton_block, reactor_feature_map(),
                       REACTOR_RANGES, n=1000, seed=42)


def test_feature_map_basics():
    fm = reactor_feature_map()
    assert fm.n_features == 10
    assert fm.names[:4] == ["x1", "x2", "x3", "x4"]
    assert fm.names[4] == "x1*x4"
    assert fm.raw_inputs() == ["C_A", "C_B", "F", "F_i", "V"]
    phi = fm.feature_vector({"F_i": 10.0, "F": 5.0, "V": 50.0,
                             "C_A": 2.0, "C_B": 3.0})
    assert phi[0] == pytest.approx(0.2)
    assert phi[4] == pytest.approx(0.2 * 2.0)
    assert phi[9] == pytest.approx(6.0)


def test_feature_map_rejects_bad_degree():
    with pytest.raises(CtrlkitError):
        FeatureMap.from_spec({"a": "u"}, ["a*a*a"])


def test_sample_block_empty(reactor_model, newton_block):
    ts = sample_block(reactor_model, newton_block, REACTOR_RANGES, 0)
    assert len(ts) == 0


def test_sample_block_ground_truth(reactor_model, newton_block):
    ts = sample_block(reactor_model, newton_block, REACTOR_RANGES, 200,
                      seed=42)
    assert len(ts) == 200
    sys = reactor_model.sys
    eqs = [sys.equations[k].residual for k in newton_block.eqs]
    params = sys.parameter_bindings()
    for i in range(len(ts)):
        binds = dict(params)
        binds.update(zip(ts.input_names, ts.inputs[i]))
        binds["R_B"] = binds["K_B"] * binds["C_B"]
        binds.update(zip(ts.target_names, ts.targets[i]))
        res = [eval_expr(e, binds) for e in eqs]
        assert np.max(np.abs(res)) <= 1e-10


def test_sample_block_deterministic(reactor_model, newton_block):
    a = sample_block(reactor_model, newton_block, REACTOR_RANGES, 50, seed=9)
    b = sample_block(reactor_model, newton_block, REACTOR_RANGES, 50, seed=9)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.targets, b.targets)


def test_sample_block_steady_state_point(reactor_model, newton_block):
    fss = 165.0 / 17.0
    pt = {"F_i": (fss, fss), "F": (fss, fss), "V": (50.0, 50.0),
          "C_A": (22.0, 22.0), "C_B": (11.0, 11.0)}
    ts = sample_block(reactor_model, newton_block, pt, 1, seed=0)
    assert ts.targets[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert ts.targets[0, 1] == pytest.approx(0.0, abs=1e-9)
    assert ts.targets[0, 2] == pytest.approx(5.434, abs=1e-2)


def test_fit_exact_linear_data():
    fm = FeatureMap.from_spec({"x1": "u", "x2": "v"}, ["x1", "x2", "x1*x2"])
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 1, size=(60, 2))
    ts = TrainingSet(["u", "v"], X, ["y"],
                     (2.0 * X[:, 0]).reshape(-1, 1), 1, {})
    s = fit(ts, fm)
    assert s.weights[0, 0] == pytest.approx(2.0, abs=1e-10)
    assert abs(s.weights[0, 1]) < 1e-10
    assert abs(s.weights[0, 2]) < 1e-10


def test_fit_rank_deficiency_names_columns():
    fm = FeatureMap.from_spec({"x1": "u", "x2": "u"}, ["x1", "x2"])
    rng = np.random.default_rng(2)
    X = rng.uniform(0, 1, size=(30, 1))
    ts = TrainingSet(["u"], X, ["y"], X.copy(), 2, {})
    with pytest.raises(RankDeficiencyError) as ei:
        fit(ts, fm)
    assert "x2" in ei.value.columns


def test_reactor_weights(reactor_surrogate):
    W = reactor_surrogate.weights
    want1 = [33.333, 0, -0.2, 0, -0.6667, -0.6667, 0, 0, 0, 0]
    want3 = [16.667, 0, 0.2, 0, -0.3333, 0.6667, 0, 0, 0, 0]
    for k in range(10):
        if want1[k] != 0:
            assert W[0, k] == pytest.approx(want1[k], abs=1e-3)
            assert W[2, k] == pytest.approx(want3[k], abs=1e-3)
        else:
            assert abs(W[0, k]) <= 1e-6
            assert abs(W[2, k]) <= 1e-6
        assert W[1, k] == pytest.approx(W[0, k] / 2.0, abs=1e-9)


def test_fit_deterministic(reactor_model, newton_block, reactor_surrogate):
    again = learn_block(reactor_model, newton_block, reactor_feature_map(),
                        REACTOR_RANGES, n=1000, seed=42)
    assert np.array_equal(again.weights, reactor_surrogate.weights)


def test_replace_block_yields_explicit_ode(reactor_model, newton_block,
                                           reactor_surrogate):
    m2 = replace_block(reactor_model, newton_block, reactor_surrogate)
    assert not m2.has_newton_blocks()
    assert m2.state_names == ["V", "C_B", "C_C"]
    f = causal_field(m2)
    # differentiable end to end now
    J = jacobian(f, [50.0, 11.0, 17.0, 9.7, 9.7])
    assert J.shape == (3, 5)


def test_replaced_field_matches_dae_sweep(reactor_model, newton_block,
                                          reactor_surrogate):
    m2 = replace_block(reactor_model, newton_block, reactor_surrogate)
    f_dae = causal_field(reactor_model)
    f_ode = causal_field(m2)
    rng = np.random.default_rng(4)
    for _ in range(100):
        z = [rng.uniform(20, 90), rng.uniform(1, 20), rng.uniform(1, 30),
             rng.uniform(1, 18), rng.uniform(1, 18)]
        a = np.array(f_dae(z, ()), dtype=float)
        b = np.array(f_ode(z, ()), dtype=float)
        assert np.max(np.abs(a - b)) <= 1e-6


def test_closed_form_cb_derivative(reactor_surrogate):
    # from the block equations: dC_B/dt = [x1*C_Ai - x1*C_A - x2*C_B
    #                                      - K_B*C_B] / (1 + 1/K_eq)
    fm = reactor_surrogate.feature_map
    rng = np.random.default_rng(6)
    for _ in range(100):
        binds = {"F_i": rng.uniform(0, 20), "F": rng.uniform(0, 20),
                 "V": rng.uniform(10, 100), "C_A": rng.uniform(0, 50),
                 "C_B": rng.uniform(0, 25)}
        x1 = binds["F_i"] / binds["V"]
        x2 = binds["F"] / binds["V"]
        want = (x1 * (50.0 - binds["C_A"]) - x2 * binds["C_B"]
                - 0.3 * binds["C_B"]) / 3.0
        got = reactor_surrogate.predict_block(binds)["der(C_B)"]
        assert got == pytest.approx(want, abs=1e-8)


def test_replace_identity_on_explicit_block():
    sys = parse_model("state x = 1; input u; input v; "
                      "equation der(x) = u - v;")
    m = causalize(sys)
    fm = FeatureMap.from_spec({"a": "u", "b": "v"}, ["a", "b"])
    s = LinearSurrogate(fm, np.array([[1.0, -1.0]]), ["der(x)"])
    m2 = replace_block(m, m.blt.blocks[0], s)
    f0 = causal_field(m)
    f1 = causal_field(m2)
    for u, v in [(0.0, 0.0), (1.0, 0.5), (-2.0, 3.0)]:
        assert abs(f0([1.0, u, v], ())[0] - f1([1.0, u, v], ())[0]) <= 1e-12


def test_surrogate_residual_small_for_exact_fit(reactor_model, newton_block,
                                                reactor_surrogate):
    r = surrogate_residual(reactor_model, newton_block, reactor_surrogate,
                           REACTOR_RANGES, 200, seed=5)
    assert r <= 1e-8


def test_surrogate_residual_zero_weights(reactor_model, newton_block,
                                         reactor_surrogate):
    zeroed = LinearSurrogate(reactor_surrogate.feature_map,
                             np.zeros_like(reactor_surrogate.weights),
                             list(reactor_surrogate.output_names))
    r = surrogate_residual(reactor_model, newton_block, zeroed,
                           REACTOR_RANGES, 50, seed=5)
    assert r > 1.0


def test_persistence_round_trip(tmp_path, reactor_surrogate):
    path = tmp_path / "reactor.sur"
    save_surrogate(reactor_surrogate, path)
    again = load_surrogate(path)
    assert again.output_names == reactor_surrogate.output_names
    assert again.feature_map.names == reactor_surrogate.feature_map.names
    assert np.array_equal(again.weights, reactor_surrogate.weights)
    binds = {"F_i": 9.1, "F": 8.7, "V": 43.0, "C_A": 21.0, "C_B": 10.0}
    a = reactor_surrogate.predict_block(binds)
    b = again.predict_block(binds)
    assert all(a[k] == b[k] for k in a)


def test_convert_reactor_steady_state():
    m2, _ = convert_reactor_model(causalize(load_builtin("reactor")))
    f = causal_field(m2)
    fss = 165.0 / 17.0
    dz = f([50.0, 11.0, 17.0, fss, fss], ())
    assert np.max(np.abs(dz)) <= 1e-6
