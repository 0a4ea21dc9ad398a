import json

import numpy as np
import pytest

import oracles
from terraprint.predictor import (IllConditionedError, PredictorNet, TrajectoryDataset, TrajectoryRecord,
                                  load_predictor, loss_and_grads, numerical_gradient_check, select_features,
                                  stlsq, train)


def _linear_dataset(seed=0, n_traj=10, n=200, d=8):
    rng = np.random.default_rng(seed)
    A = np.zeros((6, d))
    A[0, 1], A[2, 3], A[2, 5], A[4, 0] = 0.8, -0.5, 0.3, 0.2
    trajs = []
    for i in range(n_traj):
        Z = rng.normal(size=(n, d))
        trajs.append(TrajectoryRecord(i, np.arange(n) * 0.02, Z, Z @ A.T))
    return TrajectoryDataset(trajs, tuple(f"f{j}" for j in range(d))).split(seed)


def test_bias_only_output():
    net = PredictorNet.initialize(15, seed=0, activation="tanh")
    net.layers = [(np.zeros_like(W), np.zeros_like(b)) for W, b in net.layers]
    net.layers[-1] = (net.layers[-1][0], np.array([1, 2, 3, 0, 0, 0]) * 1e-3)
    out = net.forward(np.random.default_rng(0).normal(size=15))
    assert np.array_equal(out.as_array(), np.array([1, 2, 3, 0, 0, 0]) * 1e-3)


def test_toy_forward_matches_hand_computation():
    W1, b1 = np.array([[1.0, -2.0], [0.5, 0.25]]), np.array([0.1, -0.2])
    W2, b2 = np.array([[0.3, 0.7], [-1.0, 0.4]]), np.array([0.0, 0.05])
    W3, b3 = np.arange(12, dtype=float).reshape(6, 2) / 10, np.linspace(-0.3, 0.2, 6)
    z = np.array([0.4, -0.9])
    for act, f in (("tanh", np.tanh), ("relu", lambda x: np.maximum(x, 0))):
        net = PredictorNet([(W1, b1), (W2, b2), (W3, b3)], act)
        h1 = f(np.array([W1[0] @ z + b1[0], W1[1] @ z + b1[1]]))
        h2 = f(np.array([W2[0] @ h1 + b2[0], W2[1] @ h1 + b2[1]]))
        expect = np.array([W3[i] @ h2 + b3[i] for i in range(6)])
        assert np.allclose(net.forward(z).as_array(), expect, atol=1e-9, rtol=0)


def test_masked_feature_has_no_effect(rng):
    mask = np.ones(15, dtype=bool)
    mask[4] = False
    net = PredictorNet.initialize(15, seed=3, activation="tanh", feature_mask=mask)
    z = rng.normal(size=15)
    base = net.forward(z).as_array()
    for v in (-1e6, -3.0, 0.0, 42.0, 1e9):
        z2 = z.copy()
        z2[4] = v
        assert np.array_equal(net.forward(z2).as_array(), base)


def test_forward_rejects_wrong_dimension():
    net = PredictorNet.initialize(15, seed=0)
    with pytest.raises(ValueError):
        net.forward(np.zeros(14))


def test_json_roundtrip(tmp_path):
    net = PredictorNet.initialize(17, seed=5, activation="tanh", layout=tuple(f"c{i}" for i in range(17)))
    net.mean = np.linspace(-1, 1, 17)
    net.std = np.linspace(0.5, 2, 17)
    path = tmp_path / "p.json"
    net.save(path)
    obj = json.loads(path.read_text())
    assert set(obj) == {"layout", "activation", "mask", "standardization", "layers"}
    back = load_predictor(str(path))
    z = np.random.default_rng(0).normal(size=17)
    assert np.array_equal(back.forward(z).as_array(), net.forward(z).as_array())
    assert load_predictor("zero") is None
    with pytest.raises(FileNotFoundError):
        load_predictor(str(tmp_path / "missing.json"))


def test_gradient_check_toy_net(rng):
    net = PredictorNet.initialize(4, seed=1, activation="tanh", hidden=(5, 3))
    err = numerical_gradient_check(net, rng.normal(size=(3, 4)), rng.normal(size=(3, 6)))
    assert err < 1e-4


def test_analytic_gradients_match_independent_finite_differences(rng):
    net = PredictorNet.initialize(5, seed=2, activation="tanh", hidden=(6, 4))
    Z, Y = rng.normal(size=(4, 5)), rng.normal(size=(4, 6))
    _, grads = loss_and_grads(net, Z, Y)
    params = [p for W, b in net.layers for p in (W.copy(), b.copy())]
    num = oracles.central_difference(
        params, lambda: oracles.mlp_loss(params, Z, Y, net.feature_mask, net.mean, net.std))
    analytic = [g for pair in grads for g in pair]
    for a, n in zip(analytic, num):
        assert np.allclose(a, n, atol=1e-8, rtol=1e-5)


def test_zero_loss_point_has_zero_gradient(rng):
    net = PredictorNet.initialize(6, seed=0, activation="tanh", hidden=(8, 8))
    z = rng.normal(size=(1, 6))
    target = net.forward_batch(z)
    loss, grads = loss_and_grads(net, z, target)
    assert loss == 0.0
    assert np.sqrt(sum(np.sum(gW**2) + np.sum(gb**2) for gW, gb in grads)) < 1e-10


def test_loss_scaling_scales_gradients(rng):
    net = PredictorNet.initialize(6, seed=0, activation="relu", hidden=(8, 8))
    Z, Y = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    l1, g1 = loss_and_grads(net, Z, Y)
    l2, g2 = loss_and_grads(net, Z, Y, scale=2.0)
    assert np.isclose(l2, 2 * l1, rtol=1e-12)
    for (a, b), (c, d) in zip(g1, g2):
        assert np.allclose(c, 2 * a, atol=1e-9, rtol=0) and np.allclose(d, 2 * b, atol=1e-9, rtol=0)


def test_split_is_trajectory_level():
    data = _linear_dataset(n_traj=10)
    assert len(data.train_ids) == 8 and len(data.val_ids) == 2
    assert not set(data.train_ids) & set(data.val_ids)
    assert sorted(data.train_ids + data.val_ids) == data.ids
    data.val_ids = [data.train_ids[0]]
    with pytest.raises(ValueError):
        data.validate_split()


def test_small_dataset_keeps_both_sides():
    data = _linear_dataset(n_traj=2)
    assert len(data.train_ids) == 1 and len(data.val_ids) == 1


def test_training_needs_two_trajectories():
    data = _linear_dataset(n_traj=1)
    with pytest.raises(ValueError):
        train(data, {"epochs": 1})


def test_train_learns_linear_map():
    data = _linear_dataset()
    res = train(data, {"lr": 0.01, "epochs": 30, "batch": 32, "seed": 0})
    Xv, Yv = data.stacked(data.val_ids)
    rms_err = np.sqrt(np.mean((res.net.forward_batch(Xv) - Yv) ** 2))
    assert rms_err < 0.1 * np.sqrt(np.mean(Yv**2))
    assert res.val_loss[-1] < res.val_loss[0]


def test_zero_epochs_returns_initialization():
    data = _linear_dataset()
    res = train(data, {"epochs": 0, "seed": 4})
    for (W, b), (W0, b0) in zip(res.net.layers, res.initial.layers):
        assert np.array_equal(W, W0) and np.array_equal(b, b0)
    assert len(res.train_loss) == 1


def test_training_is_deterministic():
    a = train(_linear_dataset(), {"epochs": 3, "seed": 9})
    b = train(_linear_dataset(), {"epochs": 3, "seed": 9})
    assert a.train_loss == b.train_loss and a.val_loss == b.val_loss


def test_dataset_csv_roundtrip(tmp_path):
    data = _linear_dataset(n_traj=3, n=20)
    data.to_csv_dir(tmp_path)
    back = TrajectoryDataset.from_csv_dir(tmp_path)
    assert back.layout == data.layout
    for a, b in zip(data.trajectories, back.trajectories):
        assert np.array_equal(a.features, b.features) and np.array_equal(a.targets, b.targets)


def test_stlsq_zero_targets_select_nothing(rng):
    mask, coef = stlsq(rng.normal(size=(100, 6)), np.zeros((100, 2)), 0.05, 1e-3)
    assert not mask.any() and np.all(coef == 0)


def test_stlsq_threshold_zero_keeps_all(rng):
    X = rng.normal(size=(100, 6))
    mask, _ = stlsq(X, X @ rng.normal(size=(6, 1)), 0.0, 1e-3)
    assert mask.all()


def test_stlsq_recovers_support():
    hits = 0
    for seed in range(20):
        X, Y, support = oracles.sparse_linear_data(seed)
        mask, _ = stlsq(X, Y, 0.05, 1e-3)
        hits += np.array_equal(np.flatnonzero(mask), support)
    assert hits >= 19


def test_stlsq_ill_conditioned_without_ridge(rng):
    X = rng.normal(size=(50, 3))
    X = np.column_stack([X, X[:, 0]])
    with pytest.raises(IllConditionedError):
        stlsq(X, rng.normal(size=(50, 1)), 0.05, ridge=0.0)
    mask, _ = stlsq(X, rng.normal(size=(50, 1)), 0.05, ridge=1e-3)
    assert mask.shape == (4,)


def test_select_features_on_dataset():
    data = _linear_dataset()
    mask = select_features(data, 0.05, 1e-3)
    assert list(np.flatnonzero(mask)) == [0, 1, 3, 5]
