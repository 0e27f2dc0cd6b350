"""Regression solver: closed-form optimum, finite-difference gradients,
monotone descent, and the binary model container."""

import numpy as np
import pytest

from octangle.svr import (
    SvrModel,
    SvrTrainSet,
    load_svr,
    save_svr,
    svr_gradient,
    svr_objective,
    svr_predict,
    svr_train,
)


def make_set(seed=0, n=30, dim=6):
    rng = np.random.default_rng(seed)
    return SvrTrainSet(features=rng.standard_normal((n, dim)), targets=rng.random(n))


def test_closed_form_scalar_optimum():
    # 0.5 w^2 + (w - 0.5)^2 is minimized at w = 1/3
    train = SvrTrainSet(features=np.array([[1.0]]), targets=np.array([0.5]))
    model = svr_train(train, C=1.0, eps=0.0, tol=1e-12, include_bias=False)
    assert model.w[0] == pytest.approx(1.0 / 3.0, abs=1e-6)
    assert model.bias == 0.0


def test_gradient_matches_central_differences():
    train = make_set(seed=1)
    rng = np.random.default_rng(2)
    h = 1e-5
    for trial in range(5):
        w = rng.standard_normal(6)
        bias = float(rng.standard_normal())
        C, eps = 1.7, 0.05
        gw, gb = svr_gradient(w, train, C, eps, bias)
        for i in range(6):
            wp, wm = w.copy(), w.copy()
            wp[i] += h
            wm[i] -= h
            fd = (svr_objective(wp, train, C, eps, bias) - svr_objective(wm, train, C, eps, bias)) / (2 * h)
            assert abs(fd - gw[i]) / max(abs(fd), abs(gw[i]), 1e-6) < 1e-6
        fd = (svr_objective(w, train, C, eps, bias + h) - svr_objective(w, train, C, eps, bias - h)) / (2 * h)
        assert abs(fd - gb) / max(abs(fd), abs(gb), 1e-6) < 1e-6


def test_objective_monotone_over_accepted_steps():
    # the solver path is a deterministic prefix: truncating max_iter replays
    # the same accepted steps, so the objective must fall monotonically in k
    train = make_set(seed=3, n=40, dim=5)
    prev = svr_objective(np.zeros(5), train, 1.0, 0.1, 0.0)
    for k in range(1, 30):
        m = svr_train(train, C=1.0, eps=0.1, max_iter=k)
        f = svr_objective(m.w, train, 1.0, 0.1, m.bias)
        assert f <= prev + 1e-12
        prev = f


def test_training_reaches_stationarity():
    train = make_set(seed=4, n=25, dim=4)
    m = svr_train(train, C=2.0, eps=0.02, tol=1e-8, max_iter=20000)
    gw, gb = svr_gradient(m.w, train, 2.0, 0.02, m.bias)
    assert max(np.abs(gw).max(), abs(gb)) <= 1e-8


def test_epsilon_tube_zeroes_loss():
    # targets reachable within the tube: loss term vanishes, only ridge remains
    train = SvrTrainSet(features=np.eye(3), targets=np.array([0.1, 0.1, 0.1]))
    m = svr_train(train, C=100.0, eps=0.2, tol=1e-10, max_iter=10000)
    # w=0 already puts every residual (0.1) inside the eps=0.2 tube
    np.testing.assert_allclose(m.w, 0.0, atol=1e-9)


def test_include_bias_false_pins_bias():
    train = make_set(seed=5)
    m = svr_train(train, include_bias=False, max_iter=50)
    assert m.bias == 0.0


def test_predict_single_and_batch_agree():
    train = make_set(seed=6)
    m = svr_train(train, max_iter=30)
    X = train.features[:4]
    batch = svr_predict(m, X)
    singles = [svr_predict(m, row) for row in X]
    np.testing.assert_allclose(batch, singles, atol=1e-12)
    with pytest.raises(ValueError):
        svr_predict(m, np.zeros(5))


def test_train_set_validation():
    with pytest.raises(ValueError):
        SvrTrainSet(features=np.zeros((3, 2)), targets=np.zeros(2))
    with pytest.raises(ValueError):
        SvrTrainSet(features=np.zeros((2, 2)), targets=np.array([0.0, 1.5]))
    with pytest.raises(ValueError):
        SvrTrainSet(features=np.array([[np.nan, 0.0]]), targets=np.array([0.5]))
    with pytest.raises(ValueError):
        SvrTrainSet(features=np.zeros((0, 2)), targets=np.zeros(0))


def test_model_validation():
    with pytest.raises(ValueError):
        SvrModel(w=np.array([np.inf]), bias=0.0, C=1.0, epsilon=0.1)
    with pytest.raises(ValueError):
        SvrModel(w=np.zeros(2), bias=0.0, C=0.0, epsilon=0.1)
    with pytest.raises(ValueError):
        SvrModel(w=np.zeros(2), bias=0.0, C=1.0, epsilon=-0.1)


def test_save_load_round_trip(tmp_path):
    m = SvrModel(w=np.linspace(-1, 1, 17), bias=0.25, C=3.0, epsilon=0.07)
    path = tmp_path / "loc.osvr"
    save_svr(m, path)
    back = load_svr(path)
    assert np.array_equal(back.w, m.w)
    assert back.bias == m.bias
    assert back.C == m.C and back.epsilon == m.epsilon
    # byte-stable: saving the loaded model reproduces the file exactly
    path2 = tmp_path / "loc2.osvr"
    save_svr(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_corrupt_files(tmp_path):
    m = SvrModel(w=np.zeros(3), bias=0.0, C=1.0, epsilon=0.1)
    path = tmp_path / "loc.osvr"
    save_svr(m, path)
    raw = bytearray(path.read_bytes())

    bad = tmp_path / "bad.osvr"
    bad.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(ValueError, match="magic"):
        load_svr(bad)

    bad.write_bytes(bytes(raw[:-8]))
    with pytest.raises(ValueError, match="truncated|oversized"):
        load_svr(bad)

    wrong_version = bytearray(raw)
    wrong_version[4] = 99
    bad.write_bytes(bytes(wrong_version))
    with pytest.raises(ValueError, match="version"):
        load_svr(bad)
