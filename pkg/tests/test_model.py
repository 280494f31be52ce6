import math

import numpy as np
import pytest

from cprlab.errors import DimensionMismatch, InvalidArchitecture, LabelOutOfRange
from cprlab.model import (OptimState, backward, cross_entropy, cross_entropy_batch, forward, init_model,
                          load_checkpoint, lr_at, save_checkpoint, sgd_momentum_step, softmax)

from conftest import numeric_grad, rel_err


def test_cross_entropy_examples():
    loss, grad = cross_entropy([2.0, 1.0, 0.0], 0)
    assert abs(loss - 0.40760596) < 1e-6
    assert abs(grad.sum()) < 1e-12
    loss, _ = cross_entropy(np.zeros(5), 3)
    assert abs(loss - math.log(5)) < 1e-12
    with pytest.raises(LabelOutOfRange):
        cross_entropy([1.0, 2.0], 2)


def test_cross_entropy_stable_for_large_logits():
    loss, grad = cross_entropy([1000.0, 0.0], 0)
    assert np.isfinite(loss) and loss < 1e-12
    assert np.all(np.isfinite(grad))
    np.testing.assert_allclose(softmax(np.array([[1e4, 0.0]])), [[1.0, 0.0]])


def test_cross_entropy_gradient_fd(rng):
    z = rng.normal(size=6)
    _, g = cross_entropy(z, 2)
    assert rel_err(g, numeric_grad(lambda: cross_entropy(z, 2)[0], z)) < 1e-6


def test_batch_ce_matches_single(rng):
    z = rng.normal(size=(4, 3))
    y = np.array([0, 2, 1, 2])
    loss, g = cross_entropy_batch(z, y)
    singles = [cross_entropy(z[i], y[i]) for i in range(4)]
    assert abs(loss - np.mean([s[0] for s in singles])) < 1e-12
    np.testing.assert_allclose(g, np.array([s[1] for s in singles]) / 4)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_backward_matches_finite_differences(rng, activation):
    params = init_model([5, 7, 6, 3], activation, seed=1)
    x = rng.normal(size=(4, 5))
    y = np.array([0, 1, 2, 1])
    c = rng.normal(size=(4, 6))

    def loss():
        tr = forward(params, x)
        return cross_entropy_batch(tr.logits, y)[0] + float(np.sum(c * tr.features))

    tr = forward(params, x)
    _, dz = cross_entropy_batch(tr.logits, y)
    grads = backward(params, tr, d_features=c, d_logits=dz)
    for p, g in zip(params.arrays(), grads.arrays()):
        assert rel_err(g, numeric_grad(loss, p, h=1e-6)) < 1e-4


def test_zero_upstream_and_feature_only_upstream(rng):
    params = init_model([4, 5, 3], "tanh", seed=2)
    tr = forward(params, rng.normal(size=(3, 4)))
    for g in backward(params, tr).arrays():
        assert not np.any(g)
    grads = backward(params, tr, d_features=np.ones((3, 5)))
    assert not np.any(grads.weights[-1]) and not np.any(grads.biases[-1])
    assert np.any(grads.weights[0])
    with pytest.raises(DimensionMismatch):
        backward(params, tr, d_features=np.ones((3, 4)))


def test_init_is_deterministic_and_validated():
    a = init_model([8, 6, 4], seed=3)
    b = init_model([8, 6, 4], seed=3)
    for p, q in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(p, q)
    assert a.widths == [8, 6, 4] and a.n_features == 6 and a.n_classes == 4
    assert np.all(np.abs(a.weights[0]) <= math.sqrt(6 / 8))
    assert not np.any(a.biases[0])
    with pytest.raises(InvalidArchitecture):
        init_model([8, 0, 4])
    with pytest.raises(InvalidArchitecture):
        init_model([8, 4])


def test_forward_shapes_and_width_check():
    params = init_model([3, 4, 2])
    tr = forward(params, np.ones(3))
    assert tr.logits.shape == (1, 2) and tr.features.shape == (1, 4)
    assert np.all(tr.features >= 0)
    with pytest.raises(DimensionMismatch):
        forward(params, np.ones((2, 5)))


def test_cosine_schedule():
    opt = OptimState(lr0=0.1, total_epochs=100)
    assert lr_at(opt, 0) == pytest.approx(0.1)
    assert lr_at(opt, 50) == pytest.approx(0.05)
    assert lr_at(opt, 100) == pytest.approx(0.0, abs=1e-15)


def test_momentum_displacement():
    opt = OptimState(lr0=0.1, momentum=0.9)
    p = np.zeros(3)
    g = np.array([1.0, -2.0, 0.5])
    sgd_momentum_step([p], [g], opt, lr=0.1)
    sgd_momentum_step([p], [g], opt, lr=0.1)
    np.testing.assert_allclose(p, -2.9 * 0.1 * g)


def test_weight_decay_shrinks():
    opt = OptimState(weight_decay=0.1, momentum=0.0)
    p = np.array([1.0, -2.0])
    sgd_momentum_step([p], [np.zeros(2)], opt, lr=0.5)
    np.testing.assert_allclose(p, [0.95, -1.9])
    q = np.array([1.0])
    sgd_momentum_step([q], [np.zeros(1)], opt, lr=0.5, key="proto", weight_decay=0.0)
    assert q[0] == 1.0


def test_checkpoint_round_trip(tmp_path, rng):
    params = init_model([4, 5, 3], seed=9)
    save_checkpoint(params, tmp_path / "m.json")
    back = load_checkpoint(tmp_path / "m.json")
    x = rng.normal(size=(2, 4))
    np.testing.assert_array_equal(forward(params, x).logits, forward(back, x).logits)
