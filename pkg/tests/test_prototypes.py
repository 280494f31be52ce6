import math

import numpy as np
import pytest

from cprlab.errors import EmptyClass, InvalidParam, ZeroNorm
from cprlab.prototypes import (PrototypeSet, class_means, cs_loss, dissimilarities, dissimilarity, load_snapshot,
                               proto_loss, proto_loss_batch, save_snapshot)

from conftest import numeric_grad, rel_err

H = math.sqrt(2) / 2


def test_class_means_example():
    feats = np.array([[1.0, 0.0], [3.0, 0.0], [0.0, 2.0]])
    means, counts = class_means(feats, [0, 0, 1], 2)
    np.testing.assert_allclose(means, [[2.0, 0.0], [0.0, 2.0]])
    np.testing.assert_array_equal(counts, [2, 1])
    with pytest.raises(EmptyClass):
        class_means(feats, [0, 0, 0], 2)


def test_class_means_match_streaming_oracle(rng):
    feats = rng.normal(size=(200, 4))
    labels = rng.integers(0, 3, size=200)
    means, _ = class_means(feats, labels, 3)
    for k in range(3):
        m, n = np.zeros(4), 0
        for f, y in zip(feats, labels):
            if y == k:
                n += 1
                m += (f - m) / n
        np.testing.assert_allclose(means[k], m, atol=1e-12)


def test_proto_loss_examples():
    P = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert proto_loss([5.0, 0.0], P, 0)[0] == pytest.approx(0.0)
    assert proto_loss([-1.0, 0.0], P, 0)[0] == pytest.approx(4.0)
    assert proto_loss([0.0, 3.0], P, 0)[0] == pytest.approx(2.0)
    assert proto_loss([0.0, 3.0], P, 0, normalized=False)[0] == pytest.approx(10.0)
    with pytest.raises(ZeroNorm):
        proto_loss([0.0, 0.0], P, 0)


@pytest.mark.parametrize("normalized", [True, False])
def test_proto_loss_gradients_fd(rng, normalized):
    P = rng.normal(size=(3, 5))
    v = rng.normal(size=5)
    _, gv, gp = proto_loss(v, P, 1, normalized)
    f = lambda: proto_loss(v, P, 1, normalized)[0]
    assert rel_err(gv, numeric_grad(f, v)) < 1e-6
    assert rel_err(gp, numeric_grad(f, P)[1]) < 1e-6


def test_proto_loss_batch_mean(rng):
    P = rng.normal(size=(3, 4))
    V = rng.normal(size=(6, 4))
    y = np.array([0, 1, 2, 0, 1, 2])
    loss, gV, gP = proto_loss_batch(V, y, P)
    assert loss == pytest.approx(np.mean([proto_loss(V[i], P, y[i])[0] for i in range(6)]))
    f = lambda: proto_loss_batch(V, y, P)[0]
    assert rel_err(gP, numeric_grad(f, P)) < 1e-6


def test_dissimilarity_examples():
    assert dissimilarities([[1, 0], [1, 0]]).tolist() == [0.0, 0.0]
    np.testing.assert_allclose(dissimilarities([[1, 0], [0, 1]]), [1.0, 1.0])
    np.testing.assert_allclose(dissimilarities([[1, 0], [-1, 0]]), [2.0, 2.0])
    P = [[1, 0], [0, 1], [H, H]]
    assert dissimilarity(P, 0) == pytest.approx(1 - H / 2, abs=1e-5)
    assert dissimilarity(P, 0) == pytest.approx(0.64645, abs=1e-5)


def test_dissimilarity_scale_and_rotation_invariant(rng):
    P = rng.normal(size=(4, 6))
    Q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    base = dissimilarities(P)
    np.testing.assert_allclose(dissimilarities(P * np.array([[2.0], [0.5], [3.0], [7.0]])), base)
    np.testing.assert_allclose(dissimilarities(P @ Q.T), base)


def test_cs_loss_examples():
    assert cs_loss([[1, 0], [0, 1]])[0] == pytest.approx(0.0)
    assert cs_loss([[1, 0], [2, 0]])[0] == pytest.approx(1.0)
    assert cs_loss([[1, 0], [0, 1], [H, H]])[0] == pytest.approx(1 / 3, abs=1e-5)


def test_cs_loss_gradient_and_invariance(rng):
    P = rng.normal(size=(4, 5))
    _, g = cs_loss(P)
    assert rel_err(g, numeric_grad(lambda: cs_loss(P)[0], P)) < 1e-6
    perm = [2, 0, 3, 1]
    assert cs_loss(P[perm])[0] == pytest.approx(cs_loss(P)[0])
    assert cs_loss(P * 3.0)[0] == pytest.approx(cs_loss(P)[0])


def test_prototype_set_validation_and_snapshot(tmp_path):
    with pytest.raises(InvalidParam):
        PrototypeSet([[1.0, 0.0]])
    with pytest.raises(ZeroNorm):
        PrototypeSet([[1.0, 0.0], [0.0, 0.0]])
    ps = PrototypeSet([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]])
    save_snapshot(ps, tmp_path / "p.json")
    np.testing.assert_array_equal(load_snapshot(tmp_path / "p.json").vectors, ps.vectors)
