import numpy as np
import pytest

from cprlab.data import (Dataset, Standardizer, generate_blobs, label_mapping, load_csv_dataset, make_blob_splits,
                         save_csv_dataset, stratified_subsets)
from cprlab.errors import FractionTooSmall, InconsistentWidth, InvalidParam, ParseError, UnknownLabel


def test_blobs_deterministic_and_balanced():
    a = generate_blobs(4, 6, 10, seed=3)
    b = generate_blobs(4, 6, 10, seed=3)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    assert a.class_counts().tolist() == [10] * 4
    assert a.fingerprint() != generate_blobs(4, 6, 10, seed=4).fingerprint()


def test_spread_zero_collapses_to_means():
    d = generate_blobs(3, 5, 4, spread=0.0, seed=1)
    for k in range(3):
        rows = d.x[d.y == k]
        assert np.allclose(rows, rows[0])
        assert np.linalg.norm(rows[0]) == pytest.approx(1.0)
    d = generate_blobs(3, 5, 4, spread=0.0, overlap=0.5, seed=1)
    assert np.linalg.norm(d.x[0]) == pytest.approx(0.5)


def test_label_noise_keeps_balance_and_hits_train_only():
    tr, te = make_blob_splits(5, 8, 40, 20, spread=0.0, seed=2, label_noise=0.2)
    clean_tr, clean_te = make_blob_splits(5, 8, 40, 20, spread=0.0, seed=2)
    assert tr.class_counts().tolist() == [40] * 5
    np.testing.assert_array_equal(te.y, clean_te.y)
    np.testing.assert_array_equal(tr.x, clean_tr.x)
    changed = np.mean(tr.y != clean_tr.y)
    assert 0.1 < changed <= 0.2
    with pytest.raises(InvalidParam):
        generate_blobs(3, 4, 5, label_noise=1.5)


def test_csv_round_trip(tmp_path):
    d = generate_blobs(3, 4, 5, seed=0)
    save_csv_dataset(d, tmp_path / "d.csv")
    back = load_csv_dataset(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.x, d.x)
    np.testing.assert_array_equal(back.y, d.y)


def test_csv_label_remap_and_mapping(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,label,b\n1,10,2\n3,2,4\n5,10,6\n")
    d = load_csv_dataset(p)
    assert d.label_names == ["2", "10"]
    assert d.y.tolist() == [1, 0, 1]
    np.testing.assert_array_equal(d.x, [[1, 2], [3, 4], [5, 6]])
    q = tmp_path / "q.csv"
    q.write_text("a,label,b\n1,7,2\n")
    with pytest.raises(UnknownLabel):
        load_csv_dataset(q, mapping=label_mapping(d))
    s = tmp_path / "s.csv"
    s.write_text("label,x\ncat,1\ndog,2\n")
    assert load_csv_dataset(s).label_names == ["cat", "dog"]


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("label,x,y\n0,1,2\n1,3\n")
    with pytest.raises(InconsistentWidth) as exc:
        load_csv_dataset(p)
    assert exc.value.line == 3
    p.write_text("label,x\n0,abc\n")
    with pytest.raises(ParseError) as exc:
        load_csv_dataset(p)
    assert exc.value.line == 2
    p.write_text("x,y\n1,2\n")
    with pytest.raises(ParseError):
        load_csv_dataset(p)
    p.write_text("")
    with pytest.raises(ParseError):
        load_csv_dataset(p)


def test_stratified_subsets():
    d = generate_blobs(4, 3, 20, seed=0)
    plan = stratified_subsets(d, draws=6, fraction=0.5, seed=7)
    assert plan.per_class == 10 and plan.seeds == tuple(range(7, 13))
    for idx in plan.indices:
        assert len(set(idx.tolist())) == 40
        assert np.bincount(d.y[idx], minlength=4).tolist() == [10] * 4
    again = stratified_subsets(d, draws=6, fraction=0.5, seed=7)
    for a, b in zip(plan.indices, again.indices):
        np.testing.assert_array_equal(a, b)
    # independent without-replacement draws of half a class overlap by about half
    overlaps = [len(np.intersect1d(plan.indices[0], plan.indices[i])) / 40 for i in range(1, 6)]
    assert 0.3 < np.mean(overlaps) < 0.7
    with pytest.raises(FractionTooSmall):
        stratified_subsets(d, fraction=0.01)
    with pytest.raises(FractionTooSmall):
        stratified_subsets(d, fraction=0.0)


def test_standardizer(rng):
    d = Dataset(rng.normal(3.0, 2.0, size=(50, 4)), np.zeros(50, int), 1)
    z = Standardizer.fit(d).apply(d)
    np.testing.assert_allclose(z.x.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(z.x.std(axis=0), 1, atol=1e-12)


def test_dataset_rejects_bad_input():
    with pytest.raises(InvalidParam):
        Dataset(np.array([[np.nan]]), [0], 1)
    with pytest.raises(InvalidParam):
        Dataset(np.ones((2, 2)), [0, 3], 2)
