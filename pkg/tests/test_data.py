import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from postnet.data import (
    THREE_GAUSSIAN_MEANS,
    DataError,
    LabeledDataset,
    MinMaxScaler,
    convert_segment,
    convert_sensorless,
    fit_apply_minmax,
    generate_three_gaussians,
    leave_out_classes,
    load_csv,
    make_oodom,
    save_csv,
    split,
)


def _ds(n=10, k=3, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.normal(size=(n, d)), np.arange(n) % k, [f"c{i}" for i in range(k)],
                          [f"f{i}" for i in range(d)])


class TestThreeGaussians:
    def test_class_sizes(self):
        ds = generate_three_gaussians(1500, 0)
        assert np.bincount(ds.y).tolist() == [500, 500, 500]

    def test_class_mean(self):
        ds = generate_three_gaussians(1500, 1)
        emp = ds.X[ds.y == 0].mean(axis=0)
        tol = 3 * math.sqrt(0.2 / 500)
        np.testing.assert_allclose(emp, THREE_GAUSSIAN_MEANS[0], atol=tol)

    def test_same_seed(self):
        a, b = generate_three_gaussians(300, 4), generate_three_gaussians(300, 4)
        assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()


class TestCsv:
    def test_parse(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,label\n0,1,x\n1,0,y\n")
        ds = load_csv(p)
        np.testing.assert_array_equal(ds.X, [[0, 1], [1, 0]])
        assert ds.y.tolist() == [0, 1]
        assert ds.class_names == ["x", "y"]

    def test_missing_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0,1,x\n1,0,y\n")
        with pytest.raises(DataError, match="header"):
            load_csv(p)

    def test_ragged_and_non_numeric(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,label\n0,1\n")
        with pytest.raises(DataError):
            load_csv(p)
        p.write_text("a,b,label\n0,zz,x\n")
        with pytest.raises(DataError):
            load_csv(p)

    def test_integer_labels_sorted(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,label\n0,10\n1,2\n2,10\n")
        ds = load_csv(p)
        assert ds.class_names == ["2", "10"]
        assert ds.y.tolist() == [1, 0, 1]

    def test_pinned_vocabulary(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,label\n0,y\n")
        assert load_csv(p, class_names=["x", "y"]).y.tolist() == [1]
        with pytest.raises(DataError):
            load_csv(p, class_names=["x"])

    def test_round_trip(self, tmp_path):
        ds = generate_three_gaussians(30, 0)
        save_csv(ds, tmp_path / "d.csv")
        again = load_csv(tmp_path / "d.csv")
        assert again.X.tobytes() == ds.X.tobytes()
        assert again.y.tolist() == ds.y.tolist()


class TestSplit:
    def test_sizes(self):
        assert [len(s) for s in split(_ds(10), (0.6, 0.2, 0.2), 0)] == [6, 2, 2]

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(5, 200), seed=st.integers(0, 1000))
    def test_partition(self, n, seed):
        ds = _ds(n)
        ds.X[:, 0] = np.arange(n)
        parts = split(ds, (0.6, 0.2, 0.2), seed)
        ids = np.concatenate([p.X[:, 0] for p in parts])
        assert sorted(ids.tolist()) == list(range(n))

    def test_seeds_give_distinct_partitions(self):
        ds = _ds(50)
        ds.X[:, 0] = np.arange(50)
        firsts = {tuple(split(ds, (0.6, 0.2, 0.2), s)[0].X[:, 0]) for s in range(5)}
        assert len(firsts) == 5

    def test_bad_ratios(self):
        with pytest.raises(DataError):
            split(_ds(), (0.5, 0.2, 0.2))


class TestScaling:
    def test_train_range(self):
        sc = MinMaxScaler.fit(np.array([[2.0], [4.0]]))
        assert sc.transform(np.array([[3.0]]))[0, 0] == 0.5

    def test_out_of_range_allowed(self):
        sc = MinMaxScaler.fit(np.array([[2.0], [4.0]]))
        assert sc.transform(np.array([[5.0]]))[0, 0] == 1.5

    def test_constant_column(self):
        sc = MinMaxScaler.fit(np.array([[7.0, 1.0], [7.0, 2.0]]))
        np.testing.assert_array_equal(sc.transform(np.array([[7.0, 1.5], [9.0, 1.0]]))[:, 0], [0.0, 0.0])

    def test_fit_apply(self):
        tr, te = _ds(10), _ds(5, seed=1)
        str_, ste, sc = fit_apply_minmax(tr, te)
        assert str_.X.min() == 0.0 and str_.X.max() == 1.0
        np.testing.assert_allclose(ste.X, sc.transform(te.X))

    def test_inverse(self, rng):
        X = rng.normal(size=(6, 3))
        sc = MinMaxScaler.fit(X)
        np.testing.assert_allclose(sc.inverse_transform(sc.transform(X)), X)


class TestLeaveOut:
    def test_by_name(self):
        names = ["brickface", "sky", "foliage", "cement", "window", "path", "grass"]
        ds = LabeledDataset(np.zeros((14, 2)), np.arange(14) % 7, names, ["a", "b"])
        id_ds, ood = leave_out_classes(ds, ["sky"])
        assert id_ds.n_classes == 6 and "sky" not in id_ds.class_names
        assert len(ood) == 2

    def test_by_index(self):
        ds = LabeledDataset(np.zeros((22, 2)), np.arange(22) % 11, [str(i) for i in range(1, 12)], ["a", "b"])
        id_ds, ood = leave_out_classes(ds, ["10", "11"])
        assert id_ds.n_classes == 9 and len(ood) == 4
        assert id_ds.y.max() == 8

    def test_empty_removal(self):
        ds = _ds(9)
        id_ds, ood = leave_out_classes(ds, [])
        assert len(ood) == 0 and id_ds.y.tolist() == ds.y.tolist()

    def test_unknown_class(self):
        with pytest.raises(DataError):
            leave_out_classes(_ds(), ["nope"])


class TestOODom:
    def test_factor(self):
        ds = LabeledDataset(np.array([[0.5]]), np.array([0]), ["a"], ["f"])
        assert make_oodom(ds, 255).X[0, 0] == 127.5

    def test_identity(self):
        ds = _ds()
        np.testing.assert_array_equal(make_oodom(ds, 1).X, ds.X)


class TestConverters:
    def test_segment(self, tmp_path):
        cols = ["REGION-CENTROID-COL", "REGION-CENTROID-ROW", "REGION-PIXEL-COUNT"] + [f"F{i}" for i in range(16)]
        lines = ["header junk", "", ",".join(cols), ""]
        for label in ["SKY", "GRASS", "SKY"]:
            lines.append(",".join([label] + ["1.5"] * 19))
        p = tmp_path / "segmentation.data"
        p.write_text("\n".join(lines) + "\n")
        ds = convert_segment([p])
        assert ds.n_features == 18
        assert "region-pixel-count" not in ds.feature_names
        assert ds.class_names == ["sky", "grass"]

    def test_sensorless(self, tmp_path):
        p = tmp_path / "Sensorless_drive_diagnosis.txt"
        p.write_text("0.1 0.2 1\n0.3 0.4 11\n0.5 0.6 2\n")
        ds = convert_sensorless([p])
        assert ds.n_features == 2
        assert ds.class_names == ["1", "2", "11"]
        assert ds.y.tolist() == [0, 2, 1]
