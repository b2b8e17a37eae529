import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nrf.data import (DataError, Dataset, load_csv, sine_target, split_dataset, split_sizes,
                      synth_sine, write_csv)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_row_with_empty_cell_is_dropped(tmp_path):
    p = _write(tmp_path, "a,b,y\n1,2,3\n4,,6\n7,8,9\n1,1,1\n")
    ds, rep = load_csv(p)
    assert ds.n == 3 and ds.d == 2
    assert rep.rows_read == 4 and rep.rows_dropped == 1 and rep.columns_dropped == ()


def test_text_column_is_dropped(tmp_path):
    p = _write(tmp_path, "a,name,b,y\n1,ford,2,3\n4,chevy,5,6\n7,vw,8,9\n")
    ds, rep = load_csv(p)
    assert ds.feature_names == ("a", "b")
    assert rep.columns_dropped == ("name",)


def test_mostly_numeric_column_keeps_column_and_drops_bad_rows(tmp_path):
    # a "?" marker in a numeric column removes the row, not the column
    p = _write(tmp_path, "hp,w,y\n130,1,2\n?,2,3\n150,3,4\n140,4,5\n")
    ds, rep = load_csv(p)
    assert ds.feature_names == ("hp", "w") and ds.n == 3 and rep.rows_dropped == 1


def test_target_selection_and_errors(tmp_path):
    p = _write(tmp_path, "a,y,b\n1,2,3\n4,5,6\n")
    ds, _ = load_csv(p, "y")
    assert ds.target_name == "y" and ds.feature_names == ("a", "b")
    assert np.array_equal(ds.target, [2.0, 5.0])
    with pytest.raises(DataError):
        load_csv(p, "missing")
    with pytest.raises(DataError):
        load_csv(_write(tmp_path, "a,y\n1,x\n2,z\n", "t.csv"))
    with pytest.raises(DataError):
        load_csv(tmp_path / "absent.csv")
    with pytest.raises(DataError):
        load_csv(_write(tmp_path, "a,y\n1,2\n", "one.csv"))


@given(st.integers(2, 30), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_load_csv_reads_back_what_it_writes(n, d, seed):
    import tempfile
    from pathlib import Path
    ds = synth_sine(n, d, 0.3, seed)
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "x.csv"
        write_csv(ds, p)
        back, rep = load_csv(p)
        write_csv(back, Path(tmp) / "y.csv")
        again, _ = load_csv(Path(tmp) / "y.csv")
    assert rep.rows_dropped == 0
    for other in (back, again):
        assert np.array_equal(other.features, ds.features)
        assert np.array_equal(other.target, ds.target)
        assert other.feature_names == ds.feature_names


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(np.zeros((1, 2)), np.zeros(1), ("a", "b"))
    with pytest.raises(DataError):
        Dataset(np.array([[0.0], [np.nan]]), np.zeros(2), ("a",))
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 1)), np.zeros(2), ("a",))
    ds = Dataset(np.zeros((3, 1)), np.zeros(3), ("a",))
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


@pytest.mark.parametrize("n,sizes", [(398, (199, 99, 100)), (4, (2, 1, 1)), (7, (3, 1, 3))])
def test_split_sizes(n, sizes):
    assert split_sizes(n) == sizes
    s = split_dataset(n, 0)
    assert (s.train.size, s.val.size, s.test.size) == sizes


@given(st.integers(4, 500), st.integers(0, 2**32 - 1))
def test_split_partitions_indices(n, seed):
    s = split_dataset(n, seed)
    allidx = np.concatenate([s.train, s.val, s.test])
    assert np.array_equal(np.sort(allidx), np.arange(n))
    t = split_dataset(n, seed)
    assert all(np.array_equal(a, b) for a, b in ((s.train, t.train), (s.val, t.val), (s.test, t.test)))


def test_split_rejects_tiny_sets():
    with pytest.raises(DataError):
        split_dataset(3, 0)


def test_sine_target_examples():
    assert sine_target(np.array([[0.5, 0.5]]))[0] == 0.0
    assert sine_target(np.array([[0.5]]))[0] == 0.0
    assert math.isclose(sine_target(np.array([[0.0]]))[0], math.sin(-10.0))


@given(st.integers(2, 200), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_noise_free_synth_is_exact(n, d, seed):
    ds = synth_sine(n, d, 0.0, seed)
    assert np.all(ds.features >= 0) and np.all(ds.features < 1)
    expected = np.sin(20 * ds.features - 10).sum(axis=1)
    assert np.array_equal(ds.target, expected)


def test_synth_is_deterministic_and_noisy():
    a, b = synth_sine(100, 2, 0.01, 7), synth_sine(100, 2, 0.01, 7)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.target, b.target)
    resid = a.target - sine_target(a.features)
    assert 0.004 < resid.std() < 0.02
    with pytest.raises(ValueError):
        synth_sine(1, 2, 0.0, 0)
