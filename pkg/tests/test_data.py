import io

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from diffinfer.data import (ColumnSchema, SplitSpec, load_csv, one_hot, real_data_run, split,
                            write_csv)
from diffinfer.dataset import Dataset
from diffinfer.diffusion import make_schedule
from diffinfer.errors import ConfigError, DataError
from diffinfer.training import TrainConfig


def test_minimal_file():
    t = load_csv(b"a,b\n1,2\n3,4\n", ColumnSchema(["b"]))
    ds = t.to_dataset()
    assert_array_equal(ds.X, [[1.0], [3.0]])
    assert_array_equal(ds.Y, [[2.0], [4.0]])
    assert ds.x_names == ["a"] and ds.y_names == ["b"]


def test_bad_cell_names_row_and_column():
    with pytest.raises(DataError, match=r"row 2, column 'a'"):
        load_csv(b"a,b\nabc,2\n", ColumnSchema(["b"]))


def test_line_endings_equivalent():
    lf = load_csv(b"x,y\n1.5,2\n-3,4e-1\n", ColumnSchema(["y"])).to_dataset()
    crlf = load_csv(b"x,y\r\n1.5,2\r\n-3,4e-1\r\n", ColumnSchema(["y"])).to_dataset()
    assert_array_equal(lf.X, crlf.X)
    assert_array_equal(lf.Y, crlf.Y)


def test_ingestion_errors():
    with pytest.raises(DataError, match="row 3"):
        load_csv(b"a,b\n1,2\n3\n", ColumnSchema(["b"]))
    with pytest.raises(DataError, match="missing value"):
        load_csv(b"a,b\n1,\n", ColumnSchema(["b"]))
    with pytest.raises(DataError, match="missing column"):
        load_csv(b"a,b\n1,2\n", ColumnSchema(["c"]))
    with pytest.raises(DataError, match="non-finite"):
        load_csv(b"a,b\nnan,2\n", ColumnSchema(["b"]))
    with pytest.raises(DataError):
        load_csv(b"", ColumnSchema(["b"]))
    with pytest.raises(ConfigError):
        ColumnSchema([])
    with pytest.raises(ConfigError):
        ColumnSchema(["a"], ["a"])


def test_target_by_index_and_stream():
    t = load_csv(io.StringIO("a,b,c\n1,2,3\n"), ColumnSchema([0]))
    assert t.y_names == ["a"]
    assert_array_equal(t.X, [[2.0, 3.0]])


def test_write_read_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(rng.normal(size=(20, 3)), rng.normal(size=(20, 1)) * 1e-7)
    path = tmp_path / "d.csv"
    write_csv(path, ds)
    back = load_csv(str(path), ColumnSchema(["y1"])).to_dataset()
    assert_array_equal(back.X, ds.X)
    assert_array_equal(back.Y, ds.Y)


def _ds(n):
    return Dataset(np.arange(n, dtype=float).reshape(-1, 1), np.arange(n, dtype=float))


def test_split_sizes_and_partition():
    tr, va, te = split(_ds(10), SplitSpec(0.85, 0.0, 0.15, seed=3))
    assert (len(tr), len(va), len(te)) == (9, 0, 1)
    tr, va, te = split(_ds(10), SplitSpec(1.0, 0.0, 0.0))
    assert len(tr) == 10
    for seed in range(5):
        parts = split(_ds(37), SplitSpec(0.7, 0.2, 0.1, seed=seed))
        ids = np.concatenate([p.X[:, 0] for p in parts])
        assert_array_equal(np.sort(ids), np.arange(37))
    a = split(_ds(37), SplitSpec(0.7, 0.2, 0.1, seed=1))
    b = split(_ds(37), SplitSpec(0.7, 0.2, 0.1, seed=1))
    for p, q in zip(a, b):
        assert_array_equal(p.X, q.X)


def test_split_spec_guards():
    with pytest.raises(ConfigError):
        SplitSpec(0.5, 0.2, 0.2)
    with pytest.raises(ConfigError):
        SplitSpec(0.0, 0.5, 0.5)
    with pytest.raises(DataError):
        split(Dataset(np.zeros((0, 1)), np.zeros(0)), SplitSpec())


def test_one_hot_levels():
    text = b"sex,len,ring\nF,1,3\nM,2,4\nI,3,5\nM,4,6\nF,5,7\nI,6,8\n"
    t = load_csv(text, ColumnSchema(["ring"], ["sex"]))
    ds, mapping = one_hot(t)
    assert ds.x_names == ["sex=F", "sex=M", "sex=I", "len"]
    assert_array_equal(ds.X[1, :3], [0, 1, 0])
    assert_array_equal(ds.X[:, :3].sum(axis=1), np.ones(6))
    assert mapping.levels == {"sex": ["F", "M", "I"]}


def test_one_hot_single_level_and_unseen():
    t = load_csv(b"g,y\na,1\na,2\n", ColumnSchema(["y"], ["g"]))
    ds, mapping = one_hot(t)
    assert_array_equal(ds.X, [[1.0], [1.0]])
    other = load_csv(b"g,y\nb,1\n", ColumnSchema(["y"], ["g"]))
    with pytest.raises(DataError, match="unseen"):
        one_hot(other, mapping)
    with pytest.raises(DataError):
        t.X


def test_one_hot_level_limit():
    rows = "".join(f"l{i},{i}\n" for i in range(65))
    t = load_csv(("g,y\n" + rows).encode(), ColumnSchema(["y"], ["g"]))
    with pytest.raises(DataError):
        one_hot(t)


def test_real_data_guard_and_small_run():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=120)
    text = "x,y\n" + "".join(f"{a!r},{b!r}\n" for a, b in zip(x.tolist(), (2 * x).tolist()))
    with pytest.raises(ConfigError):
        real_data_run(text.encode(), ColumnSchema(["y"]), SplitSpec(), TrainConfig(),
                      make_schedule(0.01, 3.0, 10), 1, 0.05)
    res = real_data_run(text.encode(), ColumnSchema(["y"]), SplitSpec(seed=1),
                        TrainConfig(epochs=2, hidden_dims=(8,)), make_schedule(0.01, 3.0, 10),
                        5, 0.05)
    assert len(res.intervals) == len(res.test_y) == 18
    assert res.samples.shape == (18, 5)
    assert 0 <= res.coverage <= 1
    assert_allclose(res.coverage, np.mean([iv.covers(y) for _, iv, y in res.intervals]))
