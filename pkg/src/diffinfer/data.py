"""CSV ingestion, splitting, one-hot encoding and the real-data interval protocol."""
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DataError
from .inference import prediction_interval, sample_moments
from .sampler import generate
from .training import train

MAX_LEVELS = 64


@dataclass
class ColumnSchema:
    """Column roles, given by name or by zero-based index.

    Columns that are neither target nor categorical are numeric features.
    """

    target_columns: list
    categorical_columns: list = field(default_factory=list)
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.target_columns = list(self.target_columns)
        self.categorical_columns = list(self.categorical_columns)
        if not self.target_columns:
            raise ConfigError("schema needs at least one target column")
        if set(map(str, self.target_columns)) & set(map(str, self.categorical_columns)):
            raise ConfigError("a column cannot be both target and categorical")

    def resolve(self, header):
        """Indices ``(targets, categoricals, features)`` against a header row."""
        def idx(col):
            if isinstance(col, int):
                if not 0 <= col < len(header):
                    raise DataError(f"column index {col} out of range")
                return col
            if col not in header:
                raise DataError(f"missing column {col!r}")
            return header.index(col)

        tgt = [idx(c) for c in self.target_columns]
        cat = [idx(c) for c in self.categorical_columns]
        if set(tgt) & set(cat) or len(set(tgt)) < len(tgt) or len(set(cat)) < len(cat):
            raise ConfigError("target and categorical columns must be distinct")
        feat = [i for i in range(len(header)) if i not in tgt and i not in cat]
        return tgt, cat, feat

    def to_dict(self):
        return {"target_columns": self.target_columns,
                "categorical_columns": self.categorical_columns, "names": self.names}


@dataclass
class SplitSpec:
    train: float = 0.85
    val: float = 0.0
    test: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(not 0 <= f <= 1 for f in fr):
            raise ConfigError(f"split fractions must lie in [0, 1], got {fr}")
        if abs(sum(fr) - 1) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fr)}")
        if not self.train > 0:
            raise ConfigError("train fraction must be positive")


@dataclass
class Table:
    """Loaded CSV rows with categorical feature columns still as strings."""

    names: list
    target_idx: list
    feature_idx: list
    categorical_idx: list
    numeric: dict
    text: dict

    def __len__(self):
        return len(next(iter(self.numeric.values()))) if self.numeric else len(
            next(iter(self.text.values())))

    @property
    def y_names(self):
        return [self.names[i] for i in self.target_idx]

    @property
    def Y(self):
        return np.column_stack([self.numeric[i] for i in self.target_idx])

    @property
    def X(self):
        if self.categorical_idx:
            raise DataError("categorical columns must be one-hot encoded first")
        if not self.feature_idx:
            return np.zeros((len(self), 0))
        return np.column_stack([self.numeric[i] for i in self.feature_idx])

    def to_dataset(self):
        return Dataset(self.X, self.Y, [self.names[i] for i in self.feature_idx], self.y_names)

    def subset(self, idx):
        return Table(self.names, self.target_idx, self.feature_idx, self.categorical_idx,
                     {k: v[idx] for k, v in self.numeric.items()},
                     {k: v[idx] for k, v in self.text.items()})


def _parse_number(cell, row, name):
    if cell.strip() == "":
        raise DataError(f"missing value at row {row}, column {name!r}")
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"cannot parse {cell!r} as a number at row {row}, column {name!r}") from None
    if not math.isfinite(v):
        raise DataError(f"non-finite value {cell!r} at row {row}, column {name!r}")
    return v


def load_csv(source, schema):
    """Read a headed CSV from a path, bytes or a text stream.

    Row numbers in error messages count the header as row 1.
    """
    if isinstance(source, (bytes, bytearray)):
        stream = io.StringIO(source.decode("utf-8"), newline="")
    elif hasattr(source, "read"):
        raw = source.read()
        stream = io.StringIO(raw.decode("utf-8") if isinstance(raw, bytes) else raw, newline="")
    else:
        try:
            with open(source, encoding="utf-8", newline="") as fh:
                stream = io.StringIO(fh.read(), newline="")
        except OSError as exc:
            raise DataError(f"cannot read {source}: {exc}") from None
        except UnicodeDecodeError as exc:
            raise DataError(f"{source} is not UTF-8: {exc}") from None
    rows = list(csv.reader(stream))
    if not rows:
        raise DataError("empty CSV: a header row is required")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header")
    tgt, cat, feat = schema.resolve(header)
    body = rows[1:]
    if not body:
        raise DataError("CSV has a header but no data rows")
    numeric = {i: np.empty(len(body)) for i in range(len(header)) if i not in cat}
    text = {i: np.empty(len(body), dtype=object) for i in cat}
    for r, cells in enumerate(body):
        rownum = r + 2
        if len(cells) != len(header):
            raise DataError(f"row {rownum} has {len(cells)} fields, expected {len(header)}")
        for i, cell in enumerate(cells):
            if i in text:
                if cell.strip() == "":
                    raise DataError(f"missing value at row {rownum}, column {header[i]!r}")
                text[i][r] = cell.strip()
            else:
                numeric[i][r] = _parse_number(cell, rownum, header[i])
    return Table(header, tgt, sorted(feat + cat), cat, numeric, text)


def write_csv(path_or_stream, dataset):
    """Write ``dataset`` with features first, then targets; floats via ``repr``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(dataset.x_names) + list(dataset.y_names))
    for xr, yr in zip(dataset.X, dataset.Y):
        w.writerow([repr(float(v)) for v in xr] + [repr(float(v)) for v in yr])
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(buf.getvalue())
    else:
        with open(path_or_stream, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())


def split(data, spec):
    """Random ``(train, val, test)`` partition; rounding remainder goes to train."""
    n = len(data)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    n_val = int(math.floor(spec.val * n))
    n_test = int(math.floor(spec.test * n))
    perm = np.random.default_rng(spec.seed).permutation(n)
    test = np.sort(perm[:n_test])
    val = np.sort(perm[n_test:n_test + n_val])
    tr = np.sort(perm[n_test + n_val:])
    return data.subset(tr), data.subset(val), data.subset(test)


@dataclass
class OneHotMapping:
    """Per-column level lists, in order of first appearance."""

    levels: dict

    def to_dict(self):
        return {str(k): list(v) for k, v in self.levels.items()}


def one_hot(table, mapping=None):
    """Expand categorical columns into indicator blocks.

    Returns ``(Dataset, OneHotMapping)``. With a ``mapping`` from an earlier
    call (for example on the training split) the same columns are produced
    and an unseen level is an error.
    """
    if mapping is None:
        levels = {}
        for i in table.categorical_idx:
            seen = list(dict.fromkeys(table.text[i]))
            if len(seen) > MAX_LEVELS:
                raise DataError(f"column {table.names[i]!r} has {len(seen)} levels "
                                f"(limit {MAX_LEVELS})")
            levels[table.names[i]] = seen
        mapping = OneHotMapping(levels)
    cols, names = [], []
    for i in table.feature_idx:
        name = table.names[i]
        if i in table.numeric:
            cols.append(table.numeric[i])
            names.append(name)
            continue
        if name not in mapping.levels:
            raise DataError(f"no level mapping for column {name!r}")
        lv = mapping.levels[name]
        pos = {v: k for k, v in enumerate(lv)}
        vals = table.text[i]
        unseen = sorted(set(vals) - set(pos))
        if unseen:
            raise DataError(f"unseen level(s) {unseen} in column {name!r}")
        block = np.zeros((len(vals), len(lv)))
        block[np.arange(len(vals)), [pos[v] for v in vals]] = 1.0
        cols.extend(block.T)
        names.extend(f"{name}={v}" for v in lv)
    X = np.column_stack(cols) if cols else np.zeros((len(table), 0))
    return Dataset(X, table.Y, names, table.y_names), mapping


@dataclass
class RealDataResult:
    intervals: list
    coverage: float
    samples: np.ndarray
    test_y: np.ndarray
    n_train: int
    mapping: OneHotMapping

    def coverage_summary(self):
        return {"coverage": self.coverage, "n_test": len(self.test_y), "n_train": self.n_train}


def row_seed(seed, i):
    """64-bit key for test row ``i``; independent across rows."""
    return int(np.random.SeedSequence([seed, i]).generate_state(1, np.uint64)[0])


def real_data_run(source, schema, split_spec, train_config, schedule, M, alpha, seed=0):
    """Prediction intervals for every test row and their empirical coverage.

    Trains on the train split (the validation split is unused here), draws
    ``M`` samples per test row and records whether the observed response
    falls inside the t-based interval.
    """
    if M < 2:
        raise ConfigError(f"prediction intervals need M >= 2, got {M}")
    table = source if isinstance(source, Table) else load_csv(source, schema)
    if len(table.target_idx) != 1:
        raise ConfigError("the real-data protocol handles a single response column")
    tr, _, te = split(table, split_spec)
    if len(te) == 0:
        raise ConfigError("test split is empty")
    train_ds, mapping = one_hot(tr)
    test_ds, _ = one_hot(te, mapping)
    model = train(train_ds, train_config)
    intervals = []
    pools = np.empty((len(test_ds), M))
    hits = 0
    for i in range(len(test_ds)):
        s = generate(model, test_ds.X[i], schedule, M, row_seed(seed, i))
        pools[i] = s[:, 0]
        iv = prediction_interval(sample_moments(s), alpha)
        y = float(test_ds.Y[i, 0])
        hits += iv.covers(y)
        intervals.append((i, iv, y))
    return RealDataResult(intervals, hits / len(test_ds), pools, test_ds.Y[:, 0].copy(),
                          len(train_ds), mapping)


def pools_csv(result):
    """Long-format export: ``row,actual,sample_index,sample``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "actual", "sample_index", "sample"])
    for i, (y, pool) in enumerate(zip(result.test_y, result.samples)):
        for k, v in enumerate(pool):
            w.writerow([i, repr(float(y)), k, repr(float(v))])
    return buf.getvalue()
