"""Column-typed tabular data: loading, validation, folds, descriptors.

Conventions used throughout the package:
  * discrete columns hold int64 category codes in 0..cardinality-1,
  * continuous columns hold finite float64 values,
  * a classification target is a discrete column, a regression target a
    continuous one.  Array dtype therefore doubles as the kind marker.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import SchemaError

#: number of per-column summary statistics fed to the state encoder
DESCRIPTOR_DIM = 8

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class ColumnKind(str, Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"
    TARGET = "target"


class Task(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


@dataclass(frozen=True)
class Column:
    """One named column; ``categories`` maps codes back to source labels."""

    name: str
    kind: ColumnKind
    values: np.ndarray
    categories: tuple[str, ...] | None = None

    @property
    def is_discrete(self) -> bool:
        return self.values.dtype.kind in "iu"

    @property
    def cardinality(self) -> int:
        return int(np.unique(self.values).size)


@dataclass(frozen=True)
class Dataset:
    """Immutable feature table plus a single target column."""

    features: tuple[Column, ...]
    target: Column
    task: Task

    def __post_init__(self):
        n = self.target.values.shape[0]
        if n < 2:
            raise SchemaError("dataset needs at least 2 rows")
        for col in self.features:
            if col.kind == ColumnKind.TARGET:
                raise SchemaError("multiple target columns")
            if col.values.shape[0] != n:
                raise SchemaError(f"column {col.name!r} has length "
                                  f"{col.values.shape[0]}, expected {n}")
            if not col.is_discrete and not np.all(np.isfinite(col.values)):
                raise SchemaError(f"column {col.name!r} has non-finite values")

    @property
    def n(self) -> int:
        return int(self.target.values.shape[0])

    @property
    def columns(self) -> tuple[Column, ...]:
        return self.features + (self.target,)

    def feature(self, name: str) -> Column:
        for col in self.features:
            if col.name == name:
                return col
        raise KeyError(name)


@dataclass(frozen=True)
class SchemaSpec:
    """Declared kind per column; exactly one target with an explicit type.

    Text format, one ``name=kind`` pair per line (``#`` starts a comment)::

        gender=discrete
        weight=continuous
        healthy=target:discrete

    ``target`` alone is shorthand for ``target:discrete``.  The task is
    classification iff the target is discrete.
    """

    feature_kinds: dict[str, ColumnKind] = field(default_factory=dict)
    target_name: str = ""
    target_discrete: bool = True

    @property
    def task(self) -> Task:
        return Task.CLASSIFICATION if self.target_discrete else Task.REGRESSION

    @property
    def column_names(self) -> list[str]:
        return list(self.feature_kinds) + [self.target_name]


def parse_schema(text: str) -> SchemaSpec:
    kinds: dict[str, ColumnKind] = {}
    target_name = None
    target_discrete = True
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"schema line {lineno}: expected name=kind, got {raw!r}")
        name, kind = (part.strip() for part in line.split("=", 1))
        if not _IDENT.match(name):
            raise SchemaError(f"schema line {lineno}: column name {name!r} must be an "
                              "identifier (letters, digits, underscore)")
        if name in kinds or name == target_name:
            raise SchemaError(f"schema line {lineno}: duplicate column {name!r}")
        kind = kind.lower()
        if kind == "discrete":
            kinds[name] = ColumnKind.DISCRETE
        elif kind == "continuous":
            kinds[name] = ColumnKind.CONTINUOUS
        elif kind in ("target", "target:discrete", "target:continuous"):
            if target_name is not None:
                raise SchemaError(f"schema line {lineno}: second target {name!r}")
            target_name = name
            target_discrete = kind != "target:continuous"
        else:
            raise SchemaError(f"schema line {lineno}: unknown kind {kind!r}")
    if target_name is None:
        raise SchemaError("schema declares no target column")
    if not kinds:
        raise SchemaError("schema declares no feature columns")
    return SchemaSpec(kinds, target_name, target_discrete)


def read_schema(path: str | Path) -> SchemaSpec:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"schema file not found: {path}")
    return parse_schema(path.read_text(encoding="utf-8"))


def _encode_discrete(raw: list[str], name: str) -> tuple[np.ndarray, tuple[str, ...]]:
    codes: dict[str, int] = {}
    out = np.empty(len(raw), dtype=np.int64)
    for i, cell in enumerate(raw):
        if cell not in codes:
            codes[cell] = len(codes)
        out[i] = codes[cell]
    return out, tuple(codes)


def _parse_continuous(raw: list[str], name: str) -> np.ndarray:
    out = np.empty(len(raw), dtype=np.float64)
    for i, cell in enumerate(raw):
        rowno = i + 2  # file row: header is row 1
        try:
            out[i] = float(cell)
        except ValueError:
            raise SchemaError(f"column {name!r}, row {rowno}: "
                              f"unparseable numeric cell {cell!r}") from None
        if not np.isfinite(out[i]):
            raise SchemaError(f"column {name!r}, row {rowno}: non-finite value {cell!r}")
    return out


def load_csv(path: str | Path, schema: SchemaSpec) -> Dataset:
    """Load a comma-separated UTF-8 file with a header row against *schema*.

    Discrete columns are label-encoded by first appearance; missing cells are
    rejected rather than imputed.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or (len(rows) == 1 and not rows[0]):
        raise SchemaError("zero rows")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise SchemaError("zero rows")
    wanted = schema.column_names
    for name in wanted:
        if name not in header:
            raise SchemaError(f"missing column {name!r} in CSV header")
    extra = [h for h in header if h not in wanted]
    if extra:
        raise SchemaError(f"CSV columns not declared in schema: {extra}")
    if len(set(header)) != len(header):
        raise SchemaError("duplicate column names in CSV header")
    for rowno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise SchemaError(f"row {rowno}: expected {len(header)} cells, got {len(row)}")
        for name, cell in zip(header, row):
            if cell.strip() == "":
                raise SchemaError(f"column {name!r}, row {rowno}: missing value")

    by_name = {name: [row[i].strip() for row in body] for i, name in enumerate(header)}
    features = []
    for name in header:
        if name == schema.target_name:
            continue
        kind = schema.feature_kinds[name]
        if kind == ColumnKind.DISCRETE:
            values, cats = _encode_discrete(by_name[name], name)
            features.append(Column(name, kind, values, cats))
        else:
            features.append(Column(name, kind, _parse_continuous(by_name[name], name)))
    raw_target = by_name[schema.target_name]
    if schema.target_discrete:
        values, cats = _encode_discrete(raw_target, schema.target_name)
        target = Column(schema.target_name, ColumnKind.TARGET, values, cats)
    else:
        target = Column(schema.target_name, ColumnKind.TARGET,
                        _parse_continuous(raw_target, schema.target_name))
    return Dataset(tuple(features), target, schema.task)


@dataclass(frozen=True)
class FoldPlan:
    """Cross-validation partition: ``assignments[i]`` is row i's fold."""

    k: int
    assignments: np.ndarray

    def __post_init__(self):
        counts = np.bincount(self.assignments, minlength=self.k)
        if counts.size > self.k or np.any(counts == 0):
            raise ValueError("every fold index in 0..k-1 must appear")
        if counts.max() - counts.min() > 1:
            raise ValueError("fold sizes differ by more than 1")

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def _stratify_groups(d: Dataset, k: int) -> np.ndarray:
    """Group labels used for stratification (class codes or target quantile bins)."""
    y = d.target.values
    if d.task == Task.CLASSIFICATION:
        classes, counts = np.unique(y, return_counts=True)
        for cls, cnt in zip(classes, counts):
            if cnt < k:
                label = d.target.categories[cls] if d.target.categories else str(cls)
                raise SchemaError(f"class {label!r} has {cnt} samples, fewer than k={k}")
        return y.astype(np.int64)
    nbins = min(5, int(np.unique(y).size))
    if nbins <= 1:
        return np.zeros(y.shape[0], dtype=np.int64)
    edges = np.unique(np.quantile(y, np.arange(1, nbins) / nbins))
    return np.searchsorted(edges, y, side="right").astype(np.int64)


def split_folds(d: Dataset, k: int, seed: int) -> FoldPlan:
    """Deterministic stratified k-fold assignment.

    Classification stratifies on class labels, regression on quantile-binned
    targets.  Fold sizes differ by at most one globally and within every
    stratum.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if d.n < k:
        raise ValueError(f"need at least k={k} rows, have {d.n}")
    groups = _stratify_groups(d, k)
    rng = np.random.default_rng(seed)
    assignments = np.full(d.n, -1, dtype=np.int64)
    loads = np.zeros(k, dtype=np.int64)
    for g in np.unique(groups):
        rows = np.flatnonzero(groups == g)
        rng.shuffle(rows)
        base, extra = divmod(rows.size, k)
        quota = np.full(k, base, dtype=np.int64)
        # extras go to the currently least-loaded folds, lowest index first,
        # which keeps global fold sizes within 1 of each other
        order = np.lexsort((np.arange(k), loads))
        quota[order[:extra]] += 1
        pos = 0
        for fold in range(k):
            assignments[rows[pos:pos + quota[fold]]] = fold
            pos += quota[fold]
        loads += quota
    return FoldPlan(k, assignments)


def describe_values(values: np.ndarray) -> np.ndarray:
    """Fixed-length summary statistics of one column.

    Continuous columns: mean, std, min, max, 25/50/75th percentiles and the
    distinct-value ratio.  Discrete columns: the same statistics computed over
    the category frequency vector (plus the distinct ratio), so the descriptor
    depends only on the distribution, never on code identity or row order.
    """
    n = values.shape[0]
    distinct = np.unique(values).size
    if values.dtype.kind in "iu":
        stat_src = np.sort(np.bincount(values.astype(np.int64)).astype(np.float64))
        stat_src = stat_src[stat_src > 0] / n
    else:
        # sorting first makes every statistic exactly row-order invariant
        stat_src = np.sort(values.astype(np.float64))
    q25, q50, q75 = np.percentile(stat_src, [25, 50, 75])
    desc = np.array([
        stat_src.mean(),
        stat_src.std(),
        stat_src.min(),
        stat_src.max(),
        q25, q50, q75,
        distinct / n,
    ])
    return desc


def column_descriptor(d: Dataset, col: int) -> np.ndarray:
    """Descriptor of feature column *col* (see :func:`describe_values`)."""
    if not 0 <= col < len(d.features):
        raise IndexError(f"feature index {col} out of range")
    return describe_values(d.features[col].values)
