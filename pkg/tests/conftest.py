"""Shared fixtures and independent oracles used across the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from featgen.tabular import Column, ColumnKind, Dataset, Task


def finite_difference_gradient(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    # the 1e-6 floor keeps central-difference cancellation noise (~1e-10 for
    # O(1) losses) from dominating when the true gradient is zero
    denom = max(1e-6, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / denom


def make_dataset(columns: dict[str, tuple[str, np.ndarray]],
                 target: tuple[str, np.ndarray], task: Task) -> Dataset:
    """columns: name -> (kind, values); target: (name, values)."""
    feats = []
    for name, (kind, values) in columns.items():
        ck = ColumnKind.DISCRETE if kind == "discrete" else ColumnKind.CONTINUOUS
        dtype = np.int64 if kind == "discrete" else np.float64
        feats.append(Column(name, ck, np.asarray(values, dtype=dtype)))
    tname, tvalues = target
    tvalues = np.asarray(tvalues)
    if task == Task.CLASSIFICATION:
        tvalues = tvalues.astype(np.int64)
    else:
        tvalues = tvalues.astype(np.float64)
    return Dataset(tuple(feats), Column(tname, ColumnKind.TARGET, tvalues), task)


def continuous_dataset(seed: int, n: int, p: int, target_fn, task=Task.REGRESSION,
                       noise: float = 0.0) -> Dataset:
    rng = np.random.default_rng(seed)
    cols = {f"x{i + 1}": ("continuous", rng.normal(size=n)) for i in range(p)}
    vals = [v for _, v in cols.values()]
    y = target_fn(vals)
    if noise:
        y = y + noise * rng.normal(size=n)
    return make_dataset(cols, ("y", y), task)


@pytest.fixture
def toy_classification() -> Dataset:
    rng = np.random.default_rng(11)
    n = 80
    x1 = rng.normal(size=n)
    x2 = rng.normal(size=n)
    g = rng.integers(0, 3, size=n)
    y = ((x1 + 0.5 * g) > 0).astype(int)
    return make_dataset(
        {"x1": ("continuous", x1), "x2": ("continuous", x2), "g": ("discrete", g)},
        ("label", y), Task.CLASSIFICATION)


@pytest.fixture
def toy_regression() -> Dataset:
    return continuous_dataset(5, 60, 3, lambda v: v[0] * 2 + v[1], noise=0.1)
