"""Plug-in entropy and mutual-information estimators (natural log).

Integer-dtype arrays are treated as category codes; float arrays are
discretized by equal-frequency binning before counting.  Only differences and
comparisons of these values are consumed downstream, so the estimator just has
to be deterministic and self-consistent.
"""

from __future__ import annotations

import numpy as np

#: bin budget for discretizing continuous inputs
MAX_BINS = 16


def quantile_codes(values: np.ndarray, max_bins: int = MAX_BINS) -> np.ndarray:
    """Equal-frequency bin codes for a continuous column."""
    v = np.asarray(values, dtype=np.float64)
    nbins = min(max_bins, int(np.unique(v).size))
    if nbins <= 1:
        return np.zeros(v.shape[0], dtype=np.int64)
    edges = np.unique(np.quantile(v, np.arange(1, nbins) / nbins))
    return np.searchsorted(edges, v, side="right").astype(np.int64)


def to_codes(values: np.ndarray) -> np.ndarray:
    """Category codes for either kind of column (dtype decides)."""
    values = np.asarray(values)
    if values.dtype.kind in "iu":
        return values.astype(np.int64)
    return quantile_codes(values)


def entropy(a: np.ndarray) -> float:
    """Shannon entropy -sum(p log p) of a discrete column, in nats."""
    codes = np.asarray(a)
    if codes.size == 0:
        raise ValueError("entropy of empty column")
    if codes.dtype.kind not in "iu":
        raise TypeError("entropy expects integer category codes")
    _, counts = np.unique(codes, return_counts=True)
    p = counts / codes.size
    return float(max(0.0, -np.sum(p * np.log(p))))


def mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """Plug-in mutual information between two columns, in nats, clamped >= 0.

    Exactly symmetric: the operands are swapped into a canonical order before
    counting, so I(a,b) and I(b,a) run the identical computation.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    ca = to_codes(a)
    cb = to_codes(b)
    if cb.tobytes() < ca.tobytes():
        ca, cb = cb, ca
    ka = int(ca.max()) + 1
    kb = int(cb.max()) + 1
    joint = np.bincount(ca * kb + cb, minlength=ka * kb).reshape(ka, kb)
    joint = joint / ca.size
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    ia, ib = np.nonzero(nz)
    mi = np.sum(joint[nz] * np.log(joint[nz] / (pa[ia] * pb[ib])))
    return float(max(0.0, mi))


def normalized_mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """I(a,b) / sqrt(H(a) H(b)) on the (possibly discretized) codes; 0 if
    either marginal entropy is zero."""
    ca = to_codes(np.asarray(a))
    cb = to_codes(np.asarray(b))
    ha = entropy(ca)
    hb = entropy(cb)
    if ha <= 0.0 or hb <= 0.0:
        return 0.0
    return mutual_information(ca, cb) / float(np.sqrt(ha * hb))
