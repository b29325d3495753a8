"""Feature operator algebra: guarded math operators, categorical cross,
decision-tree binning, partner selection and provenance expression trees.

Every operator is total: singularities are absorbed by epsilon guards and the
result is clamped so downstream columns stay finite no matter what the search
throws at them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import NoPartnerError
from .mutualinfo import normalized_mutual_information

EPS = 1e-6
CLAMP = 1e12

UNARY_OPS = ("abs", "none", "square", "inverse", "log", "sqrt", "cube")
BINARY_OPS = ("add", "sub", "mul", "div")
CONTINUOUS_OPS = UNARY_OPS + BINARY_OPS
DISCRETE_OPS = ("cross", "addd")
ALL_OPS = CONTINUOUS_OPS + DISCRETE_OPS
#: actions that emit no new feature ("none" for continuous, "addd" for discrete)
IDENTITY_OPS = frozenset({"none", "addd"})

_BIN_RE = re.compile(r"^bin(\d+)$")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass(frozen=True)
class FeatureExpression:
    """Derivation tree of a feature; ``op`` is None for an original column."""

    op: str | None = None
    name: str = ""
    children: tuple["FeatureExpression", ...] = ()
    leaves: int = 0

    @staticmethod
    def original(name: str) -> "FeatureExpression":
        return FeatureExpression(op=None, name=name)

    @staticmethod
    def apply(op: str, *children: "FeatureExpression") -> "FeatureExpression":
        if op in UNARY_OPS and len(children) != 1:
            raise ValueError(f"{op} takes 1 child")
        if op in BINARY_OPS + ("cross",) and len(children) != 2:
            raise ValueError(f"{op} takes 2 children")
        return FeatureExpression(op=op, children=children)

    @staticmethod
    def binned(child: "FeatureExpression", leaves: int) -> "FeatureExpression":
        return FeatureExpression(op="bin", children=(child,), leaves=leaves)

    @property
    def order(self) -> int:
        if self.op is None:
            return 0
        return 1 + max(c.order for c in self.children)

    def to_string(self) -> str:
        if self.op is None:
            return self.name
        op = f"bin{self.leaves}" if self.op == "bin" else self.op
        return f"{op}({','.join(c.to_string() for c in self.children)})"

    def __str__(self) -> str:
        return self.to_string()


def expression_order(e: FeatureExpression) -> int:
    """0 for originals, 1 + max child order for applied operators."""
    return e.order


def parse_expression(text: str) -> FeatureExpression:
    """Parse the canonical string grammar, e.g. ``div(weight,square(height))``."""
    pos = 0

    def error(msg: str):
        raise ValueError(f"bad expression at char {pos}: {msg} in {text!r}")

    def parse() -> FeatureExpression:
        nonlocal pos
        m = _NAME_RE.match(text, pos)
        if not m:
            error("expected a name")
        word = m.group(0)
        pos = m.end()
        if pos < len(text) and text[pos] == "(":
            pos += 1
            children = [parse()]
            while pos < len(text) and text[pos] == ",":
                pos += 1
                children.append(parse())
            if pos >= len(text) or text[pos] != ")":
                error("expected ')'")
            pos += 1
            bin_m = _BIN_RE.match(word)
            if bin_m:
                if len(children) != 1:
                    error("bin takes 1 child")
                return FeatureExpression.binned(children[0], int(bin_m.group(1)))
            if word not in ALL_OPS:
                error(f"unknown operator {word!r}")
            return FeatureExpression.apply(word, *children)
        return FeatureExpression.original(word)

    expr = parse()
    if pos != len(text):
        error("trailing characters")
    return expr


def _finalize(values: np.ndarray) -> np.ndarray:
    out = np.nan_to_num(values, nan=CLAMP, posinf=CLAMP, neginf=-CLAMP)
    return np.clip(out, -CLAMP, CLAMP)


def _inverse(x: np.ndarray) -> np.ndarray:
    sign = np.where(x < 0, -1.0, 1.0)  # sign*(0) = 1
    return sign / (np.abs(x) + EPS)


def apply_unary(col: np.ndarray, op: str) -> np.ndarray:
    """Element-wise unary operator with singularity guards."""
    if op not in UNARY_OPS:
        raise ValueError(f"not a unary continuous operator: {op!r}")
    x = np.asarray(col, dtype=np.float64)
    if op == "none":
        return x
    if op == "abs":
        out = np.abs(x)
    elif op == "square":
        out = x * x
    elif op == "inverse":
        out = _inverse(x)
    elif op == "log":
        out = np.log(np.abs(x) + EPS)
    elif op == "sqrt":
        out = np.sqrt(np.abs(x))
    else:  # cube
        out = x * x * x
    return _finalize(out)


def apply_binary(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    """Element-wise binary arithmetic; division uses the guarded reciprocal."""
    if op not in BINARY_OPS:
        raise ValueError(f"not a binary operator: {op!r}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if op == "add":
        out = a + b
    elif op == "sub":
        out = a - b
    elif op == "mul":
        out = a * b
    else:  # div
        out = a * _inverse(b)
    return _finalize(out)


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Categorical cross: one code per distinct observed (a, b) pair,
    numbered by first appearance."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.dtype.kind not in "iu" or b.dtype.kind not in "iu":
        raise TypeError("cross expects discrete code columns")
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    pair = a.astype(np.int64) * (int(b.max()) + 1) + b.astype(np.int64)
    codes: dict[int, int] = {}
    out = np.empty(pair.shape[0], dtype=np.int64)
    for i, key in enumerate(pair):
        k = int(key)
        if k not in codes:
            codes[k] = len(codes)
        out[i] = codes[k]
    return out


def _segment_split(sv: np.ndarray, sy: np.ndarray, classification: bool,
                   min_leaf: int) -> tuple[float, int]:
    """Best split of one sorted segment: (impurity reduction, split position).

    A split at position p puts rows [0, p) left and [p, n) right; candidates
    exist only between distinct values.  Returns (-inf, -1) when no valid
    split exists.
    """
    n = sv.shape[0]
    if n < 2 * min_leaf:
        return -np.inf, -1
    valid = sv[:-1] < sv[1:]
    if classification:
        nclass = int(sy.max()) + 1
        onehot = np.zeros((n, nclass))
        onehot[np.arange(n), sy.astype(np.int64)] = 1.0
        left = np.cumsum(onehot, axis=0)[:-1]
        total = np.sum(onehot, axis=0)
        right = total[None, :] - left
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        # weighted gini: n_side - sum(counts^2)/n_side
        imp_l = nl - np.sum(left * left, axis=1) / nl
        imp_r = nr - np.sum(right * right, axis=1) / nr
        parent = n - float(np.sum(total * total)) / n
    else:
        cs = np.cumsum(sy)[:-1]
        cs2 = np.cumsum(sy * sy)[:-1]
        s, s2 = float(np.sum(sy)), float(np.sum(sy * sy))
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        imp_l = cs2 - cs * cs / nl
        imp_r = (s2 - cs2) - (s - cs) ** 2 / nr
        parent = s2 - s * s / n
    gains = parent - (imp_l + imp_r)
    ok = valid & (nl >= min_leaf) & (nr >= min_leaf)
    gains = np.where(ok, gains, -np.inf)
    best = int(np.argmax(gains))
    if not np.isfinite(gains[best]) or gains[best] <= 1e-12:
        return -np.inf, -1
    return float(gains[best]), best + 1


def bin_with_tree(col: np.ndarray, y: np.ndarray, max_leaves: int,
                  min_leaf: int = 1) -> np.ndarray:
    """Supervised discretization: grow a single-feature decision tree greedily
    by impurity reduction (gini for discrete targets, variance otherwise) and
    emit one category per leaf interval, coded left to right."""
    if max_leaves < 2:
        raise ValueError("max_leaves must be >= 2")
    col = np.asarray(col, dtype=np.float64)
    y = np.asarray(y)
    classification = y.dtype.kind in "iu"
    order = np.argsort(col, kind="stable")
    sv = col[order]
    sy = y[order].astype(np.float64) if not classification else y[order]

    segments = [(0, col.shape[0])]
    candidates = [_segment_split(sv, sy, classification, min_leaf)]
    while len(segments) < max_leaves:
        gains = [c[0] for c in candidates]
        pick = int(np.argmax(gains))
        gain, pos = candidates[pick]
        if not np.isfinite(gain):
            break
        lo, hi = segments[pick]
        split = lo + pos
        segments[pick:pick + 1] = [(lo, split), (split, hi)]
        candidates[pick:pick + 1] = [
            _segment_split(sv[lo:split], sy[lo:split], classification, min_leaf),
            _segment_split(sv[split:hi], sy[split:hi], classification, min_leaf),
        ]
    codes = np.empty(col.shape[0], dtype=np.int64)
    for code, (lo, hi) in enumerate(segments):
        codes[order[lo:hi]] = code
    return codes


def _abs_pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    sa = float(np.sqrt(np.sum(a * a)))
    sb = float(np.sqrt(np.sum(b * b)))
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return abs(float(np.sum(a * b)) / (sa * sb))


def select_partner(columns, focal: int, needed_discrete: bool) -> int:
    """Deterministic second operand for a binary/cross operator.

    Continuous partners are ranked by absolute Pearson correlation with the
    focal column, discrete ones by normalized mutual information.  For cross,
    continuous columns are eligible fallbacks (the caller bins them) when no
    other discrete feature exists.  Ties break toward the lowest index.
    """
    if hasattr(columns, "features"):
        columns = columns.features
    discrete = [c.values.dtype.kind in "iu" for c in columns]
    pool = [j for j in range(len(columns))
            if j != focal and discrete[j] == needed_discrete]
    if needed_discrete and not pool:
        pool = [j for j in range(len(columns)) if j != focal and not discrete[j]]
    if not pool:
        raise NoPartnerError(f"no partner of the required kind for feature {focal}")
    focal_vals = columns[focal].values
    best, best_score = pool[0], -1.0
    for j in pool:
        if needed_discrete:
            score = normalized_mutual_information(focal_vals, columns[j].values)
        else:
            score = _abs_pearson(focal_vals.astype(np.float64),
                                 columns[j].values.astype(np.float64))
        if score > best_score:
            best, best_score = j, score
    return best


#: minimum leaf size rule used whenever the pipeline bins a continuous column
def bin_min_leaf(n: int) -> int:
    return max(5, n // 20)


#: default leaf budget for pipeline binning
BIN_LEAVES = 8


def evaluate_expression(expr: FeatureExpression, dataset) -> np.ndarray:
    """Re-evaluate a derivation tree against the original dataset.

    Reproduces search-time values exactly: the same guarded operators run on
    the same inputs, and bin nodes refit on the identical (column, target)
    pair with the fixed minimum-leaf rule.
    """
    if expr.op is None:
        return dataset.feature(expr.name).values
    kids = [evaluate_expression(c, dataset) for c in expr.children]
    if expr.op == "bin":
        if kids[0].dtype.kind in "iu":
            raise ValueError(f"bin applied to a discrete column: {expr}")
        return bin_with_tree(kids[0], dataset.target.values, expr.leaves,
                             min_leaf=bin_min_leaf(kids[0].shape[0]))
    if expr.op == "cross":
        return cross(kids[0], kids[1])
    if expr.op == "addd":
        raise ValueError("addd is an identity action and never forms an expression")
    for k in kids:
        if k.dtype.kind in "iu":
            raise ValueError(f"continuous operator on a discrete column: {expr}")
    if expr.op in UNARY_OPS:
        return apply_unary(kids[0], expr.op)
    return apply_binary(kids[0], kids[1], expr.op)


@dataclass(frozen=True)
class GeneratedFeature:
    """A candidate feature produced by one generation-agent action."""

    values: np.ndarray
    expr: FeatureExpression
    parent: int

    @property
    def is_discrete(self) -> bool:
        return self.values.dtype.kind in "iu"
