"""Downstream learners and metrics: random forest (default) and an
Adam-trained linear/logistic model, scored by macro/weighted F1 or 1-RAE
under a fixed fold plan, with score caching keyed by feature provenance."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .forest import ForestModel, fit_forest, predict_forest
from .nnkernel import Adam
from .tabular import Dataset, FoldPlan, Task

METRICS = ("f1-macro", "f1-weighted", "1rae")


@dataclass(frozen=True)
class LearnerConfig:
    kind: str = "rf"            # "rf" | "logreg"
    trees: int = 50
    max_depth: int | None = None
    max_features: str = "sqrt"  # "sqrt" | "all"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("rf", "logreg"):
            raise ConfigError(f"unknown learner kind {self.kind!r}")
        if self.trees < 1:
            raise ConfigError("trees must be >= 1")
        if self.max_features not in ("sqrt", "all"):
            raise ConfigError(f"unknown max_features rule {self.max_features!r}")

    def cache_token(self) -> str:
        return f"{self.kind}|{self.trees}|{self.max_depth}|{self.max_features}|{self.seed}"


@dataclass(frozen=True)
class Score:
    value: float
    metric: str


def default_metric(task: Task) -> str:
    return "f1-macro" if task == Task.CLASSIFICATION else "1rae"


def check_metric(metric: str, task: Task) -> str:
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}")
    if metric == "1rae" and task == Task.CLASSIFICATION:
        raise ConfigError("metric/task mismatch: 1rae needs a regression target")
    if metric.startswith("f1") and task == Task.REGRESSION:
        raise ConfigError(f"metric/task mismatch: {metric} needs a classification target")
    return metric


def f1_score(y_true: np.ndarray, y_pred: np.ndarray, average: str = "macro") -> float:
    """Per-class precision/recall F1 (0 on empty denominators), averaged
    macro or support-weighted over the union of observed labels."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise ValueError("empty input")
    if y_true.shape != y_pred.shape:
        raise ValueError("length mismatch")
    if average not in ("macro", "weighted"):
        raise ValueError(f"unknown averaging mode {average!r}")
    labels = np.union1d(y_true, y_pred)
    f1s = np.zeros(labels.size)
    support = np.zeros(labels.size)
    for i, lab in enumerate(labels):
        tp = float(np.sum((y_pred == lab) & (y_true == lab)))
        fp = float(np.sum((y_pred == lab) & (y_true != lab)))
        fn = float(np.sum((y_pred != lab) & (y_true == lab)))
        prec = tp / (tp + fp) if tp + fp > 0 else 0.0
        rec = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1s[i] = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        support[i] = tp + fn
    if average == "macro":
        return float(np.mean(f1s))
    return float(np.sum(f1s * support) / np.sum(support))


def one_minus_rae(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """1 - sum|y - yhat| / sum|y - mean(y)|; 1 is perfect, 0 matches the
    mean predictor."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ValueError("length mismatch")
    denom = float(np.sum(np.abs(y_true - y_true.mean())))
    if denom == 0.0:
        raise ValueError("degenerate target: all values identical")
    return 1.0 - float(np.sum(np.abs(y_true - y_pred))) / denom


def train_random_forest(X: np.ndarray, y: np.ndarray, lc: LearnerConfig,
                        classification: bool) -> ForestModel:
    mtry = None if lc.max_features == "sqrt" else X.shape[1]
    return fit_forest(X, y, n_trees=lc.trees, classification=classification,
                      seed=lc.seed, max_depth=lc.max_depth, mtry=mtry)


def predict(model, X: np.ndarray) -> np.ndarray:
    if isinstance(model, ForestModel):
        return predict_forest(model, X)
    return model.predict(X)


class LinearModel:
    """Softmax regression (classification) or linear regression, trained
    full-batch with the Adam rule on standardized inputs."""

    def __init__(self, classification: bool, n_classes: int = 0,
                 lr: float = 0.1, iters: int = 300):
        self.classification = classification
        self.n_classes = n_classes
        self.lr = lr
        self.iters = iters

    def fit(self, X: np.ndarray, y: np.ndarray) -> "LinearModel":
        self.mu = X.mean(axis=0)
        sd = X.std(axis=0)
        self.sd = np.where(sd == 0.0, 1.0, sd)
        Xs = (X - self.mu) / self.sd
        n, p = Xs.shape
        out_dim = self.n_classes if self.classification else 1
        self.W = np.zeros((p, out_dim))
        self.b = np.zeros(out_dim)
        adam = Adam({"W": self.W, "b": self.b}, lr=self.lr)
        if self.classification:
            onehot = np.zeros((n, out_dim))
            onehot[np.arange(n), y.astype(np.int64)] = 1.0
        for _ in range(self.iters):
            logits = Xs @ self.W + self.b
            if self.classification:
                z = logits - logits.max(axis=1, keepdims=True)
                e = np.exp(z)
                probs = e / e.sum(axis=1, keepdims=True)
                delta = (probs - onehot) / n
            else:
                delta = (logits[:, 0] - y)[:, None] / n
            adam.step({"W": Xs.T @ delta, "b": delta.sum(axis=0)})
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        logits = ((X - self.mu) / self.sd) @ self.W + self.b
        if self.classification:
            return np.argmax(logits, axis=1).astype(np.int64)
        return logits[:, 0]


def _fit_learner(X: np.ndarray, y: np.ndarray, lc: LearnerConfig, task: Task):
    classification = task == Task.CLASSIFICATION
    if lc.kind == "rf":
        return train_random_forest(X, y, lc, classification)
    n_classes = int(y.max()) + 1 if classification else 0
    return LinearModel(classification, n_classes).fit(X, y)


def cv_score(X: np.ndarray, y: np.ndarray, task: Task, lc: LearnerConfig,
             folds: FoldPlan, metric: str) -> float:
    """Pooled out-of-fold score: train on each fold's complement, predict the
    fold, compute the metric once over all held-out predictions."""
    check_metric(metric, task)
    classification = task == Task.CLASSIFICATION
    pooled = np.empty(y.shape[0], dtype=np.int64 if classification else np.float64)
    all_classes = np.unique(y) if classification else None
    for fold in range(folds.k):
        tr = folds.train_rows(fold)
        te = folds.test_rows(fold)
        if classification:
            missing = np.setdiff1d(all_classes, np.unique(y[tr]))
            if missing.size:
                raise ValueError(f"class {missing[0]} absent from fold {fold} training split")
        model = _fit_learner(X[tr], y[tr], lc, task)
        pooled[te] = predict(model, X[te])
    if metric == "1rae":
        return one_minus_rae(y, pooled)
    return f1_score(y, pooled, average=metric.split("-", 1)[1])


def feature_matrix(feature_values: list[np.ndarray]) -> np.ndarray:
    return np.column_stack([v.astype(np.float64) for v in feature_values])


def evaluate_cv(d: Dataset, lc: LearnerConfig, folds: FoldPlan,
                metric: str | None = None) -> Score:
    """5-fold-style cross-validated score of a dataset under *lc*."""
    metric = metric or default_metric(d.task)
    X = feature_matrix([c.values for c in d.features])
    value = cv_score(X, d.target.values, d.task, lc, folds, metric)
    return Score(value, metric)


class CachedEvaluator:
    """Memoizes CV scores keyed by the feature-expression multiset, learner
    config, fold plan and metric."""

    def __init__(self, lc: LearnerConfig, folds: FoldPlan, task: Task, metric: str):
        self.lc = lc
        self.folds = folds
        self.task = task
        self.metric = check_metric(metric, task)
        self._fold_token = hashlib.sha256(folds.assignments.tobytes()).hexdigest()[:16]
        self.cache: dict[str, float] = {}
        self.hits = 0
        self.misses = 0

    def key_for(self, expressions: list[str]) -> str:
        blob = "\x1f".join(sorted(expressions)) + "\x1e" + self.lc.cache_token() \
            + "\x1e" + self.metric + "\x1e" + self._fold_token
        return hashlib.sha256(blob.encode()).hexdigest()

    def evaluate(self, expressions: list[str], feature_values: list[np.ndarray],
                 y: np.ndarray) -> float:
        key = self.key_for(expressions)
        if key in self.cache:
            self.hits += 1
            return self.cache[key]
        self.misses += 1
        value = cv_score(feature_matrix(feature_values), y, self.task,
                         self.lc, self.folds, self.metric)
        self.cache[key] = value
        return value
