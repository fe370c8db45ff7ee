"""Classifier families with one fit/score interface.

Families: ``decision_tree`` (CART, Gini), ``random_forest`` (bootstrap +
random feature subsets), ``extra_trees`` (random thresholds, no bootstrap),
``scaled_logistic`` (standardized inputs, L2 logistic loss, gradient descent)
and ``dummy`` (seeded uniform scores). Scores are probabilities of
finalization within the label horizon.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Optional

import joblib
import numpy as np
import pandas as pd

from triage.config import N_JOBS
from triage.errors import ConfigError, DataError, SchemaMismatchError, SingleClassError
from triage.features import vectors_to_frame
from triage.seeding import make_rng

logger = logging.getLogger(__name__)

FAMILIES = ("decision_tree", "random_forest", "extra_trees", "scaled_logistic", "dummy")

MODEL_MAGIC = b"TRIAGE-MODEL"
MODEL_FORMAT_VERSION = 1

DEFAULT_HYPERPARAMETERS = {
    "decision_tree": {"max_depth": 10, "min_leaf": 5},
    "random_forest": {"n_trees": 100, "max_depth": 10, "min_leaf": 5, "max_features": "sqrt", "bootstrap": True},
    "extra_trees": {"n_trees": 100, "max_depth": 10, "min_leaf": 5, "max_features": "sqrt", "bootstrap": False},
    "scaled_logistic": {"l2": 0.1, "tol": 1e-6, "max_iter": 2000},
    "dummy": {},
}


@dataclass(frozen=True)
class LabeledExample:
    feature_vector: object
    label: int
    observation_date: date


@dataclass(frozen=True)
class ModelSpec:
    family: str
    hyperparameters: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"Unknown model family {self.family!r}; choose from {', '.join(FAMILIES)}")

    @classmethod
    def make(cls, family, hyperparameters=None, seed=0):
        return cls(family, tuple(sorted((hyperparameters or {}).items())), int(seed))

    @property
    def params(self):
        return dict(self.hyperparameters)

    @property
    def tag(self):
        inner = ",".join(f"{k}={'inf' if v is None else v}" for k, v in self.hyperparameters)
        return f"{self.family}[{inner}]" if inner else self.family

    def simplicity_key(self):
        """Smaller is simpler: fewer trees, then shallower, then smaller L2."""
        p = self.params
        depth = p.get("max_depth", 0)
        return (
            p.get("n_trees", 0),
            math.inf if depth is None else depth,
            p.get("l2", 0.0),
        )


@dataclass
class TrainedModel:
    family: str
    hyperparameters: dict
    feature_names: list
    importances: dict
    trained_through: Optional[date]
    seed: int
    state: object = field(repr=False, default=None)

    @property
    def schema_hash(self):
        return schema_hash(self.feature_names)


def schema_hash(names):
    return hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()[:16]


def hyperparameter_grid(family, seed=0):
    if family == "decision_tree":
        grid = [{"max_depth": d, "min_leaf": m} for d in (5, 10, None) for m in (5, 20)]
    elif family in ("random_forest", "extra_trees"):
        base = DEFAULT_HYPERPARAMETERS[family]
        grid = [dict(base, n_trees=n, max_depth=d) for n in (100, 300) for d in (5, 10, None)]
    elif family == "scaled_logistic":
        grid = [{"l2": l2} for l2 in (0.01, 0.1, 1.0)]
    elif family == "dummy":
        grid = [{}]
    else:
        raise ConfigError(f"Unknown model family {family!r}")
    return [ModelSpec.make(family, g, seed) for g in grid]


# ---------------------------------------------------------------------------
# CART
# ---------------------------------------------------------------------------


def gini(pos, n):
    p = pos / n
    return 2.0 * p * (1.0 - p)


def _best_threshold(x, y, min_leaf):
    """Exhaustive Gini split on one feature: (weighted impurity, threshold) or None."""
    n = x.size
    order = np.argsort(x, kind="mergesort")
    xs, ys = x[order], y[order]
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    pos_left = np.cumsum(ys)[:-1]
    pos_right = ys.sum() - pos_left
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    pl = pos_left / n_left
    pr = pos_right / n_right
    weighted = (n_left * 2 * pl * (1 - pl) + n_right * 2 * pr * (1 - pr)) / n
    weighted = np.where(valid, weighted, np.inf)
    i = int(np.argmin(weighted))
    threshold = (xs[i] + xs[i + 1]) / 2.0
    if not xs[i] <= threshold < xs[i + 1]:
        threshold = xs[i]
    return float(weighted[i]), float(threshold)


def _random_threshold(x, y, min_leaf, rng):
    lo, hi = x.min(), x.max()
    if lo == hi:
        return None
    threshold = float(rng.uniform(lo, hi))
    left = x <= threshold
    n_left = int(left.sum())
    n_right = x.size - n_left
    if n_left < min_leaf or n_right < min_leaf or n_left == 0 or n_right == 0:
        return None
    weighted = (n_left * gini(y[left].sum(), n_left) + n_right * gini(y[~left].sum(), n_right)) / x.size
    return float(weighted), threshold


class DecisionTree:
    """Binary classification tree stored as flat node arrays."""

    def __init__(self, max_depth=None, min_leaf=1, max_features=None, random_thresholds=False):
        self.max_depth = max_depth
        self.min_leaf = max(1, int(min_leaf))
        self.max_features = max_features
        self.random_thresholds = random_thresholds

    def _n_candidates(self, n_features):
        mf = self.max_features
        if mf is None:
            return n_features
        if mf == "sqrt":
            return max(1, int(math.sqrt(n_features)))
        if mf == "log2":
            return max(1, int(math.log2(n_features)))
        if isinstance(mf, float):
            return max(1, int(mf * n_features))
        return max(1, min(int(mf), n_features))

    def fit(self, X, y, rng=None, sample=None):
        rng = rng if rng is not None else make_rng(0)
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n_total, n_features = X.shape
        idx0 = np.arange(n_total) if sample is None else np.asarray(sample)
        k = self._n_candidates(n_features)
        subsample = k < n_features

        feature, threshold, left, right, value, n_node = [], [], [], [], [], []
        importance = np.zeros(n_features)

        def new_node(idx):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(y[idx].mean()))
            n_node.append(idx.size)
            return len(feature) - 1

        root = new_node(idx0)
        stack = [(root, idx0, 0)]
        while stack:
            node, idx, depth = stack.pop()
            yi = y[idx]
            pos = yi.sum()
            if (
                (self.max_depth is not None and depth >= self.max_depth)
                or idx.size < 2 * self.min_leaf
                or pos == 0
                or pos == idx.size
            ):
                continue
            parent = gini(pos, idx.size)
            best = None
            evaluated = 0
            order = rng.permutation(n_features) if subsample else range(n_features)
            for j in order:
                if subsample and evaluated >= k and best is not None:
                    break
                xj = X[idx, j]
                if xj.min() == xj.max():
                    continue
                evaluated += 1
                if self.random_thresholds:
                    found = _random_threshold(xj, yi, self.min_leaf, rng)
                else:
                    found = _best_threshold(xj, yi, self.min_leaf)
                if found is not None and (best is None or found[0] < best[0]):
                    best = (found[0], found[1], j)
            if best is None or best[0] >= parent:
                continue
            weighted, thr, j = best
            importance[j] += idx.size / n_total * (parent - weighted)
            go_left = X[idx, j] <= thr
            li, ri = idx[go_left], idx[~go_left]
            feature[node] = j
            threshold[node] = thr
            left[node] = new_node(li)
            right[node] = new_node(ri)
            stack.append((right[node], ri, depth + 1))
            stack.append((left[node], li, depth + 1))

        self.feature = np.array(feature, dtype=np.int64)
        self.threshold = np.array(threshold, dtype=np.float64)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.value = np.array(value, dtype=np.float64)
        self.n_node = np.array(n_node, dtype=np.int64)
        total = importance.sum()
        self.importances = importance / total if total > 0 else np.full(n_features, 1.0 / n_features)
        return self

    @property
    def depth(self):
        depths = np.zeros(len(self.feature), dtype=np.int64)
        for node in range(len(self.feature)):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return node

    def predict_proba(self, X):
        return self.value[self.apply(X)]


class Forest:
    def __init__(
        self,
        n_trees=100,
        max_depth=None,
        min_leaf=1,
        max_features="sqrt",
        bootstrap=True,
        random_thresholds=False,
        n_jobs=None,
    ):
        self.n_trees = int(n_trees)
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_thresholds = random_thresholds
        self.n_jobs = n_jobs

    def _grow(self, X, y, seed, index):
        # tree seeds depend only on (seed, index), never on scheduling
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))
        sample = rng.integers(0, X.shape[0], size=X.shape[0]) if self.bootstrap else None
        tree = DecisionTree(self.max_depth, self.min_leaf, self.max_features, self.random_thresholds)
        return tree.fit(X, y, rng=rng, sample=sample)

    def fit(self, X, y, seed=0):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n_jobs = self.n_jobs if self.n_jobs is not None else N_JOBS
        self.trees = joblib.Parallel(n_jobs=n_jobs, prefer="threads")(
            joblib.delayed(self._grow)(X, y, seed, i) for i in range(self.n_trees)
        )
        imp = np.mean([t.importances for t in self.trees], axis=0)
        self.importances = imp / imp.sum()
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)


# ---------------------------------------------------------------------------
# Scaled logistic regression
# ---------------------------------------------------------------------------


def sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def loss_and_gradient(w, b, X, y, l2):
    """Mean log-loss plus ``l2/2 * ||w||^2`` and its gradient in (w, b)."""
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w))
    err = sigmoid(z) - y
    grad_w = X.T @ err / X.shape[0] + l2 * w
    grad_b = float(err.mean())
    return loss, grad_w, grad_b


class LogisticModel:
    def __init__(self, l2=0.1, tol=1e-6, max_iter=2000):
        self.l2 = float(l2)
        self.tol = float(tol)
        self.max_iter = int(max_iter)

    def _standardize(self, X):
        return (X - self.mean) * self.inv_scale

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        # zero-variance columns contribute nothing
        self.inv_scale = np.divide(1.0, sd, out=np.zeros_like(sd), where=sd > 0)
        Z = self._standardize(X)
        w = np.zeros(Z.shape[1])
        b = 0.0
        step = 1.0
        loss, gw, gb = loss_and_gradient(w, b, Z, y, self.l2)
        self.n_iter = 0
        for it in range(self.max_iter):
            gnorm2 = float(np.dot(gw, gw) + gb * gb)
            if math.sqrt(gnorm2) < self.tol:
                break
            # Armijo backtracking
            while True:
                w_new, b_new = w - step * gw, b - step * gb
                new_loss, ngw, ngb = loss_and_gradient(w_new, b_new, Z, y, self.l2)
                if new_loss <= loss - 0.5 * step * gnorm2 or step < 1e-12:
                    break
                step *= 0.5
            w, b, loss, gw, gb = w_new, b_new, new_loss, ngw, ngb
            step = min(step * 2.0, 64.0)
            self.n_iter = it + 1
        else:
            logger.warning("Logistic fit stopped at max_iter=%d (|grad|=%.2e)", self.max_iter, math.sqrt(gnorm2))
        self.weights = w
        self.intercept = b
        self.loss = loss
        mag = np.abs(w)
        self.importances = mag / mag.sum() if mag.sum() > 0 else np.full(len(w), 1.0 / len(w))
        return self

    @classmethod
    def from_weights(cls, weights, intercept=0.0, mean=None, scale=None):
        model = cls()
        weights = np.asarray(weights, dtype=np.float64)
        model.weights = weights
        model.intercept = float(intercept)
        model.mean = np.zeros_like(weights) if mean is None else np.asarray(mean, dtype=np.float64)
        model.inv_scale = np.ones_like(weights) if scale is None else 1.0 / np.asarray(scale, dtype=np.float64)
        mag = np.abs(weights)
        model.importances = mag / mag.sum() if mag.sum() > 0 else np.full(len(weights), 1.0 / len(weights))
        return model

    def predict_proba(self, X):
        return sigmoid(self._standardize(np.asarray(X, dtype=np.float64)) @ self.weights + self.intercept)


class DummyModel:
    def __init__(self, seed=0):
        self.seed = int(seed)

    def fit(self, X, y=None):
        n_features = np.asarray(X).shape[1]
        self.importances = np.full(n_features, 1.0 / n_features) if n_features else np.zeros(0)
        return self

    def predict_proba(self, X):
        return make_rng(self.seed).random(np.asarray(X).shape[0])


# ---------------------------------------------------------------------------
# Uniform interface
# ---------------------------------------------------------------------------


def _estimator(family, params, seed, n_jobs):
    if family == "decision_tree":
        return DecisionTree(
            params.get("max_depth"),
            params.get("min_leaf", 1),
            params.get("max_features"),
            params.get("random_thresholds", False),
        )
    if family in ("random_forest", "extra_trees"):
        defaults = DEFAULT_HYPERPARAMETERS[family]
        return Forest(
            n_trees=params.get("n_trees", defaults["n_trees"]),
            max_depth=params.get("max_depth", defaults["max_depth"]),
            min_leaf=params.get("min_leaf", defaults["min_leaf"]),
            max_features=params.get("max_features", defaults["max_features"]),
            bootstrap=params.get("bootstrap", defaults["bootstrap"]),
            random_thresholds=family == "extra_trees",
            n_jobs=n_jobs,
        )
    if family == "scaled_logistic":
        return LogisticModel(params.get("l2", 0.1), params.get("tol", 1e-6), params.get("max_iter", 2000))
    if family == "dummy":
        return DummyModel(seed)
    raise ConfigError(f"Unknown model family {family!r}")


def fit_frame(family, hyperparameters, X, y, seed=0, trained_through=None, n_jobs=None):
    """Fit on a feature frame and a 0/1 label array."""
    if family not in FAMILIES:
        raise ConfigError(f"Unknown model family {family!r}; choose from {', '.join(FAMILIES)}")
    params = dict(hyperparameters or {})
    y = np.asarray(y, dtype=np.float64)
    names = list(X.columns)
    if family != "dummy":
        if len(y) < 2:
            raise SingleClassError(f"{family}: need at least 2 training examples, got {len(y)}")
        positives = int(y.sum())
        if positives in (0, len(y)):
            raise SingleClassError(
                f"{family}: training labels are all {int(y[0])} ({len(y)} examples); refusing to fit"
            )
    est = _estimator(family, params, seed, n_jobs)
    values = X.to_numpy(dtype=np.float64)
    if isinstance(est, DecisionTree):
        est.fit(values, y, rng=make_rng(seed))
    elif isinstance(est, Forest):
        est.fit(values, y, seed=seed)
    else:
        est.fit(values, y)
    importances = {n: float(v) for n, v in zip(names, est.importances)}
    logger.debug("Fitted %s on %d examples x %d features", family, len(y), len(names))
    return TrainedModel(
        family=family,
        hyperparameters=params,
        feature_names=names,
        importances=importances,
        trained_through=trained_through,
        seed=int(seed),
        state=est,
    )


def fit(family, hyperparameters, examples, seed=0, n_jobs=None):
    """Fit from ``LabeledExample``s; ``trained_through`` is the last observation date."""
    if not examples:
        raise SingleClassError(f"{family}: no training examples")
    X = vectors_to_frame([e.feature_vector for e in examples])
    names = set(X.columns)
    for e in examples:
        if set(e.feature_vector.values) != names:
            raise SchemaMismatchError(
                sorted(names - set(e.feature_vector.values)), sorted(set(e.feature_vector.values) - names)
            )
    y = [int(e.label) for e in examples]
    through = max(e.observation_date for e in examples)
    return fit_frame(family, hyperparameters, X, y, seed=seed, trained_through=through, n_jobs=n_jobs)


def _aligned(model, X):
    cols = list(X.columns)
    if cols == model.feature_names:
        return X
    missing = sorted(set(model.feature_names) - set(cols))
    extra = sorted(set(cols) - set(model.feature_names))
    if missing or extra:
        raise SchemaMismatchError(missing, extra)
    return X.loc[:, model.feature_names]


def score_frame(model, X):
    if len(X) == 0:
        return np.zeros(0)
    X = _aligned(model, X)
    return np.clip(model.state.predict_proba(X.to_numpy(dtype=np.float64)), 0.0, 1.0)


def score(model, vectors):
    if not vectors:
        return []
    return score_frame(model, vectors_to_frame(vectors)).tolist()


def importance_by_group(model, group_of):
    """Sum of normalized importances per group; groups sum to 1."""
    importances = model.importances if isinstance(model, TrainedModel) else model
    totals = {}
    for name, value in importances.items():
        g = group_of(name) if callable(group_of) else group_of.get(name, "other")
        totals[g] = totals.get(g, 0.0) + value
    s = sum(totals.values())
    if s > 0:
        totals = {g: v / s for g, v in totals.items()}
    return dict(sorted(totals.items(), key=lambda kv: (-kv[1], kv[0])))


def top_features(model, n=20):
    ranked = sorted(model.importances.items(), key=lambda kv: (-kv[1], kv[0]))
    return pd.DataFrame(ranked[:n], columns=["feature", "importance"])


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_model(model, path):
    """Magic line, one JSON header line, then the joblib payload."""
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "family": model.family,
        "schema_hash": model.schema_hash,
        "hyperparameters": model.hyperparameters,
        "seed": model.seed,
        "trained_through": model.trained_through.isoformat() if model.trained_through else None,
        "feature_names": model.feature_names,
    }
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC + b" " + str(MODEL_FORMAT_VERSION).encode() + b"\n")
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        joblib.dump({"importances": model.importances, "state": model.state}, f)
    logger.info("Saved %s model to %s", model.family, path)


def read_model_header(path):
    with open(path, "rb") as f:
        return _read_header(f, path)


def _read_header(f, path):
    magic = f.readline().strip().split(b" ")
    if not magic or magic[0] != MODEL_MAGIC:
        raise DataError(f"{path}: not a model file")
    if len(magic) < 2 or int(magic[1]) != MODEL_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported model format {magic[1:]}")
    return json.loads(f.readline().decode("utf-8"))


def load_model(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Model file not found: {path}")
    with open(path, "rb") as f:
        header = _read_header(f, path)
        payload = joblib.load(f)
    if schema_hash(header["feature_names"]) != header["schema_hash"]:
        raise DataError(f"{path}: schema hash does not match feature names")
    through = header.get("trained_through")
    return TrainedModel(
        family=header["family"],
        hyperparameters=header["hyperparameters"],
        feature_names=header["feature_names"],
        importances=payload["importances"],
        trained_through=date.fromisoformat(through) if through else None,
        seed=header["seed"],
        state=payload["state"],
    )
