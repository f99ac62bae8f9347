"""Few-shot classifiers over embeddings, raw-window baselines, voting and metrics."""

from __future__ import annotations

import os
import pickle
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.decomposition import PCA
from sklearn.ensemble import RandomForestClassifier
from sklearn.metrics import roc_auc_score
from sklearn.pipeline import make_pipeline
from sklearn.svm import LinearSVC

from .core import N_CHANNELS, WINDOW_LEN, GestureEvent
from .pipeline import vote

KINDS = ("max-margin", "nearest-centroid", "random-forest", "pca+max-margin", "pca+random-forest")
BASELINE_KINDS = ("max-margin", "random-forest", "pca+max-margin", "pca+random-forest")
MODEL_FORMAT = "magsense-classifier/1"
SVM_C = 1.0
PCA_COMPONENTS = 20
RF_TREES = 100


@dataclass(frozen=True, eq=False)
class FewShotSet:
    """Labelled embeddings; ``groups`` ties rows from one labelled recording together.

    Every class must hold the same number of groups (k). Without explicit
    groups each row is its own example.
    """

    X: np.ndarray
    y: np.ndarray
    groups: np.ndarray | None = None

    def __post_init__(self) -> None:
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y).astype(int).reshape(-1)
        g = np.arange(len(y)) if self.groups is None else np.asarray(self.groups).reshape(-1)
        if len(X) != len(y) or len(g) != len(y):
            raise ValueError("X, y and groups must have the same length")
        if not np.all(np.isfinite(X)):
            raise ValueError("embeddings must be finite")
        classes = np.unique(y)
        if len(classes) < 2:
            raise ValueError(f"need at least two classes, got {len(classes)}")
        ks = {int(c): len(np.unique(g[y == c])) for c in classes}
        if len(set(ks.values())) != 1:
            raise ValueError(f"unequal examples per class: {ks}")
        for grp in np.unique(g):
            if len(np.unique(y[g == grp])) > 1:
                raise ValueError(f"group {grp!r} carries more than one label")
        # identical rows with different labels cannot be fitted
        _, inv = np.unique(X, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        for row in np.unique(inv):
            if len(np.unique(y[inv == row])) > 1:
                raise ValueError("duplicate embedding with conflicting labels")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "groups", g)

    @property
    def k(self) -> int:
        c = self.classes[0]
        return len(np.unique(self.groups[self.y == c]))

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.y)


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    kind: str
    classes: np.ndarray
    dim: int
    estimator: object = None         # sklearn model for all kinds but nearest-centroid
    centroids: np.ndarray | None = None

    def scores(self, X: np.ndarray) -> np.ndarray:
        """(n, n_classes) scores, larger is better."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim}-dim input, got {X.shape[1]}")
        if self.kind == "nearest-centroid":
            d2 = ((X[:, None, :] - self.centroids[None]) ** 2).sum(-1)
            return -np.sqrt(d2)
        if self.kind.endswith("random-forest"):
            return self.estimator.predict_proba(X)
        s = self.estimator.decision_function(X)
        if s.ndim == 1:  # binary LinearSVC returns the positive-class margin only
            s = np.stack([-s, s], axis=1)
        return s

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.scores(X)
        idx = np.argmax(s, axis=1)  # first maximum -> lowest class id on exact ties
        return self.classes[idx], s[np.arange(len(s)), idx]

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as fh:
            pickle.dump({"format": MODEL_FORMAT, "kind": self.kind, "classes": self.classes,
                         "dim": self.dim, "estimator": self.estimator, "centroids": self.centroids}, fh)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ClassifierModel":
        # pickle: only load model files you produced yourself
        with open(path, "rb") as fh:
            obj = pickle.load(fh)
        if not isinstance(obj, dict) or obj.get("format") != MODEL_FORMAT:
            raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
        return cls(obj["kind"], obj["classes"], obj["dim"], obj["estimator"], obj["centroids"])


def _estimator(kind: str, n_train: int, seed: int, params: dict | None = None):
    # ``params`` override the final estimator's settings (e.g. n_estimators, max_depth, C)
    svm = LinearSVC(C=SVM_C, max_iter=20000, random_state=seed)
    rf = RandomForestClassifier(n_estimators=RF_TREES, random_state=seed, n_jobs=1)
    if params:
        (rf if kind.endswith("random-forest") else svm).set_params(**params)
    if kind == "max-margin":
        return svm
    if kind == "random-forest":
        return rf
    pca = PCA(n_components=min(PCA_COMPONENTS, n_train), svd_solver="full")
    if kind == "pca+max-margin":
        return make_pipeline(pca, svm)
    if kind == "pca+random-forest":
        return make_pipeline(pca, rf)
    raise ValueError(f"unknown classifier kind {kind!r}; expected one of {KINDS}")


def fit_arrays(X: np.ndarray, y: np.ndarray, kind: str = "max-margin", seed: int = 0,
               **params) -> ClassifierModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y).astype(int)
    classes = np.unique(y)
    if kind == "nearest-centroid":
        cents = np.stack([X[y == c].mean(axis=0) for c in classes])
        return ClassifierModel(kind, classes, X.shape[1], centroids=cents)
    est = _estimator(kind, len(X), seed, params)
    est.fit(X, y)
    return ClassifierModel(kind, classes, X.shape[1], estimator=est)


def fit(train: FewShotSet, kind: str = "max-margin", seed: int = 0, **params) -> ClassifierModel:
    if kind not in KINDS:
        raise ValueError(f"unknown classifier kind {kind!r}; expected one of {KINDS}")
    return fit_arrays(train.X, train.y, kind, seed, **params)


def predict_window(model: ClassifierModel, embedding: np.ndarray) -> tuple[int, float]:
    e = np.asarray(embedding, dtype=float)
    if e.ndim != 1:
        raise ValueError("predict_window takes a single embedding vector")
    lab, sc = model.predict(e[None])
    return int(lab[0]), float(sc[0])


def flatten_windows(windows: np.ndarray) -> np.ndarray:
    w = np.asarray(windows, dtype=float)
    if w.shape[-2:] != (WINDOW_LEN, N_CHANNELS):
        raise ValueError(f"windows must be (..., {WINDOW_LEN}, {N_CHANNELS})")
    return w.reshape(-1, WINDOW_LEN * N_CHANNELS)


def fit_baseline(windows: np.ndarray, labels: np.ndarray, kind: str = "max-margin",
                 groups: np.ndarray | None = None, seed: int = 0, **params) -> ClassifierModel:
    """Classifier on flattened normalized windows (144-vectors)."""
    if kind not in BASELINE_KINDS:
        raise ValueError(f"baseline kind must be one of {BASELINE_KINDS}")
    train = FewShotSet(flatten_windows(windows), labels, groups)
    return fit(train, kind, seed, **params)


def predict_event(model: ClassifierModel, encoder, windows, env_estimate: np.ndarray,
                  profile, start_idx: int = 0) -> GestureEvent:
    """Vote over raw event windows: subtract env, normalize, embed, classify."""
    from .encoder import encode
    from .preprocess import normalize_array

    raw = np.stack([np.asarray(getattr(w, "data", w), dtype=float) for w in windows]) if len(windows) else None
    if raw is None:
        raise ValueError("an event needs at least one window")
    x = normalize_array(raw - np.asarray(env_estimate, dtype=float).reshape(N_CHANNELS), profile.scale_only())
    emb = np.stack([encode(encoder, w) for w in x])
    labels, scores = model.predict(emb)
    return GestureEvent.from_votes(start_idx, start_idx + len(raw), labels, vote(labels, scores))


def vote_scores(labels: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """Per-class vote fractions, used as event-level scores for AUC."""
    labels = np.asarray(labels)
    return np.array([np.mean(labels == c) for c in classes])


# --- metrics ----------------------------------------------------------------------

def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> np.ndarray:
    """Rows true, columns predicted. Predictions of -1 (no event) get an extra column."""
    cm = np.zeros((n_classes, n_classes + 1), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[int(t), int(p) if p >= 0 else n_classes] += 1
    return cm


def metrics_from_confusion(cm: np.ndarray) -> dict[str, float]:
    """Accuracy and macro precision / recall / F1; classes never predicted score 0 precision."""
    cm = np.asarray(cm, dtype=float)
    n = cm.shape[0]
    tp = np.diag(cm[:, :n])
    support = cm.sum(axis=1)
    predicted = cm[:, :n].sum(axis=0)
    total = cm.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(predicted > 0, tp / predicted, 0.0)
        rec = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    return {"accuracy": float(tp.sum() / total) if total else 0.0,
            "precision": float(prec.mean()), "recall": float(rec.mean()), "f1": float(f1.mean())}


def macro_ovr_auc(y_true: Sequence[int], scores: np.ndarray, n_classes: int) -> float:
    y_true = np.asarray(y_true, dtype=int)
    scores = np.asarray(scores, dtype=float)
    if n_classes == 2:
        return float(roc_auc_score(y_true, scores[:, 1] - scores[:, 0]))
    aucs = []
    for c in range(n_classes):
        pos = y_true == c
        if pos.any() and (~pos).any():
            aucs.append(roc_auc_score(pos, scores[:, c]))
    return float(np.mean(aucs)) if aucs else float("nan")
