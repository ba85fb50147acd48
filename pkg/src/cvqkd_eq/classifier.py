"""Ellipse-zone quality labels and a k-nearest-neighbour router."""

from dataclasses import dataclass
from enum import IntEnum
import json

import numpy as np


class QualityLabel(IntEnum):
    """Received-variable quality; a lower value is a better class."""

    EXCELLENT = 0
    ORDINARY = 1
    BAD = 2
    DISCARD = 3

    @property
    def title(self):
        return self.name.capitalize()

    @classmethod
    def parse(cls, text):
        return cls[str(text).upper()]


KEPT_CLASSES = (QualityLabel.EXCELLENT, QualityLabel.ORDINARY, QualityLabel.BAD)


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class EllipseZones:
    """Nested Mahalanobis shells around a reference cloud in the (x, y) plane."""

    mean: np.ndarray
    cov: np.ndarray
    k1: float = 1.5
    k2: float = 2.5
    k3: float = 3.5

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise DegenerateDataError("covariance is not positive definite")
        if not 0 < self.k1 < self.k2 < self.k3:
            raise ValueError("thresholds must satisfy 0 < k1 < k2 < k3")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def mahalanobis(self, pairs):
        """Mahalanobis distance of one pair or an ``(n, 2)`` array of pairs."""
        d = np.asarray(pairs, dtype=float) - self.mean
        sol = np.linalg.solve(self.cov, d.T).T
        return np.sqrt(np.maximum(np.sum(d * sol, axis=-1), 0.0))

    def to_dict(self):
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist(),
                "k1": self.k1, "k2": self.k2, "k3": self.k3}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"]), np.array(d["cov"]), d["k1"], d["k2"], d["k3"])


def fit_ellipse_zones(pairs, thresholds=(1.5, 2.5, 3.5)):
    """Fit zone shells to the sample mean and covariance of ``pairs``."""
    pts = np.asarray(pairs, dtype=float).reshape(-1, 2)
    if len(pts) < 10:
        raise DegenerateDataError("at least 10 pairs are needed to fit zones")
    cov = np.cov(pts.T)
    ev = np.linalg.eigvalsh(cov)
    if ev[0] <= 1e-12 * max(ev[1], 1e-300):
        raise DegenerateDataError("scatter is degenerate (singular covariance)")
    k1, k2, k3 = thresholds
    return EllipseZones(pts.mean(axis=0), cov, k1, k2, k3)


def label_distances(zones, d):
    """Map Mahalanobis distances to labels; boundary values go to the better class."""
    d = np.asarray(d, dtype=float)
    return np.digitize(d, [zones.k1, zones.k2, zones.k3], right=True)


def label_point(zones, pair):
    """Quality label of one (x, y) pair."""
    return QualityLabel(int(label_distances(zones, zones.mahalanobis(pair))))


@dataclass(frozen=True)
class KnnModel:
    """Lazy k-NN learner on standardised 2-D features."""

    features: np.ndarray
    labels: np.ndarray
    k: int = 5
    center: np.ndarray = None
    scale: np.ndarray = None

    def to_dict(self):
        return {"k": self.k, "features": self.features.tolist(),
                "labels": [int(v) for v in self.labels],
                "center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["features"], dtype=float), np.array(d["labels"], dtype=int),
                   int(d["k"]), np.array(d["center"], dtype=float), np.array(d["scale"], dtype=float))

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def knn_fit(features, labels, k=5):
    """Store the training set together with its per-axis standardisation.

    Axes with zero spread keep a unit scale.
    """
    X = np.asarray(features, dtype=float).reshape(-1, 2)
    y = np.asarray([int(v) for v in labels], dtype=int)
    if len(X) != len(y):
        raise ValueError("features and labels differ in length")
    if k < 1 or k % 2 == 0:
        raise ValueError("k must be a positive odd number")
    if k > len(X):
        raise ValueError("k exceeds the number of training points")
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return KnnModel(X, y, int(k), center, scale)


def knn_votes(model, queries, chunk=512):
    """Per-class vote fractions of the k nearest training points, shape ``(n, 3)``.

    Distances are Euclidean in standardised coordinates.  Equal distances
    are resolved in favour of the lower training index.
    """
    Q = (np.asarray(queries, dtype=float).reshape(-1, 2) - model.center) / model.scale
    X = (model.features - model.center) / model.scale
    n_cls = len(KEPT_CLASSES)
    votes = np.zeros((len(Q), n_cls))
    k = model.k
    for start in range(0, len(Q), chunk):
        q = Q[start:start + chunk]
        d2 = ((q[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        for r in range(len(q)):
            cand = np.flatnonzero(d2[r] <= kth[r])
            if len(cand) > k:
                cand = cand[np.lexsort((cand, d2[r, cand]))[:k]]
            lab = model.labels[cand]
            votes[start + r] = np.bincount(lab, minlength=n_cls)[:n_cls]
    return votes / k


def predict_from_votes(votes):
    """Majority class; vote ties go to the better (lower) class."""
    return np.argmax(votes, axis=1)


def knn_predict(model, feature):
    """Predicted label of a single (x, y) feature."""
    return QualityLabel(int(predict_from_votes(knn_votes(model, [feature]))[0]))


@dataclass(frozen=True)
class ClassReport:
    confusion: np.ndarray
    per_class_tpr: np.ndarray
    per_class_fnr: np.ndarray
    per_class_auc: np.ndarray
    accuracy: float

    def to_dict(self):
        names = [c.title for c in KEPT_CLASSES]
        return {"classes": names, "confusion": self.confusion.tolist(),
                "per_class_tpr": self.per_class_tpr.tolist(),
                "per_class_fnr": self.per_class_fnr.tolist(),
                "per_class_auc": self.per_class_auc.tolist(), "accuracy": self.accuracy}


def roc_auc(scores, positive):
    """Area under the ROC curve by the trapezoidal rule over distinct score thresholds."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], positive[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(p)[last]
    fp = np.cumsum(~p)[last]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def classification_report(predicted, truth, scores):
    """Confusion matrix, TPR/FNR, one-vs-rest AUC and accuracy over the three kept classes."""
    predicted = np.asarray([int(v) for v in predicted], dtype=int)
    truth = np.asarray([int(v) for v in truth], dtype=int)
    scores = np.asarray(scores, dtype=float)
    if not (len(predicted) == len(truth) == len(scores)):
        raise ValueError("predicted, truth and scores differ in length")
    n_cls = len(KEPT_CLASSES)
    conf = np.zeros((n_cls, n_cls), dtype=int)
    np.add.at(conf, (truth, predicted), 1)
    support = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        tpr = np.where(support > 0, np.diag(conf) / np.maximum(support, 1), np.nan)
    fnr = 1.0 - tpr
    auc = np.array([roc_auc(scores[:, c], truth == c) for c in range(n_cls)])
    acc = float(np.mean(predicted == truth)) if len(truth) else float("nan")
    return ClassReport(conf, tpr, fnr, auc, acc)
