"""Evaluation math: one-vs-rest confusion counts, derived metrics, PCA
projection for latent views, and k-means over latent representations.

Any 0/0 metric is reported as 0.0 with an ``undefined`` flag instead of NaN
so macro averages stay finite and auditable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .transforms import check_matrix, fit_pca

METRIC_NAMES = (
    "accuracy",
    "precision",
    "recall",
    "specificity",
    "f1",
    "tpr",
    "fpr",
    "tnr",
    "fnr",
)


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: dict  # class -> {"tp": int, "tn": int, "fp": int, "fn": int}

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts}


def confusion(predictions, truths, classes) -> ConfusionMatrix:
    """One-vs-rest TP/TN/FP/FN counts per class."""
    predictions = list(predictions)
    truths = list(truths)
    if len(predictions) != len(truths):
        raise InvalidArgument(
            f"length mismatch: {len(predictions)} predictions vs {len(truths)} truths"
        )
    class_list = tuple(sorted(set(classes)))
    known = set(class_list)
    for label in predictions + truths:
        if label not in known:
            raise InvalidArgument(f"label {label!r} not in classes")
    counts = {}
    for cls in class_list:
        tp = fp = fn = tn = 0
        for predicted, truth in zip(predictions, truths):
            if truth == cls and predicted == cls:
                tp += 1
            elif truth == cls:
                fn += 1
            elif predicted == cls:
                fp += 1
            else:
                tn += 1
        counts[cls] = {"tp": tp, "tn": tn, "fp": fp, "fn": fn}
    return ConfusionMatrix(class_list, counts)


def _ratio(numerator: float, denominator: float) -> tuple[float, bool]:
    """(value, undefined): 0/0 -> (0.0, True)."""
    if denominator == 0:
        return 0.0, True
    return numerator / denominator, False


def metrics(cm: ConfusionMatrix) -> dict:
    """Per-class and macro-averaged metric report with undefined flags."""
    per_class: dict[str, dict] = {}
    for cls in cm.classes:
        c = cm.counts[cls]
        tp, tn, fp, fn = c["tp"], c["tn"], c["fp"], c["fn"]
        total = tp + tn + fp + fn
        values: dict[str, float] = {}
        undefined: list[str] = []

        def put(name: str, numerator: float, denominator: float) -> float:
            value, is_undefined = _ratio(numerator, denominator)
            values[name] = value
            if is_undefined:
                undefined.append(name)
            return value

        put("accuracy", tp + tn, total)
        precision = put("precision", tp, tp + fp)
        recall = put("recall", tp, tp + fn)
        put("specificity", tn, tn + fp)
        put("f1", 2 * precision * recall, precision + recall)
        put("tpr", tp, tp + fn)
        put("fpr", fp, fp + tn)
        put("tnr", tn, tn + fp)
        put("fnr", fn, fn + tp)
        per_class[cls] = {"values": values, "undefined": sorted(undefined)}

    macro_values: dict[str, float] = {}
    macro_undefined: list[str] = []
    n_classes = len(cm.classes)
    for name in METRIC_NAMES:
        if n_classes == 0:
            macro_values[name] = 0.0
            macro_undefined.append(name)
            continue
        macro_values[name] = sum(per_class[c]["values"][name] for c in cm.classes) / n_classes
        if any(name in per_class[c]["undefined"] for c in cm.classes):
            macro_undefined.append(name)
    return {
        "per_class": per_class,
        "macro": {"values": macro_values, "undefined": sorted(macro_undefined)},
    }


def project(latent, dims: int, fit_rows) -> np.ndarray:
    """PCA-project latent rows to ``dims`` coordinates, fit on train rows only.

    When the latent dimension is below ``dims`` the missing coordinates are
    exactly zero.
    """
    if dims not in (2, 3):
        raise InvalidArgument("dims must be 2 or 3")
    latent = check_matrix(latent)
    fit_rows = np.asarray(fit_rows, dtype=np.float64)
    if fit_rows.ndim != 2 or fit_rows.shape[0] == 0:
        raise InvalidArgument("projection fit set must be a nonempty matrix")
    n_components = min(dims, latent.shape[1])
    if n_components == 0:
        return np.zeros((latent.shape[0], dims))
    mean, components, _ = fit_pca(fit_rows, n_components)
    coords = (latent - mean) @ components.T
    if n_components < dims:
        coords = np.hstack([coords, np.zeros((latent.shape[0], dims - n_components))])
    return coords


@dataclass
class KMeansResult:
    assignments: list[int]
    centroids: np.ndarray
    inertia: float
    inertia_history: list[float]
    purity: Optional[float] = None
    contingency: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "k": int(self.centroids.shape[0]),
            "assignments": list(self.assignments),
            "centroids": [list(map(float, c)) for c in self.centroids],
            "inertia": self.inertia,
            "inertia_history": list(self.inertia_history),
            "purity": self.purity,
            "contingency": self.contingency,
        }


def _squared_distances(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans(
    X,
    k: int,
    seed: int,
    max_iter: int = 300,
    tol: float = 1e-6,
    labels: Optional[list] = None,
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are re-seeded to the farthest point from their previous
    centroid; iteration stops when the max centroid shift drops below ``tol``.
    """
    X = check_matrix(X, allow_empty_rows=False)
    n = X.shape[0]
    if k < 1 or k > n:
        raise InvalidArgument(f"k must be within [1, {n}], got {k}")
    rng = np.random.Generator(np.random.PCG64(seed))

    # k-means++: first centroid uniform, the rest by squared-distance sampling.
    chosen = [int(rng.integers(n))]
    while len(chosen) < k:
        d2 = _squared_distances(X, X[chosen]).min(axis=1)
        total = d2.sum()
        if total <= 0:
            remaining = [i for i in range(n) if i not in chosen]
            chosen.append(remaining[int(rng.integers(len(remaining)))])
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
    centroids = X[chosen].astype(np.float64).copy()

    history: list[float] = []
    assignments = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d2 = _squared_distances(X, centroids)
        assignments = d2.argmin(axis=1)
        history.append(float(d2[np.arange(n), assignments].sum()))
        new_centroids = centroids.copy()
        reseeded: set[int] = set()
        for j in range(k):
            members = X[assignments == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            else:
                distances = ((X - centroids[j]) ** 2).sum(axis=1)
                for index in np.argsort(distances, kind="stable")[::-1]:
                    if int(index) not in reseeded:
                        reseeded.add(int(index))
                        new_centroids[j] = X[int(index)]
                        break
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            break
    d2 = _squared_distances(X, centroids)
    assignments = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assignments].sum())
    history.append(inertia)

    purity = None
    contingency = None
    if labels is not None:
        labels = list(labels)
        if len(labels) != n:
            raise InvalidArgument("label count does not match row count")
        contingency = {}
        for cluster, label in zip(assignments.tolist(), labels):
            contingency.setdefault(str(cluster), {}).setdefault(label, 0)
            contingency[str(cluster)][label] += 1
        purity = (
            sum(max(class_counts.values()) for class_counts in contingency.values()) / n
        )
    return KMeansResult(
        assignments=assignments.tolist(),
        centroids=centroids,
        inertia=inertia,
        inertia_history=history,
        purity=purity,
        contingency=contingency,
    )
