"""Preprocessing transformers, sklearn-style (fit on train, transform both).

All math is implemented here directly; sklearn contributes only the
BaseEstimator/TransformerMixin plumbing (get_params, fit_transform) so the
transformers compose with the wider ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import InvalidArgument


def check_matrix(X, allow_empty_rows: bool = True) -> np.ndarray:
    """Validate and convert input to a 2-D float64 array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidArgument(f"expected a 2-D matrix, got shape {X.shape}")
    if not allow_empty_rows and X.shape[0] == 0:
        raise InvalidArgument("matrix must have at least one row")
    if not np.all(np.isfinite(X)):
        raise InvalidArgument("matrix contains non-finite values")
    return X


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise InvalidArgument(
            f"{type(estimator).__name__} must be fitted before transform"
        )


class MinMaxScaler(BaseEstimator, TransformerMixin):
    """Rescale columns to ``feature_range`` using train min/max.

    Constant columns get a unit denominator so they map to the range start;
    test values outside the train min/max may exceed the range.
    """

    def __init__(self, feature_range=(0.0, 1.0)):
        self.feature_range = feature_range

    def fit(self, X, y=None):
        X = check_matrix(X, allow_empty_rows=False)
        low, high = self.feature_range
        if not low < high:
            raise InvalidArgument("feature_range must satisfy min < max")
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        data_range = self.data_max_ - self.data_min_
        self.constant_columns_ = np.flatnonzero(data_range == 0).tolist()
        data_range = np.where(data_range == 0, 1.0, data_range)
        self.scale_ = (high - low) / data_range
        self.min_ = low - self.data_min_ * self.scale_
        return self

    def transform(self, X):
        check_fitted(self, "scale_")
        X = check_matrix(X)
        return X * self.scale_ + self.min_

    def fitted_params(self) -> dict:
        return {
            "data_min": self.data_min_.tolist(),
            "data_max": self.data_max_.tolist(),
            "constant_columns": self.constant_columns_,
        }


class StandardScaler(BaseEstimator, TransformerMixin):
    """Center to zero mean and scale to unit population standard deviation.

    Columns with zero variance keep scale 1 and are flagged in
    ``constant_columns_`` (surfaced in the processed dataset's audit trail).
    """

    def fit(self, X, y=None):
        X = check_matrix(X, allow_empty_rows=False)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)  # population std (ddof=0)
        self.constant_columns_ = np.flatnonzero(std == 0).tolist()
        self.scale_ = np.where(std == 0, 1.0, std)
        return self

    def transform(self, X):
        check_fitted(self, "scale_")
        X = check_matrix(X)
        return (X - self.mean_) / self.scale_

    def fitted_params(self) -> dict:
        return {
            "mean": self.mean_.tolist(),
            "scale": self.scale_.tolist(),
            "constant_columns": self.constant_columns_,
        }


class Binarizer(BaseEstimator, TransformerMixin):
    """Map values to 1.0 where strictly above ``threshold``, else 0.0."""

    def __init__(self, threshold=0.5):
        self.threshold = threshold

    def fit(self, X, y=None):
        check_matrix(X)
        self.fitted_ = True
        return self

    def transform(self, X):
        X = check_matrix(X)
        return (X > self.threshold).astype(np.float64)

    def fitted_params(self) -> dict:
        return {"threshold": self.threshold}


class TfidfTransform(BaseEstimator, TransformerMixin):
    """Term-frequency / inverse-document-frequency weighting.

    With ``smooth`` (default) idf = ln((1+N)/(1+df)) + 1; document frequency
    counts train rows with a value > 0 per column. Output is tf * idf with no
    extra normalization.
    """

    def __init__(self, smooth=True):
        self.smooth = smooth

    def fit(self, X, y=None):
        X = check_matrix(X, allow_empty_rows=False)
        n_docs = X.shape[0]
        df = (X > 0).sum(axis=0).astype(np.float64)
        if self.smooth:
            self.idf_ = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
        else:
            self.idf_ = np.log(n_docs / np.maximum(df, 1.0)) + 1.0
        return self

    def transform(self, X):
        check_fitted(self, "idf_")
        X = check_matrix(X)
        return X * self.idf_

    def fitted_params(self) -> dict:
        return {"idf": self.idf_.tolist()}


class VarianceThreshold(BaseEstimator, TransformerMixin):
    """Drop columns whose train population variance is <= ``threshold``."""

    def __init__(self, threshold=0.0):
        self.threshold = threshold

    def fit(self, X, y=None):
        X = check_matrix(X, allow_empty_rows=False)
        self.variances_ = X.var(axis=0)
        self.support_ = np.flatnonzero(self.variances_ > self.threshold)
        return self

    def transform(self, X):
        check_fitted(self, "support_")
        X = check_matrix(X)
        return X[:, self.support_]

    def get_support(self) -> np.ndarray:
        check_fitted(self, "support_")
        return self.support_

    def fitted_params(self) -> dict:
        return {
            "variances": self.variances_.tolist(),
            "kept_columns": self.support_.tolist(),
        }


def fit_pca(X: np.ndarray, n_components: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Principal components of a matrix: (mean, components, explained_variance).

    Components are rows, sorted by eigenvalue descending, each sign-fixed so
    its largest-magnitude entry is positive (magnitude ties resolve to the
    lowest original column index, which np.argmax already gives).
    """
    X = check_matrix(X, allow_empty_rows=False)
    n_rows, n_cols = X.shape
    if n_components > n_cols:
        raise InvalidArgument(
            f"n_components={n_components} exceeds column count {n_cols}"
        )
    mean = X.mean(axis=0)
    centered = X - mean
    if n_rows > 1:
        cov = centered.T @ centered / (n_rows - 1)
    else:
        cov = np.zeros((n_cols, n_cols))
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues, kind="stable")[::-1]
    eigenvalues = eigenvalues[order]
    components = eigenvectors[:, order].T
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return mean, components[:n_components], np.maximum(eigenvalues[:n_components], 0.0)


class PCAReduce(BaseEstimator, TransformerMixin):
    """Project onto the top principal components of the train covariance."""

    def __init__(self, n_components=2):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_matrix(X, allow_empty_rows=False)
        if self.n_components < 1:
            raise InvalidArgument("n_components must be positive")
        self.mean_, self.components_, self.explained_variance_ = fit_pca(
            X, self.n_components
        )
        total = np.trace((X - self.mean_).T @ (X - self.mean_)) / max(X.shape[0] - 1, 1)
        self.explained_variance_ratio_ = (
            self.explained_variance_ / total if total > 0 else np.zeros(self.n_components)
        )
        return self

    def transform(self, X):
        check_fitted(self, "components_")
        X = check_matrix(X)
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, Z):
        check_fitted(self, "components_")
        Z = check_matrix(Z)
        return Z @ self.components_ + self.mean_

    def fitted_params(self) -> dict:
        return {
            "mean": self.mean_.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio_.tolist(),
        }
