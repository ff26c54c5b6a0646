"""Orthonormal subspaces of feature space and the angles between them.

Bases are estimated on mean-centred data but only the basis is kept; the
kernels built from them act on raw feature vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DimensionMismatch, RankDeficient, SingleClass

__all__ = [
    "Subspace",
    "PCASubspace",
    "PLSSubspace",
    "pca_subspace",
    "pls_subspace",
    "orthogonal_complement",
    "principal_angles",
]

_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class Subspace:
    """A ``D x d`` orthonormal basis tagged with its origin."""

    basis: np.ndarray
    method: str = "pca"
    camera_id: str = ""

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    def to_json(self) -> dict:
        return {"method": self.method, "camera": self.camera_id,
                "basis": self.basis.tolist()}

    @classmethod
    def from_json(cls, obj) -> "Subspace":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(np.asarray(obj["basis"], dtype=np.float64), obj["method"], obj["camera"])


def _orient(columns):
    idx = np.argmax(np.abs(columns), axis=0)
    signs = np.sign(columns[idx, np.arange(columns.shape[1])])
    signs[signs == 0] = 1.0
    return columns * signs


def _check_dims(X, d):
    n, D = X.shape
    if d < 1 or d >= D:
        raise RankDeficient(f"subspace dimension {d} must satisfy 1 <= d < D={D}")
    if n <= d:
        raise RankDeficient(f"need more than d={d} samples, got {n}")


class PCASubspace(TransformerMixin, BaseEstimator):
    """Top principal directions of mean-centred data.

    Parameters
    ----------
    n_components : int (default=50)

    Attributes
    ----------
    basis_ : np.array of shape (n_features, n_components)
    """

    def __init__(self, n_components=50):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        d = int(self.n_components)
        _check_dims(X, d)
        Xc = X - X.mean(axis=0)
        _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
        rank = int(np.sum(s > _RANK_RTOL * max(s[0], np.finfo(float).tiny)))
        if rank < d:
            raise RankDeficient(f"centred data has rank {rank} < d={d}")
        self.basis_ = _orient(Vt[:d].T)
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        return check_array(X, dtype=np.float64) @ self.basis_


class PLSSubspace(TransformerMixin, BaseEstimator):
    """Discriminative subspace from PLS2 against a one-hot identity response.

    Each component's X-weight is the dominant left singular vector of
    ``X_k^T Y`` (the fixed point of the NIPALS inner loop), after which X is
    deflated on the component's score. Y needs no deflation because
    ``X_k^T Y_k == X_k^T Y`` once X is deflated. The weights are finally
    orthonormalised by QR.

    Parameters
    ----------
    n_components : int (default=50)

    Attributes
    ----------
    weights_ : np.array of shape (n_features, n_components)
        Raw PLS X-weights.
    basis_ : np.array of shape (n_features, n_components)
        Orthonormalised weights.
    classes_ : np.array
    """

    def __init__(self, n_components=50):
        self.n_components = n_components

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} samples but {y.shape[0]} labels")
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise SingleClass("PLS needs at least two distinct labels")
        d = int(self.n_components)
        _check_dims(X, d)

        Y = np.zeros((X.shape[0], self.classes_.size))
        Y[np.arange(X.shape[0]), codes] = 1.0
        Y -= Y.mean(axis=0)
        Xk = X - X.mean(axis=0)

        W = np.empty((X.shape[1], d))
        first = None
        for k in range(d):
            C = Xk.T @ Y
            U, s, _ = np.linalg.svd(C, full_matrices=False)
            if first is None:
                first = s[0]
            if s[0] <= _RANK_RTOL * first:
                raise RankDeficient(f"cross-covariance exhausted after {k} PLS components")
            w = U[:, 0]
            w = w * (1.0 if w[np.argmax(np.abs(w))] >= 0 else -1.0)
            t = Xk @ w
            p = Xk.T @ t / (t @ t)
            Xk = Xk - np.outer(t, p)
            W[:, k] = w
        self.weights_ = W
        Q, R = np.linalg.qr(W)
        # keep QR columns pointing along the raw weights
        Q = Q * np.where(np.diag(R) < 0, -1.0, 1.0)
        self.basis_ = Q
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        return check_array(X, dtype=np.float64) @ self.basis_


def pca_subspace(X, d: int, camera_id: str = "") -> Subspace:
    return Subspace(PCASubspace(d).fit(X).basis_, "pca", camera_id)


def pls_subspace(X, labels, d: int, camera_id: str = "") -> Subspace:
    return Subspace(PLSSubspace(d).fit(X, labels).basis_, "pls", camera_id)


def orthogonal_complement(sub: Subspace | np.ndarray) -> np.ndarray:
    """Orthonormal basis (``D x (D-d)``) of the complement of ``sub``."""
    B = sub.basis if isinstance(sub, Subspace) else np.asarray(sub, dtype=np.float64)
    D, d = B.shape
    Q, _ = np.linalg.qr(B, mode="complete")
    comp = Q[:, d:]
    # one re-orthogonalisation pass guards against a slightly non-orthonormal B
    comp = comp - B @ (B.T @ comp)
    comp, _ = np.linalg.qr(comp)
    return comp


def principal_angles(s1: Subspace | np.ndarray, s2: Subspace | np.ndarray) -> np.ndarray:
    """Principal angles in ascending order, radians in ``[0, pi/2]``."""
    B1 = s1.basis if isinstance(s1, Subspace) else np.asarray(s1, dtype=np.float64)
    B2 = s2.basis if isinstance(s2, Subspace) else np.asarray(s2, dtype=np.float64)
    if B1.shape != B2.shape:
        raise DimensionMismatch(f"subspace shapes differ: {B1.shape} vs {B2.shape}")
    sv = np.linalg.svd(B1.T @ B2, compute_uv=False)
    return np.sort(np.arccos(np.clip(sv, 0.0, 1.0)))
