"""Pairwise camera-to-camera metric learning (KISSME, LDML) and scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import Diverged, DimensionMismatch, NoSimilarPairs, SingularCovariance

__all__ = [
    "Metric",
    "PairSet",
    "KISSME",
    "LDML",
    "build_pairs",
    "kissme_fit",
    "ldml_fit",
    "psd_clip",
    "mahalanobis",
    "pair_distances",
]


@dataclass(frozen=True)
class Metric:
    matrix: np.ndarray
    source_camera: str = ""
    dest_camera: str = ""
    method: str = "kissme"
    bias: float = 0.0

    def to_json(self) -> dict:
        return {"method": self.method, "source": self.source_camera,
                "dest": self.dest_camera, "bias": float(self.bias),
                "matrix": self.matrix.tolist()}

    @classmethod
    def from_json(cls, obj) -> "Metric":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(np.asarray(obj["matrix"], dtype=np.float64), obj["source"],
                   obj["dest"], obj["method"], float(obj.get("bias", 0.0)))


@dataclass(frozen=True)
class PairSet:
    """Difference vectors ``x_i^A - x_j^B`` of labelled cross-camera pairs."""

    similar_diffs: np.ndarray
    dissimilar_diffs: np.ndarray = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.similar_diffs.shape[1]

    def __repr__(self) -> str:
        return (f"PairSet(n_similar={len(self.similar_diffs)}, "
                f"n_dissimilar={len(self.dissimilar_diffs)})")


def build_pairs(X_a, ids_a, X_b, ids_b, train_ids=None, max_ratio: int = 10,
                rng: np.random.Generator | None = None) -> PairSet:
    """Enumerate similar pairs and (capped) dissimilar pairs across two cameras.

    Every same-identity pair is kept. Cross-identity pairs are kept in full
    when there are at most ``max_ratio`` times as many as similar pairs,
    otherwise exactly ``max_ratio * n_similar`` are drawn without
    replacement with ``rng``.
    """
    X_a = np.asarray(X_a, dtype=np.float64)
    X_b = np.asarray(X_b, dtype=np.float64)
    ids_a = np.asarray(ids_a, dtype=object)
    ids_b = np.asarray(ids_b, dtype=object)
    if X_a.shape[1] != X_b.shape[1]:
        raise DimensionMismatch("cameras have different feature widths")
    if train_ids is not None:
        keep_a = np.isin(ids_a, list(train_ids))
        keep_b = np.isin(ids_b, list(train_ids))
        X_a, ids_a, X_b, ids_b = X_a[keep_a], ids_a[keep_a], X_b[keep_b], ids_b[keep_b]
    if len(X_a) == 0 or len(X_b) == 0:
        raise NoSimilarPairs("one camera has no labelled samples")

    same = ids_a[:, None] == ids_b[None, :]
    ia, ib = np.nonzero(same)
    if ia.size == 0:
        raise NoSimilarPairs("no identity is shared by the two cameras")
    similar = X_a[ia] - X_b[ib]

    da, db = np.nonzero(~same)
    cap = max_ratio * ia.size
    if da.size > cap:
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = np.sort(rng.choice(da.size, size=cap, replace=False))
        da, db = da[pick], db[pick]
    dissimilar = X_a[da] - X_b[db]
    return PairSet(similar, dissimilar)


def psd_clip(matrix) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone by zeroing negative eigenvalues."""
    A = np.asarray(matrix, dtype=np.float64)
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    if w[0] >= 0:
        return A
    w = np.clip(w, 0.0, None)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def _second_moment(diffs):
    return diffs.T @ diffs / diffs.shape[0]


def _regularised_inverse(S, ridge, name):
    D = S.shape[0]
    eps = ridge * np.trace(S) / D
    A = S + eps * np.eye(D)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise SingularCovariance(f"{name} covariance is singular after ridge {eps:g}") from None
    if np.min(np.diag(L)) <= np.sqrt(np.finfo(float).eps) * np.sqrt(max(np.max(np.diag(A)), 0)):
        raise SingularCovariance(f"{name} covariance is numerically singular")
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


class KISSME(BaseEstimator):
    """Metric from the Gaussian likelihood ratio of similar vs dissimilar differences.

    ``M = psd_clip(inv(S_sim) - inv(S_dis))`` with second-moment matrices of
    the difference vectors (no mean subtraction). A ridge of
    ``ridge * trace(S) / D`` is added before each inversion.

    Parameters
    ----------
    ridge : float (default=1e-6)

    Attributes
    ----------
    metric_ : np.array of shape (n_features, n_features)
    """

    def __init__(self, ridge=1e-6):
        self.ridge = ridge

    def fit(self, pairs: PairSet, y=None):
        sim = check_array(pairs.similar_diffs, dtype=np.float64)
        dis = check_array(pairs.dissimilar_diffs, dtype=np.float64)
        if sim.shape[1] != dis.shape[1]:
            raise DimensionMismatch("similar and dissimilar diffs differ in width")
        inv_s = _regularised_inverse(_second_moment(sim), self.ridge, "similar")
        inv_d = _regularised_inverse(_second_moment(dis), self.ridge, "dissimilar")
        self.metric_ = psd_clip(inv_s - inv_d)
        return self

    def score_pairs(self, diffs):
        check_is_fitted(self, "metric_")
        return pair_distances(self.metric_, diffs)


def kissme_fit(pairs: PairSet, ridge: float = 1e-6, source: str = "", dest: str = "") -> Metric:
    return Metric(KISSME(ridge).fit(pairs).metric_, source, dest, "kissme", 0.0)


def pair_distances(M, diffs) -> np.ndarray:
    diffs = np.atleast_2d(np.asarray(diffs, dtype=np.float64))
    return np.einsum("ij,jk,ik->i", diffs, np.asarray(M), diffs)


def _log_likelihood(M, b, X, y):
    # log sigmoid(z) = -logaddexp(0, -z)
    # overflow shows up as a non-finite value, which the caller turns into Diverged
    with np.errstate(over="ignore", invalid="ignore"):
        z = b - pair_distances(M, X)
        return float(-np.mean(y * np.logaddexp(0.0, -z) + (1 - y) * np.logaddexp(0.0, z)))


class LDML(BaseEstimator):
    """Logistic discriminant metric learning.

    Models ``p(similar | x_ij) = sigmoid(b - x_ij^T M x_ij)`` and maximises the
    mean log-likelihood over all pairs by gradient ascent on ``(M, b)``.
    A step that lowers the likelihood is retried with half the step size.

    Parameters
    ----------
    learning_rate : float (default=0.1)
    max_iters : int (default=300)
    tolerance : float (default=1e-5)
        Stop when the gradient norm drops below this value.
    init_bias : float (default=1.0)
        Starting threshold; ``M`` starts at the identity.

    Attributes
    ----------
    metric_ : np.array of shape (n_features, n_features)
    bias_ : float
    log_likelihood_ : list of float
        Objective after each accepted step (first entry is the initial value).
    n_iter_ : int
    """

    def __init__(self, learning_rate=0.1, max_iters=300, tolerance=1e-5, init_bias=1.0):
        self.learning_rate = learning_rate
        self.max_iters = max_iters
        self.tolerance = tolerance
        self.init_bias = init_bias

    def fit(self, pairs: PairSet, y=None):
        sim = check_array(pairs.similar_diffs, dtype=np.float64)
        dis = check_array(pairs.dissimilar_diffs, dtype=np.float64)
        X = np.vstack([sim, dis])
        t = np.concatenate([np.ones(len(sim)), np.zeros(len(dis))])
        D = X.shape[1]

        M, b = np.eye(D), float(self.init_bias)
        ll = _log_likelihood(M, b, X, t)
        if not np.isfinite(ll):
            raise Diverged("initial log-likelihood is not finite")
        trace = [ll]
        lr = float(self.learning_rate)
        for it in range(int(self.max_iters)):
            z = np.clip(b - pair_distances(M, X), -500.0, 500.0)
            r = (t - 1.0 / (1.0 + np.exp(-z))) / len(t)
            grad_b = float(r.sum())
            grad_M = -(X * r[:, None]).T @ X
            if np.sqrt(np.sum(grad_M ** 2) + grad_b ** 2) < self.tolerance:
                break
            accepted = False
            for _ in range(50):
                M_new = M + lr * grad_M
                M_new = 0.5 * (M_new + M_new.T)
                b_new = b + lr * grad_b
                ll_new = _log_likelihood(M_new, b_new, X, t)
                if not np.isfinite(ll_new):
                    raise Diverged(f"log-likelihood became non-finite at step {it}")
                if ll_new >= ll:
                    accepted = True
                    break
                lr *= 0.5
            if not accepted:
                break
            M, b, ll = M_new, b_new, ll_new
            trace.append(ll)
        self.metric_ = M
        self.bias_ = float(b)
        self.log_likelihood_ = trace
        self.n_iter_ = len(trace) - 1
        return self

    def predict_proba_similar(self, diffs):
        check_is_fitted(self, "metric_")
        z = np.clip(self.bias_ - pair_distances(self.metric_, diffs), -500.0, 500.0)
        return 1.0 / (1.0 + np.exp(-z))

    def predict(self, diffs):
        return (self.predict_proba_similar(diffs) >= 0.5).astype(int)


def ldml_fit(pairs: PairSet, learning_rate: float = 0.1, max_iters: int = 300,
             tolerance: float = 1e-5, source: str = "", dest: str = "",
             init_bias: float = 1.0) -> Metric:
    est = LDML(learning_rate, max_iters, tolerance, init_bias).fit(pairs)
    return Metric(est.metric_, source, dest, "ldml", est.bias_)


def mahalanobis(metric: Metric | np.ndarray, x, y) -> float:
    """``(x - y)^T M (x - y)``."""
    M = metric.matrix if isinstance(metric, Metric) else np.asarray(metric, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.shape[0] != M.shape[0]:
        raise DimensionMismatch(f"vectors {x.shape}/{y.shape} vs metric {M.shape}")
    diff = x - y
    return float(diff @ M @ diff)
