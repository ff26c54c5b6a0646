"""Geodesic flow between two subspaces and its integrated kernel.

The flow from a source basis ``Xs`` to a target basis ``Xt`` is

    psi(y) = Xs U1 diag(cos(y theta)) - Xs_o U2 diag(sin(y theta)),

with ``Xs^T Xt = U1 diag(cos theta) P^T`` and
``Xs_o^T Xt = -U2 diag(sin theta) P^T``. :func:`gfk_closed_form` evaluates
the block formula whose middle matrix has diagonal blocks
``1 +/- sin(2 theta)/(2 theta)`` and off-diagonal ``(cos(2 theta) - 1)/(2 theta)``.
That matrix is exactly twice ``int_0^1 psi psi^T dy``, so the closed form
equals the numerical integral (:func:`gfk_quadrature_oracle`) times
:data:`GFK_SCALE`. Every ranking built on the kernel is scale invariant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DimensionMismatch, OutOfRange, SubspaceTooLarge
from .subspace import Subspace, orthogonal_complement, pca_subspace, pls_subspace

__all__ = [
    "GFK_SCALE",
    "Kernel",
    "FlowDecomposition",
    "GeodesicFlowKernel",
    "flow_decompose",
    "geodesic_flow",
    "gfk_closed_form",
    "gfk_quadrature_oracle",
    "fit_scale_constant",
    "kernel_distance",
]

# closed form / integral ratio implied by the block matrix above
GFK_SCALE = 2.0

_SIN_EPS = 1e-8


@dataclass(frozen=True)
class Kernel:
    matrix: np.ndarray
    source_camera: str = ""
    target_camera: str = ""
    kind: str = "gfk"

    def scaled(self, c: float) -> "Kernel":
        return Kernel(self.matrix * c, self.source_camera, self.target_camera, self.kind)

    def to_json(self) -> dict:
        return {"kind": self.kind, "source": self.source_camera,
                "target": self.target_camera, "matrix": self.matrix.tolist()}

    @classmethod
    def from_json(cls, obj) -> "Kernel":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(np.asarray(obj["matrix"], dtype=np.float64),
                   obj["source"], obj["target"], obj["kind"])


@dataclass(frozen=True)
class FlowDecomposition:
    U1: np.ndarray
    U2: np.ndarray
    P: np.ndarray
    angles: np.ndarray
    complement: np.ndarray


def _basis(s):
    return s.basis if isinstance(s, Subspace) else np.asarray(s, dtype=np.float64)


def _completion(U2, fill, rng_cols):
    """Replace columns ``fill`` of ``U2`` with an orthonormal completion."""
    keep = [j for j in range(U2.shape[1]) if j not in fill]
    known = U2[:, keep]
    Q, _ = np.linalg.qr(known if known.size else np.zeros((U2.shape[0], 0)),
                        mode="complete")
    free = Q[:, known.shape[1]:]
    U2 = U2.copy()
    U2[:, fill] = free @ rng_cols if rng_cols is not None else free[:, :len(fill)]
    return U2


def flow_decompose(source, target, completion=None) -> FlowDecomposition:
    """Joint SVD pair defining the geodesic from ``source`` to ``target``.

    Parameters
    ----------
    source, target : Subspace or array of shape (D, d)
    completion : array of shape (D - d - m, k), optional
        Mixing applied to the free columns when filling the ``k``
        underdetermined columns of ``U2`` (angles with ``sin < 1e-8``). Only
        used to check that the kernel does not depend on this choice.
    """
    Xs, Xt = _basis(source), _basis(target)
    if Xs.shape != Xt.shape:
        raise DimensionMismatch(f"subspace shapes differ: {Xs.shape} vs {Xt.shape}")
    D, d = Xs.shape
    if d > D - d:
        raise SubspaceTooLarge(f"d={d} exceeds complement dimension D-d={D - d}")
    Xs_o = orthogonal_complement(Xs)

    U1, cos_t, Pt = np.linalg.svd(Xs.T @ Xt)
    P = Pt.T
    BP = Xs_o.T @ Xt @ P  # = -U2 diag(sin theta)
    sin_t = np.linalg.norm(BP, axis=0)
    angles = np.arctan2(sin_t, np.clip(cos_t, 0.0, None))

    U2 = np.zeros((D - d, d))
    ok = sin_t > _SIN_EPS
    U2[:, ok] = -BP[:, ok] / sin_t[ok]
    fill = [j for j in range(d) if not ok[j]]
    if fill:
        U2 = _completion(U2, fill, completion)
    order = np.argsort(angles, kind="stable")
    return FlowDecomposition(U1[:, order], U2[:, order], P[:, order],
                             angles[order], Xs_o)


def _flow(y, decomp, Xs):
    return (Xs @ decomp.U1 * np.cos(y * decomp.angles)
            - decomp.complement @ decomp.U2 * np.sin(y * decomp.angles))


def geodesic_flow(y: float, decomp: FlowDecomposition, source, target=None) -> np.ndarray:
    """Point ``psi(y)`` on the geodesic, a ``D x d`` orthonormal matrix.

    The end points return the bases themselves: ``psi(0)`` is the source
    basis and ``psi(1)`` the target basis when ``target`` is given
    (otherwise the interior formula, which spans the same subspace).
    """
    if not 0.0 <= y <= 1.0:
        raise OutOfRange(f"y={y} outside [0, 1]")
    Xs = _basis(source)
    if y == 0.0:
        return Xs.copy()
    if y == 1.0 and target is not None:
        return _basis(target).copy()
    return _flow(y, decomp, Xs)


def _block_weights(theta):
    """Diagonals of the closed-form middle matrix with their theta -> 0 limits."""
    theta = np.asarray(theta, dtype=np.float64)
    small = theta < 1e-12
    t2 = np.where(small, 1.0, 2.0 * theta)
    sinc = np.where(small, 1.0, np.sin(2.0 * theta) / t2)
    off = np.where(small, 0.0, (np.cos(2.0 * theta) - 1.0) / t2)
    return 1.0 + sinc, off, 1.0 - sinc


def gfk_closed_form(source, target, completion=None) -> Kernel:
    """Closed-form geodesic flow kernel (``D x D``, symmetric PSD)."""
    decomp = flow_decompose(source, target, completion)
    Xs = _basis(source)
    g11, g12, g22 = _block_weights(decomp.angles)
    A = Xs @ decomp.U1
    B = decomp.complement @ decomp.U2
    K = (A * g11) @ A.T + (A * g12) @ B.T + (B * g12) @ A.T + (B * g22) @ B.T
    K = 0.5 * (K + K.T)
    return Kernel(K, getattr(source, "camera_id", ""), getattr(target, "camera_id", ""), "gfk")


def gfk_quadrature_oracle(source, target, n_points: int = 10_000, chunk: int = 2048) -> Kernel:
    """Composite trapezoid estimate of ``int_0^1 psi(y) psi(y)^T dy``.

    Evaluates the flow at every node and sums the weighted outer products;
    shares nothing with the closed-form block formula.
    """
    if n_points < 1000:
        raise OutOfRange("n_points must be >= 1000")
    decomp = flow_decompose(source, target)
    Xs = _basis(source)
    D = Xs.shape[0]
    ys = np.linspace(0.0, 1.0, n_points + 1)
    w = np.full(ys.shape, 1.0 / n_points)
    w[0] = w[-1] = 0.5 / n_points
    A = Xs @ decomp.U1
    B = decomp.complement @ decomp.U2
    K = np.zeros((D, D))
    for start in range(0, ys.size, chunk):
        y = ys[start:start + chunk, None]
        sw = np.sqrt(w[start:start + chunk, None])
        # psi(y) for every node in the chunk, scaled by sqrt(weight): (D, m, d)
        Psi = (A[:, None, :] * (np.cos(y * decomp.angles) * sw)
               - B[:, None, :] * (np.sin(y * decomp.angles) * sw))
        Psi = Psi.reshape(D, -1)
        K += Psi @ Psi.T
    K = 0.5 * (K + K.T)
    return Kernel(K, getattr(source, "camera_id", ""), getattr(target, "camera_id", ""), "gfk")


def fit_scale_constant(K_closed, K_oracle) -> tuple[float, float]:
    """Least-squares constant ``c`` with ``K_closed ~ c K_oracle`` and the relative residual."""
    A = K_closed.matrix if isinstance(K_closed, Kernel) else np.asarray(K_closed)
    B = K_oracle.matrix if isinstance(K_oracle, Kernel) else np.asarray(K_oracle)
    c = float(np.sum(A * B) / np.sum(B * B))
    rel = float(np.linalg.norm(A - c * B) / np.linalg.norm(c * B))
    return c, rel


def kernel_distance(K, X_a, X_b) -> np.ndarray:
    """Pairwise ``x^T K x + y^T K y - 2 x^T K y`` for rows of ``X_a`` and ``X_b``."""
    M = K.matrix if isinstance(K, Kernel) else np.asarray(K, dtype=np.float64)
    X_a = np.atleast_2d(np.asarray(X_a, dtype=np.float64))
    X_b = np.atleast_2d(np.asarray(X_b, dtype=np.float64))
    if X_a.shape[1] != M.shape[0] or X_b.shape[1] != M.shape[0]:
        raise DimensionMismatch(
            f"features of width {X_a.shape[1]}/{X_b.shape[1]} vs kernel {M.shape}")
    KA = X_a @ M
    qa = np.einsum("ij,ij->i", KA, X_a)
    qb = np.einsum("ij,ij->i", X_b @ M, X_b)
    return qa[:, None] + qb[None, :] - 2.0 * (KA @ X_b.T)


class GeodesicFlowKernel(TransformerMixin, BaseEstimator):
    """GFK between a labelled source (PLS basis) and an unlabelled target (PCA basis).

    Parameters
    ----------
    n_components : int (default=50)
        Subspace dimension ``d``.

    Attributes
    ----------
    kernel_ : np.array of shape (n_features, n_features)
    source_subspace_, target_subspace_ : Subspace
    """

    def __init__(self, n_components=50):
        self.n_components = n_components

    def fit(self, X_source, y_source, X_target):
        X_source = check_array(X_source, dtype=np.float64)
        X_target = check_array(X_target, dtype=np.float64)
        self.source_subspace_ = pls_subspace(X_source, y_source, self.n_components)
        self.target_subspace_ = pca_subspace(X_target, self.n_components)
        self.kernel_ = gfk_closed_form(self.source_subspace_, self.target_subspace_).matrix
        return self

    def transform(self, X):
        """Embed rows so that Euclidean geometry matches the kernel: ``X L`` with ``K = L L^T``."""
        check_is_fitted(self, "kernel_")
        w, V = np.linalg.eigh(self.kernel_)
        L = V * np.sqrt(np.clip(w, 0.0, None))
        return check_array(X, dtype=np.float64) @ L

    def pairwise_distances(self, X_a, X_b):
        check_is_fitted(self, "kernel_")
        return kernel_distance(self.kernel_, X_a, X_b)
