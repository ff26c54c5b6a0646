"""Inserting a new camera: best-source discovery and transitive kernels.

A target camera contributes features only. :class:`UnlabeledView` carries a
camera id and a feature matrix and nothing else, so no code path in this
module can read target identities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .exceptions import (
    DimensionMismatch,
    EmptyInput,
    MissingKernel,
    MissingMetric,
    NoSources,
    NoTargets,
)
from .gfk import Kernel, gfk_closed_form, kernel_distance
from .metric import Metric
from .subspace import Subspace, pca_subspace, pls_subspace

__all__ = [
    "UnlabeledView",
    "LabeledView",
    "SourceRanking",
    "strip_labels",
    "camera_pair_distance",
    "discover_best_source",
    "transitive_kernel",
    "common_best_source",
    "assemble_network_kernels",
    "pair_key",
]


@dataclass(frozen=True)
class UnlabeledView:
    camera_id: str
    features: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class LabeledView:
    camera_id: str
    features: np.ndarray = field(repr=False)
    person_ids: np.ndarray = field(repr=False)

    def unlabeled(self) -> UnlabeledView:
        return UnlabeledView(self.camera_id, self.features)


def strip_labels(camera_id: str, features) -> UnlabeledView:
    return UnlabeledView(camera_id, np.asarray(features, dtype=np.float64))


def pair_key(a: str, b: str) -> tuple[str, str]:
    """Unordered camera pair as a sorted tuple."""
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class SourceRanking:
    target_camera: str
    entries: tuple  # ((source_camera, avg_distance), ...) ascending

    @property
    def best_source(self) -> str:
        return self.entries[0][0]

    @property
    def sources(self) -> list[str]:
        return [s for s, _ in self.entries]

    def distance(self, source: str) -> float:
        return dict(self.entries)[source]

    def to_json(self) -> dict:
        return {"target": self.target_camera, "best": self.best_source,
                "entries": [{"source": s, "distance": float(d)} for s, d in self.entries]}

    @classmethod
    def from_json(cls, obj) -> "SourceRanking":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(obj["target"], tuple((e["source"], float(e["distance"])) for e in obj["entries"]))


def _rank(target, distances: Mapping[str, float]) -> SourceRanking:
    entries = sorted(distances.items(), key=lambda kv: (kv[1], kv[0]))
    return SourceRanking(target, tuple(entries))


def camera_pair_distance(K, source_features, target_features) -> float:
    """Mean of the kernel distance matrix between two cameras' samples."""
    Xs = np.atleast_2d(np.asarray(source_features, dtype=np.float64))
    Xt = np.atleast_2d(np.asarray(target_features, dtype=np.float64))
    if Xs.size == 0 or Xt.size == 0:
        raise EmptyInput("camera_pair_distance needs samples on both sides")
    return float(np.mean(kernel_distance(K, Xs, Xt)))


def discover_best_source(sources: Sequence[LabeledView], target: UnlabeledView, d: int,
                         target_subspace: Subspace | None = None):
    """Rank installed cameras by average kernel distance to a new camera.

    Each source gets a PLS basis from its labelled samples; the target gets
    a PCA basis from its unlabelled samples unless ``target_subspace`` is
    supplied (e.g. a PLS basis for semi-supervised adaptation). Ties in the
    distance are broken by camera id.

    Returns
    -------
    ranking : SourceRanking
    kernels : dict
        ``source_camera -> Kernel`` for every source.
    """
    if not sources:
        raise NoSources("at least one installed camera is required")
    if not isinstance(target, UnlabeledView):
        raise TypeError("target must be an UnlabeledView; strip labels before calling")
    if target_subspace is None:
        target_subspace = pca_subspace(target.features, d, target.camera_id)
    kernels, distances = {}, {}
    for src in sorted(sources, key=lambda s: s.camera_id):
        sub = pls_subspace(src.features, src.person_ids, d, src.camera_id)
        K = gfk_closed_form(sub, target_subspace)
        kernels[src.camera_id] = K
        distances[src.camera_id] = camera_pair_distance(K, src.features, target.features)
    return _rank(target.camera_id, distances), kernels


def transitive_kernel(M: Metric | np.ndarray, K: Kernel | np.ndarray,
                      source: str = "", target: str = "") -> Kernel:
    """Elementwise (Schur) product of a source-to-best metric and a best-to-target kernel."""
    Mm = M.matrix if isinstance(M, Metric) else np.asarray(M, dtype=np.float64)
    Km = K.matrix if isinstance(K, Kernel) else np.asarray(K, dtype=np.float64)
    if Mm.shape != Km.shape:
        raise DimensionMismatch(f"metric {Mm.shape} vs kernel {Km.shape}")
    if not target and isinstance(K, Kernel):
        target = K.target_camera
    return Kernel(Mm * Km, source, target, "transitive")


def common_best_source(sources: Sequence[LabeledView], targets: Sequence[UnlabeledView], d: int,
                       target_subspaces: Mapping[str, Subspace] | None = None):
    """One installed camera serving several new cameras.

    Returns the source with the lowest distance averaged over targets, the
    per-target rankings, and the per-target kernel maps.
    """
    if not sources:
        raise NoSources("at least one installed camera is required")
    if not targets:
        raise NoTargets("at least one new camera is required")
    target_subspaces = target_subspaces or {}
    rankings, kernels = {}, {}
    for tgt in targets:
        r, k = discover_best_source(sources, tgt, d, target_subspaces.get(tgt.camera_id))
        rankings[tgt.camera_id] = r
        kernels[tgt.camera_id] = k
    names = sorted(s.camera_id for s in sources)
    avg = {s: float(np.mean([rankings[t.camera_id].distance(s) for t in targets])) for s in names}
    common = min(names, key=lambda s: (avg[s], s))
    return common, rankings, kernels


def assemble_network_kernels(ranking: SourceRanking, kernels: Mapping[str, Kernel],
                             metrics: Mapping[tuple, Metric], best_source: str | None = None):
    """Scoring object for every camera pair once the ranked target joins the network.

    ``(best, target)`` uses the GFK kernel, every other ``(source, target)``
    the transitive kernel through ``best``, and installed pairs keep their
    learned metric. ``best_source`` overrides the ranking's choice (used
    when several new cameras share one best source). Keys are sorted
    camera-id tuples.
    """
    target = ranking.target_camera
    sources = sorted(ranking.sources)
    best = best_source if best_source is not None else ranking.best_source
    if best not in kernels:
        raise MissingKernel(f"no kernel between {best} and {target}")
    out = {}
    for a, b in combinations(sources, 2):
        key = pair_key(a, b)
        if key not in metrics:
            raise MissingMetric(f"no metric for installed pair {key}")
        out[key] = metrics[key]
    K_best = kernels[best]
    for s in sources:
        if s == best:
            out[pair_key(s, target)] = K_best
        else:
            out[pair_key(s, target)] = transitive_kernel(metrics[pair_key(s, best)], K_best, s, target)
    return out
