"""Multi-camera feature datasets: on-disk formats, validation, reduction, splits.

On-disk layout
--------------
A dataset is a JSON manifest::

    {"dimension": 4, "cameras": [{"id": "cam1", "file": "cam1.csv"}, ...]}

where each camera file is a UTF-8 CSV with header
``person_id,image_id,f0,...,f{D-1}``. Feature values are written with
``repr(float)`` (shortest round-trip decimal) so a write/read cycle is
bit-exact.

Randomness
----------
All sampling goes through :func:`make_rng`, a NumPy ``Generator`` backed by
the PCG64 bit generator and seeded through ``SeedSequence`` with an integer
key (global seed plus stream identifiers). PCG64 is a fixed, documented
algorithm, so splits are identical across platforms.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import (
    DimensionMismatch,
    DuplicateSampleKey,
    InvalidConfig,
    MissingFile,
    NonFiniteFeature,
    NotEnoughIdentities,
    RankDeficient,
)

__all__ = [
    "Sample",
    "NetworkDataset",
    "SplitSpec",
    "Split",
    "LinearReducer",
    "PCAReducer",
    "load_dataset",
    "write_dataset",
    "fit_pca_reducer",
    "make_splits",
    "make_rng",
    "stream_key",
]


def stream_key(*parts) -> int:
    """Stable 32-bit key for a string/int token, used to derive RNG streams."""
    text = "\x1f".join(str(p) for p in parts)
    return zlib.crc32(text.encode("utf-8"))


def make_rng(seed: int, *stream) -> np.random.Generator:
    """PCG64 generator for ``seed`` and an optional stream path of ints/strings."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    entropy.extend(p if isinstance(p, int) else stream_key(p) for p in stream)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class Sample:
    camera_id: str
    person_id: str
    image_id: str
    features: np.ndarray = field(repr=False)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.camera_id, self.person_id, self.image_id)


@dataclass(frozen=True)
class CameraBlock:
    """Column view of one camera's samples (arrays share row order)."""

    camera_id: str
    person_ids: np.ndarray
    image_ids: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.person_ids)

    def select(self, mask) -> "CameraBlock":
        mask = np.asarray(mask)
        return CameraBlock(self.camera_id, self.person_ids[mask],
                           self.image_ids[mask], self.features[mask])


class NetworkDataset:
    """Validated, immutable collection of samples from a camera network.

    Parameters
    ----------
    dimension : int
        Feature length ``D`` shared by every sample.
    cameras : sequence of str
        Camera ids in network order.
    samples : iterable of Sample
    """

    def __init__(self, dimension: int, cameras: Sequence[str],
                 samples: Iterable[Sample]):
        if int(dimension) <= 0:
            raise InvalidConfig("dimension must be positive")
        self.dimension = int(dimension)
        self.cameras = tuple(str(c) for c in cameras)
        if len(set(self.cameras)) != len(self.cameras):
            raise InvalidConfig(f"duplicate camera ids in {self.cameras}")
        known = set(self.cameras)
        seen = set()
        checked = []
        for s in samples:
            feats = np.asarray(s.features, dtype=np.float64)
            if feats.ndim != 1 or feats.shape[0] != self.dimension:
                raise DimensionMismatch(
                    f"sample {s.key} has {feats.size} features, expected {self.dimension}")
            if not np.all(np.isfinite(feats)):
                raise NonFiniteFeature(f"sample {s.key} has non-finite features")
            if s.camera_id not in known:
                raise InvalidConfig(f"sample {s.key} references unknown camera {s.camera_id!r}")
            if s.key in seen:
                raise DuplicateSampleKey(f"duplicate sample key {s.key}")
            seen.add(s.key)
            feats.setflags(write=False)
            checked.append(Sample(s.camera_id, s.person_id, s.image_id, feats))
        self.samples = tuple(checked)

    def __len__(self) -> int:
        return len(self.samples)

    def __repr__(self) -> str:
        return (f"NetworkDataset(dimension={self.dimension}, cameras={list(self.cameras)}, "
                f"n_samples={len(self.samples)})")

    @cached_property
    def _blocks(self) -> dict[str, CameraBlock]:
        blocks = {}
        for cam in self.cameras:
            rows = [s for s in self.samples if s.camera_id == cam]
            feats = (np.vstack([s.features for s in rows]) if rows
                     else np.empty((0, self.dimension)))
            feats.setflags(write=False)
            blocks[cam] = CameraBlock(
                cam,
                np.array([s.person_id for s in rows], dtype=object),
                np.array([s.image_id for s in rows], dtype=object),
                feats,
            )
        return blocks

    def block(self, camera_id: str) -> CameraBlock:
        try:
            return self._blocks[camera_id]
        except KeyError:
            raise InvalidConfig(
                f"unknown camera {camera_id!r}; valid ids: {list(self.cameras)}") from None

    @cached_property
    def person_ids(self) -> tuple[str, ...]:
        return tuple(sorted({s.person_id for s in self.samples}))

    def with_features(self, transform, dimension: int) -> "NetworkDataset":
        """Return a dataset whose feature vectors are mapped through ``transform``."""
        feats = transform(np.vstack([s.features for s in self.samples]))
        return NetworkDataset(
            dimension, self.cameras,
            (Sample(s.camera_id, s.person_id, s.image_id, f)
             for s, f in zip(self.samples, feats)))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _parse_row(values, dimension, where):
    if len(values) != dimension:
        raise DimensionMismatch(f"{where}: {len(values)} feature values, expected {dimension}")
    try:
        feats = np.array([float(v) for v in values], dtype=np.float64)
    except ValueError as exc:
        raise InvalidConfig(f"{where}: {exc}") from None
    if not np.all(np.isfinite(feats)):
        raise NonFiniteFeature(f"{where}: non-finite feature value")
    return feats


def load_dataset(manifest_path) -> NetworkDataset:
    """Load and validate a dataset from its JSON manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    with manifest_path.open(encoding="utf-8") as fh:
        manifest = json.load(fh)
    try:
        dimension = int(manifest["dimension"])
        entries = [(str(c["id"]), str(c["file"])) for c in manifest["cameras"]]
    except (KeyError, TypeError) as exc:
        raise InvalidConfig(f"{manifest_path}: malformed manifest ({exc})") from None

    samples = []
    for cam, rel in entries:
        path = manifest_path.parent / rel
        if not path.is_file():
            raise MissingFile(f"camera file not found: {path}")
        # newline="" lets csv handle both LF and CRLF
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:2] != ["person_id", "image_id"]:
                raise InvalidConfig(f"{path}: header must start with person_id,image_id")
            if len(header) - 2 != dimension:
                raise DimensionMismatch(
                    f"{path}: header has {len(header) - 2} feature columns, expected {dimension}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                feats = _parse_row(row[2:], dimension, f"{path}:{lineno}")
                samples.append(Sample(cam, row[0], row[1], feats))
    return NetworkDataset(dimension, [c for c, _ in entries], samples)


def write_dataset(dataset: NetworkDataset, directory, manifest_name: str = "manifest.json") -> Path:
    """Write ``dataset`` as manifest + one CSV per camera; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = ["person_id", "image_id"] + [f"f{i}" for i in range(dataset.dimension)]
    cams = []
    for cam in dataset.cameras:
        fname = f"{cam}.csv"
        block = dataset.block(cam)
        with (directory / fname).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for pid, iid, feats in zip(block.person_ids, block.image_ids, block.features):
                writer.writerow([pid, iid] + [repr(float(v)) for v in feats])
        cams.append({"id": cam, "file": fname})
    manifest_path = directory / manifest_name
    with manifest_path.open("w", encoding="utf-8", newline="\n") as fh:
        json.dump({"dimension": dataset.dimension, "cameras": cams}, fh, indent=2)
        fh.write("\n")
    return manifest_path


# ---------------------------------------------------------------------------
# PCA reduction
# ---------------------------------------------------------------------------

def _fix_signs(columns: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(columns), axis=0)
    signs = np.sign(columns[idx, np.arange(columns.shape[1])])
    signs[signs == 0] = 1.0
    return columns * signs


@dataclass(frozen=True)
class LinearReducer:
    """Affine map ``x -> (x - mean) @ projection``."""

    mean: np.ndarray
    projection: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.projection.shape[1]

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean.shape[0]:
            raise DimensionMismatch(
                f"input has {X.shape[-1]} features, reducer expects {self.mean.shape[0]}")
        return (X - self.mean) @ self.projection

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "projection": self.projection.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "LinearReducer":
        return cls(np.asarray(obj["mean"], dtype=np.float64),
                   np.asarray(obj["projection"], dtype=np.float64))


class PCAReducer(TransformerMixin, BaseEstimator):
    """Principal component projection onto ``n_components`` directions.

    Parameters
    ----------
    n_components : int (default=100)
        Output dimension.
    rtol : float (default=1e-10)
        Singular values below ``rtol * s_max`` count as zero when checking rank.

    Attributes
    ----------
    mean_ : np.array of shape (n_features,)
    components_ : np.array of shape (n_features, n_components)
        Orthonormal columns ordered by decreasing explained variance.
    explained_variance_ : np.array of shape (n_components,)
    """

    def __init__(self, n_components=100, rtol=1e-10):
        self.n_components = n_components
        self.rtol = rtol

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n, D = X.shape
        k = int(self.n_components)
        if k <= 0 or k > min(D, n):
            raise RankDeficient(f"n_components={k} not in [1, min({D}, {n})]")
        self.mean_ = X.mean(axis=0)
        _, s, Vt = np.linalg.svd(X - self.mean_, full_matrices=False)
        # rank test; a full square rotation (k == D) only needs the basis, not variance
        rank = int(np.sum(s > self.rtol * max(s[0], np.finfo(float).tiny))) if s.size else 0
        if k > rank and k < D:
            raise RankDeficient(f"data has rank {rank} < n_components={k}")
        if k == D and Vt.shape[0] < D:
            raise RankDeficient(f"need at least {D} samples for a full rotation")
        self.components_ = _fix_signs(Vt[:k].T)
        self.explained_variance_ = s[:k] ** 2 / max(n - 1, 1)
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        return (X - self.mean_) @ self.components_

    def to_reducer(self) -> LinearReducer:
        check_is_fitted(self, "components_")
        return LinearReducer(self.mean_.copy(), self.components_.copy())


def fit_pca_reducer(dataset: NetworkDataset, camera_subset, out_dim: int,
                    person_ids=None) -> LinearReducer:
    """Fit a PCA reducer on the samples of ``camera_subset``.

    ``person_ids`` optionally restricts fitting to those identities (the
    training identities of a split).
    """
    camera_subset = list(camera_subset)
    if not camera_subset:
        raise InvalidConfig("camera_subset must be non-empty")
    rows = []
    for cam in camera_subset:
        block = dataset.block(cam)
        if person_ids is not None:
            block = block.select(np.isin(block.person_ids, list(person_ids)))
        rows.append(block.features)
    X = np.vstack(rows)
    return PCAReducer(n_components=out_dim).fit(X).to_reducer()


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    train_fraction: float = 0.5
    images_per_identity: int = 5
    trials: int = 10

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidConfig("train_fraction must lie in (0, 1)")
        if self.images_per_identity < 1 or self.trials < 1:
            raise InvalidConfig("images_per_identity and trials must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidConfig("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Split:
    trial_index: int
    train_ids: frozenset
    test_ids: frozenset
    # (person_id, camera_id) -> sorted tuple of image ids
    selected_images: dict = field(repr=False)

    def block(self, dataset: NetworkDataset, camera_id: str, part: str) -> CameraBlock:
        """Selected samples of ``camera_id`` for ``part`` in {'train', 'test'}."""
        ids = self.train_ids if part == "train" else self.test_ids
        block = dataset.block(camera_id)
        keep = np.array([
            pid in ids and iid in self.selected_images.get((pid, camera_id), ())
            for pid, iid in zip(block.person_ids, block.image_ids)
        ], dtype=bool)
        return block.select(keep)


def make_splits(dataset: NetworkDataset, spec: SplitSpec) -> list[Split]:
    """Identity-disjoint train/test splits, one per trial.

    Identities are sorted, permuted by the trial's PCG64 stream, and the
    first ``floor(train_fraction * n)`` go to training. Per identity and
    camera, ``min(images_per_identity, available)`` images are drawn.
    """
    people = dataset.person_ids
    n = len(people)
    if n < 2:
        raise NotEnoughIdentities(f"need at least 2 identities, found {n}")
    n_train = math.floor(spec.train_fraction * n)
    n_train = min(max(n_train, 1), n - 1)

    images = {}
    for s in dataset.samples:
        images.setdefault((s.person_id, s.camera_id), []).append(s.image_id)
    groups = sorted((k, sorted(v)) for k, v in images.items())

    splits = []
    for t in range(spec.trials):
        rng = make_rng(spec.seed, "split", t)
        order = rng.permutation(n)
        train = frozenset(people[i] for i in order[:n_train])
        test = frozenset(people[i] for i in order[n_train:])
        selected = {}
        for key, imgs in groups:
            if len(imgs) <= spec.images_per_identity:
                chosen = imgs
            else:
                idx = rng.choice(len(imgs), size=spec.images_per_identity, replace=False)
                chosen = sorted(imgs[i] for i in idx)
            selected[key] = tuple(chosen)
        splits.append(Split(t, train, test, selected))
    return splits
