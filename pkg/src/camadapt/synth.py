"""Synthetic camera networks with planted appearance shifts.

Each identity ``p`` has a latent code ``z_p ~ N(0, I_m)``. Camera ``c``
observes

    x = R(angle_c) (A z_p + b) + noise,

where ``A`` is a fixed ``D x m`` base map, ``b`` a fixed offset and
``R(angle)`` a rotation of the plane spanned by feature axes 0 and 1. The
base map sends the first (strongest) latent axis to feature axis 0 and keeps
axis 1 out of its range, so the rotation tilts every camera's signal
subspace by exactly its angle; the offset sits on axis 1, so camera means
move along the same arc. Cameras with equal angles are statistically
identical, and the planted divergence between two cameras is the absolute
angle difference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import NetworkDataset, Sample, make_rng, write_dataset
from .exceptions import InvalidConfig

__all__ = ["SynthConfig", "GroundTruth", "generate_network", "write_network"]


@dataclass(frozen=True)
class SynthConfig:
    n_cameras: int = 4
    n_identities: int = 50
    images_per_identity: int = 5
    latent_dim: int = 8
    feature_dim: int = 20
    shift_angles: tuple = (0.0, 0.2, 0.5, 0.9)
    noise_sigma: float = 0.05
    seed: int = 0
    # base-map column scales run linearly from latent_scale down to 1
    latent_scale: float = 3.0
    offset: float = 6.0

    def __post_init__(self):
        object.__setattr__(self, "shift_angles", tuple(float(a) for a in self.shift_angles))

    def validate(self):
        for name in ("n_cameras", "n_identities", "images_per_identity",
                     "latent_dim", "feature_dim"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be positive")
        if self.feature_dim < self.latent_dim or self.feature_dim < 2:
            raise InvalidConfig("feature_dim must be >= max(latent_dim, 2)")
        if len(self.shift_angles) != self.n_cameras:
            raise InvalidConfig(
                f"{len(self.shift_angles)} shift angles for {self.n_cameras} cameras")
        if any(not 0.0 <= a <= math.pi / 2 for a in self.shift_angles):
            raise InvalidConfig("shift angles must lie in [0, pi/2]")
        if self.noise_sigma < 0:
            raise InvalidConfig("noise_sigma must be non-negative")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidConfig("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class GroundTruth:
    cameras: tuple
    angles: tuple
    divergence: np.ndarray = field(repr=False)
    base_map: np.ndarray = field(repr=False)
    offset: np.ndarray = field(repr=False)

    def rotation(self, camera_id: str) -> np.ndarray:
        return _plane_rotation(self.base_map.shape[0], self.angles[self.cameras.index(camera_id)])

    def nearest(self, camera_id: str, among) -> str:
        """Camera in ``among`` with the smallest planted divergence (ties: by id)."""
        i = self.cameras.index(camera_id)
        return min(among, key=lambda c: (self.divergence[i, self.cameras.index(c)], c))

    def to_json(self) -> dict:
        return {"cameras": list(self.cameras), "angles": list(self.angles),
                "divergence": self.divergence.tolist()}


def _plane_rotation(D, angle):
    R = np.eye(D)
    c, s = math.cos(angle), math.sin(angle)
    R[0, 0], R[0, 1], R[1, 0], R[1, 1] = c, -s, s, c
    return R


def _base_map(config, rng):
    D, m = config.feature_dim, config.latent_dim
    scales = np.linspace(config.latent_scale, 1.0, m) if m > 1 else np.array([config.latent_scale])
    A = np.zeros((D, m))
    A[0, 0] = 1.0
    if m > 1:
        # remaining latent axes land in coordinates 2.. (or 1.. when D == m)
        start = 2 if D >= m + 1 else 1
        Q, _ = np.linalg.qr(rng.standard_normal((D - start, m - 1)))
        A[start:, 1:] = Q
    return A * scales


def _ids(prefix, n):
    width = len(str(max(n - 1, 0)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def generate_network(config: SynthConfig) -> tuple[NetworkDataset, GroundTruth]:
    """Draw a dataset and its planted ground truth; a pure function of ``config``."""
    config.validate()
    D = config.feature_dim
    rng = make_rng(config.seed, "synth")
    A = _base_map(config, rng)
    b = np.zeros(D)
    b[1] = config.offset
    Z = rng.standard_normal((config.n_identities, config.latent_dim))
    clean = Z @ A.T + b

    cams = _ids("c", config.n_cameras)
    people = _ids("p", config.n_identities)
    images = _ids("i", config.images_per_identity)
    samples = []
    for cam, angle in zip(cams, config.shift_angles):
        R = _plane_rotation(D, angle)
        X = clean @ R.T
        noise = rng.standard_normal((config.n_identities, config.images_per_identity, D))
        for p, pid in enumerate(people):
            for k, iid in enumerate(images):
                samples.append(Sample(cam, pid, iid, X[p] + config.noise_sigma * noise[p, k]))

    angles = np.asarray(config.shift_angles)
    truth = GroundTruth(tuple(cams), tuple(config.shift_angles),
                        np.abs(angles[:, None] - angles[None, :]), A, b)
    return NetworkDataset(D, cams, samples), truth


def write_network(config: SynthConfig, directory) -> Path:
    """Write the dataset files plus ``ground_truth.json``; returns the manifest path."""
    dataset, truth = generate_network(config)
    directory = Path(directory)
    manifest = write_dataset(dataset, directory)
    with (directory / "ground_truth.json").open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(truth.to_json(), fh, indent=2)
        fh.write("\n")
    return manifest
