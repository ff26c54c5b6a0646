import json
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import spearmanr

from camadapt.dataio import load_dataset
from camadapt.exceptions import InvalidConfig
from camadapt.synth import SynthConfig, generate_network, write_network


def _same_identity_distance(ds, a, b):
    A, B = ds.block(a), ds.block(b)
    assert list(A.person_ids) == list(B.person_ids)
    return float(np.mean(np.sum((A.features - B.features) ** 2, axis=1)))


def test_equal_angles_no_noise_identical():
    cfg = SynthConfig(n_cameras=2, n_identities=10, shift_angles=(0.3, 0.3), noise_sigma=0.0)
    ds, truth = generate_network(cfg)
    assert np.array_equal(ds.block("c0").features, ds.block("c1").features)
    assert truth.divergence[0, 1] == 0.0


def test_nearest_by_divergence():
    cfg = SynthConfig(n_cameras=3, shift_angles=(0.0, 0.1, 0.8))
    _, truth = generate_network(cfg)
    # a target at 0.05 sits between the first two; ties go to the lower id
    cfg4 = SynthConfig(n_cameras=4, shift_angles=(0.0, 0.1, 0.8, 0.05))
    _, t4 = generate_network(cfg4)
    assert t4.nearest("c3", ["c1", "c2"]) == "c1"
    assert truth.divergence[0, 2] == pytest.approx(0.8)


def test_determinism():
    cfg = SynthConfig(seed=11)
    a, _ = generate_network(cfg)
    b, _ = generate_network(cfg)
    assert all(np.array_equal(x.features, y.features) and x.key == y.key
               for x, y in zip(a.samples, b.samples))
    c, _ = generate_network(SynthConfig(seed=12))
    assert not np.array_equal(a.samples[0].features, c.samples[0].features)


@pytest.mark.parametrize("kwargs", [
    dict(shift_angles=(0.0, 0.1)),
    dict(shift_angles=(0.0, 0.1, 0.2, 2.0)),
    dict(noise_sigma=-1.0),
    dict(latent_dim=30),
    dict(n_identities=0),
])
def test_invalid_config(kwargs):
    with pytest.raises(InvalidConfig):
        generate_network(SynthConfig(**kwargs))


def test_distance_tracks_angle_gap():
    angles = (0.0, 0.1, 0.25, 0.45, 0.7, 1.0)
    cfg = SynthConfig(n_cameras=6, n_identities=60, images_per_identity=1,
                      shift_angles=angles, seed=4)
    ds, truth = generate_network(cfg)
    gaps, dists = [], []
    for (i, a), (j, b) in combinations(enumerate(ds.cameras), 2):
        gaps.append(truth.divergence[i, j])
        dists.append(_same_identity_distance(ds, a, b))
    assert spearmanr(gaps, dists).statistic >= 0.9


@given(st.lists(st.floats(0.0, 1.5), min_size=2, max_size=5), st.integers(0, 2 ** 32))
def test_divergence_matrix(angles, seed):
    cfg = SynthConfig(n_cameras=len(angles), n_identities=3, images_per_identity=1,
                      shift_angles=tuple(angles), seed=seed)
    ds, truth = generate_network(cfg)
    a = np.asarray(angles)
    assert np.allclose(truth.divergence, np.abs(a[:, None] - a[None]))
    assert len(ds) == len(angles) * 3


def test_write_network(tmp_path):
    cfg = SynthConfig(n_cameras=3, n_identities=5, shift_angles=(0.0, 0.2, 0.4))
    manifest = write_network(cfg, tmp_path)
    ds = load_dataset(manifest)
    assert len(ds) == 3 * 5 * 5
    gt = json.loads((tmp_path / "ground_truth.json").read_text())
    assert {"angles", "divergence"} <= set(gt)
    assert gt["divergence"][0][2] == pytest.approx(0.4)
