from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from camadapt.adapt import (
    LabeledView,
    SourceRanking,
    _rank,
    assemble_network_kernels,
    camera_pair_distance,
    common_best_source,
    discover_best_source,
    pair_key,
    strip_labels,
    transitive_kernel,
)
from camadapt.exceptions import (
    DimensionMismatch,
    EmptyInput,
    MissingKernel,
    MissingMetric,
    NoSources,
    NoTargets,
)
from camadapt.gfk import Kernel
from camadapt.metric import Metric
from camadapt.synth import SynthConfig, generate_network

D_SUB = 4


def _views(ds, sources, targets):
    src = [LabeledView(c, ds.block(c).features, ds.block(c).person_ids) for c in sources]
    tgt = [strip_labels(t, ds.block(t).features) for t in targets]
    return src, tgt


def _net(angles, seed=0, n_ids=40):
    cfg = SynthConfig(n_cameras=len(angles), n_identities=n_ids, images_per_identity=3,
                      shift_angles=tuple(angles), seed=seed)
    return generate_network(cfg)


def test_pair_distance_examples():
    x = np.array([[1.0, 2.0]])
    assert camera_pair_distance(np.diag([3.0, 5.0]), x, x) == 0.0
    assert camera_pair_distance(np.eye(2), [[0.0, 0.0]], [[3.0, 4.0]]) == 25.0
    with pytest.raises(EmptyInput):
        camera_pair_distance(np.eye(2), np.zeros((0, 2)), x)


def test_pair_distance_follows_planted_angles():
    ds, _ = _net((0.0, 0.8, 0.0))
    (src_same, src_far), (tgt,) = _views(ds, ["c0", "c1"], ["c2"])
    ranking, kernels = discover_best_source([src_same, src_far], tgt, D_SUB)
    assert ranking.distance("c0") < ranking.distance("c1")


def test_planted_duplicate_and_single_source():
    ds, _ = _net((0.6, 0.0, 0.6), seed=1)
    src, (tgt,) = _views(ds, ["c0", "c1"], ["c2"])
    ranking, kernels = discover_best_source(src, tgt, D_SUB)
    assert ranking.best_source == "c0"
    assert set(kernels) == {"c0", "c1"}
    assert all(k.kind == "gfk" and k.target_camera == "c2" for k in kernels.values())
    single, _ = discover_best_source(src[1:], tgt, D_SUB)
    assert single.best_source == "c1" and single.sources == ["c1"]


def test_firewall_and_errors(small_network):
    ds, _ = small_network
    src, (tgt,) = _views(ds, ["c0", "c1"], ["c3"])
    with pytest.raises(TypeError):
        discover_best_source(src, LabeledView("c3", ds.block("c3").features,
                                              ds.block("c3").person_ids), D_SUB)
    with pytest.raises(NoSources):
        discover_best_source([], tgt, D_SUB)
    with pytest.raises(NoTargets):
        common_best_source(src, [], D_SUB)
    assert not hasattr(tgt, "person_ids")


def test_label_permutation_gives_identical_ranking(small_network):
    ds, _ = small_network
    src, _ = _views(ds, ["c0", "c1", "c2"], [])
    block = ds.block("c3")
    shuffled = np.random.default_rng(0).permutation(block.person_ids)
    a, _ = discover_best_source(src, LabeledView("c3", block.features, block.person_ids).unlabeled(), D_SUB)
    b, _ = discover_best_source(src, LabeledView("c3", block.features, shuffled).unlabeled(), D_SUB)
    assert a == b


def test_ranking_scale_invariant(small_network):
    ds, _ = small_network
    src, (tgt,) = _views(ds, ["c0", "c1", "c2"], ["c3"])
    ranking, kernels = discover_best_source(src, tgt, D_SUB)
    for c in (1e-3, 0.5, 2.0, 1e4):
        dist = {s.camera_id: camera_pair_distance(kernels[s.camera_id].scaled(c), s.features, tgt.features)
                for s in src}
        assert sorted(dist, key=lambda k: (dist[k], k)) == ranking.sources


def test_ranking_ties_by_id():
    r = SourceRanking("t", (("a", 1.0), ("b", 1.0)))
    assert _rank("t", {"b": 1.0, "a": 1.0}) == r
    assert SourceRanking.from_json(r.to_json()) == r


def test_transitive_examples():
    K = Kernel(np.array([[3.0, 0.0], [0.0, 3.0]]), "s*", "t")
    assert np.array_equal(transitive_kernel(np.ones((2, 2)), K).matrix, K.matrix)
    assert np.array_equal(transitive_kernel(np.zeros((2, 2)), K).matrix, np.zeros((2, 2)))
    out = transitive_kernel(np.array([[1.0, 2.0], [2.0, 1.0]]), K, "s", "t")
    assert np.array_equal(out.matrix, [[3.0, 0.0], [0.0, 3.0]])
    assert out.kind == "transitive" and out.source_camera == "s"
    with pytest.raises(DimensionMismatch):
        transitive_kernel(np.eye(3), K)


sym = arrays(np.float64, (3, 3), elements=st.floats(-5, 5)).map(lambda a: a + a.T)


@given(sym, sym)
def test_transitive_commutative_symmetric(A, B):
    ab = transitive_kernel(A, B).matrix
    assert np.array_equal(ab, transitive_kernel(B, A).matrix)
    assert np.array_equal(ab, ab.T)


def test_common_single_target_reduces(small_network):
    ds, _ = small_network
    src, tgts = _views(ds, ["c0", "c1", "c2"], ["c3"])
    common, rankings, _ = common_best_source(src, tgts, D_SUB)
    alone, _ = discover_best_source(src, tgts[0], D_SUB)
    assert common == alone.best_source and rankings["c3"] == alone


def test_common_both_targets_near_same_source():
    ds, _ = _net((0.0, 0.9, 0.0, 0.05), seed=2)
    src, tgts = _views(ds, ["c0", "c1"], ["c2", "c3"])
    common, rankings, _ = common_best_source(src, tgts, D_SUB)
    assert common == "c0"


def test_common_vs_per_target_eight_cameras():
    # sources c0..c5; A = c2 (0.3) and B = c3 (0.8); targets c6 (0.3) and c7 (0.7)
    angles = (0.0, 0.05, 0.3, 0.8, 1.2, 1.4, 0.3, 0.7)
    ds, truth = _net(angles, seed=5, n_ids=50)
    src, tgts = _views(ds, [f"c{i}" for i in range(6)], ["c6", "c7"])
    common, rankings, _ = common_best_source(src, tgts, D_SUB)
    assert common == "c2"
    assert {rankings["c6"].best_source, rankings["c7"].best_source} == {"c2", "c3"}


def _toy_metrics(cams, D=2):
    return {pair_key(a, b): Metric(np.eye(D) * (i + 2), a, b) for i, (a, b) in enumerate(combinations(cams, 2))}


@pytest.mark.parametrize("n_installed", [1, 2, 15])
def test_assemble_counts(n_installed):
    cams = [f"s{i:02d}" for i in range(n_installed)]
    entries = tuple((c, float(i)) for i, c in enumerate(cams))
    ranking = SourceRanking("t", entries)
    kernels = {c: Kernel(np.full((2, 2), 1.0 + i), c, "t") for i, c in enumerate(cams)}
    out = assemble_network_kernels(ranking, kernels, _toy_metrics(cams))
    kinds = [getattr(v, "kind", "metric") if isinstance(v, Kernel) else "metric" for v in out.values()]
    assert kinds.count("gfk") == 1
    assert kinds.count("transitive") == n_installed - 1
    assert kinds.count("metric") == n_installed * (n_installed - 1) // 2
    assert out[pair_key(cams[0], "t")] is kernels[cams[0]]
    for c in cams[1:]:
        expected = _toy_metrics(cams)[pair_key(c, cams[0])].matrix * kernels[cams[0]].matrix
        assert np.array_equal(out[pair_key(c, "t")].matrix, expected)


def test_assemble_override_and_errors():
    cams = ["a", "b", "c"]
    ranking = SourceRanking("t", (("a", 0.0), ("b", 1.0), ("c", 2.0)))
    kernels = {c: Kernel(np.eye(2), c, "t") for c in cams}
    out = assemble_network_kernels(ranking, kernels, _toy_metrics(cams), best_source="b")
    assert out[("b", "t")].kind == "gfk" and out[("a", "t")].kind == "transitive"
    metrics = _toy_metrics(cams)
    del metrics[("a", "c")]
    with pytest.raises(MissingMetric):
        assemble_network_kernels(ranking, kernels, metrics)
    with pytest.raises(MissingKernel):
        assemble_network_kernels(ranking, {}, _toy_metrics(cams))
