import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from camadapt.dataio import NetworkDataset, SplitSpec
from camadapt.evaluation import (
    TABLE_HEADER,
    CmcCurve,
    ExperimentReport,
    cmc,
    compare_modes,
    curve_to_csv,
    match_rank,
    resolve_mode,
    run_experiment,
    table_to_csv,
)
from camadapt.exceptions import IncompatibleReports, InvalidConfig, ProbeIdentityMissing
from camadapt.synth import SynthConfig, generate_network

SPLITS = SplitSpec(seed=0, trials=2)
SMALL = dict(d=4, reduce_dim=None)


def test_match_rank_examples():
    gallery = ["a", "b", "c"]
    assert match_rank([[0.1, 0.5, 0.9]], ["a"], gallery)[0] == 1
    assert match_rank([[0.9, 0.5, 0.1]], ["a"], gallery)[0] == 3
    assert match_rank([[0.5, 0.5, 0.9]], ["a"], gallery)[0] == 2


def test_match_rank_multi_shot_min():
    # identity a has two gallery images; its best one wins
    scores = [[0.9, 0.2, 0.5]]
    assert match_rank(scores, ["a"], ["a", "a", "b"])[0] == 1


def test_match_rank_errors():
    with pytest.raises(ProbeIdentityMissing):
        match_rank([[0.1, 0.2]], ["z"], ["a", "b"])
    with pytest.raises(InvalidConfig):
        match_rank([[0.1, 0.2]], ["a"], ["a", "b", "c"])


def test_cmc_examples():
    perfect = cmc([1, 1, 1], 4)
    assert np.array_equal(perfect.rates, np.ones(4)) and perfect.nauc == 1.0
    c = cmc([1, 1, 2], 2)
    assert np.allclose(c.rates, [2 / 3, 1.0]) and c.nauc == pytest.approx(5 / 6)


@given(st.integers(1, 500))
def test_cmc_uniform_ranks_exact(G):
    c = cmc(np.arange(1, G + 1), G)
    assert c.nauc == (G + 1) / (2 * G)
    assert np.array_equal(c.rates, np.arange(1, G + 1) / G)


@given(st.integers(1, 30).flatmap(lambda G: st.tuples(
    st.just(G), st.lists(st.integers(1, G), min_size=1, max_size=50))))
def test_cmc_properties(args):
    G, ranks = args
    c = cmc(ranks, G)
    assert np.all(np.diff(c.rates) >= 0) and c.rates[-1] == 1.0
    assert 1 / G <= c.nauc <= 1.0
    assert (c.nauc == 1.0) == all(r == 1 for r in ranks)
    assert Fraction(c.nauc).limit_denominator(10 ** 6) == Fraction(sum(G - r + 1 for r in ranks), len(ranks) * G)


def test_cmc_rank_clamps_beyond_gallery():
    c = cmc([1, 2], 2)
    assert c.rank(10) == 1.0 and c.rank(1) == 0.5


def test_resolve_mode():
    assert resolve_mode("ours") == "ours_unsup"
    assert resolve_mode("euclidean") == "euclidean_baseline"
    with pytest.raises(InvalidConfig):
        resolve_mode("nope")


@pytest.fixture(scope="module")
def net():
    cfg = SynthConfig(n_cameras=4, n_identities=30, images_per_identity=3, latent_dim=6,
                      feature_dim=16, shift_angles=(0.0, 0.2, 0.5, 0.15), seed=1)
    return generate_network(cfg)[0]


def _all_curves(rep):
    return [t["pairs"] for t in rep.trials] + [t["directions"] for t in rep.trials]


def test_report_structure_and_aggregate(net):
    rep = run_experiment(net, "ours", ["c3"], SPLITS, **SMALL)
    assert rep.name == "ours_unsup"
    assert rep.pairs == ["c0|c3", "c1|c3", "c2|c3"]
    obj = json.loads(rep.dumps())
    assert {"config", "trials", "aggregate", "rank1", "name"} <= set(obj)
    assert obj["config"]["gfk_scale"] == pytest.approx(2.0, rel=1e-8)
    assert all(t["best_sources"]["c3"] in ("c0", "c1", "c2") for t in rep.trials)
    for pair, curve in rep.aggregate().items():
        trial_rates = [np.asarray(t["pairs"][pair]["rates"]) for t in rep.trials]
        assert np.allclose(curve.rates, np.mean(trial_rates, axis=0))
    for group in _all_curves(rep):
        for c in group.values():
            assert np.all(np.diff(c["rates"]) >= 0) and c["rates"][-1] == 1.0
    back = ExperimentReport.from_json(rep.dumps())
    assert back.dumps() == rep.dumps()


def test_deterministic_across_threads(net):
    a = run_experiment(net, "ours", ["c3"], SPLITS, n_jobs=1, **SMALL).dumps()
    b = run_experiment(net, "ours", ["c3"], SPLITS, n_jobs=3, **SMALL).dumps()
    assert a == b


def test_best_gfk_equals_ours_on_best_pair(net):
    ours = run_experiment(net, "ours", ["c3"], SPLITS, **SMALL)
    best = run_experiment(net, "best_gfk", ["c3"], SPLITS, **SMALL)
    for t_ours, t_best in zip(ours.trials, best.trials):
        s = t_ours["best_sources"]["c3"]
        assert t_ours["pairs"][f"{s}|c3"] == t_best["pairs"][f"{s}|c3"]


def test_two_camera_modes_identical(net):
    two = NetworkDataset(net.dimension, ["c0", "c3"], [s for s in net.samples if s.camera_id in ("c0", "c3")])
    outs = [run_experiment(two, m, ["c3"], SPLITS, **SMALL).trials for m in ("ours", "best_gfk", "direct_gfk")]
    strip = [[{k: t[k] for k in ("pairs", "directions")} for t in o] for o in outs]
    assert strip[0] == strip[1] == strip[2]


def test_semi_supervised_keeps_planted_best():
    cfg = SynthConfig(n_cameras=3, n_identities=30, images_per_identity=3, latent_dim=6,
                      feature_dim=16, shift_angles=(0.0, 0.7, 0.7), seed=2)
    ds = generate_network(cfg)[0]
    unsup = run_experiment(ds, "ours", ["c2"], SPLITS, **SMALL)
    semi = run_experiment(ds, "ours_semi", ["c2"], SPLITS, semi_fraction=1.0, **SMALL)
    assert semi.name == "ours_semi_100"
    for a, b in zip(unsup.trials, semi.trials):
        assert a["best_sources"] == b["best_sources"] == {"c2": "c1"}


def test_euclidean_feature_scaling_invariant(net):
    a = run_experiment(net, "euclidean", ["c3"], SPLITS, **SMALL)
    doubled = net.with_features(lambda X: 2.0 * X, net.dimension)
    b = run_experiment(doubled, "euclidean", ["c3"], SPLITS, **SMALL)
    assert [t["pairs"] for t in a.trials] == [t["pairs"] for t in b.trials]


@pytest.mark.parametrize("mode", ["ours", "direct_gfk", "best_gfk"])
def test_kernel_scaling_invariant(net, mode):
    a = run_experiment(net, mode, ["c3"], SPLITS, **SMALL)
    b = run_experiment(net, mode, ["c3"], SPLITS, kernel_scale=3.5, **SMALL)
    assert a.dumps() == b.dumps()


def test_run_experiment_validation(net):
    with pytest.raises(InvalidConfig):
        run_experiment(net, "ours", ["c9"], SPLITS, **SMALL)
    with pytest.raises(InvalidConfig):
        run_experiment(net, "ours", list(net.cameras), SPLITS, **SMALL)
    with pytest.raises(InvalidConfig):
        run_experiment(net, "ours_semi", ["c3"], SPLITS, **SMALL)


def _planted_family(seed):
    cfg = SynthConfig(n_cameras=5, n_identities=50, images_per_identity=4, latent_dim=8,
                      feature_dim=20, shift_angles=(0.0, 0.2, 0.5, 0.9, 0.15), seed=seed)
    return generate_network(cfg)[0]


@pytest.mark.slow
def test_ours_beats_euclidean_and_direct_over_seeds():
    spec = SplitSpec(seed=0, trials=2)
    r1 = {"ours": [], "euclidean": []}
    nauc = {"ours": [], "direct_gfk": []}
    for seed in range(10):
        ds = _planted_family(seed)
        reps = {m: run_experiment(ds, m, ["c4"], spec, d=4, reduce_dim=None)
                for m in ("ours", "euclidean", "direct_gfk")}
        rows = {r["mode"]: r for r in compare_modes(list(reps.values()))}
        r1["ours"].append(rows["ours_unsup"]["rank1"])
        r1["euclidean"].append(rows["euclidean_baseline"]["rank1"])
        nauc["ours"].append(rows["ours_unsup"]["nauc"])
        nauc["direct_gfk"].append(rows["direct_gfk"]["nauc"])
    assert np.mean(r1["ours"]) > np.mean(r1["euclidean"])
    assert np.mean(nauc["ours"]) >= np.mean(nauc["direct_gfk"])


def test_compare_modes_tables(net):
    rep = run_experiment(net, "ours", ["c3"], SPLITS, **SMALL)
    rows = compare_modes([rep])
    assert len(rows) == 1 and rows[0]["pair"] == "all"
    twin = ExperimentReport(dict(rep.config, mode_label="twin"), rep.trials)
    a, b = compare_modes([rep, twin])
    assert {k: v for k, v in a.items() if k != "mode"} == {k: v for k, v in b.items() if k != "mode"}
    per_pair = compare_modes([rep], per_pair=True)
    assert [r["pair"] for r in per_pair] == rep.pairs
    csv_text = table_to_csv(rows)
    assert csv_text.splitlines()[0] == ",".join(TABLE_HEADER)
    assert curve_to_csv(CmcCurve(np.array([0.5, 1.0]), 0.75)) == "rank,rate\n1,0.5\n2,1.0\n"
    other = ExperimentReport(dict(rep.config, seed=99, mode_label="x"), rep.trials)
    with pytest.raises(IncompatibleReports):
        compare_modes([rep, other])
    with pytest.raises(IncompatibleReports):
        compare_modes([])
