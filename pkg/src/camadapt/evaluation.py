"""Experiment protocol and CMC / nAUC scoring.

Protocol per trial
------------------
1. Split identities into disjoint train/test halves and pick up to
   ``images_per_identity`` images per identity and camera.
2. Optionally fit a PCA reducer on the training samples of the installed
   (source) cameras and project every camera through it.
3. Learn a metric for every pair of installed cameras on training identities.
4. Rank installed cameras against each new camera from unlabelled target
   training samples (or a PLS basis on a labelled fraction, semi-supervised).
5. Score every (source, target) pair on test identities in both directions:
   probes are all test images of one camera, the gallery is all test images
   of the other, an identity's score is its best (smallest) image distance,
   and ties count against the probe.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .adapt import (
    LabeledView,
    UnlabeledView,
    assemble_network_kernels,
    common_best_source,
    pair_key,
)
from .dataio import CameraBlock, NetworkDataset, PCAReducer, SplitSpec, make_rng, make_splits
from .exceptions import IncompatibleReports, InvalidConfig, ProbeIdentityMissing
from .gfk import fit_scale_constant, gfk_closed_form, gfk_quadrature_oracle, kernel_distance
from .metric import build_pairs, kissme_fit, ldml_fit
from .subspace import pls_subspace

__all__ = [
    "MODES",
    "CmcCurve",
    "ExperimentReport",
    "match_rank",
    "cmc",
    "run_experiment",
    "compare_modes",
    "gfk_scale_constant",
    "table_to_csv",
    "curve_to_csv",
    "resolve_mode",
]

MODES = ("ours_unsup", "direct_gfk", "best_gfk", "ours_semi", "euclidean_baseline")
_ALIASES = {"ours": "ours_unsup", "euclidean": "euclidean_baseline", "semi": "ours_semi",
            "direct": "direct_gfk", "best": "best_gfk"}


def resolve_mode(mode: str) -> str:
    mode = _ALIASES.get(mode, mode)
    if mode not in MODES:
        raise InvalidConfig(f"unknown mode {mode!r}; choose from {MODES}")
    return mode


@dataclass(frozen=True)
class CmcCurve:
    rates: np.ndarray
    nauc: float

    @property
    def gallery_size(self) -> int:
        return len(self.rates)

    def rank(self, k: int) -> float:
        """Match rate within the top ``k`` (1.0 once ``k`` exceeds the gallery)."""
        return float(self.rates[min(k, len(self.rates)) - 1])

    def to_json(self) -> dict:
        return {"rates": [float(r) for r in self.rates], "nauc": float(self.nauc)}


def match_rank(scores, probe_ids, gallery_ids) -> np.ndarray:
    """Rank of the correct identity for every probe row of a distance matrix.

    The gallery identity score is the minimum over that identity's images.
    Rank is one plus the number of wrong identities scoring at most the
    correct one, so an exact tie costs the probe a place.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    probe_ids = np.asarray(probe_ids, dtype=object)
    gallery_ids = np.asarray(gallery_ids, dtype=object)
    if scores.shape != (len(probe_ids), len(gallery_ids)):
        raise InvalidConfig(f"scores {scores.shape} vs {len(probe_ids)} probes x "
                            f"{len(gallery_ids)} gallery images")
    people = sorted(set(gallery_ids.tolist()))
    index = {p: i for i, p in enumerate(people)}
    missing = sorted(set(probe_ids.tolist()) - set(people))
    if missing:
        raise ProbeIdentityMissing(f"probe identities absent from gallery: {missing[:5]}")
    per_id = np.column_stack([scores[:, gallery_ids == p].min(axis=1) for p in people])
    own = per_id[np.arange(len(probe_ids)), [index[p] for p in probe_ids]]
    # the correct identity is always counted by <=, hence no +1
    return np.sum(per_id <= own[:, None], axis=1).astype(int)


def cmc(ranks, G: int) -> CmcCurve:
    ranks = np.asarray(ranks, dtype=int)
    if ranks.size == 0 or ranks.min() < 1 or ranks.max() > G:
        raise InvalidConfig(f"ranks must lie in [1, {G}]")
    cum = np.cumsum(np.bincount(ranks, minlength=G + 1)[1:])
    # integer numerator and one division keep nauc correctly rounded
    return CmcCurve(cum / ranks.size, int(cum.sum()) / (ranks.size * G))


def _mean_curve(curves: Sequence[CmcCurve]) -> CmcCurve:
    G = max(c.gallery_size for c in curves)
    padded = np.ones((len(curves), G))
    for i, c in enumerate(curves):
        padded[i, :c.gallery_size] = c.rates
    return CmcCurve(padded.mean(axis=0), float(np.mean([c.nauc for c in curves])))


def gfk_scale_constant(n_points: int = 10_000) -> float:
    """Closed-form / quadrature ratio on a fixed random subspace pair."""
    rng = make_rng(0, "gfk-scale")
    S = np.linalg.qr(rng.standard_normal((8, 3)))[0]
    T = np.linalg.qr(rng.standard_normal((8, 3)))[0]
    c, _ = fit_scale_constant(gfk_closed_form(S, T), gfk_quadrature_oracle(S, T, n_points))
    return c


@dataclass
class ExperimentReport:
    config: dict
    trials: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        if not self.name:
            self.name = self.config["mode_label"]

    @property
    def pairs(self) -> list[str]:
        return sorted(self.trials[0]["pairs"]) if self.trials else []

    def pair_curve(self, pair: str, trial: int) -> CmcCurve:
        c = self.trials[trial]["pairs"][pair]
        return CmcCurve(np.asarray(c["rates"]), c["nauc"])

    def aggregate(self) -> dict:
        """Elementwise mean of trial curves per pair."""
        out = {}
        for pair in self.pairs:
            out[pair] = _mean_curve([self.pair_curve(pair, t) for t in range(len(self.trials))])
        return out

    def to_json(self) -> dict:
        agg = self.aggregate()
        return {
            "name": self.name,
            "config": self.config,
            "trials": self.trials,
            "aggregate": {p: c.to_json() for p, c in agg.items()},
            "rank1": {p: c.rank(1) for p, c in agg.items()},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, obj) -> "ExperimentReport":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(obj["config"], obj["trials"], obj.get("name", ""))


def _n_jobs(n_jobs):
    if n_jobs is None:
        n_jobs = int(os.environ.get("CAMADAPT_THREADS", "1") or 1)
    return max(1, int(n_jobs))


def _score_pair(S, T, matrix, test):
    """CMC curves for probes S -> gallery T and T -> S, plus their average."""
    out = {}
    for a, b in ((S, T), (T, S)):
        pa, pb = test[a], test[b]
        present = np.isin(pa.person_ids, pb.person_ids)
        if not present.any():
            continue
        D = kernel_distance(matrix, pa.features[present], pb.features)
        ranks = match_rank(D, pa.person_ids[present], pb.person_ids)
        G = len(set(pb.person_ids.tolist()))
        out[f"{a}->{b}"] = cmc(ranks, G)
    return out


def _labelled_fraction(block, fraction, rng):
    people = sorted(set(block.person_ids.tolist()))
    n = max(2, int(np.floor(fraction * len(people) + 1e-9)))
    n = min(n, len(people))
    chosen = {people[i] for i in np.sort(rng.choice(len(people), size=n, replace=False))}
    return block.select(np.isin(block.person_ids, list(chosen)))


def _run_trial(dataset, split, cfg):
    seed, mode = cfg["seed"], cfg["mode"]
    targets = cfg["targets"]
    sources = [c for c in dataset.cameras if c not in targets]
    train = {c: split.block(dataset, c, "train") for c in dataset.cameras}
    test = {c: split.block(dataset, c, "test") for c in dataset.cameras}

    reduce_dim = cfg["reduce_dim"]
    if reduce_dim is not None and reduce_dim < dataset.dimension:
        reducer = PCAReducer(reduce_dim).fit(np.vstack([train[c].features for c in sources]))
        train = {c: _project(b, reducer) for c, b in train.items()}
        test = {c: _project(b, reducer) for c, b in test.items()}

    result = {"trial": split.trial_index, "pairs": {}, "directions": {},
              "best_sources": {}, "rankings": {}}
    dim = next(iter(train.values())).features.shape[1]

    kernels, best, rankings = {}, {}, {}
    if mode != "euclidean_baseline":
        views = [LabeledView(c, train[c].features, train[c].person_ids) for c in sources]
        tviews = [UnlabeledView(t, train[t].features) for t in targets]
        tsubs = {}
        if mode == "ours_semi":
            for t in targets:
                lab = _labelled_fraction(train[t], cfg["semi_fraction"],
                                         make_rng(seed, "semi", split.trial_index, t))
                tsubs[t] = pls_subspace(lab.features, lab.person_ids, cfg["d"], t)
        common, rankings, kernels = common_best_source(views, tviews, cfg["d"], tsubs)
        for t in targets:
            best[t] = common if cfg["multi"] == "common" else rankings[t].best_source
            result["rankings"][t] = rankings[t].to_json()
        result["best_sources"] = dict(best)

    metrics = {}
    if mode in ("ours_unsup", "ours_semi"):
        for a, b in combinations(sorted(sources), 2):
            rng = make_rng(seed, "pairs", split.trial_index, a, b)
            pairs = build_pairs(train[a].features, train[a].person_ids,
                                train[b].features, train[b].person_ids, rng=rng)
            if cfg["metric"] == "ldml":
                metrics[(a, b)] = ldml_fit(pairs, source=a, dest=b)
            else:
                metrics[(a, b)] = kissme_fit(pairs, source=a, dest=b)

    scale = cfg.get("kernel_scale", 1.0)
    for t in targets:
        if mode in ("ours_unsup", "ours_semi"):
            scoring = assemble_network_kernels(rankings[t], kernels[t], metrics, best_source=best[t])
        for s in sorted(sources):
            if mode == "euclidean_baseline":
                matrix = np.eye(dim)
            elif mode == "direct_gfk":
                matrix = kernels[t][s].matrix * scale
            elif mode == "best_gfk":
                matrix = kernels[t][best[t]].matrix * scale
            else:
                matrix = scoring[pair_key(s, t)].matrix * scale
            dirs = _score_pair(s, t, matrix, test)
            if not dirs:
                continue
            for name, curve in dirs.items():
                result["directions"][name] = curve.to_json()
            result["pairs"][f"{s}|{t}"] = _mean_curve(list(dirs.values())).to_json()
    return result


def _project(block, reducer):
    return CameraBlock(block.camera_id, block.person_ids, block.image_ids,
                       reducer.transform(block.features))


def run_experiment(dataset: NetworkDataset, mode: str, target_cameras: Sequence[str],
                   spec: SplitSpec, metric_method: str = "kissme", d: int = 50,
                   reduce_dim: int | None = 100, semi_fraction: float | None = None,
                   multi: str = "common", dataset_name: str = "", n_jobs: int | None = None,
                   kernel_scale: float = 1.0) -> ExperimentReport:
    """Run one adaptation mode over every trial of ``spec``.

    Parameters
    ----------
    mode : {'ours_unsup', 'direct_gfk', 'best_gfk', 'ours_semi', 'euclidean_baseline'}
    target_cameras : cameras treated as newly inserted
    reduce_dim : PCA output dimension, or None to keep raw features
    semi_fraction : labelled fraction of target training identities (``ours_semi``)
    multi : {'common', 'per-target'}
        One shared best source for all targets, or one per target.
    kernel_scale : multiplies every GFK-derived kernel before scoring
        (rankings must not depend on it).
    """
    mode = resolve_mode(mode)
    targets = [str(t) for t in target_cameras]
    if not targets:
        raise InvalidConfig("at least one target camera is required")
    unknown = [t for t in targets if t not in dataset.cameras]
    if unknown:
        raise InvalidConfig(f"unknown target cameras {unknown}; valid ids: {list(dataset.cameras)}")
    if len(dataset.cameras) - len(set(targets)) < 1:
        raise InvalidConfig("at least one installed camera must remain")
    if metric_method not in ("kissme", "ldml"):
        raise InvalidConfig(f"unknown metric method {metric_method!r}")
    if multi not in ("common", "per-target"):
        raise InvalidConfig(f"multi must be 'common' or 'per-target', got {multi!r}")
    if mode == "ours_semi":
        if semi_fraction is None or not 0.0 < semi_fraction <= 1.0:
            raise InvalidConfig("ours_semi needs semi_fraction in (0, 1]")
        label = f"ours_semi_{round(semi_fraction * 100):d}"
    else:
        semi_fraction = None
        label = mode
    if reduce_dim is not None and reduce_dim >= dataset.dimension:
        reduce_dim = None

    cfg = {
        "mode": mode, "mode_label": label, "dataset": dataset_name, "seed": int(spec.seed),
        "trials": spec.trials, "train_fraction": spec.train_fraction,
        "images_per_identity": spec.images_per_identity, "d": int(d),
        "D": int(reduce_dim) if reduce_dim is not None else dataset.dimension,
        "reduce_dim": reduce_dim, "metric": metric_method, "targets": targets,
        "multi": multi, "semi_fraction": semi_fraction, "kernel_scale": kernel_scale,
    }
    splits = make_splits(dataset, spec)
    jobs = _n_jobs(n_jobs)
    if jobs == 1:
        trials = [_run_trial(dataset, s, cfg) for s in splits]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(lambda s: _run_trial(dataset, s, cfg), splits))
    cfg.pop("kernel_scale")
    cfg["gfk_scale"] = gfk_scale_constant()
    return ExperimentReport(cfg, trials)


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

TABLE_HEADER = ("mode", "pair", "rank1", "rank5", "rank10", "nauc", "stddev_rank1")
_COMPAT_KEYS = ("dataset", "seed", "trials", "train_fraction", "images_per_identity", "targets")


def compare_modes(reports: Sequence[ExperimentReport], per_pair: bool = False) -> list[dict]:
    """Summary rows (mean over trials, population std of rank-1).

    With ``per_pair=False`` each report yields one row with ``pair='all'``,
    averaging the pair curves within each trial first.
    """
    if not reports:
        raise IncompatibleReports("no reports to compare")
    ref = reports[0].config
    for r in reports[1:]:
        diff = [k for k in _COMPAT_KEYS if r.config.get(k) != ref.get(k)]
        if diff:
            raise IncompatibleReports(f"report {r.name!r} differs in {diff}")
    rows = []
    for rep in reports:
        n = len(rep.trials)
        groups = [[p] for p in rep.pairs] if per_pair else [rep.pairs]
        for group in groups:
            per_trial = [_mean_curve([rep.pair_curve(p, t) for p in group]) for t in range(n)]
            r1 = np.array([c.rank(1) for c in per_trial])
            rows.append({
                "mode": rep.name,
                "pair": group[0] if per_pair else "all",
                "rank1": float(r1.mean()),
                "rank5": float(np.mean([c.rank(5) for c in per_trial])),
                "rank10": float(np.mean([c.rank(10) for c in per_trial])),
                "nauc": float(np.mean([c.nauc for c in per_trial])),
                "stddev_rank1": float(r1.std()),
            })
    return rows


def table_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_HEADER)
    for row in rows:
        writer.writerow([row["mode"], row["pair"]] +
                        [repr(float(row[k])) for k in TABLE_HEADER[2:]])
    return buf.getvalue()


def curve_to_csv(curve: CmcCurve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rank", "rate"])
    for k, r in enumerate(curve.rates, start=1):
        writer.writerow([k, repr(float(r))])
    return buf.getvalue()
