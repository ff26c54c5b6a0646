"""Command-line interface.

Subcommands
-----------
synth       write a synthetic network (manifest, CSVs, ground_truth.json)
train       learn a metric for every pair of installed cameras
add-camera  rank installed cameras for new camera(s) and emit GFK / transitive kernels
evaluate    run one or more adaptation modes and write reports, tables, curves
report      rebuild comparison tables and curves from saved report JSON

Exit status is 0 on success, 1 on a data or runtime error, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__
from .adapt import (
    LabeledView,
    UnlabeledView,
    assemble_network_kernels,
    common_best_source,
    pair_key,
)
from .dataio import LinearReducer, PCAReducer, SplitSpec, load_dataset, make_rng, make_splits
from .evaluation import (
    ExperimentReport,
    compare_modes,
    curve_to_csv,
    resolve_mode,
    run_experiment,
    table_to_csv,
)
from .exceptions import CamAdaptError, InvalidConfig, MissingFile, MissingMetric
from .metric import Metric, build_pairs, kissme_fit, ldml_fit
from .synth import SynthConfig, write_network

DEFAULT_MODES = "ours,direct_gfk,best_gfk,euclidean"


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_json(path: Path):
    if not path.is_file():
        raise MissingFile(f"file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        return json.load(fh)


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _check_cameras(requested, dataset):
    unknown = [c for c in requested if c not in dataset.cameras]
    if unknown:
        raise InvalidConfig(f"unknown camera ids {unknown}; valid ids: {list(dataset.cameras)}")


def _train_blocks(dataset, seed, reducer):
    split = make_splits(dataset, SplitSpec(seed=seed, trials=1))[0]
    blocks = {}
    for cam in dataset.cameras:
        b = split.block(dataset, cam, "train")
        feats = reducer.apply(b.features) if reducer is not None else b.features
        blocks[cam] = (feats, b.person_ids)
    return blocks


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    n = args.cameras
    angles = args.angles if args.angles else np.linspace(0.0, 0.9, n).tolist()
    config = SynthConfig(n_cameras=n, n_identities=args.identities,
                         images_per_identity=args.images, latent_dim=args.latent_dim,
                         feature_dim=args.feature_dim, shift_angles=tuple(angles),
                         noise_sigma=args.noise, seed=args.seed)
    out = Path(args.out)
    write_network(config, out)
    _write_json(out / "run.json", {"command": "synth", "seed": args.seed,
                                   "config": {k: v if not isinstance(v, tuple) else list(v)
                                              for k, v in config.__dict__.items()}})
    print(f"wrote {n} cameras to {out}")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.manifest)
    cameras = _csv_list(args.cameras) or list(dataset.cameras)
    _check_cameras(cameras, dataset)
    cameras = sorted(set(cameras))
    if len(cameras) < 2:
        raise InvalidConfig("train needs at least two installed cameras")
    out = Path(args.out)

    split = make_splits(dataset, SplitSpec(seed=args.seed, trials=1))[0]
    reducer = None
    if args.dim < dataset.dimension:
        X = np.vstack([split.block(dataset, c, "train").features for c in cameras])
        reducer = PCAReducer(args.dim).fit(X).to_reducer()
        _write_json(out / "reducer.json", reducer.to_json())
    blocks = _train_blocks(dataset, args.seed, reducer)

    written = []
    for a, b in combinations(cameras, 2):
        pairs = build_pairs(blocks[a][0], blocks[a][1], blocks[b][0], blocks[b][1],
                            rng=make_rng(args.seed, "pairs", 0, a, b))
        metric = (ldml_fit(pairs, source=a, dest=b) if args.metric == "ldml"
                  else kissme_fit(pairs, source=a, dest=b))
        path = out / "metrics" / f"{a}__{b}.json"
        _write_json(path, metric.to_json())
        written.append(path.name)
    _write_json(out / "run.json", {
        "command": "train", "manifest": str(args.manifest), "seed": args.seed,
        "installed": cameras, "dim": args.dim if reducer is not None else dataset.dimension,
        "reduced": reducer is not None, "subspace_dim": args.subspace_dim,
        "metric": args.metric, "metrics": written,
    })
    print(f"trained {len(written)} metrics into {out / 'metrics'}")
    return 0


def cmd_add_camera(args) -> int:
    out = Path(args.out)
    run = _read_json(out / "run.json")
    if run.get("command") not in ("train", "add-camera"):
        raise InvalidConfig(f"{out / 'run.json'} is not a trained run")
    dataset = load_dataset(args.manifest)
    installed = run["installed"]
    targets = list(dict.fromkeys(args.target))
    _check_cameras(targets, dataset)
    clash = [t for t in targets if t in installed]
    if clash:
        raise InvalidConfig(f"cameras {clash} are already installed")
    seed = run["seed"]
    d = args.subspace_dim if args.subspace_dim is not None else run["subspace_dim"]

    metrics = {}
    for a, b in combinations(sorted(installed), 2):
        path = out / "metrics" / f"{a}__{b}.json"
        if not path.is_file():
            raise MissingMetric(f"missing metric file {path}")
        metrics[(a, b)] = Metric.from_json(_read_json(path))
    reducer = LinearReducer.from_json(_read_json(out / "reducer.json")) if run["reduced"] else None
    blocks = _train_blocks(dataset, seed, reducer)

    sources = [LabeledView(c, *blocks[c]) for c in sorted(installed)]
    views = [UnlabeledView(t, blocks[t][0]) for t in targets]
    common, rankings, kernels = common_best_source(sources, views, d)

    summary = {"multi": args.multi, "targets": {}}
    if args.multi == "common":
        summary["common_best"] = common
    for t in targets:
        best = common if args.multi == "common" else rankings[t].best_source
        _write_json(out / "reports" / f"ranking__{t}.json", rankings[t].to_json())
        scoring = assemble_network_kernels(rankings[t], kernels[t], metrics, best_source=best)
        for s in sorted(installed):
            K = scoring[pair_key(s, t)]
            _write_json(out / "kernels" / f"{K.kind}__{s}__{t}.json", K.to_json())
        summary["targets"][t] = {"best": best, "ranking_best": rankings[t].best_source}
    _write_json(out / "reports" / "best_source.json", summary)
    run.update({"command": "add-camera", "targets": targets, "multi": args.multi,
                "subspace_dim": d})
    _write_json(out / "run.json", run)
    if args.multi == "common":
        print(f"common best source: {common}")
    else:
        for t in targets:
            print(f"{t}: best source {summary['targets'][t]['best']}")
    return 0


def _emit_tables(reports, out: Path) -> None:
    _write_text(out / "reports" / "comparison.csv", table_to_csv(compare_modes(reports)))
    _write_text(out / "reports" / "comparison_pairs.csv",
                table_to_csv(compare_modes(reports, per_pair=True)))
    for rep in reports:
        for pair, curve in rep.aggregate().items():
            s, t = pair.split("|")
            _write_text(out / "curves" / f"{rep.name}__{s}__{t}.csv", curve_to_csv(curve))


def cmd_evaluate(args) -> int:
    dataset = load_dataset(args.manifest)
    targets = list(dict.fromkeys(args.target))
    _check_cameras(targets, dataset)
    modes = _csv_list(args.modes) if args.modes else [args.mode or "ours"]
    modes = [resolve_mode(m) for m in modes]
    spec = SplitSpec(seed=args.seed, trials=args.trials)
    out = Path(args.out)
    name = Path(args.manifest).parent.name
    reports = []
    for mode in modes:
        rep = run_experiment(dataset, mode, targets, spec, metric_method=args.metric,
                             d=args.subspace_dim, reduce_dim=args.dim,
                             semi_fraction=args.semi_fraction if mode == "ours_semi" else None,
                             multi=args.multi, dataset_name=name)
        _write_text(out / "reports" / f"report__{rep.name}.json", rep.dumps())
        reports.append(rep)
    _emit_tables(reports, out)
    _write_json(out / "run.json", {
        "command": "evaluate", "manifest": str(args.manifest), "seed": args.seed,
        "targets": targets, "modes": [r.name for r in reports], "trials": args.trials,
        "dim": args.dim, "subspace_dim": args.subspace_dim, "metric": args.metric,
        "multi": args.multi, "semi_fraction": args.semi_fraction,
    })
    print(table_to_csv(compare_modes(reports)), end="")
    return 0


def cmd_report(args) -> int:
    paths = [Path(p) for p in args.reports]
    reports = [ExperimentReport.from_json(_read_json(p)) for p in paths]
    out = Path(args.out)
    _emit_tables(reports, out)
    print(table_to_csv(compare_modes(reports)), end="")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _fraction(text):
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError("fraction must lie in (0, 1]")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _angles(text):
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seed(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _global_flags(parser, suppress=False):
    # subcommand copies must not overwrite values given before the command
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--seed", type=_seed, default=default(0), help="global seed (default: 0)")
    parser.add_argument("--out", default=default("camadapt_run"), help="output directory")
    parser.add_argument("--dim", type=_positive, default=default(100),
                        help="PCA feature dimension D (default: 100)")
    parser.add_argument("--subspace-dim", type=_positive, default=default(None),
                        help="subspace dimension d (default: 50)")
    parser.add_argument("--metric", choices=("kissme", "ldml"), default=default("kissme"))
    parser.add_argument("--mode", default=default(None),
                        help="single adaptation mode (ours, direct_gfk, best_gfk, ours_semi, euclidean)")
    parser.add_argument("--semi-fraction", type=_fraction, default=default(0.5),
                        help="labelled fraction of target training identities for ours_semi")
    return parser


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(argparse.ArgumentParser(add_help=False), suppress=True)

    parser = _global_flags(argparse.ArgumentParser(prog="camadapt",
                                                   description=__doc__.splitlines()[0]))
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic camera network")
    p.add_argument("--cameras", type=_positive, default=4)
    p.add_argument("--identities", type=_positive, required=True)
    p.add_argument("--images", type=_positive, default=5)
    p.add_argument("--latent-dim", type=_positive, default=10)
    p.add_argument("--feature-dim", type=_positive, default=120)
    p.add_argument("--angles", type=_angles, default=None, help="comma-separated shift angles in radians")
    p.add_argument("--noise", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="learn pairwise metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cameras", default=None, help="comma-separated installed camera ids")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("add-camera", parents=[common], help="insert new camera(s)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--target", action="append", required=True)
    p.add_argument("--multi", choices=("common", "per-target"), default="common")
    p.set_defaults(func=cmd_add_camera)

    p = sub.add_parser("evaluate", parents=[common], help="run adaptation experiments")
    p.add_argument("--manifest", required=True)
    p.add_argument("--target", action="append", required=True)
    p.add_argument("--modes", default=None, help=f"comma-separated modes (default: {DEFAULT_MODES})")
    p.add_argument("--trials", type=_positive, default=10)
    p.add_argument("--multi", choices=("common", "per-target"), default="common")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="tables and curves from report JSON")
    p.add_argument("reports", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "evaluate" and args.modes is None and args.mode is None:
        args.modes = DEFAULT_MODES
    if args.command != "add-camera" and args.subspace_dim is None:
        args.subspace_dim = 50
    try:
        return args.func(args)
    except (CamAdaptError, OSError, json.JSONDecodeError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"camadapt: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
