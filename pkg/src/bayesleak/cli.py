"""Command-line entry point: ``bayesleak {estimate,synth,geo,convergence}``.

Every random draw comes from ``--seed`` through a named sub-stream, so runs
are reproducible byte-for-byte.  Exit status is 1 for unreadable or
malformed input files and 2 for invalid options.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import zlib
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .core import (Dataset, FormatError, System, ValidationError, read_channel,
                   read_dataset, sample, split, write_channel, write_dataset)
from .estimators import (ALL_KINDS, EstimateTrace, EstimatorKind, delta_convergence,
                         exact_trace, forward_estimate, select_estimate)
from .measures import (LeakageError, LeakageReport, empirical_prior, nn_lower_bound,
                       random_guessing_error)
from .neighbors import Metric

log = logging.getLogger("bayesleak")

EXIT_INPUT = 1
EXIT_CONFIG = 2
DEFAULT_DELTAS = (0.1, 0.05, 0.01, 0.005)


class ConfigError(Exception):
    pass


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Generator for the named purpose `name` (and repetition `index`)."""
    key = (zlib.crc32(name.encode("utf-8")), int(index))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _parse_kinds(text: str) -> List[EstimatorKind]:
    kinds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            kinds.append(EstimatorKind(part))
        except ValueError:
            raise ConfigError(f"unknown estimator {part!r} "
                              f"(choose from {', '.join(k.value for k in ALL_KINDS)})")
    if not kinds:
        raise ConfigError("no estimators selected")
    return list(dict.fromkeys(kinds))


def _metric(args) -> Metric:
    if args.ring is None:
        return Metric()
    if args.ring <= 0:
        raise ConfigError("--ring period must be positive")
    return Metric(period=float(args.ring))


def _emit(args, text: str) -> None:
    if not args.quiet:
        print(text)


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- estimate ------------------------------------------------------------------

def _one_run(args, kinds, metric, rep: int):
    """Traces of every estimator for one repetition."""
    data = read_dataset(args.data) if args.data else None
    system = read_channel(args.channel) if args.channel else None
    if system is not None:
        train = data if data is not None else read_dataset(args.train)
        if rep or args.seeds > 1:
            train = train.subset(substream(args.seed, "order", rep).permutation(len(train)))
        S = system.n_secrets
        holdout = None
    else:
        if data is not None:
            train, holdout = split(data, args.split, substream(args.seed, "split", rep))
        else:
            train, holdout = read_dataset(args.train), read_dataset(args.holdout)
            if rep or args.seeds > 1:
                train = train.subset(
                    substream(args.seed, "order", rep).permutation(len(train)))
        S = max(train.secret_count(), holdout.secret_count())
    if len(train) == 0:
        raise ConfigError("training set is empty")
    traces, skipped = {}, {}
    for kind in kinds:
        if system is not None:
            traces[kind] = exact_trace(system, train, kind, metric)
            continue
        if kind is EstimatorKind.FREQUENTIST and not _any_shared(train, holdout):
            skipped[kind] = "not applicable: no hold-out observation occurs in training"
            continue
        traces[kind] = forward_estimate(train, holdout, kind, metric, n_secrets=S)
    prior = system.prior if system is not None else empirical_prior(train.secrets, S)
    return traces, skipped, random_guessing_error(prior), S, len(train), (
        len(holdout) if holdout is not None else None)


def _any_shared(train: Dataset, holdout: Dataset) -> bool:
    seen = {tuple(o) for o in train.observations.tolist()}
    return any(tuple(o) in seen for o in holdout.observations.tolist())


def cmd_estimate(args) -> int:
    kinds = _parse_kinds(args.estimators)
    metric = _metric(args)
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    sources = [bool(args.data), bool(args.train)]
    if sum(sources) != 1 and not (args.channel and (args.data or args.train)):
        raise ConfigError("give either --data (with --split) or --train/--holdout")
    if args.train and not args.channel and not args.holdout:
        raise ConfigError("--train needs --holdout (or --channel for exact evaluation)")
    if not 0 < args.split < 1:
        raise ConfigError("--split must lie strictly between 0 and 1")
    os.makedirs(args.out_dir, exist_ok=True)

    runs = []
    for rep in range(args.seeds):
        runs.append(_one_run(args, kinds, metric, rep))

    traces, skipped, r_pi, S, n_train, n_holdout = runs[0]
    if not traces:
        raise ConfigError("no estimator is applicable to this data")
    for kind, tr in traces.items():
        tr.to_csv(os.path.join(args.out_dir, f"{kind.value}.csv"))
    selected, value = select_estimate(list(traces.values()))

    estimators = {}
    for kind in kinds:
        if kind in skipped:
            estimators[kind.value] = {"status": skipped[kind]}
            continue
        finals = np.array([run[0][kind].final for run in runs])
        entry = {"status": "ok", "final": float(finals[0])}
        if args.seeds > 1:
            entry["mean"] = float(finals.mean())
            entry["std"] = float(finals.std(ddof=1))
            entry["finals"] = finals.tolist()
        estimators[kind.value] = entry

    summary = {
        "n_secrets": S,
        "n_train": n_train,
        "n_holdout": n_holdout,
        "evaluation": "exact" if args.channel else "holdout",
        "seed": args.seed,
        "seeds": args.seeds,
        "random_guessing": r_pi,
        "selected": {"estimator": selected.value, "estimate": value},
        "estimators": estimators,
    }
    try:
        report = LeakageReport.from_risks(r_pi, min(value, r_pi))
        summary["leakage"] = report.to_dict()
    except LeakageError as exc:
        summary["leakage"] = None
        log.warning("leakage undefined: %s", exc)
    if EstimatorKind.NN in traces and S >= 2:
        try:
            summary["nn_lower_bound"] = nn_lower_bound(traces[EstimatorKind.NN].final, S)
        except LeakageError as exc:
            log.warning("%s", exc)
            summary["nn_lower_bound"] = None
    _write_json(os.path.join(args.out_dir, "summary.json"), summary)

    _emit(args, f"selected {selected.value}: R* ~ {value:.6f}")
    for name, entry in estimators.items():
        if entry["status"] != "ok":
            _emit(args, f"  {name}: {entry['status']}")
        elif "mean" in entry:
            _emit(args, f"  {name}: {entry['mean']:.6f} +- {entry['std']:.6f} "
                        f"({args.seeds} seeds)")
        else:
            _emit(args, f"  {name}: {entry['final']:.6f}")
    return 0


# --- synth -----------------------------------------------------------------------

def _build_synth(args) -> System:
    from . import synth
    if args.system in ("geometric", "multimodal"):
        spec = synth.GeometricSpec(args.secrets, args.objects, args.nu)
        if args.system == "geometric":
            return synth.geometric_system(spec)
        return synth.multimodal_system(spec, args.shift, (args.w1, 1.0 - args.w1),
                                       boundary=args.boundary)
    if args.system == "spiky":
        return synth.spiky_system(args.q)
    if args.system == "random":
        return synth.random_system(args.secrets, args.objects,
                                   substream(args.seed, "random-channel"))
    return synth.uniform_system(args.secrets, args.objects)


def _report_lines(report: LeakageReport) -> List[str]:
    return [f"bayes_risk: {report.bayes_risk:.6f}",
            f"random_guessing: {report.random_guessing:.6f}",
            f"min_entropy_leakage_bits: {report.min_entropy_leakage:.6f}"]


def cmd_synth(args) -> int:
    try:
        system = _build_synth(args)
    except ValueError as exc:
        raise ConfigError(str(exc))
    os.makedirs(args.out_dir, exist_ok=True)
    write_channel(system, os.path.join(args.out_dir, "channel.txt"))
    if args.samples:
        ds = sample(system, args.samples, substream(args.seed, "samples"))
        write_dataset(ds, os.path.join(args.out_dir, "data.csv"))
    try:
        report = LeakageReport.for_system(system)
        lines = _report_lines(report)
        _write_json(os.path.join(args.out_dir, "leakage.json"), report.to_dict())
    except LeakageError as exc:
        lines = [f"bayes_risk: {exc}"]
    _emit(args, "\n".join(lines))
    return 0


# --- geo -------------------------------------------------------------------------

def cmd_geo(args) -> int:
    from . import geo
    from .measures import bayes_risk
    gi, go = geo.make_gowalla_grids()
    if args.checkins:
        checkins = geo.read_checkins(args.checkins)
    else:
        checkins = geo.synthetic_checkins(gi, args.synthetic_checkins,
                                          seed=int(substream(args.seed, "checkins")
                                                   .integers(2**63)))
    prior, discarded = geo.prior_from_checkins(checkins, gi)
    if discarded:
        log.info("%d checkins outside the input grid", discarded)
    os.makedirs(args.out_dir, exist_ok=True)
    out = {"mechanism": args.mechanism, "nu": args.nu, "discarded_checkins": discarded}
    if args.mechanism == "laplacian":
        if not args.samples:
            raise ConfigError("the Laplacian mechanism has no channel matrix; use --samples")
    else:
        if args.mechanism == "geometric":
            system = geo.planar_geometric(args.nu, prior, gi, go, beta=args.beta)
        else:
            beta = args.beta if args.beta is not None else geo.beta_from_nu(args.nu)
            res = geo.blahut_arimoto(prior, geo.distance_matrix(gi, go), beta,
                                     max_iters=args.max_iters, object_values=go.centers())
            system = res.system
            out["iterations"] = res.iterations
            out["status"] = res.status
        report = LeakageReport.for_system(system)
        out.update(report.to_dict())
        out["utility_m"] = geo.utility(system, geo.distance_matrix(gi, go))
        if args.write_channel:
            write_channel(system, os.path.join(args.out_dir, "channel.txt"))
        _emit(args, "\n".join(_report_lines(report) + [f"utility_m: {out['utility_m']:.3f}"]))
    if args.samples:
        rng = substream(args.seed, "mechanism-samples")
        if args.mechanism == "laplacian":
            ds = geo.laplacian_dataset(prior, args.nu, args.samples, rng, gi, go)
        else:
            ds = sample(system, args.samples, rng)
        write_dataset(ds, os.path.join(args.out_dir, "data.csv"))
    _write_json(os.path.join(args.out_dir, "geo.json"), out)
    return 0


# --- convergence -------------------------------------------------------------------

def cmd_convergence(args) -> int:
    if args.mode == "relative" and args.target <= 0:
        raise ConfigError("relative convergence needs a positive --target; use --mode absolute")
    if any(d <= 0 for d in args.delta):
        raise ConfigError("--delta values must be positive")
    traces = [EstimateTrace.from_csv(p) for p in args.traces]
    header = ["delta"] + [t.kind.value for t in traces]
    rows = [",".join(header)]
    for d in args.delta:
        cells = [f"{d:g}"]
        for t in traces:
            n = delta_convergence(t, args.target, d, args.mode)
            cells.append("X" if n is None else str(n))
        rows.append(",".join(cells))
    text = "\n".join(rows)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "convergence.csv"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(text + "\n")
    _emit(args, text)
    return 0


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument("--out-dir", default=None,
                        help="directory for output files (default: current directory)")
    common.add_argument("--quiet", action="store_true", help="suppress console output")

    parser = argparse.ArgumentParser(prog="bayesleak",
                                     description="Black-box estimation of Bayes risk and leakage.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common],
                       help="run estimators on a dataset and select the best one")
    p.add_argument("--data", help="dataset CSV to split into training and hold-out")
    p.add_argument("--split", type=float, default=0.75, help="training fraction (default 0.75)")
    p.add_argument("--train", help="training dataset CSV")
    p.add_argument("--holdout", help="hold-out dataset CSV")
    p.add_argument("--channel", help="channel file: evaluate exactly over its object space")
    p.add_argument("--estimators", default=",".join(k.value for k in ALL_KINDS),
                   help="comma-separated subset of %(default)s")
    p.add_argument("--ring", type=float, default=None, metavar="PERIOD",
                   help="treat 1-d observations as points on a ring of this length")
    p.add_argument("--seeds", type=int, default=1,
                   help="repeat with this many seeds and report mean +- std")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic system")
    p.add_argument("system", choices=["geometric", "multimodal", "spiky", "random", "uniform"])
    p.add_argument("--secrets", type=int, default=100, help="number of secrets")
    p.add_argument("--objects", type=int, default=10_000, help="number of objects")
    p.add_argument("--nu", type=float, default=0.1, help="geometric noise parameter")
    p.add_argument("--q", type=int, default=10_000, help="ring size of the spiky system")
    p.add_argument("--shift", type=int, default=5,
                   help="multimodal: the second mode is centered at s + 2*shift")
    p.add_argument("--w1", type=float, default=0.5, help="multimodal weight of the first mode")
    p.add_argument("--boundary", choices=["truncate", "wrap"], default="truncate",
                   help="multimodal second mode past the last secret")
    p.add_argument("--samples", type=int, default=0, help="also write this many examples")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("geo", parents=[common], help="build a location-privacy mechanism")
    p.add_argument("mechanism", choices=["geometric", "laplacian", "blahut-arimoto"])
    p.add_argument("--nu", type=float, default=2.0, help="privacy parameter (> 1)")
    p.add_argument("--beta", type=float, default=None, help="override ln(nu)/100 per meter")
    p.add_argument("--checkins", help="lat,lon CSV of checkins for the prior")
    p.add_argument("--synthetic-checkins", type=int, default=200_000,
                   help="number of synthetic checkins when --checkins is absent")
    p.add_argument("--samples", type=int, default=0, help="also write this many examples")
    p.add_argument("--max-iters", type=int, default=10_000, help="Blahut-Arimoto iteration cap")
    p.add_argument("--write-channel", action="store_true",
                   help="write the (large) channel file")
    p.set_defaults(func=cmd_geo)

    p = sub.add_parser("convergence", parents=[common],
                       help="first sustained delta-convergence point of each trace")
    p.add_argument("traces", nargs="+", help="trace CSVs named <estimator>.csv")
    p.add_argument("--target", type=float, required=True, help="true Bayes risk")
    p.add_argument("--delta", type=float, nargs="+", default=list(DEFAULT_DELTAS),
                   help="convergence thresholds")
    p.add_argument("--mode", choices=["relative", "absolute"], default="relative")
    p.set_defaults(func=cmd_convergence)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if args.command != "convergence" and args.out_dir is None:
        args.out_dir = "."
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, ValidationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
