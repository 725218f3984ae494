"""Command line entry point: ``strokelab <command> ...``.

Stages talk only through files. Each artifact-producing command also writes
``<output>.manifest.json`` (``manifest.json`` inside the output directory
for synth-cohort) with the arguments, input and output hashes and the wall
time. Exit codes: 0 success, 1 data or I/O error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__
from ._util import sha256_file
from .cohort import CohortConfig, config_dict, gen_cohort
from .evaluation import MODES, ForestConfig, evaluate, read_predictions, write_predictions
from .extractor import SigmaLognormalExtractor, read_decompositions, write_decompositions
from .features import TaskFeatureAggregator, read_features_csv, write_features_csv
from .inkio import FormatError, parse_inkml, read_sleep_csv, read_traces_csv
from .kinematics import DEFAULT_FS, DEFAULT_SMOOTH_S, StrokePreprocessor, preprocess
from .labeling import TARGET_FIELDS, QuartileLabeler, read_labels_csv, rules_to_json, write_labels_csv
from .plotting import reconstruction_svg, trajectory_svg
from .stats import build_reports, render_text

log = logging.getLogger("strokelab")


class DataError(Exception):
    """Bad or missing input; reported with exit code 1."""


# -- helpers ---------------------------------------------------------------------

def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _nonneg_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _require(path, what):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"missing {what}: {p}")
    return p


def _targets(choice):
    return list(TARGET_FIELDS) if choice == "all" else [choice]


def _write_manifest(path, command, args, inputs, outputs, started):
    manifest = {
        "command": command,
        "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "wall_time_s": round(time.perf_counter() - started, 3),
        "version": __version__,
    }
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _manifest_path(out):
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _write_text(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


# -- commands ----------------------------------------------------------------------

def cmd_synth_cohort(args):
    started = time.perf_counter()
    cfg = CohortConfig(users=args.users, days=args.days, effect=args.effect, seed=args.seed, fs=args.fs,
                       noise_db=None if args.noise_db is None or args.noise_db <= 0 else args.noise_db)
    out = Path(args.out)
    try:
        gen_cohort(cfg, out)
    except OSError as exc:
        raise DataError(f"cannot write cohort: {exc}") from None
    outputs = [out / n for n in ("traces.csv", "sleep.csv", "truth.jsonl")]
    args.cohort = config_dict(cfg)
    _write_manifest(out / "manifest.json", "synth-cohort", args, [], outputs, started)
    print(f"users={cfg.users} days={cfg.days} effect={cfg.effect:g} seed={cfg.seed} -> {out}")


def _load_traces(path, fmt, fs):
    text = _require(path, "input traces").read_text()
    if not text.strip():
        return []
    try:
        if fmt == "inkml":
            return parse_inkml(text, source_id=Path(path).stem)
        return read_traces_csv(text)
    except FormatError as exc:
        raise DataError(f"{path}: {exc}") from None


def cmd_extract(args):
    started = time.perf_counter()
    traces = _load_traces(args.inp, args.format, args.fs)
    if not traces:
        raise DataError(f"{args.inp}: no traces")
    try:
        strokes = StrokePreprocessor(fs=args.fs, smooth_s=args.smooth).fit_transform(traces)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    decomps = SigmaLognormalExtractor(snr_target_db=args.snr_target, n_jobs=args.jobs).fit_transform(strokes)
    with open(args.out, "w", newline="\n") as fh:
        write_decompositions(decomps, fh)
    _write_manifest(_manifest_path(args.out), "extract", args, [args.inp], [args.out], started)
    mean = sum(d.snr_db for d in decomps) / len(decomps) if decomps else float("nan")
    print(f"strokes={len(decomps)} mean_snr={mean:.2f} dB")


def cmd_features(args):
    started = time.perf_counter()
    with open(_require(args.decomp, "decompositions")) as fh:
        try:
            decomps = read_decompositions(fh)
        except (ValueError, KeyError) as exc:
            raise DataError(f"{args.decomp}: {exc}") from None
    try:
        vectors = TaskFeatureAggregator(pooling=args.pooling).fit_transform(decomps)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if not vectors:
        raise DataError("no task samples with decomposed strokes")
    with open(args.out, "w", newline="\n") as fh:
        write_features_csv(vectors, fh)
    _write_manifest(_manifest_path(args.out), "features", args, [args.decomp], [args.out], started)
    print(f"samples={len(vectors)}")


def _read_sleep(path):
    try:
        return read_sleep_csv(_require(path, "sleep CSV").read_text())
    except FormatError as exc:
        raise DataError(f"{path}: {exc}") from None


def _fit_labels(sleep, targets):
    try:
        labeler = QuartileLabeler(targets=tuple(targets)).fit(sleep)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return labeler, labeler.transform(sleep)


def cmd_label(args):
    started = time.perf_counter()
    targets = _targets(args.target)
    labeler, rows = _fit_labels(_read_sleep(args.sleep), targets)
    with open(args.out, "w", newline="\n") as fh:
        write_labels_csv(rows, fh)
    rules = Path(args.out).with_suffix(".rules.json")
    _write_text(rules, rules_to_json(labeler.rules_.values()))
    _write_manifest(_manifest_path(args.out), "label", args, [args.sleep], [args.out, rules], started)
    print(f"labels={len(rows)} positives={sum(r[3] for r in rows)}")


def cmd_evaluate(args):
    started = time.perf_counter()
    inputs = [_require(args.features, "features CSV")]
    try:
        features = read_features_csv(inputs[0].read_text())
    except FormatError as exc:
        raise DataError(f"{args.features}: {exc}") from None
    targets = _targets(args.target)
    if args.labels:
        inputs.append(_require(args.labels, "labels CSV"))
        try:
            labels = read_labels_csv(inputs[-1].read_text())
        except FormatError as exc:
            raise DataError(f"{args.labels}: {exc}") from None
    elif args.sleep:
        inputs.append(_require(args.sleep, "sleep CSV"))
        _, rows = _fit_labels(_read_sleep(args.sleep), targets)
        labels = {(u, d, t): lb for u, d, t, lb in rows}
    else:
        raise DataError("missing labels: pass --labels or --sleep")
    f_users = {f.user for f in features}
    l_users = {u for u, _, t in labels if t in targets}
    if f_users != l_users:
        raise DataError(f"users differ between features and labels: "
                        f"only in features {sorted(f_users - l_users)}, only in labels {sorted(l_users - f_users)}")
    slices = ("task", "timing") if args.slice == "both" else (args.slice,)
    cfg = ForestConfig(n_trees=args.n_trees, seed=args.seed)
    try:
        preds = evaluate(features, labels, targets, slices=slices, mode=args.mode, cfg=cfg)
    except KeyError as exc:
        raise DataError(str(exc.args[0])) from None
    with open(args.out, "w", newline="\n") as fh:
        write_predictions(preds, fh)
    _write_manifest(_manifest_path(args.out), "evaluate", args, inputs, [args.out], started)
    print(f"predictions={len(preds)} leakage_check=passed")


def cmd_stats(args):
    started = time.perf_counter()
    with open(_require(args.predictions, "predictions")) as fh:
        try:
            preds = read_predictions(fh)
        except (ValueError, TypeError) as exc:
            raise DataError(f"{args.predictions}: {exc}") from None
    targets = _targets(args.target)
    preds = [p for p in preds if p.target in targets]
    try:
        evals, report = build_reports(preds, targets)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out = Path(args.out)
    _write_text(out, json.dumps(report.to_dict(), indent=1) + "\n")
    evals_path = out.with_name(out.stem + ".eval.json")
    text_path = out.with_suffix(".txt")
    _write_text(evals_path, json.dumps(evals, indent=1) + "\n")
    text = render_text(report)
    _write_text(text_path, text)
    _write_manifest(_manifest_path(out), "stats", args, [args.predictions], [out, evals_path, text_path], started)
    print(text, end="")


def cmd_plot(args):
    started = time.perf_counter()
    if not args.decomp and not args.traces:
        raise DataError("plot needs --decomp and/or --traces")
    inputs = []
    decomp = trace = None
    if args.decomp:
        inputs.append(_require(args.decomp, "decompositions"))
        with open(inputs[-1]) as fh:
            found = [d for d in read_decompositions(fh) if d.stroke_id == args.stroke_id]
        if not found:
            raise DataError(f"unknown stroke id {args.stroke_id!r} in {args.decomp}")
        decomp = found[0]
    if args.traces:
        inputs.append(Path(args.traces))
        found = [tr for tr in _load_traces(args.traces, args.format, args.fs) if tr.stroke_id == args.stroke_id]
        if not found:
            raise DataError(f"unknown stroke id {args.stroke_id!r} in {args.traces}")
        trace = found[0]
    stroke = preprocess(trace, args.fs, DEFAULT_SMOOTH_S, args.stroke_id) if trace is not None else None
    view = args.view or ("reconstruction" if decomp is not None else "trajectory")
    if view == "reconstruction":
        if decomp is None:
            raise DataError("the reconstruction view needs --decomp")
        if stroke is not None:
            t, speed = stroke.t - stroke.t[0], stroke.speed
        else:
            comps = decomp.components
            start = min((c.t0 for c in comps), default=0.0)
            end = max((c.time_at_fraction(0.999) for c in comps), default=1.0)
            t, speed = start + np.arange(int((end - start) * args.fs) + 2) / args.fs, None
        svg = reconstruction_svg(t, decomp, speed)
    else:
        if stroke is None:
            raise DataError("the trajectory view needs --traces")
        svg = trajectory_svg(stroke.x, stroke.y, stroke.speed, title=args.stroke_id)
    _write_text(args.out, svg)
    _write_manifest(_manifest_path(args.out), "plot", args, inputs, [args.out], started)
    print(f"wrote {args.out}")


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strokelab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"strokelab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-cohort", help="write a synthetic cohort (traces, sleep, truth)")
    p.add_argument("--users", type=_positive_int, default=13)
    p.add_argument("--days", type=_positive_int, default=28)
    p.add_argument("--effect", type=_nonneg_float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fs", type=_positive_float, default=200.0)
    p.add_argument("--noise-db", type=float, default=25.0, help="velocity noise level; <= 0 disables it")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_cohort)

    p = sub.add_parser("extract", help="decompose strokes into lognormal components")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--format", choices=("inkml", "csv"), default="csv")
    p.add_argument("--out", required=True)
    p.add_argument("--snr-target", type=_positive_float, default=25.0)
    p.add_argument("--fs", type=_positive_float, default=DEFAULT_FS)
    p.add_argument("--smooth", type=_nonneg_float, default=DEFAULT_SMOOTH_S, help="Gaussian sigma in seconds")
    p.add_argument("--jobs", type=_positive_int, default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("features", help="ten features per task sample")
    p.add_argument("--decomp", required=True)
    p.add_argument("--pooling", choices=("component", "stroke"), default="component")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    target_choices = ("all",) + tuple(TARGET_FIELDS)
    p = sub.add_parser("label", help="per-user quartile labels")
    p.add_argument("--sleep", required=True)
    p.add_argument("--target", choices=target_choices, default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("evaluate", help="leave-one-day-out predictions")
    p.add_argument("--features", required=True)
    p.add_argument("--labels")
    p.add_argument("--sleep")
    p.add_argument("--target", choices=target_choices, default="all")
    p.add_argument("--slice", choices=("task", "timing", "all", "both"), default="task")
    p.add_argument("--mode", choices=MODES, default="per_slice")
    p.add_argument("--n-trees", type=_positive_int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="Wilcoxon, Friedman and BH summaries")
    p.add_argument("--predictions", required=True)
    p.add_argument("--target", choices=target_choices, default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("plot", help="SVG reconstruction or trajectory view of one stroke")
    p.add_argument("--decomp")
    p.add_argument("--traces")
    p.add_argument("--format", choices=("inkml", "csv"), default="csv")
    p.add_argument("--stroke-id", required=True)
    p.add_argument("--view", choices=("reconstruction", "trajectory"))
    p.add_argument("--fs", type=_positive_float, default=DEFAULT_FS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DataError as exc:
        print(f"strokelab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"strokelab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
