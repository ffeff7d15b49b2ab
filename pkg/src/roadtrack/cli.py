"""Command-line entry point: ``roadtrack <command> [options]``.

Exit codes: 0 success, 2 validation error, 3 parse error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io as rio
from . import workflow as wf
from .evaluation import EvalConfig, reports_to_csv
from .exceptions import NumericalError, ParseError, RoadTrackError, ValidationError
from .simulator.scene import PRESETS

log = logging.getLogger("roadtrack")

EXIT_OK, EXIT_VALIDATION, EXIT_PARSE, EXIT_NUMERIC = 0, 2, 3, 4


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", type=Path, default=d(None), help="key = value configuration file")
    parser.add_argument("--seed", type=int, default=d(None), help="random seed (simulate)")
    parser.add_argument("--out", type=Path, default=d(Path(".")), help="output directory")
    parser.add_argument("--jobs", type=int, default=d(1), help="worker processes")
    parser.add_argument("-v", "--verbose", action="count", default=d(0))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roadtrack", description=__doc__.splitlines()[0])
    _global_options(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write a synthetic scene directory")
    s.add_argument("--preset", choices=sorted(PRESETS), help="traffic preset")

    s = sub.add_parser("calibrate", parents=[common], help="fit homography and curve files from point files")
    s.add_argument("points", type=Path, help="directory of {camera}_{direction}_points.csv files")

    s = sub.add_parser("sync", parents=[common], help="estimate corrected timestamps")
    s.add_argument("--labels", type=Path, required=True)
    s.add_argument("--timestamps", type=Path, required=True)
    s.add_argument("--transforms", type=Path, required=True)
    s.add_argument("--no-residuals", action="store_true", help="offsets only")

    s = sub.add_parser("track", parents=[common], help="run a tracking pipeline and write predicted labels")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", type=Path, help="simulated scene directory")
    src.add_argument("--detections", type=Path, help="detections csv")
    s.add_argument("--timestamps", type=Path, help="timestamps csv whose corrected column is used")
    s.add_argument("--tracker", help="kiou, byte or gt-tracklets")
    s.add_argument("--fusion", help="none, df, tf or df+tf")

    s = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    s.add_argument("--gt", type=Path, required=True, help="ground-truth labels csv")
    s.add_argument("--pred", type=Path, nargs="+", required=True, help="predicted labels csv files")
    s.add_argument("--timestamps", type=Path, help="timestamps csv for the ground truth")
    s.add_argument("--scene-name", help="scene name used in the report")

    s = sub.add_parser("report", parents=[common], help="combine report.json files into one table")
    s.add_argument("reports", type=Path, nargs="+")
    return p


def _config(args) -> dict[str, str]:
    return rio.read_config(args.config) if args.config else {}


def _scene_file(directory: Path, suffix: str) -> Path:
    hits = sorted(directory.glob(f"*_{suffix}"))
    if len(hits) != 1:
        raise ValidationError(f"expected one *_{suffix} in {directory}, found {len(hits)}")
    return hits[0]


def cmd_simulate(args) -> int:
    values = _config(args)
    if args.preset:
        values["preset"] = args.preset
    spec = wf.SimulationSpec.from_config(values, seed=args.seed, path=args.config)
    paths = wf.simulate(spec, args.out)
    print(f"wrote scene {spec.rig.scene_id} to {args.out}")
    for k, v in paths.items():
        log.info("%s: %s", k, v)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    tfs = wf.calibrate(args.points, args.out)
    for (cam, direction), tf in sorted(tfs.items()):
        print(f"{cam} {direction}: homography rmse {tf.homography.rmse:.4g} ft")
    return EXIT_OK


def cmd_sync(args) -> int:
    labels = rio.read_labels(args.labels)
    stamps = rio.read_timestamps(args.timestamps)
    tfs = rio.read_transforms(args.transforms)
    rows, fitted = wf.sync(labels, stamps, tfs, residuals=not args.no_residuals)
    args.out.mkdir(parents=True, exist_ok=True)
    out = args.out / args.timestamps.name
    if out.resolve() == args.timestamps.resolve():
        out = args.out / f"{args.timestamps.stem}_corrected.csv"
    rio.write_timestamps(out, rows)
    for cam in sorted(fitted.offsets_):
        print(f"{cam} offset {fitted.offsets_[cam]:+.4f} s")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_track(args) -> int:
    values = _config(args)
    if args.tracker:
        values["tracker"] = args.tracker
    if args.fusion:
        values["fusion"] = args.fusion
    if args.scene is not None:
        values.setdefault("detector_source", "simulated")
        det_path = _scene_file(args.scene, "detections.csv")
        ts_path = args.timestamps or _scene_file(args.scene, "timestamps.csv")
    else:
        values.setdefault("detector_source", "csv")
        det_path, ts_path = args.detections, args.timestamps
    spec = wf.PipelineSpec.from_config(values, path=args.config)
    rows = wf.track(rio.read_detections(det_path), rio.read_timestamps(ts_path) if ts_path else None, spec.tracker)
    args.out.mkdir(parents=True, exist_ok=True)
    out = args.out / f"{spec.name}_labels.csv"
    rio.write_labels(out, rows)
    print(f"{spec.name}: {len({r.vehicle_id for r in rows})} objects, {len(rows)} rows -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    values = _config(args)
    try:
        config = rio.apply_config(EvalConfig, values, path=args.config)
    except TypeError as e:
        raise ParseError(str(e), args.config) from e
    results = wf.evaluate_files(args.gt, args.pred, args.timestamps, config, args.out, args.jobs, args.scene_name)
    sys.stdout.write(reports_to_csv([r.report for r in results]))
    return EXIT_OK


def cmd_report(args) -> int:
    reports = wf.combine_reports(args.reports)
    text = reports_to_csv(reports)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "summary.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "calibrate": cmd_calibrate, "sync": cmd_sync, "track": cmd_track, "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s",
    )
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return COMMANDS[args.command](args)
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except RoadTrackError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
