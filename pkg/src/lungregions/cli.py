"""Command-line entry point: ``lungregions <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 partial failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import synth
from .ensemble import fuse, majority_vote, split_left_right
from .landmarks import LandmarkError, ReferenceConfig, read_detections, select_reference_point
from .pipeline import (
    EXIT_DATA,
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_USAGE,
    ManifestError,
    evaluate_detection,
    evaluate_segmentation,
    format_seg_table,
    read_manifest,
    run_correlation,
    run_pipeline,
    write_seg_table,
)
from .quantify import normalize_and_quantify, write_stats_csv
from .raster import RasterError, load_image, load_mask, load_region_mask, save_mask, save_region_mask
from .regions import split_four_regions

logger = logging.getLogger("lungregions")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_globals(p, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--spacing-mm", type=float, default=default, help="pixel spacing in mm (default: sidecar, else 0.2)")
    p.add_argument("--jobs", type=int, default=default, help="worker processes (default: all cores)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0, help="random seed")
    p.add_argument("--out-dir", type=Path, default=default, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def _ref_config(args) -> ReferenceConfig:
    return ReferenceConfig(args.hilum_threshold, args.carina_offset_mm)


def _add_ref_args(p):
    p.add_argument("--hilum-threshold", type=float, default=0.9, help="hilum confidence must exceed this")
    p.add_argument("--carina-offset-mm", type=float, default=20.0)


def _require_out_dir(args) -> Path:
    if args.out_dir is None:
        raise UsageError("--out-dir is required")
    return args.out_dir


def cmd_ensemble(args) -> int:
    masks = [load_mask(p) for p in args.masks]
    fused = majority_vote(masks) if args.no_postprocess else fuse(masks, keep=args.keep)
    save_mask(fused, args.out)
    return EXIT_OK


def _reference_for(args, height: int | None):
    dets = [d for d in read_detections(args.detections) if d.image_id == args.image_id]
    spacing = args.spacing_mm if args.spacing_mm is not None else 0.2
    if args.spacing_mm is None:
        logger.warning("no --spacing-mm given, assuming 0.2 mm/pixel")
    return select_reference_point(dets, spacing, _ref_config(args), image_height=height)


def cmd_landmarks(args) -> int:
    ids = [args.image_id] if args.image_id else sorted({d.image_id for d in read_detections(args.detections)})
    failed = 0
    lines = []
    for iid in ids:
        args.image_id = iid
        try:
            ref, source = _reference_for(args, args.height)
            lines.append({"image_id": iid, "x": ref.x, "y": ref.y, "source": source})
        except LandmarkError as exc:
            failed += 1
            lines.append({"image_id": iid, "error": str(exc)})
    text = "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if failed == len(ids):
        return EXIT_DATA
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_split(args) -> int:
    lung = load_mask(args.mask)
    ref, source = _reference_for(args, lung.shape[0])
    right, left = split_left_right(lung, fallback_column=ref.x)
    save_region_mask(split_four_regions(right, left, ref), args.out)
    if args.right:
        save_mask(right, args.right)
    if args.left:
        save_mask(left, args.left)
    logger.info("%s: source=%s reference=(%d, %d)", args.image_id, source, ref.x, ref.y)
    return EXIT_OK


def cmd_quantify(args) -> int:
    image = load_image(args.image, args.spacing_mm)
    stats = normalize_and_quantify(
        image, load_mask(args.lung), load_region_mask(args.regions), image_id=args.image_id, crop_border=args.crop_border
    )
    write_stats_csv([stats], args.out)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    manifest = read_manifest(args.manifest)
    out_dir = args.out_dir or manifest.out_dir
    if out_dir is None:
        raise UsageError("--out-dir is required (or set out_dir in the manifest)")
    _, code = run_pipeline(
        manifest,
        out_dir,
        _ref_config(args),
        spacing_mm=args.spacing_mm,
        jobs=args.jobs,
        keep=args.keep,
        crop_border=args.crop_border,
    )
    return code


def _parse_pred(spec: str) -> tuple[str, Path]:
    name, sep, path = spec.partition("=")
    if not sep or not name:
        raise UsageError(f"--pred expects NAME=DIR, got {spec!r}")
    return name, Path(path)


def cmd_eval_seg(args) -> int:
    preds = dict(_parse_pred(s) for s in args.pred)
    rows = evaluate_segmentation(preds, args.gt, reference=args.reference)
    out_dir = _require_out_dir(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_seg_table(rows, out_dir / "segmentation_table.csv")
    print(format_seg_table(rows))
    return EXIT_OK


def cmd_eval_det(args) -> int:
    report = evaluate_detection(args.pred, args.gt, args.iou_threshold)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "detection_ap.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_correlate(args) -> int:
    results = run_correlation(args.stats, args.rale, _require_out_dir(args), filter_positive_total=not args.all_images)
    for r in results:
        if r.error:
            print(f"{r.region:4s} {r.score_kind:8s} n={r.n:<4d} undefined: {r.error}")
        else:
            print(f"{r.region:4s} {r.score_kind:8s} n={r.n:<4d} r={r.r:.3f} p={r.p_value:.3g}")
    return EXIT_OK


def cmd_synth(args) -> int:
    out_dir = _require_out_dir(args)
    corruption = args.corruption if args.corruption else 0.0
    if isinstance(corruption, list) and len(corruption) == 1:
        corruption = corruption[0]
    if args.sweep:
        specs = synth.severity_sweep(args.sweep, seed=args.seed)
    elif args.spec:
        obj = json.loads(Path(args.spec).read_text())
        items = obj if isinstance(obj, list) else [obj]
        specs = [synth.PhantomSpec.from_dict(item) for item in items]
    else:
        raise UsageError("synth needs --spec or --sweep")
    ids = [s.image_id for s in specs]
    if len(set(ids)) != len(ids):
        raise UsageError("phantom image_ids must be unique")
    manifest = synth.write_dataset(specs, out_dir, args.candidates, corruption, seed=args.seed)
    print(manifest)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lungregions", description=__doc__.splitlines()[0])
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _add_globals(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("ensemble", cmd_ensemble, "majority-vote candidate masks and post-process")
    p.add_argument("--masks", nargs="+", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--keep", type=int, default=2, help="components kept after fusion")
    p.add_argument("--no-postprocess", action="store_true")

    p = add("landmarks", cmd_landmarks, "select the upper/lower reference point")
    p.add_argument("--detections", required=True, type=Path)
    p.add_argument("--image-id")
    p.add_argument("--height", type=int, help="image height, for bounds checking")
    p.add_argument("--out", type=Path)
    _add_ref_args(p)

    p = add("split", cmd_split, "split a fused lung mask into four regions")
    p.add_argument("--mask", required=True, type=Path)
    p.add_argument("--detections", required=True, type=Path)
    p.add_argument("--image-id", required=True)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--right", type=Path)
    p.add_argument("--left", type=Path)
    _add_ref_args(p)

    p = add("quantify", cmd_quantify, "normalized mean intensity per region")
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--lung", required=True, type=Path)
    p.add_argument("--regions", required=True, type=Path)
    p.add_argument("--image-id", default="")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--crop-border", type=int, default=0)

    p = add("pipeline", cmd_pipeline, "run the full four-region pipeline over a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--keep", type=int, default=2)
    p.add_argument("--crop-border", type=int, default=0)
    _add_ref_args(p)

    p = add("eval-seg", cmd_eval_seg, "Dice table with paired tests against a reference model")
    p.add_argument("--gt", required=True, type=Path)
    p.add_argument("--pred", action="append", required=True, metavar="NAME=DIR")
    p.add_argument("--reference", help="model compared against the others (default: last --pred)")

    p = add("eval-det", cmd_eval_det, "per-class AP and mAP of landmark detections")
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path)
    p.add_argument("--iou-threshold", type=float, default=0.5)

    p = add("correlate", cmd_correlate, "correlate regional intensities with RALE scores")
    p.add_argument("--stats", required=True, type=Path)
    p.add_argument("--rale", required=True, type=Path)
    p.add_argument("--all-images", action="store_true", help="keep images whose RALE total is 0")

    p = add("synth", cmd_synth, "write synthetic phantoms in pipeline input formats")
    p.add_argument("--spec", type=Path, help="JSON phantom spec (object or list of objects)")
    p.add_argument("--sweep", type=int, help="generate a severity sweep of this many phantoms")
    p.add_argument("--candidates", type=int, default=5)
    p.add_argument("--corruption", type=float, nargs="+", help="one rate, or one per candidate mask")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.jobs is not None and args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except (ManifestError, RasterError, LandmarkError, ValueError, KeyError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
