"""Batch four-region pipeline and evaluation reports.

The per-image pipeline is: majority vote of candidate masks, hole filling
and isolated-region removal, reference point from landmark detections,
right/left separation, four-region split, and normalized regional means.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ensemble import fuse, split_left_right
from .landmarks import CARINA, LEFT_HILUM, Detection, LandmarkError, ReferenceConfig, best_detection, read_detections, select_reference_point
from .metrics import (
    SCORE_KINDS,
    GroundTruthBox,
    correlate_rale,
    dice,
    join_scores,
    mean_average_precision,
    paired_t_test,
    read_rale_csv,
)
from .quantify import RegionStats, normalize_and_quantify, read_stats_csv, write_stats_csv
from .raster import REGION_NAMES, Box, RasterError, load_image, load_mask, save_mask, save_region_mask
from .regions import split_four_regions

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    image: Path
    masks: tuple[Path, ...]
    detections: Path
    spacing_mm: float | None = None


@dataclass(frozen=True)
class RunManifest:
    images: tuple[ImageEntry, ...]
    out_dir: Path | None = None


def read_manifest(path) -> RunManifest:
    """Parse a JSON manifest. Relative paths resolve against the manifest's
    directory.

    ``{"out_dir": "...", "images": [{"image_id", "image", "masks": [...],
    "detections", "spacing_mm"}]}`` (``out_dir`` and ``spacing_mm`` optional)
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: cannot read manifest ({exc})") from exc
    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    entries = []
    for i, item in enumerate(obj.get("images", [])):
        try:
            entry = ImageEntry(
                image_id=str(item["image_id"]),
                image=resolve(item["image"]),
                masks=tuple(resolve(m) for m in item["masks"]),
                detections=resolve(item["detections"]),
                spacing_mm=float(item["spacing_mm"]) if item.get("spacing_mm") is not None else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{path}: image entry {i} is malformed ({exc})") from exc
        if not entry.masks:
            raise ManifestError(f"{path}: image {entry.image_id} lists no masks")
        missing = [p for p in (entry.image, entry.detections, *entry.masks) if not p.exists()]
        if missing:
            raise ManifestError(f"{path}: image {entry.image_id} references missing files {[str(p) for p in missing]}")
        entries.append(entry)
    if not entries:
        raise ManifestError(f"{path}: manifest lists no images")
    out_dir = resolve(obj["out_dir"]) if obj.get("out_dir") else None
    return RunManifest(tuple(entries), out_dir)


@dataclass
class ImageResult:
    image_id: str
    ok: bool
    log: dict
    stats: RegionStats | None = None
    outputs: dict = field(default_factory=dict)


def process_image(
    entry: ImageEntry,
    out_dir: Path,
    cfg: ReferenceConfig = ReferenceConfig(),
    spacing_mm: float | None = None,
    keep: int = 2,
    crop_border: int = 0,
) -> ImageResult:
    """Run the four-region pipeline on one image. Errors are captured in the
    result rather than raised, so one bad image cannot stop a batch."""
    log = {"image_id": entry.image_id}
    try:
        image = load_image(entry.image, entry.spacing_mm if entry.spacing_mm is not None else spacing_mm)
        masks = [load_mask(p) for p in entry.masks]
        lung = fuse(masks, keep=keep)
        if lung.shape != image.shape:
            raise RasterError(f"mask shape {lung.shape} differs from image shape {image.shape}")

        dets = [d for d in read_detections(entry.detections) if d.image_id == entry.image_id]
        for name, key in ((LEFT_HILUM, "hilum_confidence"), (CARINA, "carina_confidence")):
            best = best_detection(dets, name)
            log[key] = best.confidence if best else None
        ref, source = select_reference_point(dets, image.spacing_mm, cfg, image_height=image.height)
        log.update(source=source, reference=[ref.x, ref.y], spacing_mm=image.spacing_mm)

        right, left = split_left_right(lung, fallback_column=ref.x)
        regions = split_four_regions(right, left, ref)
        stats = normalize_and_quantify(image, lung, regions, image_id=entry.image_id, crop_border=crop_border)
    except (RasterError, LandmarkError, ValueError, OSError) as exc:
        log.update(status="error", error=str(exc))
        return ImageResult(entry.image_id, False, log)

    outputs = {
        "fused": f"{entry.image_id}_fused.png",
        "right": f"{entry.image_id}_right.png",
        "left": f"{entry.image_id}_left.png",
        "regions": f"{entry.image_id}_regions.png",
    }
    save_mask(lung, out_dir / outputs["fused"])
    save_mask(right, out_dir / outputs["right"])
    save_mask(left, out_dir / outputs["left"])
    save_region_mask(regions, out_dir / outputs["regions"])
    log["status"] = "ok"
    log["area_px"] = {name: v.area_px for name, v in stats.regions.items()}
    return ImageResult(entry.image_id, True, log, stats, outputs)


def _process_star(args):
    return process_image(*args)


def run_pipeline(
    manifest: RunManifest,
    out_dir,
    cfg: ReferenceConfig = ReferenceConfig(),
    spacing_mm: float | None = None,
    jobs: int | None = None,
    keep: int = 2,
    crop_border: int = 0,
) -> tuple[list[ImageResult], int]:
    """Process every manifest image and write ``region_stats.csv`` and
    ``pipeline_log.jsonl`` (manifest order). Returns results and exit code."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"{out_dir}: output directory is not writable")
    jobs = jobs or os.cpu_count() or 1
    tasks = [(e, out_dir, cfg, spacing_mm, keep, crop_border) for e in manifest.images]
    if jobs == 1 or len(tasks) == 1:
        results = [_process_star(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            # map() yields in submission order
            results = list(pool.map(_process_star, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))

    for res in results:
        if res.ok:
            logger.info("%s: source=%s reference=%s", res.image_id, res.log["source"], res.log["reference"])
        else:
            logger.error("%s: skipped (%s)", res.image_id, res.log["error"])
    write_stats_csv([r.stats for r in results if r.ok], out_dir / "region_stats.csv")
    with open(out_dir / "pipeline_log.jsonl", "w") as fh:
        for res in results:
            fh.write(json.dumps(res.log, sort_keys=True) + "\n")

    n_ok = sum(r.ok for r in results)
    if n_ok == len(results):
        code = EXIT_OK
    elif n_ok == 0:
        code = EXIT_DATA
    else:
        code = EXIT_PARTIAL
    return results, code


# --- segmentation evaluation ---------------------------------------------

@dataclass(frozen=True)
class ModelRow:
    name: str
    dice: tuple[float, ...]
    p_value: float | None  # paired test against the reference model

    @property
    def mean(self) -> float:
        return float(np.mean(self.dice))

    @property
    def std(self) -> float:
        return float(np.std(self.dice, ddof=1)) if len(self.dice) > 1 else 0.0

    @property
    def significant(self) -> bool:
        return self.p_value is not None and self.p_value < 0.05

    def summary(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f}" + ("*" if self.significant else "")


def _mask_files(d: Path) -> dict[str, Path]:
    return {p.name: p for p in sorted(d.iterdir()) if p.suffix.lower() in (".png", ".pgm")}


def evaluate_segmentation(pred_dirs: dict[str, Path], gt_dir, reference: str | None = None) -> list[ModelRow]:
    """Dice of each model's masks against ground truth, and a paired t-test
    of the reference model (default: the last one) against every other."""
    if not pred_dirs:
        raise ValueError("no prediction directories")
    gt_files = _mask_files(Path(gt_dir))
    if not gt_files:
        raise ValueError(f"{gt_dir}: no mask files")
    names = list(pred_dirs)
    reference = reference or names[-1]
    if reference not in pred_dirs:
        raise ValueError(f"reference model {reference!r} not among {names}")

    gts = {k: load_mask(p) for k, p in gt_files.items()}
    scores = {}
    for name, d in pred_dirs.items():
        files = _mask_files(Path(d))
        if set(files) != set(gt_files):
            diff = sorted(set(files) ^ set(gt_files))
            raise ValueError(f"{name}: file set differs from ground truth ({diff[:5]})")
        scores[name] = tuple(dice(load_mask(files[k]), gts[k]) for k in sorted(gt_files))

    ref_scores = scores[reference]
    rows = []
    for name in names:
        if name == reference:
            continue
        p = paired_t_test(ref_scores, scores[name]).p_value if len(ref_scores) > 1 else None
        rows.append(ModelRow(name, scores[name], p))
    rows.append(ModelRow(reference, ref_scores, None))
    return rows


def write_seg_table(rows: Sequence[ModelRow], path) -> None:
    lines = ["no,model,mean,std,p_value,significant,summary"]
    for i, row in enumerate(rows, 1):
        p = "" if row.p_value is None else repr(row.p_value)
        lines.append(f"{i},{row.name},{row.mean:.6f},{row.std:.6f},{p},{int(row.significant)},{row.summary()}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def format_seg_table(rows: Sequence[ModelRow]) -> str:
    width = max(len(r.name) for r in rows)
    out = [f"{'No.':<4}{'Model':<{width + 2}}Mean ± Std."]
    out += [f"{i:<4}{r.name:<{width + 2}}{r.summary()}" for i, r in enumerate(rows, 1)]
    out.append("(* significant difference from the reference model, p < 0.05)")
    return "\n".join(out)


# --- detection evaluation ------------------------------------------------

def read_ground_truth(path) -> list[GroundTruthBox]:
    """Ground-truth boxes from JSON lines (detection format, confidence
    ignored) or CSV ``image_id,landmark,x_min,y_min,x_max,y_max``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as fh:
            return [
                GroundTruthBox(
                    row["image_id"],
                    row["landmark"],
                    Box(float(row["x_min"]), float(row["y_min"]), float(row["x_max"]), float(row["y_max"])),
                )
                for row in csv.DictReader(fh)
            ]
    return [GroundTruthBox(d.image_id, d.landmark, d.box) for d in read_detections(path)]


def evaluate_detection(pred_path, gt_path, iou_threshold: float = 0.5) -> dict:
    preds: list[Detection] = read_detections(pred_path)
    gts = read_ground_truth(gt_path)
    if not gts:
        raise ValueError(f"{gt_path}: empty ground truth")
    per_class, m = mean_average_precision(preds, gts, iou_threshold)
    return {"iou_threshold": iou_threshold, "ap": per_class, "map": m}


# --- correlation ----------------------------------------------------------

def boxplot_rows(stats, scores, filter_positive_total: bool = True) -> dict[str, list[list]]:
    """Five-number summaries of regional mean intensity per score value."""
    groups: dict[tuple[str, str, int], list[float]] = {}
    for region, mean, rec in join_scores(stats, scores, filter_positive_total):
        for kind in SCORE_KINDS:
            groups.setdefault((region, kind, getattr(rec, kind)), []).append(mean)
    out: dict[str, list[list]] = {name: [] for name in REGION_NAMES.values()}
    for (region, kind, score), values in sorted(groups.items()):
        q = np.percentile(values, [0, 25, 50, 75, 100])
        out[region].append([kind, score, len(values), *(float(v) for v in q)])
    return out


def run_correlation(stats_csv, rale_csv, out_dir, filter_positive_total: bool = True):
    """Write ``correlation.json`` and ``boxplot_<REGION>.csv`` files.

    Raises ``ValueError`` when no cell yields a defined correlation.
    """
    stats = read_stats_csv(stats_csv)
    scores = read_rale_csv(rale_csv)
    results = correlate_rale(stats, scores, filter_positive_total)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "correlation.json").write_text(json.dumps([r.to_json() for r in results], indent=2) + "\n")
    for region, rows in boxplot_rows(stats, scores, filter_positive_total).items():
        lines = ["score_kind,score,n,min,q1,median,q3,max"]
        lines += [",".join(repr(v) if isinstance(v, float) else str(v) for v in row) for row in rows]
        (out_dir / f"boxplot_{region}.csv").write_text("\n".join(lines) + "\n")
    for r in results:
        if r.error:
            logger.error("%s/%s: %s", r.region, r.score_kind, r.error)
    if all(r.error for r in results):
        raise ValueError("no region/score cell has a defined correlation")
    return results
