"""Background-relative intensity normalization and per-region means."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .raster import REGION_CODES, REGION_NAMES, GrayImage, as_binary_mask, as_region_mask, check_same_shape

CSV_COLUMNS = ["image_id", "region", "area_px", "mean_normalized_intensity", "background_mean"]


@dataclass(frozen=True)
class RegionValue:
    area_px: int
    mean_normalized_intensity: float | None  # None for an empty region


@dataclass(frozen=True)
class RegionStats:
    image_id: str
    background_mean: float
    regions: dict[str, RegionValue] = field(default_factory=dict)

    def mean(self, region: str) -> float | None:
        return self.regions[region].mean_normalized_intensity

    def rows(self) -> list[dict]:
        return [
            {
                "image_id": self.image_id,
                "region": name,
                "area_px": value.area_px,
                "mean_normalized_intensity": value.mean_normalized_intensity,
                "background_mean": self.background_mean,
            }
            for name, value in self.regions.items()
        ]


def border_mask(shape, crop_border: int) -> np.ndarray:
    """True on pixels within ``crop_border`` pixels of the raster edge."""
    out = np.zeros(shape, dtype=bool)
    if crop_border > 0:
        out[:crop_border, :] = True
        out[-crop_border:, :] = True
        out[:, :crop_border] = True
        out[:, -crop_border:] = True
    return out


def normalize_and_quantify(
    image: GrayImage,
    lung,
    regions,
    image_id: str = "",
    crop_border: int = 0,
) -> RegionStats:
    """Mean of (pixel - background mean) over each of the four regions.

    The background is every non-lung pixel, optionally excluding a
    ``crop_border``-pixel frame (collimation margin).
    """
    lung = as_binary_mask(lung, "lung")
    labels = as_region_mask(regions)
    check_same_shape(image.pixels, lung, labels, names=("image", "lung", "regions"))
    if np.any((labels > 0) & ~lung):
        raise ValueError("region labels extend outside the lung mask")
    if crop_border < 0:
        raise ValueError("crop_border must be >= 0")

    pixels = image.pixels.astype(np.float64)
    outside = ~lung & ~border_mask(lung.shape, crop_border)
    if not outside.any():
        raise ValueError("no background pixels outside the lung")
    background_mean = float(pixels[outside].mean())

    values = {}
    for code, name in REGION_NAMES.items():
        sel = labels == code
        n = int(sel.sum())
        mean = float((pixels[sel] - background_mean).mean()) if n else None
        values[name] = RegionValue(n, mean)
    return RegionStats(image_id, background_mean, values)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_stats_csv(stats: Iterable[RegionStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for s in stats:
            for row in s.rows():
                writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def read_stats_csv(path) -> list[RegionStats]:
    """Inverse of :func:`write_stats_csv`; rows are grouped by image_id in
    file order."""
    grouped: dict[str, dict] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            region = row["region"]
            if region not in REGION_CODES:
                raise ValueError(f"{path}: unknown region {region!r}")
            entry = grouped.setdefault(row["image_id"], {"bg": float(row["background_mean"]), "regions": {}})
            raw = row["mean_normalized_intensity"]
            entry["regions"][region] = RegionValue(int(row["area_px"]), float(raw) if raw != "" else None)
    return [RegionStats(image_id, e["bg"], e["regions"]) for image_id, e in grouped.items()]
