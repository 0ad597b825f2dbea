"""Reference point that divides upper from lower lung regions.

The left hilum box center is used when the detector is confident about it;
otherwise the point a fixed distance (20 mm by default) below the carina box
center is used instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .raster import Box, Point

CARINA = "carina"
LEFT_HILUM = "left_hilum"
LANDMARKS = (CARINA, LEFT_HILUM)


class LandmarkError(ValueError):
    """No usable reference point could be derived from the detections."""


@dataclass(frozen=True)
class Detection:
    landmark: str
    box: Box
    confidence: float = 1.0
    image_id: str = ""

    def __post_init__(self):
        if self.landmark not in LANDMARKS:
            raise ValueError(f"unknown landmark {self.landmark!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "landmark": self.landmark,
            "box": self.box.as_list(),
            "confidence": self.confidence,
        }

    @classmethod
    def from_json(cls, obj: dict) -> Detection:
        return cls(
            landmark=obj["landmark"],
            box=Box(*(float(v) for v in obj["box"])),
            confidence=float(obj.get("confidence", 1.0)),
            image_id=str(obj.get("image_id", "")),
        )


@dataclass(frozen=True)
class ReferenceConfig:
    confidence_threshold: float = 0.9
    carina_offset_mm: float = 20.0

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must lie in [0, 1]")
        if self.carina_offset_mm < 0:
            raise ValueError("carina_offset_mm must be >= 0")


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def box_center(box: Box) -> Point:
    return Point(
        round_half_up((box.x_min + box.x_max) / 2),
        round_half_up((box.y_min + box.y_max) / 2),
    )


def offset_pixels(offset_mm: float, spacing_mm: float) -> int:
    if not spacing_mm > 0:
        raise ValueError("spacing_mm must be positive")
    return round_half_up(offset_mm / spacing_mm)


def best_detection(detections: Iterable[Detection], landmark: str) -> Detection | None:
    """Highest-confidence detection of one class; ties go to the smaller
    y_min, then the smaller x_min."""
    candidates = [d for d in detections if d.landmark == landmark]
    if not candidates:
        return None
    return min(candidates, key=lambda d: (-d.confidence, d.box.y_min, d.box.x_min))


def select_reference_point(
    detections: Sequence[Detection],
    spacing_mm: float,
    cfg: ReferenceConfig = ReferenceConfig(),
    image_height: int | None = None,
) -> tuple[Point, str]:
    """Return the reference point and its source (``"hilum"`` or ``"carina"``).

    A hilum confidence equal to the threshold falls back to the carina.
    """
    if not detections:
        raise LandmarkError("no detections")
    hilum = best_detection(detections, LEFT_HILUM)
    if hilum is not None and hilum.confidence > cfg.confidence_threshold:
        point, source = box_center(hilum.box), "hilum"
    else:
        carina = best_detection(detections, CARINA)
        if carina is None:
            raise LandmarkError(
                "left hilum not confident enough and no carina detection"
                if hilum is not None
                else "neither left hilum nor carina detected"
            )
        c = box_center(carina.box)
        point = Point(c.x, c.y + offset_pixels(cfg.carina_offset_mm, spacing_mm))
        source = "carina"
    if image_height is not None and not 0 <= point.y < image_height:
        raise LandmarkError(f"reference row {point.y} outside image rows 0..{image_height - 1}")
    return point, source


def read_detections(path) -> list[Detection]:
    """Read detections from a JSON-lines file (one object per line)."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(Detection.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad detection record ({exc})") from exc
    return out


def write_detections(detections: Iterable[Detection], path) -> None:
    lines = [json.dumps(d.to_json(), sort_keys=True) for d in detections]
    Path(path).write_text("".join(line + "\n" for line in lines))
