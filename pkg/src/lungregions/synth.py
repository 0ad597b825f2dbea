"""Parametric chest phantoms with known lungs, regions, landmarks and scores.

A phantom is two axis-aligned elliptical lung fields on a uniform body
background. Opacities are painted into each region from its bottom row
upward, covering ``extent / 4`` of the region with an intensity increase of
``density * (baseline_body - baseline_lung) / 3``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage as ndi

from .landmarks import CARINA, LEFT_HILUM, Detection, box_center, offset_pixels, round_half_up, write_detections
from .metrics import RaleRecord, write_rale_csv
from .raster import (
    REGION_CODES,
    REGION_NAMES,
    Box,
    GrayImage,
    Point,
    save_image,
    save_mask,
    save_region_mask,
)
from .regions import split_four_regions

CARINA_BOX_PX = 100
HILUM_BOX_PX = 20
SPECKLE_FRACTION = 0.01  # speckle probability per pixel, relative to the corruption rate
BAND_PX = 3
SEVERITY_LADDER = ((0, 0), (1, 1), (2, 2), (3, 2), (4, 3))

_ZERO_SCORES = {name: 0 for name in REGION_NAMES.values()}


@dataclass(frozen=True)
class PhantomSpec:
    image_id: str = "phantom"
    width: int = 256
    height: int = 256
    spacing_mm: float = 1.6
    baseline_lung: float = 60.0
    baseline_body: float = 150.0
    extent: dict = field(default_factory=lambda: dict(_ZERO_SCORES))
    density: dict = field(default_factory=lambda: dict(_ZERO_SCORES))
    noise_sigma: float = 0.0
    seed: int = 0
    # geometry, as fractions of the raster size
    lung_width_frac: float = 0.30
    lung_height_frac: float = 0.60
    separation_frac: float = 0.44
    center_y_frac: float = 0.55
    hilum_confidence: float = 0.95
    carina_confidence: float = 0.98
    carina_offset_mm: float = 20.0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("phantom raster too small")
        if not self.spacing_mm > 0:
            raise ValueError("spacing_mm must be positive")
        if not 0 <= self.baseline_lung < self.baseline_body:
            raise ValueError("need 0 <= baseline_lung < baseline_body")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for name in REGION_NAMES.values():
            e = self.extent.get(name, 0)
            d = self.density.get(name, 0)
            if not (0 <= e <= 4 and 0 <= d <= 3):
                raise ValueError(f"{name}: extent {e} / density {d} out of range")
        if set(self.extent) - set(REGION_CODES) or set(self.density) - set(REGION_CODES):
            raise ValueError("unknown region name in scores")
        if self.separation_frac <= self.lung_width_frac:
            raise ValueError("lungs would overlap: separation_frac must exceed lung_width_frac")

    @classmethod
    def from_dict(cls, obj: dict) -> PhantomSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown phantom fields {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class PhantomTruth:
    spec: PhantomSpec
    image: GrayImage
    lung_mask: np.ndarray
    right_lung: np.ndarray
    left_lung: np.ndarray
    region_mask: np.ndarray
    reference: Point
    detections: tuple[Detection, ...]
    rale: tuple[RaleRecord, ...]
    opacity_mask: np.ndarray


def _ellipse(shape, cx, cy, a, b) -> np.ndarray:
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    return ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0


def _clip_box(x0, y0, x1, y1, width, height) -> Box:
    return Box(max(0, x0), max(0, y0), min(width, x1), min(height, y1))


def opacity_pixels(region: np.ndarray, extent: int) -> np.ndarray:
    """Region pixels covered by an opacity of the given extent, filled from
    the bottom row upward (left to right within a row)."""
    rows, cols = np.nonzero(region)
    out = np.zeros(region.shape, dtype=bool)
    if extent == 0:
        return out
    target = round_half_up(extent / 4 * len(rows))
    if target == 0:
        raise ValueError(f"region of {len(rows)} px too small for extent {extent}")
    order = np.lexsort((cols, -rows))[:target]
    out[rows[order], cols[order]] = True
    return out


def generate_phantom(spec: PhantomSpec) -> PhantomTruth:
    w, h = spec.width, spec.height
    a = spec.lung_width_frac * w / 2
    b = spec.lung_height_frac * h / 2
    cy = spec.center_y_frac * h
    cx_right = w / 2 - spec.separation_frac * w / 2
    cx_left = w / 2 + spec.separation_frac * w / 2
    if cx_right - a < 0 or cx_left + a > w - 1 or cy - b < 0 or cy + b > h - 1:
        raise ValueError("lung ellipses do not fit in the raster")
    right = _ellipse((h, w), cx_right, cy, a, b)
    left = _ellipse((h, w), cx_left, cy, a, b)
    lung = right | left

    # carina sits on the midline, one offset above the lungs' mid row
    offset = offset_pixels(spec.carina_offset_mm, spec.spacing_mm)
    carina_pt = Point(round_half_up(w / 2), round_half_up(cy) - offset)
    if not 0 <= carina_pt.y < h:
        raise ValueError(f"carina row {carina_pt.y} outside raster; offset of {offset} px too large")
    half = CARINA_BOX_PX // 2
    carina_box = _clip_box(carina_pt.x - half, carina_pt.y - half, carina_pt.x + half, carina_pt.y + half, w, h)
    carina_c = box_center(carina_box)

    hilum_y = carina_c.y + offset
    if not 0 <= hilum_y < h:
        raise ValueError(f"hilum row {hilum_y} outside raster")
    left_cols = np.nonzero(left[hilum_y])[0]
    if len(left_cols) == 0:
        raise ValueError("hilum row does not cross the left lung")
    medial_x = int(left_cols.min())
    hh = HILUM_BOX_PX // 2
    hilum_box = _clip_box(medial_x - hh, hilum_y - hh, medial_x + hh, hilum_y + hh, w, h)
    ref = box_center(hilum_box)
    if ref.y != hilum_y:
        raise ValueError("hilum box clipped by the raster; enlarge the phantom")

    regions = split_four_regions(right, left, ref)

    delta = (spec.baseline_body - spec.baseline_lung) / 3
    img = np.full((h, w), float(spec.baseline_body))
    img[lung] = spec.baseline_lung
    opacity = np.zeros((h, w), dtype=bool)
    for code, name in REGION_NAMES.items():
        patch = opacity_pixels(regions == code, spec.extent.get(name, 0))
        img[patch] += spec.density.get(name, 0) * delta
        opacity |= patch
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        img += rng.normal(0.0, spec.noise_sigma, size=img.shape)
    pixels = np.clip(np.round(img), 0, 65535).astype(np.uint16)

    detections = (
        Detection(CARINA, carina_box, spec.carina_confidence, spec.image_id),
        Detection(LEFT_HILUM, hilum_box, spec.hilum_confidence, spec.image_id),
    )
    rale = tuple(
        RaleRecord(spec.image_id, name, spec.extent.get(name, 0), spec.density.get(name, 0))
        for name in REGION_NAMES.values()
    )
    return PhantomTruth(
        spec=spec,
        image=GrayImage(pixels, spec.spacing_mm),
        lung_mask=lung,
        right_lung=right,
        left_lung=left,
        region_mask=regions,
        reference=ref,
        detections=detections,
        rale=rale,
        opacity_mask=opacity,
    )


def corrupt_mask(mask: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Perturb a lung mask the way a weaker segmentation model might.

    The whole boundary is first eroded or dilated by ``round(10 * rate)``
    pixels, then pixels in a band around the boundary flip with probability
    ``rate`` and speckle appears anywhere with probability
    ``rate * SPECKLE_FRACTION``.
    """
    if not 0 <= rate < 1:
        raise ValueError("corruption rate must lie in [0, 1)")
    out = mask.copy()
    if rate == 0:
        return out
    shift = round_half_up(10 * rate)
    if shift > 0 and out.any():
        op = ndi.binary_erosion if rng.random() < 0.5 else ndi.binary_dilation
        out = op(out, iterations=shift)
    inner = out & ~ndi.binary_erosion(out, iterations=BAND_PX)
    outer = ndi.binary_dilation(out, iterations=BAND_PX) & ~out
    flips = rng.random(out.shape) < rate
    out = (out & ~(inner & flips)) | (outer & flips)
    speckle = rng.random(out.shape) < rate * SPECKLE_FRACTION
    return out ^ speckle


def generate_candidate_masks(truth, n: int, corruption=0.0, seed: int = 0) -> list[np.ndarray]:
    """``n`` perturbed copies of the true lung mask.

    ``corruption`` is one rate for every mask or a sequence of ``n`` rates.
    ``truth`` may be a :class:`PhantomTruth` or a boolean mask.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    mask = truth.lung_mask if isinstance(truth, PhantomTruth) else np.asarray(truth, dtype=bool)
    rates = [float(corruption)] * n if np.isscalar(corruption) else [float(r) for r in corruption]
    if len(rates) != n:
        raise ValueError(f"expected {n} corruption rates, got {len(rates)}")
    out = []
    for i, rate in enumerate(rates):
        rng = np.random.default_rng([seed, i])
        out.append(corrupt_mask(mask, rate, rng))
    return out


# --- sweeps ---------------------------------------------------------------

def severity_sweep(count: int = 100, seed: int = 0, noise_sigma: float = 2.0, **overrides) -> list[PhantomSpec]:
    """Phantoms whose per-region scores climb a shared severity ladder, so
    extent and density rise together from (0, 0) to (4, 3)."""
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(count):
        levels = rng.integers(0, len(SEVERITY_LADDER), size=4)
        extent = {name: SEVERITY_LADDER[lv][0] for name, lv in zip(REGION_NAMES.values(), levels)}
        density = {name: SEVERITY_LADDER[lv][1] for name, lv in zip(REGION_NAMES.values(), levels)}
        specs.append(
            PhantomSpec(
                image_id=f"sweep{i:03d}",
                extent=extent,
                density=density,
                noise_sigma=noise_sigma,
                seed=int(rng.integers(2**31)),
                hilum_confidence=round(float(rng.uniform(0.5, 1.0)), 3),
                **overrides,
            )
        )
    return specs


def random_phantom_spec(rng: np.random.Generator, image_id: str = "random") -> PhantomSpec:
    """A phantom with random geometry, independent random scores and noise."""
    lung_w = float(rng.uniform(0.22, 0.34))
    names = list(REGION_NAMES.values())
    return PhantomSpec(
        image_id=image_id,
        width=int(rng.integers(192, 321)),
        height=int(rng.integers(192, 321)),
        spacing_mm=float(rng.uniform(1.0, 2.0)),
        baseline_lung=float(rng.integers(20, 200)),
        baseline_body=float(rng.integers(210, 400)),
        extent={n: int(rng.integers(0, 5)) for n in names},
        density={n: int(rng.integers(0, 4)) for n in names},
        noise_sigma=float(rng.uniform(0, 5)),
        seed=int(rng.integers(2**31)),
        lung_width_frac=lung_w,
        lung_height_frac=float(rng.uniform(0.45, 0.7)),
        separation_frac=lung_w + float(rng.uniform(0.04, 0.2)),
        center_y_frac=float(rng.uniform(0.5, 0.6)),
        hilum_confidence=float(rng.uniform(0.5, 1.0)),
        carina_confidence=float(rng.uniform(0.5, 1.0)),
    )


# --- dataset writing ------------------------------------------------------

def write_dataset(
    specs: Sequence[PhantomSpec],
    out_dir,
    n_candidates: int = 5,
    corruption=0.0,
    seed: int = 0,
) -> Path:
    """Write phantoms in the pipeline's input formats and return the
    manifest path.

    Per image: ``<id>.png`` (+ ``.meta`` sidecar), ``<id>_gt_lung.png``,
    ``<id>_gt_regions.png`` and ``<id>_cand<k>.png``. Shared files:
    ``detections.jsonl``, ``ground_truth.jsonl``, ``rale.csv`` and
    ``manifest.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    detections, rale, entries = [], [], []
    for idx, spec in enumerate(specs):
        truth = generate_phantom(spec)
        iid = spec.image_id
        save_image(truth.image, out_dir / f"{iid}.png")
        save_mask(truth.lung_mask, out_dir / f"{iid}_gt_lung.png")
        save_region_mask(truth.region_mask, out_dir / f"{iid}_gt_regions.png")
        cands = generate_candidate_masks(truth, n_candidates, corruption, seed=seed * 1_000_003 + idx)
        cand_names = []
        for k, m in enumerate(cands, 1):
            name = f"{iid}_cand{k}.png"
            save_mask(m, out_dir / name)
            cand_names.append(name)
        detections.extend(truth.detections)
        rale.extend(truth.rale)
        entries.append(
            {
                "image_id": iid,
                "image": f"{iid}.png",
                "masks": cand_names,
                "detections": "detections.jsonl",
                "spacing_mm": spec.spacing_mm,
            }
        )
    write_detections(detections, out_dir / "detections.jsonl")
    # ground truth carries the same boxes without a meaningful confidence
    write_detections(
        [Detection(d.landmark, d.box, 1.0, d.image_id) for d in detections], out_dir / "ground_truth.jsonl"
    )
    write_rale_csv(rale, out_dir / "rale.csv")
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"images": entries}, indent=2, sort_keys=True) + "\n")
    return manifest
