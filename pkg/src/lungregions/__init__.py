"""Four-region lung partition and regional opacity quantification for chest
radiographs.

Candidate lung masks are fused by majority vote, split into right and left
lungs, and cut into upper and lower regions at a row given by the left hilum
(or 20 mm below the carina when the hilum detection is unsure). Regional mean
intensities are normalized against the non-lung background and can be
correlated with RALE extent and density scores.
"""

from .ensemble import fill_holes, fuse, majority_vote, remove_isolated, split_left_right
from .landmarks import Detection, LandmarkError, ReferenceConfig, box_center, select_reference_point
from .metrics import (
    CorrelationResult,
    RaleRecord,
    average_precision,
    box_iou,
    correlate_rale,
    dice,
    mean_average_precision,
    paired_t_test,
    pearson,
)
from .quantify import RegionStats, normalize_and_quantify
from .raster import (
    LLR,
    LUR,
    REGION_NAMES,
    RLR,
    RUR,
    Box,
    GrayImage,
    Point,
    RasterError,
    load_image,
    load_mask,
    save_mask,
    save_region_mask,
)
from .regions import region_areas, split_four_regions
from .synth import PhantomSpec, PhantomTruth, generate_candidate_masks, generate_phantom

__version__ = "0.1.0"
