"""
Average precision of landmark detections
========================================

Simulates a detector by jittering the ground-truth carina and hilum boxes
of a few phantoms, then scores it with all-point average precision at an
IoU threshold of 0.5. The hilum boxes are small, so the same pixel jitter
hurts them much more than the 100-pixel carina boxes.
"""

import numpy as np

from lungregions import Box, Detection, generate_phantom, mean_average_precision
from lungregions.metrics import GroundTruthBox
from lungregions.synth import random_phantom_spec

rng = np.random.default_rng(3)
gts, preds = [], []
for i in range(40):
    truth = generate_phantom(random_phantom_spec(rng, f"img{i}"))
    for det in truth.detections:
        gts.append(GroundTruthBox(det.image_id, det.landmark, det.box))
        b = det.box
        dx, dy = rng.normal(0, 6, size=2)
        jittered = Box(b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy)
        conf = float(np.clip(rng.normal(0.85, 0.1), 0, 1))
        preds.append(Detection(det.landmark, jittered, conf, det.image_id))

per_class, m = mean_average_precision(preds, gts, iou_threshold=0.5)
for name, ap in per_class.items():
    print(f"AP[{name}] = {ap:.3f}")
print(f"mAP = {m:.3f}")
