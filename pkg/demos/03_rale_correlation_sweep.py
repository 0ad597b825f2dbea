"""
Regional intensity against RALE scores
======================================

Writes a 100-phantom severity sweep to disk, runs the batch pipeline on its
manifest and correlates the regional means with the extent and density
scores, keeping only images whose RALE total is above zero. This is the
same route the ``synth``, ``pipeline`` and ``correlate`` subcommands take.
"""

import json
import tempfile
from pathlib import Path

from lungregions.pipeline import read_manifest, run_correlation, run_pipeline
from lungregions.synth import severity_sweep, write_dataset

root = Path(tempfile.mkdtemp(prefix="lungregions-sweep-"))
manifest = write_dataset(severity_sweep(100, seed=0), root / "data", 5, [0, 0, 0, 0.3, 0.3])

results, code = run_pipeline(read_manifest(manifest), root / "out")
print(f"pipeline exit code {code}; {sum(r.ok for r in results)} images processed")
sources = [r.log["source"] for r in results]
print(f"reference from hilum: {sources.count('hilum')}, from carina: {sources.count('carina')}")

cells = run_correlation(root / "out" / "region_stats.csv", root / "data" / "rale.csv", root / "corr")
for c in cells:
    print(f"{c.region} {c.score_kind:7s} n={c.n:3d} r={c.r:.3f} p={c.p_value:.1e}")

# Per-score summaries, the layout used for box plots.
print((root / "corr" / "boxplot_LLR.csv").read_text())
print(json.dumps(cells[0].to_json()))
