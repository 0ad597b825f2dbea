import csv
import json
import logging

import numpy as np
import pytest

from lungregions.cli import main
from lungregions.landmarks import Detection, read_detections, round_half_up, write_detections
from lungregions.raster import Box, load_mask, load_region_mask, read_raster, save_mask
from lungregions.synth import PhantomSpec, generate_phantom

SPECS = [
    {"image_id": "a", "extent": {"RUR": 1, "RLR": 4, "LUR": 0, "LLR": 2}, "density": {"RUR": 3, "RLR": 2, "LUR": 0, "LLR": 1}},
    {"image_id": "b", "extent": {"RUR": 0, "RLR": 2, "LUR": 3, "LLR": 4}, "density": {"RUR": 0, "RLR": 1, "LUR": 2, "LLR": 3},
     "hilum_confidence": 0.56, "carina_confidence": 0.95},
    {"image_id": "c", "hilum_confidence": 0.94, "carina_confidence": 0.98, "spacing_mm": 1.3},
]


@pytest.fixture
def dataset(tmp_path):
    spec_file = tmp_path / "spec.json"
    spec_file.write_text(json.dumps(SPECS))
    assert main(["synth", "--spec", str(spec_file), "--out-dir", str(tmp_path / "data")]) == 0
    return tmp_path / "data"


def read_stats(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def closed_form_mean(truth, name, code):
    s = truth.spec
    area = int((truth.region_mask == code).sum())
    covered = round_half_up(s.extent[name] / 4 * area)
    delta = (s.baseline_body - s.baseline_lung) / 3
    return s.baseline_lung + covered * s.density[name] * delta / area - s.baseline_body


def test_synth_outputs(dataset):
    names = {p.name for p in dataset.iterdir()}
    assert {"manifest.json", "detections.jsonl", "ground_truth.jsonl", "rale.csv", "a.png", "a.png.meta"} <= names
    assert {f"a_cand{k}.png" for k in range(1, 6)} <= names
    assert len(read_detections(dataset / "detections.jsonl")) == 6
    assert (dataset / "rale.csv").read_text().splitlines()[1] == "a,RUR,1,3"


def test_pipeline_matches_closed_form(dataset, tmp_path, caplog):
    out = tmp_path / "out"
    with caplog.at_level(logging.INFO):
        assert main(["pipeline", str(dataset / "manifest.json"), "--out-dir", str(out), "--jobs", "1"]) == 0
    assert "c: source=hilum" in caplog.text
    assert "b: source=carina" in caplog.text
    rows = read_stats(out / "region_stats.csv")
    assert len(rows) == 12
    codes = {"RUR": 1, "RLR": 2, "LUR": 3, "LLR": 4}
    for item in SPECS:
        truth = generate_phantom(PhantomSpec.from_dict(item))
        for row in (r for r in rows if r["image_id"] == item["image_id"]):
            expected = closed_form_mean(truth, row["region"], codes[row["region"]])
            assert abs(float(row["mean_normalized_intensity"]) - expected) <= 1e-9
        np.testing.assert_array_equal(load_region_mask(out / f"{item['image_id']}_regions.png"), truth.region_mask)
        np.testing.assert_array_equal(load_mask(out / f"{item['image_id']}_right.png"), truth.right_lung)
    log = [json.loads(line) for line in (out / "pipeline_log.jsonl").read_text().splitlines()]
    assert [entry["source"] for entry in log] == ["hilum", "carina", "hilum"]
    assert log[2]["hilum_confidence"] == 0.94


def test_pipeline_skips_bad_image(dataset, tmp_path):
    dets = [d for d in read_detections(dataset / "detections.jsonl") if not (d.image_id == "b" and d.landmark == "carina")]
    write_detections(dets, dataset / "detections.jsonl")
    out = tmp_path / "out"
    assert main(["pipeline", str(dataset / "manifest.json"), "--out-dir", str(out), "--jobs", "1"]) == 3
    log = [json.loads(line) for line in (out / "pipeline_log.jsonl").read_text().splitlines()]
    assert [e["status"] for e in log] == ["ok", "error", "ok"]
    assert "no carina" in log[1]["error"]
    assert {r["image_id"] for r in read_stats(out / "region_stats.csv")} == {"a", "c"}


def test_pipeline_parallel_same_bytes(dataset, tmp_path):
    main(["pipeline", str(dataset / "manifest.json"), "--out-dir", str(tmp_path / "o1"), "--jobs", "1"])
    main(["--jobs", "3", "pipeline", str(dataset / "manifest.json"), "--out-dir", str(tmp_path / "o3")])
    for f in sorted((tmp_path / "o1").iterdir()):
        assert f.read_bytes() == (tmp_path / "o3" / f.name).read_bytes(), f.name


def test_pipeline_manifest_errors(tmp_path, dataset):
    empty = tmp_path / "empty.json"
    empty.write_text('{"images": []}')
    assert main(["pipeline", str(empty), "--out-dir", str(tmp_path / "o")]) == 2
    manifest = json.loads((dataset / "manifest.json").read_text())
    manifest["images"][0]["masks"].append("nope.png")
    (dataset / "bad.json").write_text(json.dumps(manifest))
    assert main(["pipeline", str(dataset / "bad.json"), "--out-dir", str(tmp_path / "o")]) == 2
    assert main(["pipeline", str(dataset / "manifest.json")]) == 1


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["ensemble"])
    assert exc.value.code == 1


def test_stepwise_commands_match_pipeline(dataset, tmp_path):
    d, o = dataset, tmp_path / "steps"
    o.mkdir()
    masks = [str(d / f"b_cand{k}.png") for k in range(1, 6)]
    assert main(["ensemble", "--masks", *masks, "--out", str(o / "fused.png")]) == 0
    assert main(["--spacing-mm", "1.6", "landmarks", "--detections", str(d / "detections.jsonl"),
                 "--image-id", "b", "--out", str(o / "ref.jsonl")]) == 0
    ref = json.loads((o / "ref.jsonl").read_text())
    assert ref["source"] == "carina"
    assert main(["split", "--spacing-mm", "1.6", "--mask", str(o / "fused.png"), "--detections", str(d / "detections.jsonl"),
                 "--image-id", "b", "--out", str(o / "regions.png")]) == 0
    assert main(["quantify", "--image", str(d / "b.png"), "--lung", str(o / "fused.png"),
                 "--regions", str(o / "regions.png"), "--image-id", "b", "--out", str(o / "stats.csv")]) == 0
    main(["pipeline", str(d / "manifest.json"), "--out-dir", str(tmp_path / "full"), "--jobs", "1"])
    full = [r for r in read_stats(tmp_path / "full" / "region_stats.csv") if r["image_id"] == "b"]
    assert read_stats(o / "stats.csv") == full
    assert read_raster(o / "regions.png").tobytes() == read_raster(tmp_path / "full" / "b_regions.png").tobytes()


def test_landmarks_all_images(dataset, capsys):
    assert main(["landmarks", "--spacing-mm", "1.6", "--detections", str(dataset / "detections.jsonl")]) == 0
    lines = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [line["source"] for line in lines] == ["hilum", "carina", "hilum"]


def _model_dirs(tmp_path, n_images=6):
    gt = tmp_path / "gt"
    good = tmp_path / "good"
    bad = tmp_path / "bad"
    rng = np.random.default_rng(0)
    for i in range(n_images):
        m = np.zeros((20, 20), bool)
        m[3:17, 2 + i % 3 : 9 + i % 3] = True
        save_mask(m, gt / f"{i}.png")
        save_mask(m, good / f"{i}.png")
        noisy = m.copy()
        noisy[rng.integers(0, 20, 3 + i), rng.integers(0, 20, 3 + i)] ^= True
        save_mask(noisy, bad / f"{i}.png")
    return gt, good, bad


def test_eval_seg(tmp_path, capsys):
    gt, good, bad = _model_dirs(tmp_path)
    out = tmp_path / "rep"
    assert main(["eval-seg", "--gt", str(gt), "--pred", f"noisy={bad}", "--pred", f"ensemble={good}", "--out-dir", str(out)]) == 0
    text = capsys.readouterr().out
    assert "1.000 ± 0.000" in text
    rows = list(csv.DictReader(open(out / "segmentation_table.csv", encoding="utf-8")))
    assert [r["model"] for r in rows] == ["noisy", "ensemble"]
    assert rows[0]["summary"].endswith("*") and rows[0]["significant"] == "1"
    assert rows[1]["p_value"] == "" and rows[1]["summary"] == "1.000 ± 0.000"


def test_eval_seg_mismatch(tmp_path):
    gt, good, bad = _model_dirs(tmp_path)
    (bad / "0.png").unlink()
    assert main(["eval-seg", "--gt", str(gt), "--pred", f"noisy={bad}", "--pred", f"e={good}", "--out-dir", str(tmp_path)]) == 2
    assert main(["eval-seg", "--gt", str(gt), "--pred", str(good), "--out-dir", str(tmp_path)]) == 1


def test_eval_det(dataset, tmp_path, capsys):
    assert main(["eval-det", "--pred", str(dataset / "detections.jsonl"), "--gt", str(dataset / "ground_truth.jsonl"),
                 "--out-dir", str(tmp_path / "det")]) == 0
    report = json.loads((tmp_path / "det" / "detection_ap.json").read_text())
    assert report == {"ap": {"carina": 1.0, "left_hilum": 1.0}, "iou_threshold": 0.5, "map": 1.0}

    gt_csv = tmp_path / "gt.csv"
    gt_csv.write_text("image_id,landmark,x_min,y_min,x_max,y_max\nimg0,carina,0,0,10,10\nimg1,carina,0,0,10,10\n")
    preds = tmp_path / "p.jsonl"
    write_detections([Detection("carina", Box(0, 0, 10, 10), 0.9, "img0"), Detection("carina", Box(0, 0, 10, 10), 0.8, "img9")], preds)
    capsys.readouterr()
    with pytest.warns(UserWarning):
        assert main(["eval-det", "--pred", str(preds), "--gt", str(gt_csv)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ap"] == {"carina": 0.5, "left_hilum": None} and report["map"] == 0.5
    (tmp_path / "empty.csv").write_text("image_id,landmark,x_min,y_min,x_max,y_max\n")
    assert main(["eval-det", "--pred", str(preds), "--gt", str(tmp_path / "empty.csv")]) == 2


def test_correlate_constant_intensities(tmp_path):
    stats = tmp_path / "stats.csv"
    rale = tmp_path / "rale.csv"
    rows = ["image_id,region,area_px,mean_normalized_intensity,background_mean"]
    rrows = ["image_id,region,extent,density"]
    for i in range(5):
        for k, region in enumerate(("RUR", "RLR", "LUR", "LLR")):
            rows.append(f"i{i},{region},10,-5.0,100.0")
            rrows.append(f"i{i},{region},{(i + k) % 5},{(i + k) % 4}")
    stats.write_text("\n".join(rows) + "\n")
    rale.write_text("\n".join(rrows) + "\n")
    assert main(["correlate", "--stats", str(stats), "--rale", str(rale), "--out-dir", str(tmp_path / "c")]) == 2
    cells = json.loads((tmp_path / "c" / "correlation.json").read_text())
    assert len(cells) == 8
    assert all(c["r"] is None and "constant" in c["error"] and c["n"] == 5 for c in cells)
