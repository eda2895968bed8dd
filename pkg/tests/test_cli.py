import json
from pathlib import Path

import numpy as np
import pytest

from breastseg.cli import main
from breastseg.phantom import PhantomSpec, generate_phantom
from breastseg.volume import read_volume, translate_volume, write_volume

EXTENT = ["--extent", "96", "96", "96"]


def _tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def _make_cases(tmp_path, n=2, extra=()):
    cases = tmp_path / "cases"
    rc = main(["phantom", "--out", str(cases), "--cases", str(n), "--seed", "10",
               *EXTENT, *extra])
    assert rc == 0
    return cases


def test_phantom_segment_evaluate_roundtrip(tmp_path, capsys):
    cases = _make_cases(tmp_path, n=2, extra=["--noise-sigma", "0", "--jitter", "0"])
    case_dirs = sorted(p.name for p in cases.iterdir())
    assert case_dirs == ["phantom_00010", "phantom_00011"]

    pred = tmp_path / "pred"
    assert main(["segment", "--input", str(cases), "--out", str(pred)]) == 0
    for c in case_dirs:
        assert (pred / c / "labels.json").exists()
        assert (pred / c / "box.json").exists()
        prov = json.loads((pred / c / "provenance.json").read_text())
        assert prov["boxes"]["left"]["provenance"] == {"x": "fused", "y": "fused", "z": "fused"}

    out = tmp_path / "metrics"
    assert main(["evaluate", "--pred", str(pred), "--gt", str(cases),
                 "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    # Noise-free inputs: the pipeline reproduces the ground truth exactly.
    for cls in ("tumor", "adipose", "gland", "vascular", "skin", "chest"):
        assert summary["dice_percent"][cls]["mean"] == 100.0
    assert summary["fp_tumor_components"]["mean"] == 0.0
    lines = (out / "per_case.jsonl").read_text().strip().splitlines()
    assert len(lines) == 2
    table = capsys.readouterr().out
    assert "Tumor" in table and "Chest" in table


def test_segment_rerun_is_byte_identical(tmp_path):
    cases = _make_cases(tmp_path, n=1, extra=["--fp-blobs", "5"])
    pred1 = tmp_path / "p1"
    pred2 = tmp_path / "p2"
    assert main(["segment", "--input", str(cases), "--out", str(pred1)]) == 0
    assert main(["segment", "--input", str(cases), "--out", str(pred2)]) == 0
    assert _tree_bytes(pred1) == _tree_bytes(pred2)


def test_jobs_parallel_identical(tmp_path):
    cases1 = tmp_path / "c1"
    cases2 = tmp_path / "c2"
    args = ["--cases", "3", "--seed", "4", *EXTENT, "--fp-blobs", "3"]
    assert main(["phantom", "--out", str(cases1), "--jobs", "1", *args]) == 0
    assert main(["phantom", "--out", str(cases2), "--jobs", "3", *args]) == 0
    assert _tree_bytes(cases1) == _tree_bytes(cases2)

    pred1 = tmp_path / "p1"
    pred2 = tmp_path / "p2"
    assert main(["segment", "--input", str(cases1), "--out", str(pred1), "--jobs", "1"]) == 0
    assert main(["segment", "--input", str(cases1), "--out", str(pred2), "--jobs", "3"]) == 0
    assert _tree_bytes(pred1) == _tree_bytes(pred2)

    m1 = tmp_path / "m1"
    m2 = tmp_path / "m2"
    assert main(["evaluate", "--pred", str(pred1), "--gt", str(cases1),
                 "--out", str(m1), "--jobs", "1"]) == 0
    assert main(["evaluate", "--pred", str(pred1), "--gt", str(cases1),
                 "--out", str(m2), "--jobs", "3"]) == 0
    assert _tree_bytes(m1) == _tree_bytes(m2)


def test_prepare_registers_translated_timepoint(tmp_path, capsys):
    bundle, _ = generate_phantom(PhantomSpec(seed=21, extent_mm=(96, 96, 96)))
    case = tmp_path / "case"
    case.mkdir()
    write_volume(bundle.pre, case / "pre")
    write_volume(translate_volume(bundle.early, (2, -1, 3)), case / "early")
    write_volume(bundle.late, case / "late")

    out = tmp_path / "prepared"
    rc = main(["prepare", "--case", str(case), "--out", str(out),
               "--laterality", "left"])
    assert rc == 0
    case_out = out / "case"
    info = json.loads((case_out / "prepare.json").read_text())
    shift = info["registration_shift_voxels"]["early"]
    assert np.abs(np.array(shift) - np.array([2, -1, 3])).max() <= 1
    assert (case_out / "mip_axial.json").exists()
    assert (case_out / "mip_sagittal_left.json").exists()
    mip_header = json.loads((case_out / "mip_axial.json").read_text())
    assert mip_header["channels"] == 3 and mip_header["dims"][2] == 1


def test_prepare_missing_timepoint_exits_2(tmp_path, capsys):
    bundle, _ = generate_phantom(PhantomSpec(seed=22, extent_mm=(96, 96, 96)))
    case = tmp_path / "case"
    case.mkdir()
    write_volume(bundle.pre, case / "pre")
    write_volume(bundle.early, case / "early")
    rc = main(["prepare", "--case", str(case), "--out", str(tmp_path / "out"),
               "--laterality", "left"])
    assert rc == 2
    assert "late" in capsys.readouterr().err


def test_segment_with_empty_proposals_uses_fallbacks(tmp_path):
    cases = _make_cases(tmp_path, n=1, extra=["--miss-prob", "1.0"])
    case_dir = next(cases.iterdir())
    assert (case_dir / "proposals.jsonl").read_text() == ""
    pred = tmp_path / "pred"
    assert main(["segment", "--input", str(cases), "--out", str(pred)]) == 0
    prov = json.loads((pred / case_dir.name / "provenance.json").read_text())
    flags = prov["boxes"]["left"]["provenance"]
    assert flags == {"x": "fallback_half_axis", "y": "fallback_full_axis",
                     "z": "fallback_full_axis"}


def test_segment_failure_lists_case_ids(tmp_path, capsys):
    cases = _make_cases(tmp_path, n=1)
    case_dir = next(cases.iterdir())
    (case_dir / "proposals.jsonl").unlink()
    rc = main(["segment", "--input", str(cases), "--out", str(tmp_path / "pred")])
    assert rc == 1
    err = capsys.readouterr().err
    assert case_dir.name in err


def test_evaluate_missing_gt_errors(tmp_path, capsys):
    cases = _make_cases(tmp_path, n=1, extra=["--noise-sigma", "0"])
    pred = tmp_path / "pred"
    assert main(["segment", "--input", str(cases), "--out", str(pred)]) == 0
    empty_gt = tmp_path / "nogt"
    empty_gt.mkdir()
    rc = main(["evaluate", "--pred", str(pred), "--gt", str(empty_gt),
               "--out", str(tmp_path / "m")])
    assert rc == 1
    assert "missing ground truth" in capsys.readouterr().err


def test_calibrate_writes_temperature(tmp_path, capsys):
    # Labels drawn from softmax(base) are calibrated at T=1; doubling the
    # logits makes the volume overconfident, so the fit should undo it.
    rng = np.random.default_rng(0)
    dims = (24, 24, 24)
    base = rng.normal(0.0, 2.0, size=dims + (7,))
    from scipy.special import softmax
    probs = softmax(base, axis=-1)
    cdf = probs.cumsum(axis=-1)
    labels = (cdf < rng.random(dims)[..., None]).sum(axis=-1).astype(np.uint8)
    from breastseg.volume import LabelMap, Volume
    write_volume(Volume((base * 2.0).astype(np.float32), (1.0, 1.0, 1.0)),
                 tmp_path / "logits")
    write_volume(LabelMap(labels, (1.0, 1.0, 1.0)), tmp_path / "labels")

    cfg_path = tmp_path / "config.json"
    rc = main(["calibrate", "--logits", str(tmp_path / "logits"),
               "--labels", str(tmp_path / "labels"),
               "--samples", "10000", "--config-out", str(cfg_path)])
    assert rc == 0
    cfg = json.loads(cfg_path.read_text())
    assert 1.5 <= cfg["temperature"] <= 2.5
    out = capsys.readouterr().out
    assert "temperature:" in out


def test_segment_accepts_logits_with_temperature(tmp_path):
    cases = _make_cases(tmp_path, n=1, extra=["--noise-sigma", "0", "--jitter", "0"])
    case_dir = next(cases.iterdir())
    prob = read_volume(case_dir / "multi_prob")
    eps = 1e-6
    logits = np.log(np.clip(prob.data, eps, 1.0)).astype(np.float32)
    from breastseg.volume import Volume
    write_volume(Volume(logits, prob.spacing_mm, prob.origin_mm), case_dir / "multi_logits")
    (case_dir / "multi_prob.json").unlink()
    (case_dir / "multi_prob.raw").unlink()

    pred = tmp_path / "pred"
    assert main(["segment", "--input", str(cases), "--out", str(pred),
                 "--temperature", "1.0"]) == 0
    labels = read_volume(pred / case_dir.name / "labels")
    gt = read_volume(case_dir / "gt")
    assert np.array_equal(labels.data, gt.data)


def test_overlay_pngs_written(tmp_path):
    cases = _make_cases(tmp_path, n=1, extra=["--noise-sigma", "0"])
    pred = tmp_path / "pred"
    assert main(["segment", "--input", str(cases), "--out", str(pred),
                 "--overlay-png"]) == 0
    overlays = list((pred / next(cases.iterdir()).name / "overlays").glob("*.png"))
    assert len(overlays) == 1
