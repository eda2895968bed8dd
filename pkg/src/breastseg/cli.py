"""Command-line pipeline driver.

Subcommands mirror the processing stages: ``phantom`` generates synthetic
cases with simulated model outputs, ``prepare`` resamples/registers and
writes detector MIPs, ``segment`` fuses boxes and applies the heuristics,
``evaluate`` scores predictions against ground truth, ``calibrate`` fits
a softmax temperature.  All outputs are deterministic: re-running a
subcommand on unchanged inputs reproduces every file byte for byte,
independently of ``--jobs``.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from .augment import sample_training_crop  # noqa: F401  (re-exported for scripting)
from .boxes import read_proposals, write_proposals
from .calibration import ece, fit_temperature, sample_voxel_logits, softmax_with_temperature
from .metrics import MetricReport, aggregate_reports, evaluate_case, format_table
from .mip import write_mip
from .phantom import DegradationSpec, PhantomSpec, generate_phantom, simulate_model_outputs
from .pipeline import PipelineConfig, prepare_case, segment_case, write_overlay_pngs
from .volume import (CaseBundle, read_labelmap, read_probmap, read_volume,
                     volume_paths, write_volume)

TIMEPOINTS = ("pre", "early", "late")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "temperature", None) is not None:
        d = config.to_dict()
        d["temperature"] = args.temperature
        config = PipelineConfig.from_dict(d)
    return config


def _case_dirs(root: Path) -> list[Path]:
    """A case dir holds case.json; accept either one case or a root of cases."""
    if (root / "case.json").exists():
        return [root]
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "case.json").exists())
    if not dirs:
        raise FileNotFoundError(f"no case directories under {root}")
    return dirs


def _run_cases(worker, tasks, jobs: int):
    """Run (case_id, payload) tasks, serially or in a process pool.

    Workers write only their own case directory, so results do not
    depend on scheduling.
    """
    results, failures = {}, {}
    if jobs <= 1:
        for case_id, payload in tasks:
            try:
                results[case_id] = worker(payload)
            except Exception as e:  # noqa: BLE001 - reported per case
                failures[case_id] = str(e)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(worker, payload): cid for cid, payload in tasks}
            for fut in as_completed(futures):
                cid = futures[fut]
                err = fut.exception()
                if err is not None:
                    failures[cid] = str(err)
                else:
                    results[cid] = fut.result()
    return results, failures


def _report_failures(failures: dict, stage: str) -> int:
    if not failures:
        return 0
    print(f"{stage}: {len(failures)} case(s) failed: "
          + ", ".join(sorted(failures)), file=sys.stderr)
    for cid in sorted(failures):
        print(f"  {cid}: {failures[cid]}", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# phantom
# ---------------------------------------------------------------------------

def _phantom_worker(payload: dict) -> dict:
    out_dir = Path(payload["out_dir"])
    spec = PhantomSpec(seed=payload["seed"],
                       extent_mm=tuple(payload["extent"]),
                       laterality=payload["laterality"])
    degrade = DegradationSpec(seed=payload["seed"],
                              label_noise_sigma_mm=payload["noise_sigma"],
                              fp_blob_count=payload["fp_blobs"],
                              fp_blob_diameter_mm=payload["fp_blob_diameter"],
                              vessel_leak_fraction=payload["vessel_leak"],
                              detector_jitter_mm=payload["jitter"],
                              detector_miss_prob=payload["miss_prob"])
    bundle, gt = generate_phantom(spec)
    multi, tumor_prob, proposals = simulate_model_outputs(gt, degrade, bundle.case_id)

    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "case.json", {
        "case_id": bundle.case_id,
        "laterality": bundle.laterality,
        "seed": payload["seed"],
    })
    write_volume(gt, out_dir / "gt")
    for name, vol in zip(TIMEPOINTS, bundle.timepoints()):
        write_volume(vol, out_dir / name)
    write_volume(multi, out_dir / "multi_prob")
    write_volume(tumor_prob, out_dir / "tumor_prob")
    write_proposals(proposals, out_dir / "proposals.jsonl")
    return {"case_id": bundle.case_id, "proposals": len(proposals)}


def cmd_phantom(args) -> int:
    out_root = Path(args.out)
    tasks = []
    for i in range(args.cases):
        seed = args.seed + i
        case_id = f"phantom_{seed:05d}"
        tasks.append((case_id, {
            "out_dir": str(out_root / case_id),
            "seed": seed,
            "extent": args.extent,
            "laterality": args.laterality,
            "noise_sigma": args.noise_sigma,
            "fp_blobs": args.fp_blobs,
            "fp_blob_diameter": args.fp_blob_diameter,
            "vessel_leak": args.vessel_leak,
            "jitter": args.jitter,
            "miss_prob": args.miss_prob,
        }))
    results, failures = _run_cases(_phantom_worker, tasks, args.jobs)
    for cid in sorted(results):
        print(f"{cid}: wrote {results[cid]['proposals']} proposals")
    return _report_failures(failures, "phantom")


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    case_dir = Path(args.case)
    meta_path = case_dir / "case.json"
    laterality = args.laterality
    case_id = case_dir.name
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        laterality = laterality or meta.get("laterality")
        case_id = meta.get("case_id", case_id)
    if not laterality:
        print("prepare: laterality is required (flag or case.json)", file=sys.stderr)
        return 2

    volumes = {}
    for name in TIMEPOINTS:
        header, _ = volume_paths(case_dir / name)
        if not header.exists():
            print(f"prepare: missing {name} timepoint volume: {header}", file=sys.stderr)
            return 2
        volumes[name] = read_volume(case_dir / name)

    config = _load_config(args)
    bundle = CaseBundle(volumes["pre"], volumes["early"], volumes["late"],
                        laterality, case_id)
    prepared, mips, shifts = prepare_case(bundle, config)

    out_dir = Path(args.out) / case_id
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, vol in zip(TIMEPOINTS, prepared.timepoints()):
        write_volume(vol, out_dir / name)
    for name, img in mips.items():
        write_mip(img, out_dir / f"mip_{name}")
    _write_json(out_dir / "prepare.json", {
        "case_id": case_id,
        "laterality": laterality,
        "registration_shift_voxels": {k: [int(x) for x in v] for k, v in shifts.items()},
        "target_spacing_mm": config.target_spacing_mm,
    })
    _write_json(out_dir / "case.json", {"case_id": case_id, "laterality": laterality})
    print(f"{case_id}: prepared {len(mips)} MIP image(s)")
    return 0


# ---------------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------------

def _segment_worker(payload: dict) -> dict:
    case_dir = Path(payload["case_dir"])
    out_dir = Path(payload["out_dir"])
    config = PipelineConfig.from_dict(payload["config"])
    meta = json.loads((case_dir / "case.json").read_text())
    laterality = meta["laterality"]
    case_id = meta.get("case_id", case_dir.name)

    logits_header, _ = volume_paths(case_dir / "multi_logits")
    use_logits = payload["logits"] or (
        logits_header.exists() and not volume_paths(case_dir / "multi_prob")[0].exists())
    if use_logits:
        multi = read_volume(case_dir / "multi_logits")
    else:
        multi = read_probmap(case_dir / "multi_prob")
    tumor_prob = read_volume(case_dir / "tumor_prob")
    proposals = read_proposals(case_dir / "proposals.jsonl")

    labels, _boxes, provenance = segment_case(multi, tumor_prob, proposals,
                                              laterality, config, logits=use_logits)
    provenance["case_id"] = case_id

    out_dir.mkdir(parents=True, exist_ok=True)
    write_volume(labels, out_dir / "labels")
    _write_json(out_dir / "box.json", provenance["boxes"])
    _write_json(out_dir / "provenance.json", provenance)
    if payload["overlay_png"]:
        write_overlay_pngs(labels, out_dir / "overlays", every=payload["overlay_every"])
    return {"case_id": case_id}


def cmd_segment(args) -> int:
    config = _load_config(args)
    case_dirs = _case_dirs(Path(args.input))
    out_root = Path(args.out)
    tasks = [(d.name, {
        "case_dir": str(d),
        "out_dir": str(out_root / d.name),
        "config": config.to_dict(),
        "logits": args.logits,
        "overlay_png": args.overlay_png,
        "overlay_every": args.overlay_every,
    }) for d in case_dirs]
    results, failures = _run_cases(_segment_worker, tasks, args.jobs)
    for cid in sorted(results):
        print(f"{cid}: segmented")
    return _report_failures(failures, "segment")


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _evaluate_worker(payload: dict) -> dict:
    pred = read_labelmap(Path(payload["pred_dir"]) / "labels")
    gt = read_labelmap(Path(payload["gt_dir"]) / "gt")
    report = evaluate_case(pred, gt, case_id=payload["case_id"])
    return report.to_dict()


def cmd_evaluate(args) -> int:
    pred_root = Path(args.pred)
    gt_root = Path(args.gt)
    pred_cases = sorted(p.name for p in pred_root.iterdir()
                        if p.is_dir() and volume_paths(p / "labels")[0].exists())
    if not pred_cases:
        print(f"evaluate: no predictions under {pred_root}", file=sys.stderr)
        return 1
    missing = [c for c in pred_cases
               if not volume_paths(gt_root / c / "gt")[0].exists()]
    if missing:
        print("evaluate: missing ground truth for: " + ", ".join(missing), file=sys.stderr)
        return 1

    tasks = [(c, {"pred_dir": str(pred_root / c), "gt_dir": str(gt_root / c),
                  "case_id": c}) for c in pred_cases]
    results, failures = _run_cases(_evaluate_worker, tasks, args.jobs)
    code = _report_failures(failures, "evaluate")
    if not results:
        return 1

    reports = []
    for cid in sorted(results):
        d = results[cid]
        reports.append(MetricReport(case_id=d["case_id"], dice_percent=d["dice_percent"],
                                    rhd_mm=d["rhd_mm"],
                                    fp_tumor_components=d["fp_tumor_components"]))
    agg = aggregate_reports(reports)
    table = format_table(agg)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(results[cid], sort_keys=True) for cid in sorted(results)]
    (out_dir / "per_case.jsonl").write_text("".join(line + "\n" for line in lines))
    _write_json(out_dir / "summary.json", agg)
    (out_dir / "summary.txt").write_text(table)
    print(table, end="")
    return code


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    logit_vol = read_volume(args.logits)
    label_vol = read_labelmap(args.labels)
    logits, labels = sample_voxel_logits(logit_vol, label_vol,
                                         n_samples=args.samples, seed=args.seed)
    before = ece(softmax_with_temperature(logits, 1.0), labels, n_bins=args.bins)
    temperature = fit_temperature(logits, labels, n_bins=args.bins)
    after = ece(softmax_with_temperature(logits, temperature), labels, n_bins=args.bins)
    print(f"temperature: {temperature:.4f}")
    print(f"ece@T=1: {before:.6f}  ece@T={temperature:.4f}: {after:.6f}")

    if args.config_out:
        base = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        d = base.to_dict()
        d["temperature"] = temperature
        PipelineConfig.from_dict(d).save(args.config_out)
        print(f"wrote config with fitted temperature: {args.config_out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="breastseg",
        description="Volumetric breast MRI segmentation post-processing pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate synthetic cases with model outputs")
    p.add_argument("--out", required=True)
    p.add_argument("--cases", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extent", type=int, nargs=3, default=[128, 128, 128],
                   metavar=("NX", "NY", "NZ"))
    p.add_argument("--laterality", choices=["left", "right", "bilateral"], default="left")
    p.add_argument("--noise-sigma", type=float, default=1.5,
                   help="gaussian blur of the one-hot probabilities, mm")
    p.add_argument("--fp-blobs", type=int, default=0,
                   help="spurious tumor blobs injected per case")
    p.add_argument("--fp-blob-diameter", type=float, default=6.0)
    p.add_argument("--vessel-leak", type=float, default=0.0,
                   help="fraction of vessel voxels given high tumor probability")
    p.add_argument("--jitter", type=float, default=2.0, help="detector box jitter, mm")
    p.add_argument("--miss-prob", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("prepare", help="resample, register and write MIP images")
    p.add_argument("--case", required=True, help="directory with pre/early/late volumes")
    p.add_argument("--out", required=True)
    p.add_argument("--laterality", choices=["left", "right", "bilateral"])
    p.add_argument("--config")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("segment", help="fuse boxes and run the tissue heuristics")
    p.add_argument("--input", required=True,
                   help="case directory or root of case directories")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--temperature", type=float,
                   help="override the configured softmax temperature")
    p.add_argument("--logits", action="store_true",
                   help="read multi_logits and apply temperature softmax")
    p.add_argument("--overlay-png", action="store_true")
    p.add_argument("--overlay-every", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("calibrate", help="fit a softmax temperature on logits")
    p.add_argument("--logits", required=True, help="7-channel logit volume")
    p.add_argument("--labels", required=True, help="label volume")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--config", help="base config to copy settings from")
    p.add_argument("--config-out", help="write a config carrying the fitted temperature")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
