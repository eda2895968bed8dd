"""Segmentation evaluation: Dice, robust Hausdorff, FP component counts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .components import connected_components
from .tissues import CLASS_NAMES, N_CLASSES, REPORT_CLASSES, TUMOR
from .volume import LabelMap, require_same_grid


class UndefinedMetricError(ValueError):
    """Raised when a distance metric is undefined (empty mask)."""


def dice(pred: LabelMap, gt: LabelMap, class_id: int) -> float:
    """Dice overlap of one class, as a percentage; two empty masks score 100."""
    require_same_grid(pred, gt)
    p = pred.data == class_id
    g = gt.data == class_id
    np_, ng = int(p.sum()), int(g.sum())
    if np_ + ng == 0:
        return 100.0
    inter = int((p & g).sum())
    return 200.0 * inter / (np_ + ng)


_FACE_STRUCT = ndimage.generate_binary_structure(3, 1)


def surface_mask(mask: np.ndarray) -> np.ndarray:
    """Voxels of the mask with at least one face neighbor outside it
    (the volume border counts as outside)."""
    eroded = ndimage.binary_erosion(mask, structure=_FACE_STRUCT, border_value=0)
    return mask & ~eroded


def robust_hausdorff(pred: LabelMap, gt: LabelMap, class_id: int,
                     percentile: float = 95.0) -> float:
    """Percentile of the pooled symmetric surface-to-surface distances (mm).

    Surface voxels of each mask are collected, each one's Euclidean
    distance to the other surface is pooled in both directions, and the
    requested percentile of the pooled multiset is returned.
    """
    require_same_grid(pred, gt)
    p = pred.data == class_id
    g = gt.data == class_id
    if not p.any() or not g.any():
        raise UndefinedMetricError(
            f"robust Hausdorff undefined: class {class_id} empty in "
            f"{'prediction' if not p.any() else 'ground truth'}"
        )
    sp = surface_mask(p)
    sg = surface_mask(g)
    spacing = pred.spacing_mm
    dist_to_g = ndimage.distance_transform_edt(~sg, sampling=spacing)
    dist_to_p = ndimage.distance_transform_edt(~sp, sampling=spacing)
    pooled = np.concatenate([dist_to_g[sp], dist_to_p[sg]])
    return float(np.percentile(pooled, percentile))


def fp_component_count(pred: LabelMap, gt: LabelMap) -> int:
    """Predicted tumor components (26-connectivity) with zero overlap
    against the ground-truth tumor."""
    require_same_grid(pred, gt)
    comp = connected_components(pred.data == TUMOR, 26)
    if comp.count == 0:
        return 0
    overlapping = np.unique(comp.labels[gt.data == TUMOR])
    return comp.count - int((overlapping > 0).sum())


@dataclass
class MetricReport:
    """Per-case evaluation record."""

    case_id: str
    dice_percent: dict = field(default_factory=dict)   # class name -> percent
    rhd_mm: dict = field(default_factory=dict)         # class name -> mm or None
    fp_tumor_components: int = 0

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "dice_percent": self.dice_percent,
            "rhd_mm": self.rhd_mm,
            "fp_tumor_components": self.fp_tumor_components,
        }


def evaluate_case(pred: LabelMap, gt: LabelMap, case_id: str = "") -> MetricReport:
    report = MetricReport(case_id=case_id)
    for c in range(N_CLASSES):
        name = CLASS_NAMES[c]
        report.dice_percent[name] = dice(pred, gt, c)
        try:
            report.rhd_mm[name] = robust_hausdorff(pred, gt, c)
        except UndefinedMetricError:
            report.rhd_mm[name] = None
    report.fp_tumor_components = fp_component_count(pred, gt)
    return report


def _mean_stderr(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    stderr = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
    return mean, stderr


def aggregate_reports(reports) -> dict:
    """Mean and standard error per reported class, plus FP counts."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    agg = {"n_cases": len(reports), "dice_percent": {}, "rhd_mm": {}}
    for c in REPORT_CLASSES:
        name = CLASS_NAMES[c]
        d_mean, d_err = _mean_stderr([r.dice_percent[name] for r in reports])
        agg["dice_percent"][name] = {"mean": d_mean, "stderr": d_err}
        defined = [r.rhd_mm[name] for r in reports if r.rhd_mm.get(name) is not None]
        if defined:
            h_mean, h_err = _mean_stderr(defined)
            agg["rhd_mm"][name] = {"mean": h_mean, "stderr": h_err, "n": len(defined)}
        else:
            agg["rhd_mm"][name] = None
    fp_mean, fp_err = _mean_stderr([r.fp_tumor_components for r in reports])
    agg["fp_tumor_components"] = {"mean": fp_mean, "stderr": fp_err}
    return agg


def format_table(agg: dict) -> str:
    """Aligned text table with the reporting class order."""
    names = [CLASS_NAMES[c] for c in REPORT_CLASSES]
    width = 16
    lines = []
    lines.append("Metric".ljust(12) + "".join(n.capitalize().rjust(width) for n in names))
    dice_cells = []
    rhd_cells = []
    for n in names:
        d = agg["dice_percent"][n]
        dice_cells.append(f"{d['mean']:.1f} ({d['stderr']:.1f})".rjust(width))
        h = agg["rhd_mm"][n]
        rhd_cells.append(("n/a" if h is None else f"{h['mean']:.1f} ({h['stderr']:.1f})").rjust(width))
    lines.append("Dice %".ljust(12) + "".join(dice_cells))
    lines.append("RHD mm".ljust(12) + "".join(rhd_cells))
    fp = agg["fp_tumor_components"]
    lines.append(f"FP tumor components per case: {fp['mean']:.2f} ({fp['stderr']:.2f})")
    return "\n".join(lines) + "\n"
