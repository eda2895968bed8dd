"""Anatomical plausibility heuristics for merging the two models' outputs.

The stages run in a fixed order: replace the tumor channel of the
multi-tissue probabilities with the tumor model's output, suppress tumor
components outside the fused 3D box, subtract vasculature from tumor,
take the per-voxel argmax, drop components with implausible tissue
contacts (air not reaching the image edge, skin not touching air, tumor
with too little glandular contact), and finally grow the tumor mask by
hysteresis within a bounded radius.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .boxes import Box3D
from .components import _component_contact, _shifted, connected_components
from .tissues import ADIPOSE, AIR, CLASS_NAMES, GLAND, N_CLASSES, SKIN, TUMOR, VESSEL
from .volume import LabelMap, ProbMap, Volume, require_same_grid

_EPS = 1e-12


@dataclass(frozen=True)
class HeuristicConfig:
    min_contact_area_mm2: float = 64.0
    hysteresis_radius_mm: float = 4.0
    hysteresis_low_threshold: float = 0.25
    connectivity: int = 26

    def __post_init__(self):
        if self.min_contact_area_mm2 <= 0 or self.hysteresis_radius_mm <= 0:
            raise ValueError("contact area and hysteresis radius must be positive")
        if not 0.0 < self.hysteresis_low_threshold < 1.0:
            raise ValueError("hysteresis low threshold must be in (0, 1)")
        if self.connectivity not in (6, 26):
            raise ValueError("connectivity must be 6 or 26")

    def to_dict(self) -> dict:
        return {
            "min_contact_area_mm2": self.min_contact_area_mm2,
            "hysteresis_radius_mm": self.hysteresis_radius_mm,
            "hysteresis_low_threshold": self.hysteresis_low_threshold,
            "connectivity": self.connectivity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeuristicConfig":
        return cls(**d)


def argmax_labels(p: ProbMap) -> LabelMap:
    return LabelMap(np.argmax(p.data, axis=3).astype(np.uint8), p.spacing_mm, p.origin_mm)


def merge_probabilities(multi: ProbMap, tumor_prob: Volume) -> ProbMap:
    """Adopt the tumor model's probability; rescale the six non-tumor
    channels to share the remaining mass in their original proportions."""
    require_same_grid(multi, tumor_prob)
    if tumor_prob.channels != 1:
        raise ValueError("tumor probability must be a scalar volume")
    t = np.clip(tumor_prob.data.astype(np.float32), 0.0, 1.0)
    out = multi.data.astype(np.float32).copy()
    old_rest = 1.0 - out[..., TUMOR]
    new_rest = 1.0 - t
    scale = np.where(old_rest > _EPS, new_rest / np.maximum(old_rest, _EPS), 0.0)
    for c in range(N_CLASSES):
        if c == TUMOR:
            continue
        out[..., c] *= scale
    # Where the multi-tissue model put everything on tumor there are no
    # proportions to preserve; split the remainder evenly.
    degenerate = old_rest <= _EPS
    if degenerate.any():
        even = (new_rest[degenerate] / (N_CLASSES - 1)).astype(np.float32)
        for c in range(N_CLASSES):
            if c != TUMOR:
                out[..., c][degenerate] = even
    out[..., TUMOR] = t
    return ProbMap(out, multi.spacing_mm, multi.origin_mm)


def _renormalize(out: np.ndarray) -> np.ndarray:
    total = out.sum(axis=3, keepdims=True)
    return (out / np.maximum(total, _EPS)).astype(np.float32)


def suppress_vasculature(p: ProbMap) -> ProbMap:
    """tumor' = max(tumor - vasculature, 0), then renormalize to sum 1."""
    out = p.data.astype(np.float32).copy()
    out[..., TUMOR] = np.maximum(out[..., TUMOR] - out[..., VESSEL], 0.0)
    return ProbMap(_renormalize(out), p.spacing_mm, p.origin_mm)


def _zero_tumor_at(out: np.ndarray, mask: np.ndarray) -> None:
    """Remove tumor mass at masked voxels, redistributing it to the other
    channels in proportion (evenly when they hold no mass)."""
    t = out[..., TUMOR][mask]
    rest = 1.0 - t
    sub = out[mask]
    sub[:, TUMOR] = 0.0
    ok = rest > _EPS
    sub[ok] /= rest[ok, np.newaxis]
    if (~ok).any():
        sub[~ok] = 1.0 / (N_CLASSES - 1)
        sub[~ok, TUMOR] = 0.0
    out[mask] = sub


def _inside_box_mask(p: ProbMap, boxes) -> np.ndarray:
    """Voxels whose center falls inside any of the boxes (box coordinates
    are mm relative to the volume origin)."""
    if isinstance(boxes, Box3D):
        boxes = [boxes]
    nx, ny, nz = p.dims
    inside = np.zeros((nx, ny, nz), dtype=bool)
    centers = [
        (np.arange(n) + 0.5) * s for n, s in zip(p.dims, p.spacing_mm)
    ]
    for box in boxes:
        per_axis = [
            (centers[a] >= box.min_mm[a]) & (centers[a] <= box.max_mm[a])
            for a in range(3)
        ]
        inside |= (
            per_axis[0][:, np.newaxis, np.newaxis]
            & per_axis[1][np.newaxis, :, np.newaxis]
            & per_axis[2][np.newaxis, np.newaxis, :]
        )
    return inside


def suppress_outside_box(p: ProbMap, boxes, connectivity: int = 26,
                         return_provenance: bool = False):
    """Zero the tumor probability of argmax-tumor components that have no
    voxel inside the box; components touching the box are kept whole."""
    tumor_mask = np.argmax(p.data, axis=3) == TUMOR
    comp = connected_components(tumor_mask, connectivity)
    prov = {"suppressed_components": 0, "suppressed_voxels": 0}
    if comp.count == 0:
        out = p
    else:
        inside = _inside_box_mask(p, boxes)
        keep_ids = np.unique(comp.labels[inside & tumor_mask])
        keep = np.zeros(comp.count + 1, dtype=bool)
        keep[keep_ids] = True
        keep[0] = True
        drop_mask = ~keep[comp.labels]
        if drop_mask.any():
            arr = p.data.astype(np.float32).copy()
            _zero_tumor_at(arr, drop_mask)
            out = ProbMap(arr, p.spacing_mm, p.origin_mm)
            prov["suppressed_components"] = int(comp.count - (keep.sum() - 1))
            prov["suppressed_voxels"] = int(drop_mask.sum())
        else:
            out = p
    if return_provenance:
        return out, prov
    return out


def _face_touching_ids(comp) -> set:
    ids = set()
    lab = comp.labels
    for axis in range(3):
        for sl in (0, -1):
            idx = [slice(None)] * 3
            idx[axis] = sl
            ids.update(np.unique(lab[tuple(idx)]).tolist())
    ids.discard(0)
    return ids


def _adjacent_ids(comp, other_mask: np.ndarray) -> set:
    ids = set()
    for axis in range(3):
        for step in (1, -1):
            touching = (comp.labels > 0) & _shifted(other_mask, axis, step)
            if touching.any():
                ids.update(np.unique(comp.labels[touching]).tolist())
    ids.discard(0)
    return ids


def apply_contact_rules(labels: LabelMap, cfg: HeuristicConfig,
                        probs: ProbMap | None = None,
                        return_provenance: bool = False):
    """Drop components violating the tissue-contact rules.

    In order, with adjacency recomputed between rules: air components not
    reaching any image face, skin components not face-adjacent to air,
    tumor components whose glandular contact area is strictly below the
    configured minimum.  Dropped voxels take the best remaining class of
    the accompanying probabilities (adipose when none are given).
    """
    work = labels.data.copy()
    spacing = labels.spacing_mm
    events = []
    # Classes already dropped at a voxel stay excluded from reassignment,
    # otherwise a drop could reinstate the class it just removed.
    excluded = np.zeros(work.shape + (N_CLASSES,), dtype=bool) if probs is not None else None

    def drop(drop_mask: np.ndarray, cls: int, reason: str, extra=None):
        if probs is not None:
            excluded[..., cls][drop_mask] = True
            sub = probs.data[drop_mask].copy()
            sub[excluded[drop_mask]] = -1.0
            work[drop_mask] = np.argmax(sub, axis=1).astype(np.uint8)
        else:
            work[drop_mask] = ADIPOSE
        events.append({
            "class": CLASS_NAMES[cls],
            "voxels": int(drop_mask.sum()),
            "reason": reason,
            **(extra or {}),
        })

    # Air must reach the edge of the image.
    comp = connected_components(work == AIR, cfg.connectivity)
    if comp.count:
        keep = _face_touching_ids(comp)
        for cid in range(1, comp.count + 1):
            if cid not in keep:
                drop(comp.labels == cid, AIR, "no_image_edge_contact")

    # Skin must touch air.
    comp = connected_components(work == SKIN, cfg.connectivity)
    if comp.count:
        keep = _adjacent_ids(comp, work == AIR)
        for cid in range(1, comp.count + 1):
            if cid not in keep:
                drop(comp.labels == cid, SKIN, "no_air_contact")

    # Tumor needs enough glandular contact; strictly-below drops.
    comp, areas = _component_contact(work, TUMOR, GLAND, spacing, cfg.connectivity)
    for cid in range(1, comp.count + 1):
        if areas[cid] < cfg.min_contact_area_mm2:
            drop(comp.labels == cid, TUMOR, "insufficient_gland_contact",
                 {"contact_mm2": float(areas[cid])})

    out = LabelMap(work, labels.spacing_mm, labels.origin_mm)
    if return_provenance:
        return out, events
    return out


def _hysteresis_mask(tumor_channel: np.ndarray, seed: np.ndarray, spacing_mm,
                     cfg: HeuristicConfig) -> np.ndarray:
    if not seed.any():
        return np.zeros_like(seed)
    dist = ndimage.distance_transform_edt(~seed, sampling=spacing_mm)
    grown = (tumor_channel >= cfg.hysteresis_low_threshold) & (dist <= cfg.hysteresis_radius_mm)
    return seed | grown


def hysteresis_tumor(p: ProbMap, cfg: HeuristicConfig | None = None,
                     seed_mask: np.ndarray | None = None) -> Volume:
    """Grow the tumor seed into nearby probable-tumor voxels.

    The seed defaults to the voxels where tumor is the argmax class; a
    caller may pass its own seed mask (the pipeline seeds from the
    labels surviving the contact rules).  Output voxels are the seed
    plus voxels within the hysteresis radius of it whose tumor
    probability clears the low threshold; returned as a binary u8
    volume.
    """
    cfg = cfg or HeuristicConfig()
    seed = (np.argmax(p.data, axis=3) == TUMOR) if seed_mask is None \
        else np.asarray(seed_mask, dtype=bool)
    mask = _hysteresis_mask(p.data[..., TUMOR], seed, p.spacing_mm, cfg)
    return Volume(mask.astype(np.uint8), p.spacing_mm, p.origin_mm)


def run_heuristics(multi: ProbMap, tumor_prob: Volume, boxes,
                   cfg: HeuristicConfig | None = None,
                   return_provenance: bool = False):
    """Full post-processing chain from model probabilities to a label map.

    boxes is a Box3D or a sequence of them (one per diseased side).  The
    hysteresis grows from the tumor voxels that survived the contact
    rules, and the grown mask overrides the argmax labels inside it.
    """
    cfg = cfg or HeuristicConfig()
    p = merge_probabilities(multi, tumor_prob)
    p, prov_box = suppress_outside_box(p, boxes, cfg.connectivity, return_provenance=True)
    p = suppress_vasculature(p)
    labels = argmax_labels(p)
    labels, rule_events = apply_contact_rules(labels, cfg, probs=p, return_provenance=True)

    seed = labels.data == TUMOR
    mask = _hysteresis_mask(p.data[..., TUMOR], seed, p.spacing_mm, cfg)
    out = labels.data.copy()
    out[mask] = TUMOR
    result = LabelMap(out, multi.spacing_mm, multi.origin_mm)

    if return_provenance:
        provenance = {
            "box_suppression": prov_box,
            "contact_rules": rule_events,
            "hysteresis_added_voxels": int((mask & ~seed).sum()),
        }
        return result, provenance
    return result
