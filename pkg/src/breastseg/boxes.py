"""Fusion of scored 2D detector boxes into a single 3D tumor box.

Axial proposals (x/y edges, mm) are filtered to the diseased half and
fused by a score-weighted average of their edges.  Sagittal proposals
(y/z edges) that overlap the fused axial box along the
anterior-posterior axis are fused the same way.  The 3D box averages
the shared y edges and copies the others, with per-axis fallbacks when
a plane produced nothing: full axis for z (and y), half axis on the
diseased side for x.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PLANE_AXES = {"axial": ("x", "y"), "sagittal": ("y", "z")}

FUSED = "fused"
FALLBACK_FULL_AXIS = "fallback_full_axis"
FALLBACK_HALF_AXIS = "fallback_half_axis"


@dataclass(frozen=True)
class BoxProposal2D:
    """One scored detector box; bbox_mm is (min0, min1, max0, max1)."""

    plane: str
    bbox_mm: tuple[float, float, float, float]
    score: float
    case_id: str = ""
    laterality: str = ""

    def __post_init__(self):
        if self.plane not in PLANE_AXES:
            raise ValueError(f"unknown plane {self.plane!r}")
        b = tuple(float(x) for x in self.bbox_mm)
        if not (b[0] < b[2] and b[1] < b[3]):
            raise ValueError(f"degenerate box {b}: min must be < max on both axes")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0,1], got {self.score}")
        object.__setattr__(self, "bbox_mm", b)


@dataclass(frozen=True)
class Box2D:
    plane: str
    bbox_mm: tuple[float, float, float, float]

    @property
    def mins(self):
        return self.bbox_mm[:2]

    @property
    def maxs(self):
        return self.bbox_mm[2:]


@dataclass(frozen=True)
class Box3D:
    """Axis-aligned box in mm with per-axis provenance flags."""

    min_mm: tuple[float, float, float]
    max_mm: tuple[float, float, float]
    provenance: tuple[str, str, str]

    def __post_init__(self):
        if not all(a < b for a, b in zip(self.min_mm, self.max_mm)):
            raise ValueError(f"degenerate 3D box: {self.min_mm} .. {self.max_mm}")

    def to_dict(self) -> dict:
        return {
            "min_mm": list(self.min_mm),
            "max_mm": list(self.max_mm),
            "provenance": {"x": self.provenance[0], "y": self.provenance[1],
                           "z": self.provenance[2]},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Box3D":
        prov = d["provenance"]
        return cls(tuple(d["min_mm"]), tuple(d["max_mm"]),
                   (prov["x"], prov["y"], prov["z"]))


def _weighted_edges(props) -> tuple[float, float, float, float]:
    edges = np.array([p.bbox_mm for p in props], dtype=np.float64)
    scores = np.array([p.score for p in props], dtype=np.float64)
    total = scores.sum()
    # All-zero scores degrade to a plain average.
    w = scores / total if total > 0 else np.full(len(props), 1.0 / len(props))
    return tuple(float(x) for x in (w[:, np.newaxis] * edges).sum(axis=0))


def fuse_axial(props, laterality: str, extent_mm) -> Box2D | None:
    """Fuse axial proposals whose center lies in the diseased half.

    Returns None when no proposal survives the laterality filter.
    """
    if laterality not in ("left", "right"):
        raise ValueError(f"axial fusion needs laterality 'left' or 'right', got {laterality!r}")
    for p in props:
        if p.plane != "axial":
            raise ValueError(f"fuse_axial got a {p.plane} proposal")
    half = float(extent_mm[0]) / 2.0
    if laterality == "left":
        kept = [p for p in props if (p.bbox_mm[0] + p.bbox_mm[2]) / 2.0 < half]
    else:
        kept = [p for p in props if (p.bbox_mm[0] + p.bbox_mm[2]) / 2.0 >= half]
    if not kept:
        return None
    return Box2D("axial", _weighted_edges(kept))


def _y_overlap(axial_box: Box2D, prop: BoxProposal2D) -> float:
    a_lo, a_hi = axial_box.bbox_mm[1], axial_box.bbox_mm[3]
    s_lo, s_hi = prop.bbox_mm[0], prop.bbox_mm[2]
    return min(a_hi, s_hi) - max(a_lo, s_lo)


def fuse_sagittal(props, axial_box: Box2D | None) -> Box2D | None:
    """Fuse sagittal proposals, keeping only those with positive AP
    overlap against the fused axial box (all of them when it is absent)."""
    for p in props:
        if p.plane != "sagittal":
            raise ValueError(f"fuse_sagittal got a {p.plane} proposal")
    props = list(props)
    if axial_box is not None:
        props = [p for p in props if _y_overlap(axial_box, p) > 0]
    if not props:
        return None
    return Box2D("sagittal", _weighted_edges(props))


def assemble_box3d(axial: Box2D | None, sagittal: Box2D | None, extent_mm,
                   laterality: str) -> Box3D:
    """Combine fused per-plane boxes into one 3D box.

    y comes from the mean of both planes' edges when available; x falls
    back to the diseased half of the LR axis, z to the full SI axis.
    Always returns a box inside the volume extent.
    """
    ex, ey, ez = (float(e) for e in extent_mm)

    if axial is not None:
        x = (axial.bbox_mm[0], axial.bbox_mm[2])
        px = FUSED
    else:
        if laterality == "left":
            x = (0.0, ex / 2.0)
        elif laterality == "right":
            x = (ex / 2.0, ex)
        else:
            raise ValueError(f"half-axis fallback needs a single side, got {laterality!r}")
        px = FALLBACK_HALF_AXIS

    ay = (axial.bbox_mm[1], axial.bbox_mm[3]) if axial is not None else None
    sy = (sagittal.bbox_mm[0], sagittal.bbox_mm[2]) if sagittal is not None else None
    if ay is not None and sy is not None:
        y = ((ay[0] + sy[0]) / 2.0, (ay[1] + sy[1]) / 2.0)
        py = FUSED
    elif ay is not None or sy is not None:
        y = ay if ay is not None else sy
        py = FUSED
    else:
        y = (0.0, ey)
        py = FALLBACK_FULL_AXIS

    if sagittal is not None:
        z = (sagittal.bbox_mm[1], sagittal.bbox_mm[3])
        pz = FUSED
    else:
        z = (0.0, ez)
        pz = FALLBACK_FULL_AXIS

    mins = (max(0.0, x[0]), max(0.0, y[0]), max(0.0, z[0]))
    maxs = (min(ex, x[1]), min(ey, y[1]), min(ez, z[1]))
    return Box3D(mins, maxs, (px, py, pz))


# ---------------------------------------------------------------------------
# Proposal file I/O (JSON lines, one proposal per line)
# ---------------------------------------------------------------------------

def write_proposals(props, path) -> None:
    lines = []
    for p in props:
        lines.append(json.dumps({
            "case_id": p.case_id,
            "plane": p.plane,
            "laterality": p.laterality,
            "bbox_mm": list(p.bbox_mm),
            "score": p.score,
        }, sort_keys=True))
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_proposals(path) -> list[BoxProposal2D]:
    props = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        d = json.loads(line)
        props.append(BoxProposal2D(
            plane=d["plane"],
            bbox_mm=tuple(d["bbox_mm"]),
            score=float(d["score"]),
            case_id=d.get("case_id", ""),
            laterality=d.get("laterality", ""),
        ))
    return props
