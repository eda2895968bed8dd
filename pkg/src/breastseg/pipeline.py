"""Case-level composition of the processing stages, plus run configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import Box3D, assemble_box3d, fuse_axial, fuse_sagittal
from .calibration import softmax_with_temperature
from .heuristics import HeuristicConfig, run_heuristics
from .mip import IMAGENET_MEAN, IMAGENET_STD, MipImage, make_mip, normalize_imagenet
from .tissues import CLASS_NAMES
from .volume import (CaseBundle, LabelMap, ProbMap, Volume,
                     register_phase_correlation, resample_isotropic)


@dataclass(frozen=True)
class PipelineConfig:
    heuristics: HeuristicConfig = field(default_factory=HeuristicConfig)
    target_spacing_mm: float = 1.0
    median_window_mm: float = 10.0
    imagenet_mean: tuple[float, float, float] = IMAGENET_MEAN
    imagenet_std: tuple[float, float, float] = IMAGENET_STD
    temperature: float = 1.0

    def to_dict(self) -> dict:
        return {
            "heuristics": self.heuristics.to_dict(),
            "target_spacing_mm": self.target_spacing_mm,
            "median_window_mm": self.median_window_mm,
            "imagenet_mean": list(self.imagenet_mean),
            "imagenet_std": list(self.imagenet_std),
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        kwargs = dict(d)
        if "heuristics" in kwargs:
            kwargs["heuristics"] = HeuristicConfig.from_dict(kwargs["heuristics"])
        for key in ("imagenet_mean", "imagenet_std"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def prepare_case(bundle: CaseBundle, config: PipelineConfig | None = None):
    """Resample all timepoints to isotropic spacing, register the
    post-contrast volumes to pre-contrast, and build normalized MIPs.

    Returns (prepared bundle, {name: MipImage}, {name: shift}).
    """
    config = config or PipelineConfig()
    t = config.target_spacing_mm
    pre = resample_isotropic(bundle.pre, t)
    early = resample_isotropic(bundle.early, t)
    late = resample_isotropic(bundle.late, t)

    shifts = {}
    shifts["early"], early = register_phase_correlation(pre, early)
    shifts["late"], late = register_phase_correlation(pre, late)
    prepared = CaseBundle(pre, early, late, bundle.laterality, bundle.case_id)

    mips: dict[str, MipImage] = {}
    mips["axial"] = normalize_imagenet(
        make_mip(prepared, "axial", window_mm=config.median_window_mm),
        config.imagenet_mean, config.imagenet_std)
    sides = ("left", "right") if bundle.laterality == "bilateral" else (bundle.laterality,)
    for side in sides:
        mips[f"sagittal_{side}"] = normalize_imagenet(
            make_mip(prepared, "sagittal", side, window_mm=config.median_window_mm),
            config.imagenet_mean, config.imagenet_std)
    return prepared, mips, shifts


def fuse_case_boxes(proposals, laterality: str, extent_mm) -> dict[str, Box3D]:
    """Fuse proposals into one 3D box per diseased side."""
    sides = ("left", "right") if laterality == "bilateral" else (laterality,)
    boxes = {}
    for side in sides:
        side_props = [p for p in proposals if p.laterality in ("", side)]
        axial = fuse_axial([p for p in side_props if p.plane == "axial"], side, extent_mm)
        sagittal = fuse_sagittal([p for p in side_props if p.plane == "sagittal"], axial)
        boxes[side] = assemble_box3d(axial, sagittal, extent_mm, side)
    return boxes


def segment_case(multi: ProbMap | Volume, tumor_prob: Volume, proposals,
                 laterality: str, config: PipelineConfig | None = None,
                 logits: bool = False):
    """Box fusion plus heuristics for one case.

    multi may be a logit volume (set logits=True) which is converted with
    the configured temperature.  Returns (labels, boxes, provenance).
    """
    config = config or PipelineConfig()
    if logits or not isinstance(multi, ProbMap):
        if logits:
            multi = softmax_with_temperature(multi, config.temperature)
        else:
            multi = ProbMap.from_volume(multi)
    boxes = fuse_case_boxes(proposals, laterality, multi.extent_mm)
    labels, heur_prov = run_heuristics(multi, tumor_prob, list(boxes.values()),
                                       config.heuristics, return_provenance=True)
    provenance = {
        "laterality": laterality,
        "boxes": {side: box.to_dict() for side, box in boxes.items()},
        "heuristics": heur_prov,
    }
    return labels, boxes, provenance


# Display palette for optional slice overlays (RGB per class).
_PALETTE = {
    0: (0, 0, 0),          # air
    1: (210, 180, 140),    # skin
    2: (255, 215, 0),      # adipose
    3: (160, 90, 200),     # gland
    4: (220, 40, 40),      # vascular
    5: (60, 200, 60),      # tumor
    6: (245, 240, 220),    # chest
}


def write_overlay_pngs(labels: LabelMap, out_dir, every: int = 0) -> list[Path]:
    """Write axial label slices as PNGs (display only).

    every=0 writes just the central slice; every=k writes each k-th slice.
    """
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nz = labels.dims[2]
    indices = [nz // 2] if every <= 0 else list(range(0, nz, every))
    lut = np.zeros((256, 3), dtype=np.uint8)
    for cls, rgb in _PALETTE.items():
        lut[cls] = rgb
    written = []
    for k in indices:
        rgb = lut[labels.data[:, :, k]]
        # Image rows run along y for a radiological-style axial view.
        img = Image.fromarray(np.transpose(rgb, (1, 0, 2)), mode="RGB")
        path = out_dir / f"labels_z{k:04d}.png"
        img.save(path)
        written.append(path)
    return written


def class_name_table() -> dict[int, str]:
    return dict(enumerate(CLASS_NAMES))
