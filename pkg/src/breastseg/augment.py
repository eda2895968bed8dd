"""Training-time image augmentations and tumor-biased crop sampling.

Geometric transforms (rotation, scaling, elastic deformation) are applied
with one set of drawn parameters to all three timepoints and the label
map together: trilinear resampling for intensities, nearest neighbor for
labels.  Intensity-only transforms (additive noise, correlated
multiplicative noise, drift) touch the timepoint volumes alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .tissues import TUMOR
from .volume import CaseBundle, LabelMap, Volume


class FoldingError(ValueError):
    """Elastic displacement field is too steep and would fold space."""


@dataclass(frozen=True)
class AugmentSpec:
    seed: int = 0
    noise_sigma: float = 0.0
    mult_sigma: float = 0.0
    mult_corr_mm: float = 20.0
    rotate_deg: float = 0.0
    rotate_axis: str = "z"
    scale: float = 1.0
    elastic_sigma_mm: float = 0.0
    elastic_corr_mm: float = 16.0
    drift_amp: float = 0.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale factor must be positive")
        if self.rotate_axis not in ("x", "y", "z"):
            raise ValueError("rotation axis must be x, y or z")
        if min(self.noise_sigma, self.mult_sigma, self.elastic_sigma_mm) < 0:
            raise ValueError("noise magnitudes must be non-negative")

    def is_identity(self) -> bool:
        return (self.noise_sigma == 0 and self.mult_sigma == 0
                and self.rotate_deg % 360 == 0 and self.scale == 1.0
                and self.elastic_sigma_mm == 0 and self.drift_amp == 0)


_ROT_PLANES = {"z": (0, 1), "y": (0, 2), "x": (1, 2)}


def _smooth_field(rng, dims, corr_vox: float) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.standard_normal(dims), sigma=corr_vox / 2.0,
                                    mode="nearest")
    std = field.std()
    return field / std if std > 0 else field


def _rotate(arr: np.ndarray, angle: float, plane, order: int) -> np.ndarray:
    quarter = angle % 360
    if quarter % 90 == 0 and arr.shape[plane[0]] == arr.shape[plane[1]]:
        # Quarter turns on a square in-plane grid are lossless permutations.
        return np.rot90(arr, k=int(quarter // 90), axes=plane).copy()
    return ndimage.rotate(arr, angle, axes=plane, reshape=False, order=order,
                          mode="constant", cval=0.0)


def _scale_about_center(arr: np.ndarray, factor: float, order: int) -> np.ndarray:
    center = (np.asarray(arr.shape, dtype=np.float64) - 1.0) / 2.0
    matrix = np.eye(3) / factor
    offset = center - matrix @ center
    return ndimage.affine_transform(arr, matrix, offset=offset, order=order,
                                    mode="constant", cval=0.0)


def _elastic_coords(rng, dims, sigma_mm, corr_mm, spacing_mm):
    # Fields steeper than ~1/8 of the correlation length compress space
    # hard enough to fold; refuse them up front.
    if sigma_mm > corr_mm / 8.0:
        raise FoldingError(
            f"elastic displacement of {sigma_mm} mm exceeds the folding cap "
            f"({corr_mm / 8.0:.2f} mm for a {corr_mm} mm correlation length)"
        )
    corr_vox = corr_mm / spacing_mm[0]
    disp = [
        _smooth_field(rng, dims, corr_vox) * (sigma_mm / spacing_mm[axis])
        for axis in range(3)
    ]
    grid = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    return np.stack([g + d for g, d in zip(grid, disp)])


def augment(bundle: CaseBundle, gt: LabelMap, spec: AugmentSpec):
    """Apply the configured augmentations; deterministic per seed.

    Returns a (CaseBundle, LabelMap) pair on the same grid as the input.
    An identity spec returns the inputs unchanged.
    """
    if spec.is_identity():
        return bundle, gt

    rng = np.random.default_rng(spec.seed)
    dims = gt.dims
    spacing = gt.spacing_mm
    images = [v.data.astype(np.float32) for v in bundle.timepoints()]
    labels = gt.data

    if spec.rotate_deg % 360 != 0:
        plane = _ROT_PLANES[spec.rotate_axis]
        images = [_rotate(img, spec.rotate_deg, plane, order=1) for img in images]
        labels = _rotate(labels, spec.rotate_deg, plane, order=0)

    if spec.scale != 1.0:
        images = [_scale_about_center(img, spec.scale, order=1) for img in images]
        labels = _scale_about_center(labels, spec.scale, order=0)

    if spec.elastic_sigma_mm > 0:
        coords = _elastic_coords(rng, dims, spec.elastic_sigma_mm,
                                 spec.elastic_corr_mm, spacing)
        images = [ndimage.map_coordinates(img, coords, order=1, mode="nearest")
                  for img in images]
        labels = ndimage.map_coordinates(labels, coords, order=0, mode="nearest")

    if spec.mult_sigma > 0:
        corr_vox = spec.mult_corr_mm / spacing[0]
        field = 1.0 + spec.mult_sigma * _smooth_field(rng, dims, corr_vox)
        images = [img * field for img in images]

    if spec.drift_amp > 0:
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        grid = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
        proj = sum(g * u for g, u in zip(grid, direction))
        span = proj.max() - proj.min()
        ramp = spec.drift_amp * ((proj - proj.min()) / span - 0.5) if span > 0 else 0.0
        images = [img + ramp for img in images]

    if spec.noise_sigma > 0:
        images = [img + rng.normal(0.0, spec.noise_sigma, dims) for img in images]

    vols = [Volume(img.astype(np.float32), spacing, gt.origin_mm) for img in images]
    out_bundle = CaseBundle(vols[0], vols[1], vols[2], bundle.laterality, bundle.case_id)
    return out_bundle, LabelMap(labels.astype(np.uint8), spacing, gt.origin_mm)


def sample_training_crop(bundle: CaseBundle, gt: LabelMap,
                         crop_mm=(128.0, 128.0, 64.0), pos_fraction: float = 0.9,
                         seed: int = 0):
    """Sample one training crop, biased toward tumor-containing regions.

    With probability pos_fraction the crop is centered on a random tumor
    voxel (clamped inside the volume), otherwise its corner is uniform.
    Volumes without tumor always fall back to uniform crops.
    """
    dims = np.asarray(gt.dims)
    spacing = np.asarray(gt.spacing_mm)
    size = np.round(np.asarray(crop_mm, dtype=np.float64) / spacing).astype(int)
    if (size > dims).any():
        raise ValueError(f"crop {tuple(size)} exceeds volume dims {tuple(dims)}")

    rng = np.random.default_rng(seed)
    positive = rng.random() < pos_fraction
    tumor_idx = np.argwhere(gt.data == TUMOR)
    if positive and len(tumor_idx):
        center = tumor_idx[rng.integers(len(tumor_idx))]
        start = np.clip(center - size // 2, 0, dims - size)
    else:
        start = np.array([rng.integers(0, dims[a] - size[a] + 1) for a in range(3)])

    sl = tuple(slice(int(start[a]), int(start[a] + size[a])) for a in range(3))
    origin = tuple(o + float(start[a]) * spacing[a]
                   for a, o in enumerate(gt.origin_mm))

    def cut(v: Volume) -> Volume:
        return Volume(v.data[sl], v.spacing_mm, origin)

    out_bundle = CaseBundle(cut(bundle.pre), cut(bundle.early), cut(bundle.late),
                            bundle.laterality, bundle.case_id)
    return out_bundle, LabelMap(gt.data[sl], gt.spacing_mm, origin)
