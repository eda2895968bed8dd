"""2D projection images for the external tumor detectors.

Each timepoint volume is median filtered along the projection axis, then
collapsed by a per-pixel maximum (MIP).  The three timepoints map to the
three image channels in order pre / early / late.  Sagittal projections
are restricted to the half of the volume holding the diseased breast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import AXIS_INDEX, CaseBundle, Volume, read_header, read_volume, write_volume

PLANES = ("axial", "sagittal")

# Axis collapsed by the projection: axial MIPs look down the SI axis,
# sagittal MIPs down the LR axis.
PROJECTION_AXIS = {"axial": 2, "sagittal": 0}

# Channel normalization constants (configurable; these are the usual
# ImageNet preprocessing values).
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True, eq=False)
class MipImage:
    """3-channel projection image at the volume's in-plane spacing.

    data has shape (w, h, 3): axial images index (x, y), sagittal
    images index (y, z).
    """

    plane: str
    laterality: str
    data: np.ndarray
    spacing_mm: float = 1.0

    def __post_init__(self):
        if self.plane not in PLANES:
            raise ValueError(f"plane must be one of {PLANES}, got {self.plane!r}")
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float32))
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"MIP image must be (w, h, 3), got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return int(self.data.shape[0])

    @property
    def height(self) -> int:
        return int(self.data.shape[1])


def median_filter_axis(v: Volume, axis, window_mm: float = 10.0) -> Volume:
    """1D running median along one axis only; borders replicate.

    Window length is round(window_mm / spacing) samples; even lengths
    take the upper median (rank n//2).
    """
    axis_i = AXIS_INDEX[axis] if isinstance(axis, str) else int(axis)
    if axis_i not in (0, 1, 2):
        raise ValueError(f"axis must be x, y or z, got {axis!r}")
    if window_mm <= 0:
        raise ValueError("window must be positive")
    length = max(1, int(round(window_mm / v.spacing_mm[axis_i])))
    if length > v.dims[axis_i]:
        raise ValueError(
            f"median window of {length} samples exceeds axis extent {v.dims[axis_i]}"
        )
    size = [1] * v.data.ndim
    size[axis_i] = length
    filtered = ndimage.median_filter(v.data, size=tuple(size), mode="nearest")
    return v.with_data(filtered)


def _half_slice(nx: int, laterality: str) -> slice:
    # Left breast occupies the low-x half of the LR axis.
    if laterality == "left":
        return slice(0, nx // 2)
    if laterality == "right":
        return slice(nx // 2, nx)
    raise ValueError(f"sagittal MIP needs laterality 'left' or 'right', got {laterality!r}")


def make_mip(bundle: CaseBundle, plane: str, laterality: str | None = None,
             window_mm: float = 10.0) -> MipImage:
    """Project a registered case bundle onto one plane.

    Axial images cover the full LR/AP extent; sagittal images are limited
    to the diseased half, so bilateral cases need one call per side.
    """
    if plane not in PLANES:
        raise ValueError(f"plane must be one of {PLANES}, got {plane!r}")
    laterality = laterality or bundle.laterality
    bundle.validate_registered()
    axis = PROJECTION_AXIS[plane]

    channels = []
    for v in bundle.timepoints():
        if v.channels != 1:
            raise ValueError("MIP projection expects scalar timepoint volumes")
        filtered = median_filter_axis(v, axis, window_mm).data
        if plane == "sagittal":
            filtered = filtered[_half_slice(v.dims[0], laterality)]
        channels.append(filtered.max(axis=axis))
    img = np.stack(channels, axis=-1).astype(np.float32)
    return MipImage(plane, laterality, img, spacing_mm=float(bundle.pre.spacing_mm[0]))


def normalize_imagenet(img: MipImage, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> MipImage:
    """Min-max rescale each channel to [0,1], then standardize per channel.

    A constant channel has zero range and maps uniformly to (0 - mean)/std.
    """
    out = np.empty_like(img.data)
    for c in range(3):
        chan = img.data[..., c]
        lo, hi = float(chan.min()), float(chan.max())
        scaled = (chan - lo) / (hi - lo) if hi > lo else np.zeros_like(chan)
        out[..., c] = (scaled - mean[c]) / std[c]
    return MipImage(img.plane, img.laterality, out, img.spacing_mm)


def write_mip(img: MipImage, path) -> None:
    """Serialize as the volume format with nz = 1 plus plane metadata."""
    vol = Volume(img.data[:, :, np.newaxis, :], (img.spacing_mm,) * 3)
    write_volume(vol, path, extra_header={"plane": img.plane, "laterality": img.laterality})


def read_mip(path) -> MipImage:
    header = read_header(path)
    vol = read_volume(path)
    if vol.dims[2] != 1 or vol.channels != 3:
        raise ValueError(f"not a MIP image file: dims={vol.dims}, channels={vol.channels}")
    return MipImage(
        header.get("plane", "axial"),
        header.get("laterality", ""),
        vol.data[:, :, 0, :],
        spacing_mm=float(vol.spacing_mm[0]),
    )
