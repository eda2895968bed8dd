"""Volume data model, raw file I/O, isotropic resampling and FFT registration.

A Volume is an axis-aligned 3D grid with physical spacing and origin.  The
axis convention is fixed: axis 0 runs patient left-right, axis 1
anterior-posterior, axis 2 superior-inferior.  Scalar volumes store their
samples as an (nx, ny, nz) array; multi-channel volumes as
(nx, ny, nz, channels) with channels last.

On disk a volume is a ``<stem>.json`` header next to a ``<stem>.raw``
little-endian buffer whose flat order is x fastest, then y, then z, with
channel values interleaved innermost.  Writing is canonical, so a
read/write round trip reproduces both files byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .tissues import LATERALITIES, N_CLASSES

AXIS_CONVENTION = "LR_AP_SI"
AXIS_INDEX = {"x": 0, "y": 1, "z": 2}

DTYPE_CODES = {"u8": np.uint8, "f32": np.float32}
_FILE_DTYPES = {"u8": "u1", "f32": "<f4"}


class VolumeFormatError(ValueError):
    """Header/raw pair is missing, inconsistent, or malformed."""


class GridMismatchError(ValueError):
    """Two volumes that must share dims and spacing do not."""


class DegenerateInputError(ValueError):
    """Input carries no usable signal (e.g. all-zero spectrum)."""


def require_same_grid(a: "Volume", b: "Volume") -> None:
    if a.dims != b.dims or not np.allclose(a.spacing_mm, b.spacing_mm):
        raise GridMismatchError(
            f"grid mismatch: {a.dims}@{a.spacing_mm} vs {b.dims}@{b.spacing_mm}"
        )


@dataclass(frozen=True, eq=False)
class Volume:
    """Immutable 3D grid with physical spacing (mm) and origin (mm).

    data is (nx, ny, nz) for scalar volumes or (nx, ny, nz, channels)
    otherwise; dtype is uint8 or float32.  The array is marked read-only
    after construction, so all operations return new volumes.
    """

    data: np.ndarray
    spacing_mm: tuple[float, float, float]
    origin_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 4 and arr.shape[3] == 1:
            arr = arr[..., 0]
        if arr.ndim not in (3, 4):
            raise ValueError(f"volume data must be 3D or 4D, got shape {arr.shape}")
        if arr.dtype not in (np.uint8, np.float32):
            raise ValueError(f"volume dtype must be uint8 or float32, got {arr.dtype}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        spacing = tuple(float(s) for s in self.spacing_mm)
        origin = tuple(float(o) for o in self.origin_mm)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {spacing}")
        if len(origin) != 3:
            raise ValueError(f"origin must be a 3-vector, got {origin}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing_mm", spacing)
        object.__setattr__(self, "origin_mm", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape[:3])

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 3 else int(self.data.shape[3])

    @property
    def dtype_code(self) -> str:
        return "u8" if self.data.dtype == np.uint8 else "f32"

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        """Physical size of the voxel grid (dims * spacing)."""
        return tuple(n * s for n, s in zip(self.dims, self.spacing_mm))

    def astype(self, code: str) -> "Volume":
        return Volume(self.data.astype(DTYPE_CODES[code]), self.spacing_mm, self.origin_mm)

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.spacing_mm, self.origin_mm)


@dataclass(frozen=True, eq=False)
class LabelMap(Volume):
    """Scalar uint8 volume of tissue class codes 0..6."""

    def __post_init__(self):
        super().__post_init__()
        if self.data.ndim != 3 or self.data.dtype != np.uint8:
            raise ValueError("label map must be a scalar uint8 volume")
        if self.data.size and int(self.data.max()) >= N_CLASSES:
            raise ValueError(f"label codes must be < {N_CLASSES}, found {int(self.data.max())}")

    @classmethod
    def from_volume(cls, v: Volume) -> "LabelMap":
        return cls(v.data, v.spacing_mm, v.origin_mm)


PROB_SUM_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class ProbMap(Volume):
    """Float32 volume of 7 per-voxel class probabilities summing to 1."""

    def __post_init__(self):
        super().__post_init__()
        if self.data.ndim != 4 or self.data.shape[3] != N_CLASSES or self.data.dtype != np.float32:
            raise ValueError(f"probability map must be float32 with {N_CLASSES} channels")
        if self.data.size:
            lo, hi = float(self.data.min()), float(self.data.max())
            if lo < -1e-6 or hi > 1 + 1e-6:
                raise ValueError(f"probabilities outside [0,1]: min={lo}, max={hi}")
            err = float(np.abs(self.data.sum(axis=3, dtype=np.float64) - 1.0).max())
            if err > PROB_SUM_TOL:
                raise ValueError(f"per-voxel probability sums deviate from 1 by {err}")

    @classmethod
    def from_volume(cls, v: Volume) -> "ProbMap":
        return cls(v.data, v.spacing_mm, v.origin_mm)


@dataclass(frozen=True)
class CaseBundle:
    """One patient's three co-registered DCE timepoints plus laterality."""

    pre: Volume
    early: Volume
    late: Volume
    laterality: str
    case_id: str = ""

    def __post_init__(self):
        if self.laterality not in LATERALITIES:
            raise ValueError(f"laterality must be one of {LATERALITIES}, got {self.laterality!r}")

    def timepoints(self) -> tuple[Volume, Volume, Volume]:
        return (self.pre, self.early, self.late)

    def validate_registered(self) -> None:
        require_same_grid(self.pre, self.early)
        require_same_grid(self.pre, self.late)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def volume_paths(path) -> tuple[Path, Path]:
    """Map a stem / .json / .raw path to the (header, raw) pair."""
    p = str(path)
    if p.endswith(".json"):
        stem = p[: -len(".json")]
    elif p.endswith(".raw"):
        stem = p[: -len(".raw")]
    else:
        stem = p
    return Path(stem + ".json"), Path(stem + ".raw")


def _encode_header(v: Volume, extra: dict | None = None) -> bytes:
    header = {
        "dims": list(v.dims),
        "spacing_mm": list(v.spacing_mm),
        "origin_mm": list(v.origin_mm),
        "channels": v.channels,
        "dtype": v.dtype_code,
        "axis_convention": AXIS_CONVENTION,
    }
    if extra:
        header.update(extra)
    return (json.dumps(header, indent=2) + "\n").encode("ascii")


def write_volume(v: Volume, path, extra_header: dict | None = None) -> None:
    """Write the canonical header + raw pair for a volume.

    Output bytes depend only on the volume contents, so rewriting the
    same volume is byte identical.
    """
    header_path, raw_path = volume_paths(path)
    arr = v.data if v.data.ndim == 4 else v.data[..., np.newaxis]
    flat = np.ascontiguousarray(arr.transpose(2, 1, 0, 3))
    raw = flat.astype(_FILE_DTYPES[v.dtype_code], copy=False).tobytes()
    header_path.write_bytes(_encode_header(v, extra_header))
    raw_path.write_bytes(raw)


def read_header(path) -> dict:
    header_path, _ = volume_paths(path)
    if not header_path.exists():
        raise FileNotFoundError(f"volume header not found: {header_path}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as e:
        raise VolumeFormatError(f"malformed header {header_path}: {e}") from e
    return header


def read_volume(path) -> Volume:
    """Read a header + raw pair; inverse of :func:`write_volume`.

    Unknown extra header fields (e.g. MIP plane metadata) are ignored.
    """
    header_path, raw_path = volume_paths(path)
    header = read_header(path)
    for key in ("dims", "spacing_mm", "origin_mm", "channels", "dtype"):
        if key not in header:
            raise VolumeFormatError(f"header {header_path} missing field {key!r}")
    dtype = header["dtype"]
    if dtype not in _FILE_DTYPES:
        raise VolumeFormatError(f"unknown dtype {dtype!r} in {header_path}")
    if header.get("axis_convention") != AXIS_CONVENTION:
        raise VolumeFormatError(
            f"unsupported axis convention {header.get('axis_convention')!r} in {header_path}"
        )
    dims = [int(n) for n in header["dims"]]
    channels = int(header["channels"])
    spacing = [float(s) for s in header["spacing_mm"]]
    if len(dims) != 3 or any(n <= 0 for n in dims) or channels <= 0:
        raise VolumeFormatError(f"bad dims/channels in {header_path}")
    if any(s <= 0 for s in spacing):
        raise VolumeFormatError(f"non-positive spacing in {header_path}")
    if not raw_path.exists():
        raise FileNotFoundError(f"raw file not found: {raw_path}")
    raw = raw_path.read_bytes()
    nx, ny, nz = dims
    expected = nx * ny * nz * channels * np.dtype(_FILE_DTYPES[dtype]).itemsize
    if len(raw) != expected:
        raise VolumeFormatError(
            f"{raw_path}: raw size {len(raw)} does not match header ({expected} bytes expected)"
        )
    flat = np.frombuffer(raw, dtype=_FILE_DTYPES[dtype])
    arr = flat.reshape(nz, ny, nx, channels).transpose(2, 1, 0, 3)
    return Volume(arr, tuple(spacing), tuple(float(o) for o in header["origin_mm"]))


def read_labelmap(path) -> LabelMap:
    return LabelMap.from_volume(read_volume(path))


def read_probmap(path) -> ProbMap:
    return ProbMap.from_volume(read_volume(path))


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def resample_isotropic(v: Volume, target_mm: float = 1.0) -> Volume:
    """Resample a volume to isotropic spacing by trilinear interpolation.

    The output grid per axis has n_out = floor((n_in - 1) * s_in / t) + 1
    samples, so it never extrapolates beyond the input extent; the origin
    is preserved.  uint8 volumes are interpolated in float and rounded
    back.
    """
    if target_mm <= 0:
        raise ValueError(f"target spacing must be positive, got {target_mm}")
    dims = v.dims
    spacing = v.spacing_mm
    n_out = []
    for axis in range(3):
        if dims[axis] < 2 and spacing[axis] != target_mm:
            raise ValueError(
                f"axis {axis} has {dims[axis]} sample(s) at {spacing[axis]} mm; "
                f"cannot resample to {target_mm} mm"
            )
        n_out.append(int(np.floor((dims[axis] - 1) * spacing[axis] / target_mm + 1e-9)) + 1)

    coords_1d = [np.arange(n_out[a]) * (target_mm / spacing[a]) for a in range(3)]
    coords = np.stack(np.meshgrid(*coords_1d, indexing="ij"))

    arr = v.data if v.data.ndim == 4 else v.data[..., np.newaxis]
    out = np.empty((*n_out, arr.shape[3]), dtype=np.float32)
    for c in range(arr.shape[3]):
        out[..., c] = ndimage.map_coordinates(
            arr[..., c].astype(np.float32), coords, order=1, mode="nearest"
        )
    if v.dtype_code == "u8":
        out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    if out.shape[3] == 1:
        out = out[..., 0]
    return Volume(out, (target_mm,) * 3, v.origin_mm)


# ---------------------------------------------------------------------------
# Registration
# ---------------------------------------------------------------------------

def translate_volume(v: Volume, shift) -> Volume:
    """Integer-voxel translation with zero fill outside the grid."""
    shift = np.asarray(shift, dtype=int)
    out = np.zeros_like(v.data)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    for axis in range(3):
        s = int(shift[axis])
        n = v.dims[axis]
        if abs(s) >= n:
            return v.with_data(out)
        if s >= 0:
            dst[axis] = slice(s, n)
            src[axis] = slice(0, n - s)
        else:
            dst[axis] = slice(0, n + s)
            src[axis] = slice(-s, n)
    out[tuple(dst)] = v.data[tuple(src)]
    return v.with_data(out)


def register_phase_correlation(fixed: Volume, moving: Volume):
    """Estimate the integer translation between two scalar volumes.

    Returns (shift, registered) where shift is the 3-vector of voxel
    offsets maximizing the inverse transform of the normalized
    cross-power spectrum, and registered is moving translated by -shift
    with zero fill.  For moving = roll(fixed, d) the recovered shift is d.
    """
    if fixed.channels != 1 or moving.channels != 1:
        raise ValueError("registration expects scalar volumes")
    require_same_grid(fixed, moving)
    if not np.any(fixed.data) or not np.any(moving.data):
        raise DegenerateInputError("all-zero volume has an undefined spectrum")

    f_fixed = np.fft.fftn(fixed.data.astype(np.float64))
    f_moving = np.fft.fftn(moving.data.astype(np.float64))
    cross = f_moving * np.conj(f_fixed)
    mag = np.abs(cross)
    nonzero = mag > 0
    spectrum = np.zeros_like(cross)
    spectrum[nonzero] = cross[nonzero] / mag[nonzero]
    corr = np.fft.ifftn(spectrum).real

    peak = np.unravel_index(int(np.argmax(corr)), corr.shape)
    shift = np.array(peak, dtype=int)
    for axis in range(3):
        if shift[axis] > fixed.dims[axis] // 2:
            shift[axis] -= fixed.dims[axis]
    registered = translate_volume(moving, -shift)
    return shift, registered
