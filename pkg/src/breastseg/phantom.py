"""Procedural breast phantoms and simulated model outputs.

Phantoms encode the anatomy the contact heuristics rely on: an air
background reaching the image edge, a skin shell wrapping each breast,
glandular tissue inside adipose, one tumor embedded in the gland of each
diseased side, vessels of at least 2 mm radius kept clear of the tumor,
and a posterior chest slab.  Intensities follow simple enhancement
curves (tumor and vessels enhance early; gland enhances with the BPE
level).  Realism is not a goal; the contact topology is.

simulate_model_outputs degrades a ground truth into the failure modes
the pipeline must fix: blurred class boundaries, spurious tumor blobs
away from the true tumor, tumor probability leaking onto vessels, and
jittered / missing detector boxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .boxes import BoxProposal2D
from .components import connected_components, contact_area
from .tissues import ADIPOSE, AIR, CHEST, GLAND, LATERALITIES, N_CLASSES, SKIN, TUMOR, VESSEL
from .volume import CaseBundle, LabelMap, ProbMap, Volume


class PhantomInfeasibleError(ValueError):
    """The requested geometry cannot be realized (e.g. tumor exceeds gland)."""


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    extent_mm: tuple[int, int, int] = (128, 128, 128)
    breast_radius_mm: tuple[float, float] = (23.0, 28.0)
    gland_fraction: float = 0.30
    tumor_diameter_mm: tuple[float, float] = (9.0, 14.0)
    vessel_count: int = 2
    vessel_radius_mm: float = 2.0
    laterality: str = "left"
    bpe_level: float = 0.2
    skin_thickness_mm: float = 2.0

    def __post_init__(self):
        if self.tumor_diameter_mm[0] <= 0:
            raise ValueError("tumor diameter must be positive")
        if self.vessel_radius_mm < 2.0:
            raise ValueError("vessels thinner than 2 mm radius are not annotated")
        if self.laterality not in LATERALITIES:
            raise ValueError(f"laterality must be one of {LATERALITIES}")
        if not 0.0 <= self.bpe_level <= 1.0:
            raise ValueError("BPE level must be in [0, 1]")


# Per-class (pre, early, late) mean intensities; gland gains bpe-scaled
# enhancement on top of these.
_INTENSITY = {
    AIR: (0.02, 0.02, 0.02),
    SKIN: (0.30, 0.36, 0.34),
    ADIPOSE: (0.12, 0.14, 0.13),
    GLAND: (0.35, 0.35, 0.35),
    VESSEL: (0.30, 0.88, 0.62),
    TUMOR: (0.36, 0.95, 0.70),
    CHEST: (0.40, 0.46, 0.44),
}
_GLAND_BPE_GAIN = (0.0, 0.45, 0.30)


def _smooth_noise(rng, dims, sigma_vox: float) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.standard_normal(dims), sigma=sigma_vox,
                                    mode="nearest")
    std = field.std()
    return field / std if std > 0 else field


def _centers(dims):
    return [(np.arange(n) + 0.5).astype(np.float32) for n in dims]


def _superellipsoid(centers, middle, radii, power):
    cx, cy, cz = centers
    t = (
        (np.abs(cx - middle[0])[:, None, None] / radii[0]) ** power
        + (np.abs(cy - middle[1])[None, :, None] / radii[1]) ** power
        + (np.abs(cz - middle[2])[None, None, :] / radii[2]) ** power
    )
    return t <= 1.0


def _sphere(centers, middle, radius):
    cx, cy, cz = centers
    d2 = (
        ((cx - middle[0]) ** 2)[:, None, None]
        + ((cy - middle[1]) ** 2)[None, :, None]
        + ((cz - middle[2]) ** 2)[None, None, :]
    )
    return d2 <= radius * radius


def _tube(centers, a, b, radius):
    """Voxels within `radius` of segment a-b."""
    cx, cy, cz = centers
    a = np.asarray(a, dtype=np.float32)
    ab = np.asarray(b, dtype=np.float32) - a
    ab2 = float(ab @ ab)
    if ab2 == 0:
        return _sphere(centers, a, radius)
    dot = (
        ((cx - a[0]) * ab[0])[:, None, None]
        + ((cy - a[1]) * ab[1])[None, :, None]
        + ((cz - a[2]) * ab[2])[None, None, :]
    )
    t = np.clip(dot / ab2, 0.0, 1.0)
    d2 = (
        ((cx[:, None, None] - (a[0] + t * ab[0])) ** 2)
        + ((cy[None, :, None] - (a[1] + t * ab[1])) ** 2)
        + ((cz[None, None, :] - (a[2] + t * ab[2])) ** 2)
    )
    return d2 <= radius * radius


_FACE_STRUCT = ndimage.generate_binary_structure(3, 1)


def _build_labels(spec: PhantomSpec, rng) -> np.ndarray:
    nx, ny, nz = spec.extent_mm
    centers = _centers((nx, ny, nz))
    labels = np.zeros((nx, ny, nz), dtype=np.uint8)

    y_chest = 0.80 * ny
    labels[:, int(y_chest):, :] = CHEST

    diseased = ("left", "right") if spec.laterality == "bilateral" else (spec.laterality,)
    sides = {"left": 0.25 * nx, "right": 0.75 * nx}

    breast = np.zeros_like(labels, dtype=bool)
    geometry = {}
    for side, cx in sides.items():
        rx = rng.uniform(*spec.breast_radius_mm)
        rx = min(rx, 0.25 * nx - 4.0)
        ry = min(rng.uniform(0.9, 1.3) * rx, y_chest - 4.0)
        rz = min(rng.uniform(0.85, 1.1) * rx, 0.5 * nz - 4.0)
        cz = 0.5 * nz + rng.uniform(-3.0, 3.0)
        power = rng.uniform(2.0, 3.0)
        mask = _superellipsoid(centers, (cx, y_chest, cz), (rx, ry, rz), power)
        mask &= (np.arange(ny) + 0.5 < y_chest)[None, :, None]
        geometry[side] = (cx, cz, rx, ry, rz)
        breast |= mask
    labels[breast] = ADIPOSE

    air = ~breast & (labels == AIR)
    skin_iters = max(1, int(round(spec.skin_thickness_mm)))
    skin = breast & ndimage.binary_dilation(air, structure=_FACE_STRUCT,
                                            iterations=skin_iters)
    labels[skin] = SKIN
    interior = breast & ~ndimage.binary_dilation(air, structure=_FACE_STRUCT,
                                                 iterations=skin_iters + 2)

    gland_scale = spec.gland_fraction ** (1.0 / 3.0)
    gland = np.zeros_like(breast)
    gland_by_side = {}
    for side, (cx, cz, brx, bry, brz) in geometry.items():
        rx = gland_scale * min(brx, bry, brz)
        gc = (
            cx + rng.uniform(-2.0, 2.0),
            y_chest - rng.uniform(1.0, 1.3) * rx,
            cz + rng.uniform(-2.0, 2.0),
        )
        blob = _superellipsoid(centers, gc, (rx, 1.2 * rx, rx), 2.0)
        blob |= _superellipsoid(
            centers,
            (gc[0] + rng.uniform(-4, 4), gc[1] + rng.uniform(-4, 4), gc[2] + rng.uniform(-4, 4)),
            (0.7 * rx, 0.9 * rx, 0.7 * rx), 2.0)
        blob &= interior
        gland_by_side[side] = blob
        gland |= blob
    labels[gland] = GLAND

    tumor = np.zeros_like(breast)
    for side in diseased:
        d = rng.uniform(*spec.tumor_diameter_mm)
        r = d / 2.0
        depth = ndimage.distance_transform_edt(gland_by_side[side])
        cand = np.argwhere(depth >= r + 0.5)
        if cand.size == 0:
            raise PhantomInfeasibleError(
                f"no room for a {d:.1f} mm tumor inside the {side} gland"
            )
        pick = cand[rng.integers(len(cand))]
        tumor |= _sphere(centers, pick + 0.5, r)
    labels[tumor] = TUMOR

    if spec.vessel_count > 0:
        clear_of_tumor = ndimage.distance_transform_edt(~tumor) > (
            spec.vessel_radius_mm + 6.0
        )
        host = interior & clear_of_tumor
        cand = np.argwhere(host)
        if cand.size:
            for _ in range(spec.vessel_count):
                a = cand[rng.integers(len(cand))] + 0.5
                b = cand[rng.integers(len(cand))] + 0.5
                tube = _tube(centers, a, b, spec.vessel_radius_mm)
                labels[tube & host] = VESSEL
    return labels


def _check_topology(labels: np.ndarray, min_contact_mm2: float = 64.0) -> bool:
    comp = connected_components(labels == AIR, 26)
    lab = comp.labels
    edge_ids = set()
    for axis in range(3):
        for sl in (0, -1):
            idx = [slice(None)] * 3
            idx[axis] = sl
            edge_ids.update(np.unique(lab[tuple(idx)]).tolist())
    edge_ids.discard(0)
    if len(edge_ids) != comp.count:
        return False

    skin_comp = connected_components(labels == SKIN, 26)
    air_dilated = ndimage.binary_dilation(labels == AIR, structure=_FACE_STRUCT)
    touching = set(np.unique(skin_comp.labels[air_dilated]).tolist()) - {0}
    if len(touching) != skin_comp.count:
        return False

    areas = contact_area(labels, TUMOR, GLAND, (1.0, 1.0, 1.0), 26)
    if len(areas) <= 1 or (areas[1:] < min_contact_mm2).any():
        return False
    return True


def generate_phantom(spec: PhantomSpec) -> tuple[CaseBundle, LabelMap]:
    """Deterministic phantom for a spec; retries internal placement a few
    times before declaring the geometry infeasible."""
    last_err = None
    labels = None
    for attempt in range(5):
        rng = np.random.default_rng((spec.seed, attempt))
        try:
            candidate = _build_labels(spec, rng)
        except PhantomInfeasibleError as e:
            last_err = e
            continue
        if _check_topology(candidate):
            labels = candidate
            break
    if labels is None:
        raise last_err or PhantomInfeasibleError(
            f"could not realize phantom topology for seed {spec.seed}"
        )

    rng = np.random.default_rng((spec.seed, 101))  # intensity stream
    texture = 1.0 + 0.05 * _smooth_noise(rng, labels.shape, sigma_vox=4.0)
    vols = []
    for ti in range(3):
        lut = np.zeros(N_CLASSES, dtype=np.float32)
        for cls, curve in _INTENSITY.items():
            lut[cls] = curve[ti]
        lut[GLAND] += _GLAND_BPE_GAIN[ti] * spec.bpe_level
        img = lut[labels] * texture
        img += rng.normal(0.0, 0.01, labels.shape)
        vols.append(Volume(np.clip(img, 0.0, 2.0).astype(np.float32), (1.0, 1.0, 1.0)))

    bundle = CaseBundle(vols[0], vols[1], vols[2], spec.laterality,
                        case_id=f"phantom_{spec.seed:05d}")
    return bundle, LabelMap(labels, (1.0, 1.0, 1.0))


# ---------------------------------------------------------------------------
# Simulated model outputs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DegradationSpec:
    seed: int = 0
    label_noise_sigma_mm: float = 0.0
    fp_blob_count: int = 0
    fp_blob_diameter_mm: float = 5.0
    fp_blob_prob: float = 0.85
    vessel_leak_fraction: float = 0.0
    vessel_leak_prob: float = 0.55
    detector_jitter_mm: float = 0.0
    detector_miss_prob: float = 0.0
    proposals_per_plane: int = 3

    def __post_init__(self):
        if min(self.label_noise_sigma_mm, self.fp_blob_count, self.detector_jitter_mm) < 0:
            raise ValueError("degradation magnitudes must be non-negative")
        for p in (self.vessel_leak_fraction, self.detector_miss_prob,
                  self.fp_blob_prob, self.vessel_leak_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


def _paint_tumor(prob: np.ndarray, mask: np.ndarray, value: float) -> None:
    """Set the tumor channel at masked voxels, rescaling the rest."""
    old_rest = 1.0 - prob[..., TUMOR][mask]
    scale = np.where(old_rest > 1e-12, (1.0 - value) / np.maximum(old_rest, 1e-12), 0.0)
    sub = prob[mask]
    for c in range(N_CLASSES):
        if c != TUMOR:
            sub[:, c] *= scale
    sub[:, TUMOR] = value
    prob[mask] = sub


def _place_fp_blobs(gt: np.ndarray, d: DegradationSpec, rng) -> list[np.ndarray]:
    """Blob centers inside adipose/gland, separated from each other and
    placed outside the (jitter-expanded) true tumor boxes."""
    r = d.fp_blob_diameter_mm / 2.0
    host = (gt == ADIPOSE) | (gt == GLAND)
    depth = ndimage.distance_transform_edt(host)
    allowed = depth >= r + 1.0

    tumor_mask = gt == TUMOR
    if tumor_mask.any():
        # The fused box edges sit within the jitter of the tumor bbox, so a
        # center this far out keeps the whole blob outside the box.
        margin = int(np.ceil(r + d.detector_jitter_mm + 2.0))
        for sl in connected_components(tumor_mask, 26).slices:
            grown = tuple(
                slice(max(0, s.start - margin), min(n, s.stop + margin))
                for s, n in zip(sl, gt.shape)
            )
            allowed[grown] = False

    cand = np.argwhere(allowed)
    if len(cand) == 0 and d.fp_blob_count > 0:
        raise PhantomInfeasibleError("no room for false-positive blobs")
    order = rng.permutation(len(cand))
    min_sep = d.fp_blob_diameter_mm + 2.0
    picked_arr = np.empty((0, 3))
    picked = []
    for i in order:
        c = cand[i].astype(np.float64)
        if not len(picked) or (np.linalg.norm(picked_arr - c, axis=1) >= min_sep).all():
            picked.append(c)
            picked_arr = np.asarray(picked)
            if len(picked) == d.fp_blob_count:
                break
    if len(picked) < d.fp_blob_count:
        raise PhantomInfeasibleError(
            f"placed only {len(picked)} of {d.fp_blob_count} blobs"
        )
    return picked


def _side_proposals(tumor_side: np.ndarray, plane: str, d: DegradationSpec,
                    laterality: str, case_id: str, rng) -> list[BoxProposal2D]:
    collapse = 2 if plane == "axial" else 0
    present = tumor_side.any(axis=collapse)
    if not present.any():
        return []
    idx0 = np.where(present.any(axis=1))[0]
    idx1 = np.where(present.any(axis=0))[0]
    base = np.array([idx0[0], idx1[0], idx0[-1] + 1, idx1[-1] + 1], dtype=np.float64)
    props = []
    for _ in range(d.proposals_per_plane):
        jitter = rng.uniform(-d.detector_jitter_mm, d.detector_jitter_mm, size=4)
        score = float(rng.uniform(0.7, 0.99))
        missed = rng.random() < d.detector_miss_prob
        if missed:
            continue
        b = base + jitter
        lo0, hi0 = sorted((b[0], b[2]))
        lo1, hi1 = sorted((b[1], b[3]))
        props.append(BoxProposal2D(plane, (lo0, lo1, max(hi0, lo0 + 1.0), max(hi1, lo1 + 1.0)),
                                   score, case_id=case_id, laterality=laterality))
    return props


def simulate_model_outputs(gt: LabelMap, d: DegradationSpec,
                           case_id: str = "") -> tuple[ProbMap, Volume, list[BoxProposal2D]]:
    """Degrade a ground truth into multi-tissue probabilities, a tumor
    probability volume, and detector box proposals.

    With an all-zero spec the probabilities are the exact one-hot of the
    ground truth and the proposals are the exact tumor projections.
    """
    rng = np.random.default_rng((d.seed, 202))  # degradation stream
    arr = gt.data
    onehot = np.zeros(arr.shape + (N_CLASSES,), dtype=np.float32)
    for c in range(N_CLASSES):
        onehot[..., c] = arr == c

    sigma = d.label_noise_sigma_mm / np.asarray(gt.spacing_mm)
    if d.label_noise_sigma_mm > 0:
        multi = np.empty_like(onehot)
        for c in range(N_CLASSES):
            multi[..., c] = ndimage.gaussian_filter(onehot[..., c], sigma=sigma,
                                                    mode="nearest")
        multi /= multi.sum(axis=3, keepdims=True)
    else:
        multi = onehot.copy()

    tumor_prob = multi[..., TUMOR].copy()

    if d.fp_blob_count > 0:
        centers = _centers(arr.shape)
        r = d.fp_blob_diameter_mm / 2.0
        for c in _place_fp_blobs(arr, d, rng):
            blob = _sphere(centers, c + 0.5, r)
            _paint_tumor(multi, blob, d.fp_blob_prob)
            tumor_prob[blob] = d.fp_blob_prob

    if d.vessel_leak_fraction > 0:
        vessel = arr == VESSEL
        leak = vessel & (rng.random(arr.shape) < d.vessel_leak_fraction)
        tumor_prob[leak] = np.maximum(tumor_prob[leak], d.vessel_leak_prob)

    proposals = []
    nx = arr.shape[0]
    tumor_mask = arr == TUMOR
    for side in ("left", "right"):
        half = slice(0, nx // 2) if side == "left" else slice(nx // 2, nx)
        side_mask = np.zeros_like(tumor_mask)
        side_mask[half] = tumor_mask[half]
        for plane in ("axial", "sagittal"):
            proposals.extend(_side_proposals(side_mask, plane, d, side, case_id, rng))

    return (
        ProbMap(multi, gt.spacing_mm, gt.origin_mm),
        Volume(tumor_prob.astype(np.float32), gt.spacing_mm, gt.origin_mm),
        proposals,
    )
