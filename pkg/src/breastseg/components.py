"""Connected component labeling and tissue-tissue contact areas."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .tissues import N_CLASSES
from .volume import Volume

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    26: np.ones((3, 3, 3), dtype=bool),
}


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Volume) else np.asarray(x)


@dataclass(frozen=True, eq=False)
class ComponentSet:
    """Labeled components of a binary mask; 0 is background.

    IDs are dense 1..count, ordered by each component's first voxel in
    C-order scan of the (x, y, z) array.
    """

    labels: np.ndarray
    count: int
    sizes: np.ndarray          # sizes[i] = voxel count of component i; sizes[0] = 0
    slices: tuple              # bounding slice triple per component, index i-1


def connected_components(mask, connectivity: int = 26) -> ComponentSet:
    """Label a binary volume under 6- or 26-connectivity."""
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    arr = _as_array(mask).astype(bool)
    labels, n = ndimage.label(arr, structure=_STRUCTURES[connectivity])
    labels = labels.astype(np.int32, copy=False)
    if n > 1:
        # Pin ID order to first-voxel scan order regardless of how the
        # labeling pass numbered them.
        flat = labels.ravel()
        ids, first = np.unique(flat, return_index=True)
        keep = ids > 0
        order = np.argsort(first[keep], kind="stable")
        remap = np.zeros(n + 1, dtype=np.int32)
        remap[ids[keep][order]] = np.arange(1, n + 1, dtype=np.int32)
        labels = remap[flat].reshape(labels.shape)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    sizes[0] = 0
    return ComponentSet(labels, int(n), sizes, tuple(ndimage.find_objects(labels, n)))


def _shifted(mask: np.ndarray, axis: int, step: int) -> np.ndarray:
    """Shift a boolean mask by one voxel without wraparound."""
    out = np.zeros_like(mask)
    src = [slice(None)] * mask.ndim
    dst = [slice(None)] * mask.ndim
    if step > 0:
        dst[axis] = slice(1, None)
        src[axis] = slice(None, -1)
    else:
        dst[axis] = slice(None, -1)
        src[axis] = slice(1, None)
    out[tuple(dst)] = mask[tuple(src)]
    return out


def _component_contact(labels_arr: np.ndarray, class_a: int, class_b: int,
                       spacing_mm, connectivity: int):
    """Per-component shared-face area between class_a components and class_b."""
    comp = connected_components(labels_arr == class_a, connectivity)
    b_mask = labels_arr == class_b
    areas = np.zeros(comp.count + 1, dtype=np.float64)
    sx, sy, sz = spacing_mm
    face_area = {0: sy * sz, 1: sx * sz, 2: sx * sy}
    for axis in range(3):
        for step in (1, -1):
            touching = (comp.labels > 0) & _shifted(b_mask, axis, step)
            if touching.any():
                counts = np.bincount(comp.labels[touching], minlength=comp.count + 1)
                areas += counts * face_area[axis]
    return comp, areas


def contact_area(labels, class_a: int, class_b: int, spacing_mm=(1.0, 1.0, 1.0),
                 connectivity: int = 26) -> np.ndarray:
    """Shared-face area (mm^2) between each class_a component and class_b.

    Returns an array indexed by component ID (entry 0 unused).  Every
    shared face counts once, weighted by its physical area.
    """
    for c in (class_a, class_b):
        if not 0 <= int(c) < N_CLASSES:
            raise ValueError(f"unknown class code {c}")
    arr = _as_array(labels)
    if isinstance(labels, Volume):
        spacing_mm = labels.spacing_mm
    _, areas = _component_contact(arr, int(class_a), int(class_b), spacing_mm, connectivity)
    return areas
