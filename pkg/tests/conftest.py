import numpy as np
import pytest

from breastseg import LabelMap, ProbMap, Volume
from breastseg.tissues import N_CLASSES


def labelmap(arr, spacing=(1.0, 1.0, 1.0)) -> LabelMap:
    return LabelMap(np.asarray(arr, dtype=np.uint8), spacing)


def scalar_volume(arr, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(np.asarray(arr, dtype=np.float32), spacing)


def one_hot_probs(labels, spacing=(1.0, 1.0, 1.0)) -> ProbMap:
    arr = np.asarray(labels)
    out = np.zeros(arr.shape + (N_CLASSES,), dtype=np.float32)
    for c in range(N_CLASSES):
        out[..., c] = arr == c
    return ProbMap(out, spacing)


def probmap_from_rows(shape, rows, spacing=(1.0, 1.0, 1.0)) -> ProbMap:
    """Build a ProbMap where every voxel gets the same channel row unless
    overridden; rows is {(x, y, z): 7-tuple} plus a 'default' key."""
    out = np.empty(shape + (N_CLASSES,), dtype=np.float32)
    out[:] = np.asarray(rows["default"], dtype=np.float32)
    for key, row in rows.items():
        if key == "default":
            continue
        out[key] = np.asarray(row, dtype=np.float32)
    return ProbMap(out, spacing)


@pytest.fixture(scope="session")
def small_phantom():
    from breastseg import PhantomSpec, generate_phantom

    return generate_phantom(PhantomSpec(seed=7, extent_mm=(96, 96, 96)))
