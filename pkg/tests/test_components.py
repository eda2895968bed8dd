import numpy as np
import pytest

from breastseg.components import connected_components, contact_area
from breastseg.tissues import ADIPOSE, GLAND, TUMOR

from conftest import labelmap
from oracles import brute_components, brute_contact_area


def test_empty_mask():
    comp = connected_components(np.zeros((4, 4, 4), bool), 26)
    assert comp.count == 0
    assert comp.labels.max() == 0


def test_two_separated_cubes():
    mask = np.zeros((10, 6, 6), bool)
    mask[0:2, 0:2, 0:2] = True
    mask[6:8, 0:2, 0:2] = True
    for conn in (6, 26):
        comp = connected_components(mask, conn)
        assert comp.count == 2
        assert comp.sizes[1] == comp.sizes[2] == 8


def test_edge_adjacency_depends_on_connectivity():
    mask = np.zeros((3, 3, 3), bool)
    mask[1, 1, 1] = True
    mask[1, 2, 2] = True   # shares an edge, not a face
    assert connected_components(mask, 26).count == 1
    assert connected_components(mask, 6).count == 2


def test_ids_follow_scan_order():
    mask = np.zeros((4, 4, 4), bool)
    mask[3, 3, 3] = True   # late in scan order
    mask[0, 0, 1] = True
    comp = connected_components(mask, 26)
    assert comp.labels[0, 0, 1] == 1
    assert comp.labels[3, 3, 3] == 2


def test_components_match_bruteforce():
    rng = np.random.default_rng(0)
    for trial in range(20):
        dims = tuple(rng.integers(3, 12, size=3))
        mask = rng.random(dims) < 0.35
        for conn in (6, 26):
            comp = connected_components(mask, conn)
            ref_labels, ref_count = brute_components(mask, conn)
            assert comp.count == ref_count
            assert np.array_equal(comp.labels, ref_labels)


def test_component_sizes_and_slices():
    mask = np.zeros((5, 5, 5), bool)
    mask[1:3, 1:3, 1:3] = True
    comp = connected_components(mask, 6)
    assert comp.count == 1
    assert comp.sizes[1] == 8
    assert comp.slices[0] == (slice(1, 3), slice(1, 3), slice(1, 3))


def test_contact_zero_when_never_adjacent():
    labels = np.zeros((6, 6, 6), np.uint8)
    labels[0, 0, 0] = TUMOR
    labels[5, 5, 5] = GLAND
    areas = contact_area(labelmap(labels), TUMOR, GLAND)
    assert areas[1] == 0.0


def test_contact_single_shared_face():
    labels = np.zeros((4, 4, 4), np.uint8)
    labels[1, 1, 1] = TUMOR
    labels[2, 1, 1] = GLAND
    areas = contact_area(labelmap(labels), TUMOR, GLAND)
    assert areas[1] == 1.0


def test_contact_slab_on_gland_is_64():
    labels = np.zeros((12, 12, 4), np.uint8)
    labels[2:10, 2:10, 1] = GLAND
    labels[2:10, 2:10, 2] = TUMOR
    areas = contact_area(labelmap(labels), TUMOR, GLAND)
    assert areas[1] == 64.0


def test_contact_scales_with_spacing():
    labels = np.zeros((4, 4, 4), np.uint8)
    labels[1, 1, 1] = TUMOR
    labels[2, 1, 1] = GLAND
    areas = contact_area(labels, TUMOR, GLAND, spacing_mm=(1.0, 2.0, 3.0))
    # Face normal to x has area sy * sz.
    assert areas[1] == 6.0


def test_contact_unknown_class():
    with pytest.raises(ValueError, match="class"):
        contact_area(np.zeros((2, 2, 2), np.uint8), 9, GLAND)


def test_contact_matches_bruteforce():
    rng = np.random.default_rng(1)
    for trial in range(15):
        dims = tuple(rng.integers(4, 10, size=3))
        labels = rng.choice([0, ADIPOSE, GLAND, TUMOR], size=dims,
                            p=[0.4, 0.2, 0.2, 0.2]).astype(np.uint8)
        fast = contact_area(labels, TUMOR, GLAND)
        ref = brute_contact_area(labels, TUMOR, GLAND)
        assert np.allclose(fast, ref)
