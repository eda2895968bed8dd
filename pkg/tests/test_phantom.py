import numpy as np
import pytest
from scipy import ndimage

from breastseg.components import connected_components, contact_area
from breastseg.phantom import (DegradationSpec, PhantomInfeasibleError,
                               PhantomSpec, generate_phantom,
                               simulate_model_outputs)
from breastseg.tissues import AIR, CHEST, GLAND, SKIN, TUMOR, VESSEL

from oracles import brute_fp_count

SMALL = dict(extent_mm=(96, 96, 96))


def test_same_seed_reproduces():
    b1, g1 = generate_phantom(PhantomSpec(seed=3, **SMALL))
    b2, g2 = generate_phantom(PhantomSpec(seed=3, **SMALL))
    assert np.array_equal(g1.data, g2.data)
    for v1, v2 in zip(b1.timepoints(), b2.timepoints()):
        assert np.array_equal(v1.data, v2.data)


def test_different_seed_differs():
    _, g1 = generate_phantom(PhantomSpec(seed=3, **SMALL))
    _, g2 = generate_phantom(PhantomSpec(seed=4, **SMALL))
    assert not np.array_equal(g1.data, g2.data)


def _assert_topology(gt):
    labels = gt.data
    air = connected_components(labels == AIR, 26)
    edge = np.zeros_like(labels, dtype=bool)
    for axis in range(3):
        idx = [slice(None)] * 3
        for sl in (0, -1):
            idx[axis] = sl
            edge[tuple(idx)] = True
        idx[axis] = slice(None)
    edge_ids = set(np.unique(air.labels[edge])) - {0}
    assert len(edge_ids) == air.count

    skin = connected_components(labels == SKIN, 26)
    near_air = ndimage.binary_dilation(labels == AIR)
    touching = set(np.unique(skin.labels[near_air])) - {0}
    assert len(touching) == skin.count

    areas = contact_area(gt, TUMOR, GLAND)
    assert len(areas) > 1
    assert (areas[1:] >= 64.0).all()


def test_topology_invariants_across_seeds():
    for seed in range(6):
        _, gt = generate_phantom(PhantomSpec(seed=seed, **SMALL))
        assert set(np.unique(gt.data)) == set(range(7))
        _assert_topology(gt)


def test_enhancement_curves():
    bundle, gt = generate_phantom(PhantomSpec(seed=5, bpe_level=0.5, **SMALL))
    tumor = gt.data == TUMOR
    vessel = gt.data == VESSEL
    gland = gt.data == GLAND
    assert bundle.early.data[tumor].mean() > 1.5 * bundle.pre.data[tumor].mean()
    assert bundle.early.data[vessel].mean() > 1.5 * bundle.pre.data[vessel].mean()
    assert bundle.early.data[gland].mean() > bundle.pre.data[gland].mean()


def test_bilateral_has_tumor_on_both_sides():
    _, gt = generate_phantom(PhantomSpec(seed=6, laterality="bilateral", **SMALL))
    nx = gt.dims[0]
    assert (gt.data[: nx // 2] == TUMOR).any()
    assert (gt.data[nx // 2:] == TUMOR).any()


def test_unilateral_tumor_on_named_side():
    _, gt = generate_phantom(PhantomSpec(seed=6, laterality="right", **SMALL))
    nx = gt.dims[0]
    assert not (gt.data[: nx // 2] == TUMOR).any()
    assert (gt.data[nx // 2:] == TUMOR).any()


def test_infeasible_tumor_raises():
    with pytest.raises(PhantomInfeasibleError):
        generate_phantom(PhantomSpec(seed=0, tumor_diameter_mm=(60.0, 62.0), **SMALL))


def test_vessel_radius_validated():
    with pytest.raises(ValueError, match="2 mm"):
        PhantomSpec(vessel_radius_mm=1.0)


# ---------------------------------------------------------------------------
# simulated outputs
# ---------------------------------------------------------------------------

def test_zero_noise_is_exact(small_phantom):
    _, gt = small_phantom
    multi, tumor_prob, props = simulate_model_outputs(gt, DegradationSpec(seed=0))
    assert np.array_equal(np.argmax(multi.data, axis=3).astype(np.uint8), gt.data)
    assert np.array_equal(tumor_prob.data, (gt.data == TUMOR).astype(np.float32))
    assert len(props) > 0
    assert {p.plane for p in props} == {"axial", "sagittal"}


def test_fp_blob_count_exact(small_phantom):
    _, gt = small_phantom
    d = DegradationSpec(seed=1, label_noise_sigma_mm=1.0, fp_blob_count=8)
    multi, _, _ = simulate_model_outputs(gt, d)
    pred = np.argmax(multi.data, axis=3).astype(np.uint8)
    assert brute_fp_count(pred, gt.data) == 8


def test_miss_probability_one_drops_all_proposals(small_phantom):
    _, gt = small_phantom
    d = DegradationSpec(seed=2, detector_miss_prob=1.0)
    _, _, props = simulate_model_outputs(gt, d)
    assert props == []


def test_simulate_deterministic(small_phantom):
    _, gt = small_phantom
    d = DegradationSpec(seed=5, label_noise_sigma_mm=1.5, fp_blob_count=5,
                        vessel_leak_fraction=0.2, detector_jitter_mm=2.0)
    m1, t1, p1 = simulate_model_outputs(gt, d)
    m2, t2, p2 = simulate_model_outputs(gt, d)
    assert np.array_equal(m1.data, m2.data)
    assert np.array_equal(t1.data, t2.data)
    assert p1 == p2


def test_probability_sums(small_phantom):
    _, gt = small_phantom
    d = DegradationSpec(seed=3, label_noise_sigma_mm=2.0, fp_blob_count=4)
    multi, _, _ = simulate_model_outputs(gt, d)
    sums = multi.data.sum(axis=3, dtype=np.float64)
    assert np.abs(sums - 1.0).max() < 1e-4


def test_proposal_jitter_bounded(small_phantom):
    _, gt = small_phantom
    exact = simulate_model_outputs(gt, DegradationSpec(seed=0))[2]
    jittered = simulate_model_outputs(
        gt, DegradationSpec(seed=4, detector_jitter_mm=2.0))[2]
    exact_axial = next(p for p in exact if p.plane == "axial")
    for p in jittered:
        if p.plane != "axial":
            continue
        for a, b in zip(p.bbox_mm, exact_axial.bbox_mm):
            assert abs(a - b) <= 2.0 + 1e-9
