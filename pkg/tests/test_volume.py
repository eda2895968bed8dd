import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from breastseg.volume import (DegenerateInputError, Volume, VolumeFormatError,
                              read_volume, register_phase_correlation,
                              resample_isotropic, translate_volume,
                              volume_paths, write_volume)

from oracles import brute_linear_interp_1d


def _random_volume(rng, dims, channels, code):
    shape = dims if channels == 1 else (*dims, channels)
    if code == "u8":
        data = rng.integers(0, 256, size=shape, dtype=np.uint8)
    else:
        data = rng.normal(size=shape).astype(np.float32)
    spacing = tuple(float(s) for s in rng.uniform(0.5, 3.0, size=3))
    origin = tuple(float(o) for o in rng.uniform(-10, 10, size=3))
    return Volume(data, spacing, origin)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def test_read_echoes_header(tmp_path):
    v = Volume(np.arange(64, dtype=np.float32).reshape(4, 4, 4), (1.0, 2.0, 3.0), (5.0, 6.0, 7.0))
    write_volume(v, tmp_path / "vol")
    back = read_volume(tmp_path / "vol")
    assert back.dims == (4, 4, 4)
    assert back.spacing_mm == (1.0, 2.0, 3.0)
    assert back.origin_mm == (5.0, 6.0, 7.0)
    assert back.channels == 1
    assert np.array_equal(back.data, v.data)


def test_truncated_raw_rejected(tmp_path):
    v = Volume(np.zeros((4, 4, 4), dtype=np.uint8), (1.0, 1.0, 1.0))
    write_volume(v, tmp_path / "vol")
    _, raw = volume_paths(tmp_path / "vol")
    raw.write_bytes(raw.read_bytes()[:-1])
    with pytest.raises(VolumeFormatError, match="raw size"):
        read_volume(tmp_path / "vol")


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_volume(tmp_path / "nope")


def test_unknown_dtype_rejected(tmp_path):
    v = Volume(np.zeros((2, 2, 2), dtype=np.uint8), (1.0, 1.0, 1.0))
    write_volume(v, tmp_path / "vol")
    header, _ = volume_paths(tmp_path / "vol")
    header.write_text(header.read_text().replace('"u8"', '"i16"'))
    with pytest.raises(VolumeFormatError, match="dtype"):
        read_volume(tmp_path / "vol")


def test_zero_volume_raw_bytes(tmp_path):
    v = Volume(np.zeros((2, 2, 2), dtype=np.float32), (1.0, 1.0, 1.0))
    write_volume(v, tmp_path / "z")
    _, raw = volume_paths(tmp_path / "z")
    assert raw.read_bytes() == b"\x00" * 32


def test_write_is_deterministic(tmp_path):
    rng = np.random.default_rng(0)
    v = _random_volume(rng, (5, 4, 3), 2, "f32")
    write_volume(v, tmp_path / "a")
    write_volume(v, tmp_path / "b")
    for suffix in (".json", ".raw"):
        a, b = (tmp_path / ("a" + suffix)), (tmp_path / ("b" + suffix))
        assert a.read_bytes() == b.read_bytes()


@settings(max_examples=30, deadline=None)
@given(
    dims=st.tuples(*[st.integers(1, 6)] * 3),
    channels=st.integers(1, 4),
    code=st.sampled_from(["u8", "f32"]),
    seed=st.integers(0, 2**31),
)
def test_roundtrip_bytes(tmp_path_factory, dims, channels, code, seed):
    tmp = tmp_path_factory.mktemp("rt")
    rng = np.random.default_rng(seed)
    v = _random_volume(rng, dims, channels, code)
    write_volume(v, tmp / "one")
    back = read_volume(tmp / "one")
    write_volume(back, tmp / "two")
    for suffix in (".json", ".raw"):
        assert (tmp / ("one" + suffix)).read_bytes() == (tmp / ("two" + suffix)).read_bytes()
    assert back.dims == v.dims and back.channels == v.channels
    assert np.array_equal(back.data, v.data)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def test_resample_identity_at_target():
    rng = np.random.default_rng(1)
    v = Volume(rng.normal(size=(6, 5, 4)).astype(np.float32), (1.0, 1.0, 1.0))
    out = resample_isotropic(v, 1.0)
    assert out.dims == v.dims
    assert np.array_equal(out.data, v.data)


def test_resample_ramp_halving():
    v = Volume(np.array([0.0, 10.0], dtype=np.float32).reshape(2, 1, 1), (2.0, 1.0, 1.0))
    out = resample_isotropic(v, 1.0)
    assert out.dims == (3, 1, 1)
    assert np.allclose(out.data[:, 0, 0], [0.0, 5.0, 10.0])


def test_resample_output_dims_match_grid_extent():
    v = Volume(np.zeros((64, 1, 1), dtype=np.float32), (2.0, 1.0, 1.0))
    out = resample_isotropic(v, 1.0)
    # Independent extent computation: count 1 mm steps inside (n-1)*s.
    n_expected = 0
    while n_expected * 1.0 <= (64 - 1) * 2.0:
        n_expected += 1
    assert out.dims[0] == n_expected == 127


def test_resample_exact_on_affine_field():
    nx, ny, nz = 9, 8, 7
    x, y, z = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    spacing = (2.0, 1.5, 3.0)
    field = 1.0 + 0.5 * x * spacing[0] - 0.25 * y * spacing[1] + 2.0 * z * spacing[2]
    v = Volume(field.astype(np.float32), spacing)
    out = resample_isotropic(v, 1.0)
    ox, oy, oz = np.meshgrid(*[np.arange(n) for n in out.dims], indexing="ij")
    expected = 1.0 + 0.5 * ox - 0.25 * oy + 2.0 * oz
    assert np.allclose(out.data, expected, atol=1e-3)


def test_resample_matches_1d_interp_oracle():
    rng = np.random.default_rng(3)
    values = rng.normal(size=10).astype(np.float32)
    v = Volume(values.reshape(10, 1, 1), (1.7, 1.0, 1.0))
    out = resample_isotropic(v, 1.0)
    positions = np.arange(out.dims[0]) * (1.0 / 1.7)
    expected = brute_linear_interp_1d(values.astype(np.float64), positions)
    assert np.allclose(out.data[:, 0, 0], expected, atol=1e-5)


def test_resample_constant_exact():
    v = Volume(np.full((5, 6, 7), 3.25, dtype=np.float32), (1.3, 0.7, 2.1))
    out = resample_isotropic(v, 1.0)
    assert np.all(out.data == np.float32(3.25))


def test_resample_single_sample_axis_errors():
    v = Volume(np.zeros((4, 1, 4), dtype=np.float32), (2.0, 2.0, 2.0))
    with pytest.raises(ValueError, match="axis 1"):
        resample_isotropic(v, 1.0)


def test_resample_u8_rounds():
    v = Volume(np.array([0, 255], dtype=np.uint8).reshape(2, 1, 1), (2.0, 1.0, 1.0))
    out = resample_isotropic(v, 1.0)
    assert out.dtype_code == "u8"
    assert list(out.data[:, 0, 0]) == [0, 128, 255]


# ---------------------------------------------------------------------------
# registration
# ---------------------------------------------------------------------------

def _textured(rng, dims=(24, 20, 18)):
    return Volume(rng.random(dims).astype(np.float32), (1.0, 1.0, 1.0))


def test_register_identity():
    v = _textured(np.random.default_rng(4))
    shift, registered = register_phase_correlation(v, v)
    assert tuple(shift) == (0, 0, 0)
    assert np.array_equal(registered.data, v.data)


@pytest.mark.parametrize("roll", [(3, -2, 1), (0, 5, 0), (-4, -4, 7)])
def test_register_recovers_roll(roll):
    fixed = _textured(np.random.default_rng(5))
    moving = fixed.with_data(np.roll(fixed.data, roll, axis=(0, 1, 2)))
    shift, registered = register_phase_correlation(fixed, moving)
    assert tuple(shift) == roll
    # Away from the zero-filled band the translation restores the original.
    inner = tuple(slice(max(0, -s), min(n, n - s)) for s, n in zip(roll, fixed.dims))
    assert np.allclose(registered.data[inner], fixed.data[inner])


def test_register_with_noise_close():
    hits = 0
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        fixed = _textured(rng)
        moving_data = np.roll(fixed.data, (2, -3, 4), axis=(0, 1, 2))
        noise = rng.normal(0, fixed.data.std() / 10, moving_data.shape).astype(np.float32)
        moving = fixed.with_data(moving_data + noise)
        shift, _ = register_phase_correlation(fixed, moving)
        if np.abs(shift - np.array([2, -3, 4])).max() <= 1:
            hits += 1
    assert hits == 5


def test_register_all_zero_degenerate():
    z = Volume(np.zeros((8, 8, 8), dtype=np.float32), (1.0, 1.0, 1.0))
    with pytest.raises(DegenerateInputError):
        register_phase_correlation(z, z)


def test_translate_zero_fill():
    v = Volume(np.ones((4, 4, 4), dtype=np.float32), (1.0, 1.0, 1.0))
    out = translate_volume(v, (1, 0, -2))
    assert out.data[0, :, :].sum() == 0
    assert out.data[:, :, 2:].sum() == 0
    assert out.data.sum() == 3 * 4 * 2
