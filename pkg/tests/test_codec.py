import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from itamdt.codec import build_codec, decode, encode, encode_mask
from itamdt.tensor_io import load_tensor, save_tensor


@pytest.fixture(scope="module")
def codec():
    return build_codec(7, 8, 4)


def test_rows_orthonormal(codec):
    assert codec.P.shape == (4, 192)
    np.testing.assert_allclose(codec.P @ codec.P.T, np.eye(4), atol=1e-6)
    np.testing.assert_allclose(codec.P[0], np.full(192, 1 / np.sqrt(192)), atol=1e-12)


def test_seed_determinism():
    assert np.array_equal(build_codec(7, 8, 4).P, build_codec(7, 8, 4).P)
    assert not np.array_equal(build_codec(7, 8, 4).P, build_codec(8, 8, 4).P)


def test_rank_bound():
    with pytest.raises(ValueError):
        build_codec(7, 2, 13)
    assert build_codec(7, 2, 12).P.shape == (12, 12)


def test_constant_image(codec):
    c = 0.37
    z = encode(np.full((3, 64, 64), c), codec)
    assert z.shape == (4, 8, 8)
    np.testing.assert_allclose(z[0], c * np.sqrt(3 * 64), atol=1e-9)
    # direct projection of the constant block
    expected = codec.P @ np.full(192, c)
    np.testing.assert_allclose(z.reshape(4, -1), np.repeat(expected[:, None], 64, axis=1), atol=1e-9)


def test_decode_shapes_and_zero(codec):
    assert decode(np.zeros((4, 8, 8)), codec).shape == (3, 64, 64)
    assert not decode(np.zeros((4, 8, 8)), codec).any()


def test_shape_errors(codec):
    with pytest.raises(ValueError):
        encode(np.zeros((3, 60, 64)), codec)
    with pytest.raises(ValueError):
        decode(np.zeros((3, 8, 8)), codec)


def test_block_means_preserved(codec):
    x = np.random.default_rng(0).random((3, 64, 64))
    y = decode(encode(x, codec), codec, clamp=False)
    mean = lambda im: im.reshape(3, 8, 8, 8, 8).mean(axis=(0, 2, 4))
    np.testing.assert_allclose(mean(y), mean(x), atol=1e-12)


def test_right_inverse_random(codec):
    rng = np.random.default_rng(1)
    for _ in range(20):
        z = rng.standard_normal((4, 8, 8)) * 3
        assert np.abs(encode(decode(z, codec, clamp=False), codec) - z).max() <= 1e-5


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2 ** 16))
def test_linearity(a, b, seed):
    codec = build_codec(7, 8, 4)
    rng = np.random.default_rng(seed)
    x, y = rng.random((3, 32, 32)), rng.random((3, 32, 32))
    lhs = encode(a * x + b * y, codec)
    rhs = a * encode(x, codec) + b * encode(y, codec)
    assert np.abs(lhs - rhs).max() <= 1e-5


def test_mask_channel0_monotone_in_coverage(codec):
    mask = np.zeros((64, 64))
    # block k (row-major along the top row) gets k·8 covered pixels
    for k in range(8):
        mask[: k, k * 8:(k + 1) * 8] = 1
    ch0 = encode_mask(mask, codec)[0, 0]
    assert np.all(np.diff(ch0) > 0)


def test_tensor_roundtrip(tmp_path, codec):
    z = encode(np.random.default_rng(2).random((3, 64, 64)), codec)
    meta = save_tensor(tmp_path / "z.f32", z, seed=7, f=8)
    back, side = load_tensor(tmp_path / "z.f32")
    assert side == meta and side["shape"] == [4, 8, 8] and side["f"] == 8
    np.testing.assert_array_equal(back, z.astype(np.float32))
    assert (tmp_path / "z.f32").read_bytes() == z.astype("<f4").tobytes()


def test_tensor_scalar_roundtrip(tmp_path):
    save_tensor(tmp_path / "s.f32", np.float32(0.5))
    back, side = load_tensor(tmp_path / "s.f32")
    assert back.shape == () and side["shape"] == []
