import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cinmark import noise
from cinmark.core import Tensor, backward
from cinmark.core import functional as F
from cinmark.noise import KINDS, NoiseError, NoiseSpec

from conftest import leaf


@pytest.fixture
def pair(rng):
    wi = rng.random((2, 3, 32, 32)).astype(np.float32)
    cover = np.clip(wi + rng.normal(0, 0.02, wi.shape), 0, 1).astype(np.float32)
    return wi, cover


def test_defaults_from_table():
    assert NoiseSpec("Crop").factor == 0.035
    assert NoiseSpec("RealJpeg").factor == 50
    assert NoiseSpec("GaussianBlur").factor == 7
    assert NoiseSpec("Hue").factor == 0.1


@pytest.mark.parametrize("kind,factor", [
    ("Crop", 0.0), ("Dropout", 1.5), ("RealJpeg", 0), ("RealJpeg", 101), ("GaussianBlur", 4),
    ("GaussianBlur", 1), ("GaussianNoise", -1), ("Brightness", 0), ("Hue", 0.6), ("Identity", 1.0),
])
def test_invalid_factors(kind, factor):
    with pytest.raises(NoiseError):
        NoiseSpec(kind, factor)


def test_unknown_kind():
    with pytest.raises(NoiseError, match="unknown noise"):
        NoiseSpec("Rotate")


@pytest.mark.parametrize("text,kind,factor", [
    ("RealJpeg:90", "RealJpeg", 90), ("crop=0.1", "Crop", 0.1), ("jpeg", "RealJpeg", 50), ("identity", "Identity", None),
])
def test_parse(text, kind, factor):
    s = NoiseSpec.parse(text)
    assert (s.kind, s.factor) == (kind, factor)


def test_pools_match_definitions():
    names = {k: [s.kind for s in noise.get_pool(k).specs] for k in noise.POOLS}
    assert names["n_pool"] == list(KINDS) and len(KINDS) == 14
    assert names["n_cj"] == ["JpegMask", "RealJpeg"]
    assert names["n_cp1"] == ["Identity", "RealJpeg", "Dropout", "Cropout", "Resize"]
    assert names["n_cp2"] == ["Identity", "RealJpeg", "Crop", "Cropout", "GaussianBlur", "Dropout"]
    assert len(names["n_si"]) == 9 and noise.get_pool("n_si").superimpose_row
    assert noise.get_pool("N^cj").name == "n_cj"


def test_pool_sampling_is_uniform():
    pool = noise.get_pool("n_cp1")
    r = np.random.default_rng(0)
    counts = np.bincount([pool.specs.index(pool.sample(r)) for _ in range(5000)], minlength=5)
    assert np.all(np.abs(counts / 5000 - 0.2) < 0.03)


def test_explicit_pool_list():
    pool = noise.get_pool(["Identity", "RealJpeg:90"])
    assert [s.label for s in pool.specs] == ["Identity", "RealJpeg(90)"]


def test_identity_is_bitwise(pair, rng):
    wi, cover = pair
    assert noise.apply(NoiseSpec("Identity"), wi, cover, rng).data.tobytes() == wi.tobytes()


def test_dropout_all_is_cover(pair, rng):
    wi, cover = pair
    np.testing.assert_array_equal(noise.apply(NoiseSpec("Dropout", 1.0), wi, cover, rng).data, cover)


def test_dropout_fraction(pair, rng):
    wi, cover = pair
    out = noise.apply(NoiseSpec("Dropout", 0.3), wi, cover, rng).data
    from_cover = np.all(out == cover, axis=1) & np.any(wi != cover, axis=1)
    assert abs(from_cover.mean() - 0.3) < 0.05


def test_crop_area_on_128(rng):
    wi = rng.random((3, 3, 128, 128)).astype(np.float32) + 0.1
    out = noise.apply(NoiseSpec("Crop", 0.035), wi, None, rng).data
    for b in range(3):
        kept = out[b, 0] != 0
        assert abs(int(kept.sum()) - 573) <= 1
        np.testing.assert_array_equal(out[b][:, kept], wi[b][:, kept])
        ys, xs = np.nonzero(kept)
        assert kept[ys.min():ys.max() + 1, xs.min():xs.max() + 1].all()  # a rectangle


def test_cropout_keeps_rectangle_of_wi(pair, rng):
    wi, cover = pair
    out = noise.apply(NoiseSpec("Cropout", 0.3), wi, cover, rng).data
    kept = np.all(out == wi, axis=1)
    assert abs(kept[0].sum() - int(0.3 * 32 * 32)) <= 1 + np.sum(wi[0] == cover[0])


def test_resize_matches_matrix_oracle(rng):
    x = rng.random((1, 3, 16, 16))
    out = noise.apply(NoiseSpec("Resize", 0.5), x, None, rng).data
    down = noise.bilinear_matrix(8, 16)
    up = noise.bilinear_matrix(16, 8)
    np.testing.assert_allclose(out, up @ (down @ x @ down.T) @ up.T, atol=1e-12)


def test_bilinear_halving_is_pair_average():
    m = noise.bilinear_matrix(4, 8)
    np.testing.assert_allclose(m[1], [0, 0, 0.5, 0.5, 0, 0, 0, 0])


def test_blur_rows_sum_to_one():
    m = noise.blur_matrix(20, 7)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    g = noise.gaussian_kernel1d(7, 7 / 4)
    np.testing.assert_allclose(m[10, 7:14], g)


def test_blur_preserves_constant(rng):
    x = np.full((1, 3, 16, 16), 0.4)
    np.testing.assert_allclose(noise.apply(NoiseSpec("GaussianBlur", 7), x, None, rng).data, 0.4)


def test_gaussian_noise_std(rng):
    x = np.full((4, 3, 64, 64), 0.5)
    d = noise.apply(NoiseSpec("GaussianNoise", 25), x, None, rng).data - 0.5
    assert abs(d.std() - 25 / 255) < 0.003


def test_salt_pepper(rng):
    x = np.full((4, 3, 64, 64), 0.5)
    out = noise.apply(NoiseSpec("SaltPepper", 0.1), x, None, rng).data
    hit = np.any(out != 0.5, axis=1)
    assert abs(hit.mean() - 0.1) < 0.02
    assert set(np.unique(out[:, 0][hit])) <= {0.0, 1.0}


@pytest.mark.parametrize("kind", ["Brightness", "Contrast", "Saturation"])
def test_jitter_ranges(kind, rng):
    x = rng.random((64, 3, 8, 8))
    out = noise.apply(NoiseSpec(kind, 1.5), x, None, rng).data
    assert out.shape == x.shape
    if kind == "Brightness":
        ratio = out[:, 0, 0, 0] / x[:, 0, 0, 0]
        assert ratio.min() >= 0.5 - 1e-9 and ratio.max() <= 1.5 + 1e-9


def test_jitter_factor_range():
    f = noise._jitter(2.0, 10000, np.random.default_rng(0))
    assert f.min() >= 0 and f.max() <= 2 and abs(f.mean() - 1) < 0.02


def test_hue_keeps_grey_and_luma(rng):
    grey = np.full((1, 3, 4, 4), 0.3)
    np.testing.assert_allclose(noise.apply(NoiseSpec("Hue", 0.5), grey, None, rng).data, 0.3, atol=1e-12)
    x = rng.random((2, 3, 4, 4))
    out = noise.apply(NoiseSpec("Hue", 0.3), x, None, rng).data
    luma = np.tensordot(noise.LUMA, x, axes=([0], [1]))
    np.testing.assert_allclose(np.tensordot(noise.LUMA, out, axes=([0], [1])), luma, atol=1e-9)


def test_hue_full_turn_is_identity():
    np.testing.assert_allclose(noise.hue_matrix(1.0), np.eye(3), atol=1e-12)


def test_superimpose_edge_cases(pair, rng):
    wi, cover = pair
    assert noise.superimpose([], wi, cover, rng).data.tobytes() == wi.tobytes()
    ident = [NoiseSpec("Identity")] * 2
    assert noise.superimpose(ident, wi, cover, rng).data.tobytes() == wi.tobytes()


def test_superimpose_is_composition(pair):
    wi, cover = pair
    specs = [NoiseSpec("GaussianNoise", 25), NoiseSpec("SaltPepper", 0.1)]
    got = noise.superimpose(specs, wi, cover, np.random.default_rng(3)).data
    r = np.random.default_rng(3)
    manual = noise.apply(specs[1], noise.apply(specs[0], wi, cover, r), cover, r).data
    np.testing.assert_array_equal(got, manual)


@pytest.mark.parametrize("kind", KINDS)
def test_seeded_determinism(kind, pair):
    wi, cover = pair
    a = noise.apply(NoiseSpec(kind), wi, cover, np.random.default_rng(9)).data
    b = noise.apply(NoiseSpec(kind), wi, cover, np.random.default_rng(9)).data
    assert a.tobytes() == b.tobytes() and a.shape == wi.shape


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_contract(kind, pair):
    wi, cover = pair
    x = leaf(wi.astype(np.float64))
    out = noise.apply(NoiseSpec(kind), x, cover, np.random.default_rng(0))
    if kind == "RealJpeg":
        assert not out.requires_grad
        return
    backward(F.sum(F.square(out)))
    assert x.grad is not None and np.any(x.grad != 0)


def test_cover_shape_mismatch(rng):
    with pytest.raises(NoiseError, match="cover shape"):
        noise.apply(NoiseSpec("Dropout"), np.zeros((1, 3, 8, 8)), np.zeros((1, 3, 8, 4)), rng)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.001, 0.999), st.integers(8, 64), st.integers(8, 64))
def test_rectangle_area_within_one(ratio, H, W):
    h, w = noise.rectangle_dims(ratio, H, W)
    assert h <= H and w <= W
    target = int(np.floor(ratio * H * W))
    if target >= 1:
        assert abs(h * w - target) <= max(1, target // 10)
