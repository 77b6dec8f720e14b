import numpy as np
import pytest

from cinmark import nsm
from cinmark.core import Tensor, gradcheck
from cinmark.core import functional as F
from cinmark.niam import NIAM, SEBlock
from cinmark.nsm import NSM

from conftest import leaf, randomize


@pytest.fixture
def image(rng):
    return Tensor(rng.random((2, 3, 16, 16)).astype(np.float32))


def test_se_zero_conv_path_is_identity(rng):
    blk = SEBlock(16, rng, 4)
    blk.conv2.weight.data[...] = 0
    blk.conv2.bias.data[...] = 0
    x = Tensor(rng.normal(size=(1, 16, 5, 5)).astype(np.float32))
    np.testing.assert_array_equal(blk(x).data, x.data)


def test_se_zero_excitation_is_identity(rng):
    blk = SEBlock(16, rng, 4)
    blk.fc2.weight.data[...] = 0
    blk.fc2.bias.data[...] = -1e4  # sigmoid underflows to exactly 0
    x = Tensor(rng.normal(size=(1, 16, 5, 5)).astype(np.float32))
    np.testing.assert_array_equal(blk(x).data, x.data)


def test_se_matches_unrolled(rng):
    blk = randomize(SEBlock(8, rng, 4), rng, 0.3, np.float64)
    x = rng.normal(size=(2, 8, 5, 5))
    gap = x.mean(axis=(2, 3))
    z = np.maximum(gap @ blk.fc1.weight.data.T + blk.fc1.bias.data, 0)
    w = 1 / (1 + np.exp(-(z @ blk.fc2.weight.data.T + blk.fc2.bias.data)))
    h = F.conv2d(Tensor(x), blk.conv1.weight, blk.conv1.bias, 1, 1).data
    h = np.where(h > 0, h, 0.2 * h)
    h = F.conv2d(Tensor(h), blk.conv2.weight, blk.conv2.bias, 1, 1).data
    np.testing.assert_allclose(blk(Tensor(x)).data, x + h * w[:, :, None, None], atol=1e-6)


def test_se_excitation_in_unit_interval(rng):
    blk = randomize(SEBlock(16, rng, 4), rng, 1.0)
    w = blk.excitation(Tensor(rng.normal(size=(3, 16, 4, 4)).astype(np.float32))).data
    assert np.all((w > 0) & (w < 1))


def test_se_reduction_must_divide(rng):
    with pytest.raises(ValueError, match="divisible"):
        SEBlock(10, rng, 4)


@pytest.mark.parametrize("L", [30, 64])
def test_niam_output_length(L, rng, image):
    assert NIAM(L, rng, stem=8, n_blocks=1, reduction=4, down=(8, 8))(image).shape == (2, L)


def test_niam_zero_image_zero_biases(rng):
    m = NIAM(30, rng, stem=8, n_blocks=2, reduction=4, down=(8, 16))
    for name, p in m.named_parameters():
        if name.endswith("bias"):
            p.data[...] = 0
    # SE excitation of a zero map is sigmoid(0) = 0.5, but it multiplies a zero conv path
    assert not np.any(m(Tensor(np.zeros((1, 3, 16, 16), np.float32))).data)


def test_niam_deterministic(rng, image):
    m = NIAM(30, rng, stem=8, n_blocks=1, reduction=4, down=(8, 8))
    assert m(image).data.tobytes() == m(image).data.tobytes()


def test_niam_shape_error(rng):
    with pytest.raises(ValueError):
        NIAM(30, rng, stem=8, reduction=4)(Tensor(np.zeros((1, 1, 8, 8))))


def test_niam_gradients(rng):
    m = randomize(NIAM(4, rng, stem=4, n_blocks=1, reduction=2, down=(4,)), rng, 0.3, np.float64)
    x = leaf(rng.random((1, 3, 8, 8)))
    params = dict(m.named_parameters())
    pick = {"x": x, "w": params["blocks.0.fc1.weight"], "c": params["blocks.0.conv1.weight"]}
    report = gradcheck(lambda: F.sum(F.square(m(x))), pick, max_entries=30, rng=rng)
    assert report.ok, report.failures[:3]


def test_nsm_fresh_is_half(rng, image):
    np.testing.assert_allclose(NSM(rng, (8, 8, 8)).classify(image), 0.5)


def test_nsm_probabilities_bounded(rng):
    m = randomize(NSM(rng, (8, 8, 8)), rng, 1.0)
    p = m.classify(Tensor((rng.normal(size=(4, 3, 16, 16)) * 100).astype(np.float32)))
    assert np.all((p >= 0) & (p <= 1)) and p.shape == (4,)


def test_nsm_shape_error(rng):
    with pytest.raises(ValueError):
        NSM(rng).logits(Tensor(np.zeros((1, 4, 8, 8))))


@pytest.mark.parametrize("p,expected", [(0.9, "b"), (0.1, "a"), (0.5, "b")])
def test_select(p, expected):
    a, b = np.zeros(5, np.uint8), np.ones(5, np.uint8)
    out = nsm.select(p, a, b, tau=0.5)
    np.testing.assert_array_equal(out, {"a": a, "b": b}[expected])


def test_select_is_per_item_without_mixing(rng):
    a = rng.integers(0, 2, (6, 10))
    b = rng.integers(0, 2, (6, 10))
    p = np.array([0.1, 0.6, 0.5, 0.49, 1.0, 0.0])
    out = nsm.select(p, a, b)
    for i in range(6):
        assert np.array_equal(out[i], b[i] if p[i] >= 0.5 else a[i])
    assert nsm.route_names(p) == ["im", "niam", "niam", "im", "niam", "im"]


@pytest.mark.parametrize("kind,label", [("JpegMask", 1.0), ("RealJpeg", 1.0), ("Identity", 0.0), ("Crop", 0.0)])
def test_jpeg_label(kind, label):
    assert nsm.jpeg_label(kind) == label


def test_perfect_classifier_routes_to_oracle(rng):
    # with ground-truth labels as probabilities, routing picks NIAM exactly for JPEG kinds
    kinds = ["Identity", "RealJpeg", "Dropout", "JpegMask"]
    im_bits, niam_bits = np.zeros((4, 3)), np.ones((4, 3))
    p = np.array([nsm.jpeg_label(k) for k in kinds])
    out = nsm.select(p, im_bits, niam_bits)
    np.testing.assert_array_equal(out[:, 0], [0, 1, 0, 1])


def test_high_pass_removes_constant_offset(rng):
    net = NSM(rng, (4, 4, 4))
    for _, p in net.named_parameters():
        p.data = rng.normal(size=p.shape).astype(np.float32) * 0.3
    x = rng.random((2, 3, 16, 16)).astype(np.float32)
    np.testing.assert_allclose(net.logits(x).data, net.logits(x + 0.25).data, atol=1e-5)


def test_high_pass_kernel_sums_to_zero():
    k = nsm.high_pass_kernel()
    assert k.shape == (3, 3, 3, 3)
    np.testing.assert_array_equal(k.sum(axis=(1, 2, 3)), 0)
    assert not k[0, 1].any()
