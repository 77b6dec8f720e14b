import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cinmark.core import (Adam, AdamState, GraphError, NonFiniteGradient, ShapeError, Tensor, adam_step,
                          backward, gradcheck, no_grad)
from cinmark.core import functional as F

from conftest import leaf, naive_conv


# -- tensor and tape ----------------------------------------------------------

def test_default_dtype_is_float32():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.zeros(2, np.float64)).dtype == np.float64


def test_grad_of_sum_is_ones(rng):
    x = leaf(rng.normal(size=(3, 4)))
    backward(F.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_grad_of_sum_of_squares(rng):
    x = leaf(rng.normal(size=(5,)))
    backward(F.sum(x * x))
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_reused_tensor_accumulates_once_per_use(rng):
    x = leaf(rng.normal(size=(4,)))
    y = x + x + x
    backward(F.sum(y))
    np.testing.assert_array_equal(x.grad, np.full(4, 3.0))


def test_non_scalar_backward_raises(rng):
    x = leaf(rng.normal(size=(2, 2)))
    with pytest.raises(GraphError, match="scalar"):
        backward(x * 2.0)


def test_second_backward_raises(rng):
    x = leaf(rng.normal(size=(3,)))
    loss = F.sum(x * x)
    backward(loss)
    with pytest.raises(GraphError):
        backward(loss)


def test_no_grad_records_nothing(rng):
    x = leaf(rng.normal(size=(3,)))
    with no_grad():
        y = F.sum(x * x)
    assert not y.requires_grad


def test_stop_gradient_blocks(rng):
    x = leaf(rng.normal(size=(4,)))
    y = leaf(rng.normal(size=(4,)))
    loss = F.sum(F.stop_gradient(x * 3.0) * y)
    backward(loss)
    assert x.grad is None or not np.any(x.grad)
    np.testing.assert_allclose(y.grad, 3.0 * x.data)


def test_forward_is_deterministic(rng):
    x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
    w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    a = F.conv2d(Tensor(x), Tensor(w), padding=1).data
    b = F.conv2d(Tensor(x), Tensor(w), padding=1).data
    assert a.tobytes() == b.tobytes()


# -- conv / linear --------------------------------------------------------------

def test_conv_all_ones_centre_is_nine():
    out = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), 1, 1)
    assert out.data[0, 0, 1, 1] == 9.0


def test_conv_zero_weight_gives_zero(rng):
    out = F.conv2d(Tensor(rng.normal(size=(2, 3, 6, 6))), Tensor(np.zeros((4, 3, 3, 3))), Tensor(np.zeros(4)),
                   padding=1)
    assert not np.any(out.data)


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (1, 1, 0), (3, 2, 1), (2, 2, 0), (5, 1, 2)])
def test_conv_matches_nested_loops(rng, k, stride, pad):
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, k, k))
    b = rng.normal(size=3)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
    np.testing.assert_allclose(out, naive_conv(x, w, b, stride, pad), atol=1e-6)


def test_conv_spec_instance(rng):
    x = rng.normal(size=(1, 2, 5, 5)).astype(np.float32)
    w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    out = F.conv2d(Tensor(x), Tensor(w), None, 1, 1).data
    np.testing.assert_allclose(out, naive_conv(x.astype(float), w.astype(float), None, 1, 1), atol=1e-5)


@pytest.mark.parametrize("xs,ws,msg", [
    ((1, 2, 5, 5), (3, 4, 3, 3), "axis 1"),
    ((1, 2, 5, 5), (3, 2, 3, 2), "axes 2,3"),
    ((1, 2, 5, 5), (3, 2, 4, 4), "odd"),
])
def test_conv_shape_errors_name_axes(xs, ws, msg):
    with pytest.raises(ShapeError, match=msg):
        F.conv2d(Tensor(np.zeros(xs)), Tensor(np.zeros(ws)), padding=1)


def test_conv_transpose_single_tap():
    out = F.conv_transpose2d(Tensor(np.full((1, 1, 1, 1), 2.5)), Tensor(np.ones((1, 1, 2, 2))),
                             Tensor(np.array([0.5])))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 3.0))


def test_conv_transpose_zero_input_is_bias():
    out = F.conv_transpose2d(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.ones((2, 3, 2, 2))),
                             Tensor(np.array([1.0, 2.0, 3.0])))
    np.testing.assert_array_equal(out.data[0, :, 0, 0], [1.0, 2.0, 3.0])
    assert out.shape == (1, 3, 6, 6)


def test_conv_transpose_is_conv_adjoint(rng):
    # the transpose of a stride-2 conv, computed as that conv's input gradient
    x = rng.normal(size=(1, 4, 8, 8))
    w = rng.normal(size=(4, 3, 2, 2))  # (Cin, Cout) for the transpose
    up = F.conv_transpose2d(Tensor(x), Tensor(w)).data
    z = leaf(np.zeros((1, 3, 16, 16)))
    backward(F.sum(F.conv2d(z, Tensor(w), stride=2) * Tensor(x)))
    np.testing.assert_allclose(up, z.grad, atol=1e-6)


def test_linear_identity_and_bias(rng):
    x = rng.normal(size=(2, 3))
    np.testing.assert_allclose(F.linear(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x)
    b = np.array([1.0, -2.0, 0.5, 4.0])
    out = F.linear(Tensor(x), Tensor(np.zeros((4, 3))), Tensor(b)).data
    np.testing.assert_array_equal(out, np.tile(b, (2, 1)))


def test_linear_matches_dot_products(rng):
    x, w, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 3)), rng.normal(size=4)
    ref = np.array([[sum(x[i, k] * w[j, k] for k in range(3)) + b[j] for j in range(4)] for i in range(2)])
    np.testing.assert_allclose(F.linear(Tensor(x), Tensor(w), Tensor(b)).data, ref, atol=1e-6)


def test_linear_inner_mismatch():
    with pytest.raises(ShapeError):
        F.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


# -- Haar -----------------------------------------------------------------------

def test_haar_constant_image():
    y = F.haar2d(Tensor(np.full((1, 2, 4, 4), 0.7))).data
    np.testing.assert_allclose(y[:, 0::4], 1.4)
    assert np.abs(y[:, [1, 2, 3, 5, 6, 7]]).max() < 1e-12


def test_ihaar_of_pure_ll():
    y = np.zeros((1, 4, 3, 3))
    y[:, 0] = 2 * 0.3
    np.testing.assert_allclose(F.ihaar2d(Tensor(y)).data, 0.3)


def test_haar_odd_extent_raises():
    with pytest.raises(ShapeError):
        F.haar2d(Tensor(np.zeros((1, 1, 5, 4))))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 3, 6, 4), elements=st.floats(-1, 1)))
def test_haar_round_trips_and_preserves_energy(x):
    y = F.haar2d(Tensor(x)).data
    np.testing.assert_allclose(F.ihaar2d(Tensor(y)).data, x, atol=1e-6)
    np.testing.assert_allclose(F.haar2d(F.ihaar2d(Tensor(y))).data, y, atol=1e-6)
    assert abs((y ** 2).sum() - (x ** 2).sum()) <= 1e-5 * max(1.0, (x ** 2).sum())


def test_haar_round_trip_float32(rng):
    x = rng.random((4, 3, 32, 32)).astype(np.float32)
    assert np.abs(F.ihaar2d(F.haar2d(Tensor(x))).data - x).max() < 1e-6


# -- DCT ------------------------------------------------------------------------

def test_dct_matrix_orthonormal():
    d = F.dct_matrix(8)
    np.testing.assert_allclose(d @ d.T, np.eye(8), atol=1e-12)


def test_dct_of_constant_block():
    y = F.dct8x8(Tensor(np.full((1, 1, 8, 8), 0.25))).data
    assert y[0, 0, 0, 0] == pytest.approx(2.0, abs=1e-12)
    y[0, 0, 0, 0] = 0
    assert np.abs(y).max() < 1e-9


def test_dct_round_trip(rng):
    x = rng.random((2, 3, 16, 24))
    np.testing.assert_allclose(F.idct8x8(F.dct8x8(Tensor(x))).data, x, atol=1e-6)


# -- gradients of every op --------------------------------------------------------

def _unary(op, shape=(2, 3, 4, 4)):
    return lambda x: op(x), shape


OPS = {
    "add": (lambda a, b: F.add(a, b), [(3, 4), (4,)]),
    "sub": (lambda a, b: F.sub(a, b), [(3, 4), (3, 4)]),
    "mul": (lambda a, b: F.mul(a, b), [(3, 4), (3, 1)]),
    "square": (lambda a: F.square(a), [(3, 4)]),
    "exp": (lambda a: F.exp(a), [(3, 4)]),
    "exp_clamped": (lambda a: F.exp_clamped(a * 3.0), [(3, 4)]),
    "tanh": (lambda a: F.tanh(a), [(3, 4)]),
    "sigmoid": (lambda a: F.sigmoid(a), [(3, 4)]),
    "leaky_relu": (lambda a: F.leaky_relu(a), [(3, 4)]),
    "relu": (lambda a: F.relu(a), [(3, 4)]),
    "sum": (lambda a: F.sum(a, axis=(0, 2), keepdims=True), [(2, 3, 4)]),
    "mean": (lambda a: F.mean(a, axis=1), [(2, 3, 4)]),
    "reshape": (lambda a: F.reshape(a, (4, 6)), [(2, 3, 4)]),
    "getitem": (lambda a: a[:, 1:3], [(3, 4)]),
    "getitem_fancy": (lambda a: a[np.array([0, 2, 0])], [(3, 4)]),
    "concat": (lambda a, b: F.concat([a, b], axis=1), [(2, 3, 2), (2, 1, 2)]),
    "split": (lambda a: F.split(a, [1, 2], axis=1)[1] * 2.0, [(2, 3, 2)]),
    "channel_concat": (lambda a, b: F.channel_concat([a, b]), [(1, 2, 2, 2), (1, 3, 2, 2)]),
    "channel_split": (lambda a: F.channel_split(a, [2, 3])[0], [(1, 5, 2, 2)]),
    "linear": (lambda x, w, b: F.linear(x, w, b), [(2, 3), (4, 3), (4,)]),
    "matmul": (lambda a, b: F.matmul(a, b), [(2, 3), (3, 5)]),
    "conv2d_3x3": (lambda x, w, b: F.conv2d(x, w, b, 1, 1), [(2, 3, 5, 5), (4, 3, 3, 3), (4,)]),
    "conv2d_s2": (lambda x, w, b: F.conv2d(x, w, b, 2, 1), [(2, 3, 6, 6), (4, 3, 3, 3), (4,)]),
    "conv2d_patch": (lambda x, w, b: F.conv2d(x, w, b, 2, 0), [(2, 3, 4, 4), (4, 3, 2, 2), (4,)]),
    "conv_transpose2d": (lambda x, w, b: F.conv_transpose2d(x, w, b), [(2, 3, 3, 3), (3, 2, 2, 2), (2,)]),
    "avg_pool2d": (lambda a: F.avg_pool2d(a), [(2, 3, 4, 4)]),
    "global_avg_pool": (lambda a: F.global_avg_pool(a), [(2, 3, 4, 4)]),
    "haar2d": (lambda a: F.haar2d(a), [(2, 3, 4, 4)]),
    "ihaar2d": (lambda a: F.ihaar2d(a), [(2, 8, 2, 2)]),
    "dct8x8": (lambda a: F.dct8x8(a), [(1, 2, 8, 16)]),
    "idct8x8": (lambda a: F.idct8x8(a), [(1, 2, 8, 8)]),
    "channel_mix": (lambda a: F.channel_mix(a, np.array([[0.3, 0.5, 0.2], [1, -1, 0], [0.1, 0.1, 2]]),
                                            np.array([0.1, 0.0, -0.2])), [(2, 3, 4, 4)]),
    "separable_linear": (lambda a: F.separable_linear(a, np.arange(12.).reshape(3, 4) / 10,
                                                      np.arange(10.).reshape(2, 5) / 10), [(2, 3, 4, 5)]),
    "mse_loss": (lambda a, b: F.mse_loss(a, b), [(3, 4), (3, 4)]),
    "bce_with_logits": (lambda a: F.bce_with_logits(a * 4.0, np.array([0.0, 1.0, 1.0])), [(3,)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_op_gradients(name, seed):
    op, shapes = OPS[name]
    r = np.random.default_rng(seed)
    ins = {f"x{i}": leaf(r.uniform(-1, 1, size=s)) for i, s in enumerate(shapes)}
    proj = {}

    def fn():
        out = op(*ins.values())
        if out.ndim == 0:
            return out
        if "p" not in proj:
            proj["p"] = np.random.default_rng(99).normal(size=out.shape)
        return F.sum(out * proj["p"])

    report = gradcheck(fn, ins)
    assert report.ok, report.failures[:3]
    assert report.max_rel_error < 1e-3


def test_stop_gradient_adjoint_is_zero(rng):
    x = leaf(rng.uniform(-1, 1, size=(3,)))
    backward(F.sum(F.stop_gradient(x) * x))
    np.testing.assert_allclose(x.grad, x.data)  # only the unstopped branch contributes


def test_exp_clamped_bounds():
    x = Tensor(np.array([-1e6, 0.0, 1e6]))
    y = F.exp_clamped(x).data
    np.testing.assert_allclose(y, [np.exp(-2.0), 1.0, np.exp(2.0)])
    assert np.all(np.isfinite(y))


# -- Adam -------------------------------------------------------------------------

def test_adam_zero_grad_leaves_param():
    st_ = AdamState()
    out = adam_step({"w": np.ones(3)}, {"w": np.zeros(3)}, st_)
    np.testing.assert_array_equal(out["w"], np.ones(3))


def test_adam_first_step():
    out = adam_step({"w": np.zeros(4)}, {"w": np.ones(4)}, AdamState(lr=1e-3))
    np.testing.assert_allclose(out["w"], -1e-3 / (1 + 1e-8))


def test_adam_descends_quadratic():
    w = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
    opt = Adam([("w", w)], lr=0.1)
    for _ in range(100):
        opt.zero_grad()
        backward(F.sum(F.square(w - 3.0)))
        opt.step()
    assert abs(w.data[0] - 3.0) < 0.1
    assert opt.state.t == 100


def test_adam_rejects_non_finite():
    st_ = AdamState()
    with pytest.raises(NonFiniteGradient, match="'w'"):
        adam_step({"w": np.ones(2), "v": np.ones(2)}, {"w": np.array([np.nan, 0.0]), "v": np.ones(2)}, st_)
    assert st_.t == 0


def test_adam_skips_missing_grads():
    st_ = AdamState()
    out = adam_step({"a": np.ones(2), "b": np.ones(2)}, {"a": np.ones(2), "b": None}, st_)
    np.testing.assert_array_equal(out["b"], np.ones(2))
    assert "b" not in st_.m
