import numpy as np
import pytest

from sipgs import tensor as T
from sipgs.tensor import ContractError, NumericalError, ShapeError, Tensor

from _gradcases import OPS, worst_op_error


def naive_conv2d(x, w, stride, pad):
    B, C, H, W = x.shape
    K, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    OH = (H + 2 * pad - kh) // stride + 1
    OW = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((B, K, OH, OW))
    for b in range(B):
        for k in range(K):
            for i in range(OH):
                for j in range(OW):
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                out[b, k, i, j] += xp[b, c, i * stride + u, j * stride + v] * w[k, c, u, v]
    return out


def naive_conv2d_transpose(x, w, stride, pad):
    # scatter each input pixel through the kernel, then crop the padding
    B, C, H, W = x.shape
    _, K, kh, kw = w.shape
    full = np.zeros((B, K, (H - 1) * stride + kh, (W - 1) * stride + kw))
    for b in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    full[b, :, i * stride : i * stride + kh, j * stride : j * stride + kw] += x[b, c, i, j] * w[c]
    return full[:, :, pad : full.shape[2] - pad, pad : full.shape[3] - pad]


# ------------------------------------------------------------ analytic values


def test_sigmoid_zero():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5


def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(3, 3))
    assert np.array_equal((Tensor(np.eye(3)) @ Tensor(a)).data, a)


def test_square_grad():
    x = Tensor(3.0, requires_grad=True)
    T.square(x).backward()
    assert x.grad == 6.0


def test_sigmoid_grad_at_zero():
    x = Tensor(0.0, requires_grad=True)
    T.sigmoid(x).backward()
    assert x.grad == pytest.approx(0.25, abs=1e-15)


def test_tanh_grad_matches_fd():
    x = Tensor(np.array(0.7), requires_grad=True)
    T.tanh(x).backward()
    h = 1e-5
    fd = (np.tanh(0.7 + h) - np.tanh(0.7 - h)) / (2 * h)
    assert abs(x.grad - fd) / abs(fd) <= 1e-6


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_non_finite_is_rejected():
    with pytest.raises(NumericalError):
        T.log(Tensor(np.array([1.0, -1.0])))
    with pytest.raises(NumericalError):
        T.exp(Tensor(np.array([1e4])))


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2)))


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    T.sum(x * x + x).backward()
    assert np.array_equal(x.grad, 2 * x.data + 1)


def test_graph_reusable_after_reset():
    x = Tensor(np.array([1.5]), requires_grad=True)
    for _ in range(2):
        x.zero_grad()
        T.sum(T.square(x)).backward()
        assert x.grad[0] == 3.0


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


# --------------------------------------------------------------- convolution


def test_conv_identity_kernel():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    assert np.array_equal(T.conv2d(Tensor(x), Tensor(w), 1, 1).data, x)


def test_conv_sum_of_ones():
    out = T.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2))), 1, 0)
    assert out.data.tolist() == [[[[4.0]]]]


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)])
def test_conv_matches_naive_loops(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x, w = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3))
    np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(w), stride, pad).data,
                               naive_conv2d(x, w, stride, pad), rtol=0, atol=1e-12)


def test_conv_output_size_formula():
    out = T.conv2d(Tensor(np.zeros((1, 2, 9, 7))), Tensor(np.zeros((3, 2, 4, 4))), 2, 1)
    assert out.shape == (1, 3, (9 + 2 - 4) // 2 + 1, (7 + 2 - 4) // 2 + 1)


def test_conv_kernel_larger_than_input():
    with pytest.raises(ShapeError, match="conv2d"):
        T.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))), 1, 1)


def test_conv_transpose_identity():
    x = np.random.default_rng(1).normal(size=(2, 3, 4, 5))
    w = np.eye(3).reshape(3, 3, 1, 1)
    assert np.array_equal(T.conv2d_transpose(Tensor(x), Tensor(w), 1, 0).data, x)


def test_conv_transpose_single_tap_spread():
    out = T.conv2d_transpose(Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.ones((1, 1, 2, 2))), 2, 0)
    assert out.data.tolist() == [[[[2.0, 2.0], [2.0, 2.0]]]]


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (2, 1, 4), (2, 0, 2), (3, 1, 3)])
def test_conv_transpose_matches_naive(stride, pad, k):
    rng = np.random.default_rng(k + stride)
    x, w = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(3, 2, k, k))
    out = T.conv2d_transpose(Tensor(x), Tensor(w), stride, pad).data
    assert out.shape[2] == (4 - 1) * stride - 2 * pad + k
    np.testing.assert_allclose(out, naive_conv2d_transpose(x, w, stride, pad), rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_conv_adjointness(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 3, 8, 8))
    k = rng.normal(size=(4, 3, 4, 4))
    ca = T.conv2d(Tensor(a), Tensor(k), 2, 1).data
    b = rng.normal(size=ca.shape)
    ctb = T.conv2d_transpose(Tensor(b), Tensor(k), 2, 1).data
    assert abs(np.sum(ca * b) - np.sum(a * ctb)) <= 1e-10 * max(1.0, abs(np.sum(ca * b)))


# ------------------------------------------------------------ gradient checks


@pytest.mark.parametrize("op", sorted(OPS))
def test_op_gradients_match_finite_differences(op):
    worst = worst_op_error(op, trials=100)
    assert worst <= 1e-4, f"{op}: worst relative error {worst:.2e}"


def test_determinism_of_ops_and_grads():
    def run():
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(2, 3, 8, 8)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 3, 4, 4)), requires_grad=True)
        y = T.sum(T.tanh(T.conv2d(x, w, 2, 1)))
        y.backward()
        return y.data.copy(), x.grad.copy(), w.grad.copy()

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)
