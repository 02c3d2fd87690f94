import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import log_softmax as sp_log_softmax
from scipy.special import logsumexp as sp_logsumexp

from mixsep import tensor as tn
from conftest import numeric_grad


def check_grad(build, *arrays, tol=1e-6):
    """Compare backprop through ``build(*tensors)`` (scalar) with central differences."""
    ts = [tn.Tensor(a, requires_grad=True) for a in arrays]
    analytic = tn.grad(build(*ts), ts)
    for t, a, g in zip(ts, arrays, analytic):
        def f():
            return build(*[tn.Tensor(x.data) for x in ts]).item()
        num = numeric_grad(f, t.data)
        np.testing.assert_allclose(g, num, rtol=tol, atol=tol)


def weighted(t, rng_seed=0):
    """Random linear functional, so gradients are not all ones."""
    w = np.random.default_rng(rng_seed).standard_normal(t.shape)
    return tn.sum(tn.mul(t, w))


def test_softmax_uniform():
    np.testing.assert_allclose(tn.softmax(tn.Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)


def test_logsumexp_two_zeros():
    assert tn.logsumexp(tn.Tensor([0.0, 0.0])).item() == pytest.approx(math.log(2), abs=1e-12)


def test_log_softmax_matches_scipy(rng):
    x = rng.standard_normal((4, 7)) * 5
    np.testing.assert_allclose(tn.log_softmax(tn.Tensor(x)).data, sp_log_softmax(x, axis=-1), atol=1e-12)
    np.testing.assert_allclose(tn.logsumexp(tn.Tensor(x)).data, sp_logsumexp(x, axis=-1), atol=1e-12)


def test_matmul_identity(rng):
    a = rng.standard_normal((3, 3))
    np.testing.assert_array_equal(tn.matmul(tn.Tensor(np.eye(3)), tn.Tensor(a)).data, a)


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(xs):
    p = tn.softmax(tn.Tensor(np.array(xs))).data
    assert abs(p.sum() - 1) < 1e-9
    assert np.all(p > 0) and np.all(p <= 1)


def test_quadratic_gradient():
    w = tn.Tensor([1.0, 2.0], requires_grad=True)
    (g,) = tn.grad(tn.sum(tn.mul(w, w)), [w])
    np.testing.assert_array_equal(g, [2.0, 4.0])


def test_constant_root_gives_zero_gradients():
    w = tn.Tensor(np.ones(3), requires_grad=True)
    grads = tn.backward(tn.Tensor(5.0), {"w": w})
    np.testing.assert_array_equal(grads["w"], np.zeros(3))


def test_unreached_parameter_zero():
    a = tn.Tensor([1.0, 2.0], requires_grad=True)
    b = tn.Tensor([3.0], requires_grad=True)
    grads = tn.backward(tn.sum(tn.square(a)), {"a": a, "b": b})
    np.testing.assert_array_equal(grads["b"], [0.0])


def test_non_scalar_root_rejected():
    a = tn.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(tn.ShapeError):
        tn.backward(tn.mul(a, 2.0), {"a": a})


def test_softmax_cross_entropy_gradient_is_p_minus_onehot(rng):
    logits = tn.Tensor(rng.standard_normal(6), requires_grad=True)
    (g,) = tn.grad(tn.cross_entropy(tn.reshape(logits, (1, 6)), np.array([2])), [logits])
    p = np.exp(logits.data - sp_logsumexp(logits.data))
    onehot = np.eye(6)[2]
    np.testing.assert_allclose(g, p - onehot, atol=1e-12)


def test_linearity_of_backward(rng):
    w = tn.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    x = rng.standard_normal((5, 3))

    def l1():
        return tn.sum(tn.square(tn.matmul(tn.Tensor(x), w)))

    def l2():
        return tn.sum(tn.tanh(w))

    (g1,) = tn.grad(l1(), [w])
    (g2,) = tn.grad(l2(), [w])
    (g12,) = tn.grad(tn.add(l1(), l2()), [w])
    np.testing.assert_allclose(g12, g1 + g2, rtol=0, atol=1e-12)


def test_non_finite_raises():
    with pytest.raises(tn.NonFiniteError):
        tn.log(tn.Tensor([0.0]))
    with pytest.raises(tn.NonFiniteError):
        tn.Tensor([np.nan])


def test_broadcast_shape_mismatch():
    with pytest.raises(tn.ShapeError):
        tn.add(tn.Tensor(np.ones((2, 3))), tn.Tensor(np.ones((4,))))


@pytest.mark.parametrize("op", [tn.exp, tn.tanh, tn.sigmoid, tn.gelu, tn.square, tn.neg,
                                lambda a: tn.scale(a, 3.5), lambda a: tn.log(tn.add(tn.square(a), 1.0))])
def test_elementwise_gradients(op, rng):
    check_grad(lambda a: weighted(op(a)), rng.standard_normal((3, 4)))


def test_relu_and_clip_gradients(rng):
    x = rng.standard_normal((4, 5))
    x[np.abs(x) < 0.05] = 0.3  # keep away from the kinks
    check_grad(lambda a: weighted(tn.relu(a)), x)
    y = rng.uniform(-2, 2, (4, 5))
    y[np.abs(np.abs(y) - 1) < 0.05] = 0.0
    check_grad(lambda a: weighted(tn.clip(a, -1.0, 1.0)), y)


def test_binary_ops_with_broadcasting(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4,))
    check_grad(lambda x, y: weighted(tn.add(x, y)), a, b)
    check_grad(lambda x, y: weighted(tn.sub(x, y)), a, b)
    check_grad(lambda x, y: weighted(tn.mul(x, y)), a, b)
    check_grad(lambda x, y: weighted(tn.div(x, tn.add(tn.square(y), 1.0))), a, b)


def test_reductions_and_shapes(rng):
    x = rng.standard_normal((2, 3, 4))
    check_grad(lambda a: weighted(tn.sum(a, axis=1)), x)
    check_grad(lambda a: weighted(tn.mean(a, axis=(0, 2), keepdims=True)), x)
    check_grad(lambda a: weighted(tn.reshape(a, (6, 4))), x)
    check_grad(lambda a: weighted(tn.transpose(a, (2, 0, 1))), x)
    check_grad(lambda a: weighted(tn.swapaxes(a, 0, 2)), x)


def test_indexing_gradients(rng):
    x = rng.standard_normal((5, 4))
    check_grad(lambda a: weighted(a[1:4, ::2]), x)
    check_grad(lambda a: weighted(a[np.array([0, 2, 2, 4])]), x)  # repeated rows accumulate


def test_concat_stack_where(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((4, 3))
    check_grad(lambda x, y: weighted(tn.concat([x, y], axis=0)), a, b)
    c = rng.standard_normal((2, 3))
    check_grad(lambda x, y: weighted(tn.stack([x, y], axis=1)), a, c)
    cond = rng.random((2, 3)) < 0.5
    check_grad(lambda x, y: weighted(tn.where(cond, x, y)), a, c)
    np.testing.assert_array_equal(tn.where(cond, tn.Tensor(a), tn.Tensor(c)).data, np.where(cond, a, c))


def test_matmul_batched_gradient(rng):
    check_grad(lambda x, y: weighted(tn.matmul(x, y)), rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5)))


def test_softmax_family_gradients(rng):
    x = rng.standard_normal((3, 5))
    check_grad(lambda a: weighted(tn.softmax(a)), x)
    check_grad(lambda a: weighted(tn.log_softmax(a)), x)
    check_grad(lambda a: weighted(tn.logsumexp(a)), x)


def test_layer_norm_forward_and_gradient(rng):
    x, g, b = rng.standard_normal((3, 6)), rng.standard_normal(6), rng.standard_normal(6)
    out = tn.layer_norm(tn.Tensor(x), tn.Tensor(g), tn.Tensor(b)).data
    ref = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-5) * g + b
    np.testing.assert_allclose(out, ref, atol=1e-12)
    check_grad(lambda a, gg, bb: weighted(tn.layer_norm(a, gg, bb)), x, g, b)


def test_embedding_and_gather(rng):
    w = rng.standard_normal((6, 3))
    ids = np.array([[0, 5], [5, 2]])
    np.testing.assert_array_equal(tn.embedding(tn.Tensor(w), ids).data, w[ids])
    check_grad(lambda a: weighted(tn.embedding(a, ids)), w)
    x = rng.standard_normal((2, 3, 4))
    idx = rng.integers(0, 4, (2, 3))
    np.testing.assert_array_equal(tn.gather_last(tn.Tensor(x), idx).data, np.take_along_axis(x, idx[..., None], -1)[..., 0])
    check_grad(lambda a: weighted(tn.gather_last(a, idx)), x)


def conv1d_reference(x, w, b, stride):
    B, cin, n = x.shape
    cout, _, k = w.shape
    n_out = (n - k) // stride + 1
    out = np.zeros((B, cout, n_out))
    for bi in range(B):
        for o in range(cout):
            for t in range(n_out):
                out[bi, o, t] = np.sum(x[bi, :, t * stride : t * stride + k] * w[o]) + b[o]
    return out


@pytest.mark.parametrize("stride,k", [(1, 3), (2, 4), (5, 10), (3, 2)])
def test_conv1d_against_loops(stride, k, rng):
    x, w, b = rng.standard_normal((2, 3, 23)), rng.standard_normal((4, 3, k)), rng.standard_normal(4)
    np.testing.assert_allclose(tn.conv1d(tn.Tensor(x), tn.Tensor(w), tn.Tensor(b), stride).data,
                               conv1d_reference(x, w, b, stride), atol=1e-12)
    check_grad(lambda xx, ww, bb: weighted(tn.conv1d(xx, ww, bb, stride)), x, w, b)


def test_conv1d_errors():
    with pytest.raises(tn.ShapeError):
        tn.conv1d(tn.Tensor(np.ones((1, 2, 10))), tn.Tensor(np.ones((3, 1, 2))), tn.Tensor(np.zeros(3)), 1)
    with pytest.raises(tn.ShapeError):
        tn.conv1d(tn.Tensor(np.ones((1, 1, 3))), tn.Tensor(np.ones((3, 1, 5))), tn.Tensor(np.zeros(3)), 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_broadcast_add_gradient_shapes(r, c, seed):
    rng = np.random.default_rng(seed)
    a = tn.Tensor(rng.standard_normal((r, c)), requires_grad=True)
    b = tn.Tensor(rng.standard_normal((1, c)), requires_grad=True)
    ga, gb = tn.grad(tn.sum(tn.add(a, b)), [a, b])
    np.testing.assert_array_equal(ga, np.ones((r, c)))
    np.testing.assert_array_equal(gb, np.full((1, c), float(r)))


def test_shared_subgraph_accumulates():
    x = tn.Tensor([3.0], requires_grad=True)
    y = tn.mul(x, x)
    (g,) = tn.grad(tn.sum(tn.add(y, y)), [x])
    assert g[0] == pytest.approx(12.0)
