import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvcount.errors import DomainError, NonFiniteError, ShapeError
from mvcount.numerics import (
    Conv,
    Linear,
    Mlp,
    Optimizer,
    OptimizerConfig,
    Parameter,
    Tensor,
    bilinear_sample2d,
    conv3d,
    conv_transpose,
    deconv3d,
    finite_diff_gradient,
    gradient_check,
    grid_sample,
    l2_norm,
    layer_norm,
    masked_softmax,
    mlp_apply,
    optimizer_step,
    relu,
    scatter_rows,
    softmax,
    upsample_nearest,
)


# -- brute-force oracles ---------------------------------------------------------

def loop_matmul(x, w):
    out = np.zeros(w.shape[1])
    for j in range(w.shape[1]):
        for i in range(w.shape[0]):
            out[j] += x[i] * w[i, j]
    return out


def loop_conv3d(x, w, b, stride, pad):
    c_out, c_in, k, _, _ = w.shape
    xp = np.pad(x, [(0, 0)] + [(pad, pad)] * 3)
    dims = [(s + 2 * pad - k) // stride + 1 for s in x.shape[1:]]
    out = np.zeros([c_out] + dims)
    for o in range(c_out):
        for z in range(dims[0]):
            for y in range(dims[1]):
                for xx in range(dims[2]):
                    acc = b[o]
                    for i in range(c_in):
                        for dz in range(k):
                            for dy in range(k):
                                for dx in range(k):
                                    acc += w[o, i, dz, dy, dx] * xp[i, z * stride + dz, y * stride + dy, xx * stride + dx]
                    out[o, z, y, xx] = acc
    return out


def loop_bilinear(feature, u, v):
    c, h, w = feature.shape
    x0, y0 = int(np.floor(u)), int(np.floor(v))
    out = np.zeros(c)
    for xi in (x0, x0 + 1):
        for yi in (y0, y0 + 1):
            if 0 <= xi <= w - 1 and 0 <= yi <= h - 1:
                out += (1 - abs(u - xi)) * (1 - abs(v - yi)) * feature[:, yi, xi]
    return out


# -- mlp ----------------------------------------------------------------------------

def test_mlp_zero_weights_outputs_bias():
    mlp = Mlp([3, 4], np.random.default_rng(0))
    mlp.layers[0].weight.data[:] = 0
    mlp.layers[0].bias.data[:] = [1, 2, 3, 4]
    out = mlp_apply(mlp, np.random.default_rng(1).normal(size=(5, 6, 3)))
    assert out.shape == (5, 6, 4)
    assert np.all(out.data == np.array([1, 2, 3, 4]))


def test_mlp_identity_layer():
    mlp = Mlp([2, 2], np.random.default_rng(0))
    mlp.layers[0].weight.data[:] = np.eye(2)
    assert np.array_equal(mlp(np.array([1.0, 2.0])).data, [1.0, 2.0])


def test_mlp_matches_loop_oracle():
    mlp = Mlp([5, 6, 3], np.random.default_rng(7))
    x = np.zeros(5)
    x[2] = 1.0
    l0, l1 = mlp.layers
    hidden = np.maximum(loop_matmul(x, l0.weight.data) + l0.bias.data, 0)
    expected = loop_matmul(hidden, l1.weight.data) + l1.bias.data
    np.testing.assert_allclose(mlp(x).data, expected, atol=1e-12)


def test_mlp_dimension_mismatch():
    mlp = Mlp([3, 2], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        mlp(np.ones(4))


# -- conv3d / deconv3d --------------------------------------------------------------

def test_conv3d_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 3, 4, 5))
    w = np.zeros((2, 2, 1, 1, 1))
    w[0, 0] = w[1, 1] = 1
    assert np.array_equal(conv3d(x, w).data, x)


def test_conv3d_impulse_response():
    x = np.zeros((1, 5, 5, 5))
    x[0, 2, 2, 2] = 1
    out = conv3d(x, np.ones((1, 1, 3, 3, 3)), pad=1).data[0]
    expected = np.zeros((5, 5, 5))
    expected[1:4, 1:4, 1:4] = 1
    assert np.array_equal(out, expected)


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (1, 0, 3), (2, 2, 5), (1, 0, 1)])
def test_conv3d_matches_nested_loop(stride, pad, k):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 5, 5, 5))
    w = rng.normal(size=(3, 2, k, k, k))
    b = rng.normal(size=3)
    got = conv3d(x, w, b, stride=stride, pad=pad).data
    want = loop_conv3d(x, w, b, stride, pad)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, atol=1e-10, rtol=0)


def test_conv3d_output_size_formula():
    x = np.ones((1, 6, 5, 4))
    out = conv3d(x, np.ones((1, 1, 3, 3, 3)), stride=2, pad=1)
    assert out.shape == (1, 3, 3, 2)


def test_conv3d_shape_errors():
    with pytest.raises(ShapeError):
        conv3d(np.ones((1, 2, 2, 2)), np.ones((1, 1, 5, 5, 5)))
    with pytest.raises(ShapeError):
        conv3d(np.ones((1, 4, 4, 4)), np.ones((1, 1, 2, 2, 2)))
    with pytest.raises(ShapeError):
        conv3d(np.ones((2, 4, 4, 4)), np.ones((1, 1, 3, 3, 3)), pad=1)


def test_deconv3d_doubles_shape_and_zero_input():
    w = np.random.default_rng(0).normal(size=(4, 4, 3, 3, 3))
    out = deconv3d(np.zeros((4, 2, 2, 2)), w)
    assert out.shape == (4, 4, 4, 4)
    assert np.all(out.data == 0)


def test_deconv3d_is_adjoint_of_conv3d():
    rng = np.random.default_rng(11)
    w = rng.normal(size=(3, 2, 3, 3, 3))  # deconv: 3 -> 2 channels; conv: 2 -> 3
    x = rng.normal(size=(3, 2, 3, 4))
    y = rng.normal(size=(2, 4, 6, 8))
    lhs = np.sum(deconv3d(x, w).data * y)
    rhs = np.sum(x * conv3d(y, w, stride=2, pad=1).data)
    assert abs(lhs - rhs) <= 1e-8 * max(abs(lhs), 1.0)


def test_deconv_incompatible_configuration():
    with pytest.raises(ShapeError):
        deconv3d(np.ones((1, 2, 2, 2)), np.ones((1, 1, 3, 3, 3)), stride=3)
    with pytest.raises(ShapeError):
        conv_transpose(np.ones((1, 2, 2)), np.ones((1, 1, 3, 3)), stride=2, pad=0, output_padding=1)


# -- sampling -------------------------------------------------------------------------

def test_bilinear_lattice_point_and_out_of_bounds():
    f = np.random.default_rng(0).normal(size=(3, 4, 5))
    np.testing.assert_array_equal(bilinear_sample2d(f, 2, 3).data, f[:, 3, 2])
    np.testing.assert_array_equal(bilinear_sample2d(f, -5, -5).data, np.zeros(3))


def test_bilinear_midpoint():
    f = np.array([[[0.0, 1.0]]])
    assert bilinear_sample2d(f, 0.5, 0.0).data[0] == pytest.approx(0.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(-2, 7), st.floats(-2, 6))
def test_grid_sample_matches_loop(u, v):
    f = np.random.default_rng(5).normal(size=(2, 4, 5))
    np.testing.assert_allclose(bilinear_sample2d(f, u, v).data, loop_bilinear(f, u, v), atol=1e-12)


def test_grid_sample_gradients():
    rng = np.random.default_rng(2)
    f = Parameter(rng.normal(size=(2, 5, 6)), name="f")
    u = Parameter(rng.uniform(-0.5, 5.5, size=(7,)), name="u")
    v = Parameter(rng.uniform(-0.5, 4.5, size=(7,)), name="v")
    w = rng.normal(size=(7, 2))
    report = gradient_check(lambda: (grid_sample(f, u, v) * w).sum(), [f, u, v])
    assert report.passed(1e-6), report.max_rel_error


# -- softmax ------------------------------------------------------------------------------

def test_softmax_cases():
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])).data, [0.5, 0.5])
    assert softmax(np.array([3.7])).data[0] == 1.0
    out = softmax(np.array([1000.0, 0.0])).data
    assert np.all(np.isfinite(out)) and out[0] == pytest.approx(1.0) and out[1] < 1e-300 + 1e-12
    with pytest.raises(DomainError):
        softmax(np.array([]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(xs, c):
    x = np.array(xs)
    out = softmax(x).data
    assert np.all(out > 0)
    assert abs(out.sum() - 1.0) <= 1e-9
    np.testing.assert_allclose(softmax(x + c).data, out, atol=1e-9)


def test_masked_softmax_empty_and_singleton():
    scores = np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]])
    mask = np.array([[True, False, False], [True, False, True]])
    out = masked_softmax(scores, mask, axis=0).data
    np.testing.assert_allclose(out[:, 0], softmax(scores[:, 0]).data)
    np.testing.assert_array_equal(out[:, 1], [0.0, 0.0])
    np.testing.assert_array_equal(out[:, 2], [0.0, 1.0])


# -- finite differences and optimizer ------------------------------------------------------

def test_finite_diff_simple_cases():
    theta = Parameter(np.array([3.0]), name="theta")
    est = finite_diff_gradient(lambda: theta.data[0] ** 2, [theta])[0]
    assert est[0] == pytest.approx(6.0, abs=1e-6)
    const = finite_diff_gradient(lambda: 4.2, [theta])[0]
    assert np.all(const == 0)


def test_finite_diff_reports_nonfinite_loss():
    theta = Parameter(np.array([0.0]), name="theta")
    with pytest.raises(NonFiniteError):
        finite_diff_gradient(lambda: np.log(theta.data[0] ** 2 * 0.0), [theta])


def test_optimizer_plain_step():
    p = Parameter(np.array([1.0]), name="p")
    p.grad[:] = 1.0
    optimizer_step([p], 0.1)
    assert p.data[0] == pytest.approx(0.9)
    assert p.grad[0] == 0.0
    optimizer_step([p], 0.1)
    assert p.data[0] == pytest.approx(0.9)


def test_optimizer_rejects_nonfinite_gradient():
    p = Parameter(np.array([1.0, 2.0]), name="weights")
    p.grad[1] = np.nan
    with pytest.raises(NonFiniteError, match="weights"):
        optimizer_step([p], 0.1)
    assert np.array_equal(p.data, [1.0, 2.0])


def _bowl_losses(mode, lr):
    rng = np.random.default_rng(0)
    a = np.diag([1.0, 3.0, 0.5])
    p = Parameter(rng.normal(size=3), name="x")
    opt = Optimizer([p], lr, OptimizerConfig(mode=mode))
    losses = []
    for _ in range(100):
        loss = (p @ Tensor(a) * p).sum()
        losses.append(loss.item())
        loss.backward()
        opt.step()
    return losses


def test_quadratic_bowl_descends_monotonically():
    losses = _bowl_losses("sgd", 0.05)
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.05 * losses[0]


def test_adam_converges_on_bowl():
    losses = _bowl_losses("adam", 0.05)
    assert losses[-1] < 0.05 * losses[0]


# -- backprop of each primitive against finite differences -----------------------------------

def _check(fn, params, tol=1e-6):
    report = gradient_check(fn, params)
    assert report.passed(tol), report.max_rel_error


def test_gradients_conv_deconv_layernorm():
    rng = np.random.default_rng(4)
    x = Parameter(rng.normal(size=(2, 4, 3, 5)), name="x")
    w = Parameter(rng.normal(size=(3, 2, 3, 3, 3)), name="w")
    b = Parameter(rng.normal(size=3), name="b")
    proj = rng.normal(size=(3, 2, 2, 3))
    _check(lambda: (conv3d(x, w, b, stride=2, pad=1) * proj).sum(), [x, w, b])

    xd = Parameter(rng.normal(size=(3, 2, 2, 3)), name="xd")
    wd = Parameter(rng.normal(size=(3, 2, 3, 3, 3)), name="wd")
    bd = Parameter(rng.normal(size=2), name="bd")
    proj2 = rng.normal(size=(2, 4, 4, 6))
    _check(lambda: (deconv3d(xd, wd, bd) * proj2).sum(), [xd, wd, bd])

    g = Parameter(rng.normal(size=(4, 1)), name="gamma")
    be = Parameter(rng.normal(size=(4, 1)), name="beta")
    y = Parameter(rng.normal(size=(4, 6)), name="y")
    proj3 = rng.normal(size=(4, 6))
    _check(lambda: (layer_norm(y, g, be, axis=0) * proj3).sum(), [y, g, be])


def test_gradients_softmax_masked_scatter_upsample_norm():
    rng = np.random.default_rng(8)
    s = Parameter(rng.normal(size=(3, 5)), name="s")
    mask = rng.random((3, 5)) > 0.3
    proj = rng.normal(size=(3, 5))
    _check(lambda: (masked_softmax(s, mask, axis=0) * proj).sum(), [s])
    _check(lambda: (softmax(s, axis=1) * proj).sum(), [s])

    r = Parameter(rng.normal(size=(3, 2)), name="r")
    proj2 = rng.normal(size=(6, 2))
    _check(lambda: (scatter_rows(r, np.array([4, 0, 2]), 6) * proj2).sum(), [r])

    img = Parameter(rng.normal(size=(2, 3, 3)), name="img")
    proj3 = rng.normal(size=(2, 6, 6))
    _check(lambda: (upsample_nearest(img) * proj3).sum(), [img])
    _check(lambda: l2_norm(img), [img])


def test_gradients_linear_relu_chain():
    rng = np.random.default_rng(9)
    lin = Linear(4, 3, rng)
    lin.bias.data[:] = rng.normal(size=3)
    x = rng.normal(size=(5, 4))
    _check(lambda: relu(lin(x)).sum() + (lin(x) * lin(x)).sum(), lin.parameters())


def test_conv_module_default_same_padding():
    layer = Conv(2, 3, 3, np.random.default_rng(0), ndim=2)
    assert layer(np.ones((2, 7, 5))).shape == (3, 7, 5)


def test_nonfinite_values_raise():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([1.0])) / Tensor(np.array([0.0]))


def test_backward_accumulates_over_shared_nodes():
    p = Parameter(np.array([2.0]), name="p")
    y = p * p + p * 3.0
    y.sum().backward()
    assert p.grad[0] == pytest.approx(7.0)
