import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import erf_gelu, loop_conv3d

from afnoseg import ops
from afnoseg.conv import ConvSpec, conv3d, conv3d_transposed, upsample_trilinear
from afnoseg.errors import ConfigError
from afnoseg.tensor import Tensor

# ---------------------------------------------------------------------------
# conv3d


def test_conv3d_box_sum():
    x = np.ones((1, 4, 4, 4, 1))
    w = np.ones((3, 3, 3, 1, 1))
    spec = ConvSpec(kernel=3, in_channels=1, out_channels=1, stride=1, padding=1)
    out = conv3d(x, w, np.zeros(1), spec).data[0, :, :, :, 0]
    assert out[1, 1, 1] == pytest.approx(27.0)  # interior sees the full box
    assert out[0, 0, 0] == pytest.approx(8.0)   # corner sees a 2x2x2 octant
    assert out[0, 1, 1] == pytest.approx(18.0)


def test_conv3d_identity_kernel(rng):
    x = rng.standard_normal((2, 3, 4, 5, 3))
    w = np.zeros((1, 1, 1, 3, 3))
    w[0, 0, 0] = np.eye(3)
    spec = ConvSpec(kernel=1, in_channels=3, out_channels=3)
    out = conv3d(x, w, None, spec).data
    np.testing.assert_array_equal(out, x)


def test_conv3d_against_loop_reference(rng):
    x = rng.standard_normal((1, 5, 5, 5, 2))
    w = rng.standard_normal((3, 3, 3, 2, 4))
    b = rng.standard_normal(4)
    for stride, padding in ((1, 1), (2, 0), (2, 2)):
        spec = ConvSpec(kernel=3, in_channels=2, out_channels=4,
                        stride=stride, padding=padding)
        ours = conv3d(x, w, b, spec).data
        ref = loop_conv3d(x, w, b, stride, padding)
        assert np.abs(ours - ref).max() < 1e-6


def test_conv3d_linearity(rng):
    x = rng.standard_normal((1, 4, 4, 4, 2))
    y = rng.standard_normal((1, 4, 4, 4, 2))
    w = rng.standard_normal((3, 3, 3, 2, 3))
    spec = ConvSpec(kernel=3, in_channels=2, out_channels=3, padding=1)
    a, b = 1.7, -0.4
    lhs = conv3d(a * x + b * y, w, None, spec).data
    rhs = a * conv3d(x, w, None, spec).data + b * conv3d(y, w, None, spec).data
    assert np.abs(lhs - rhs).max() / np.abs(rhs).max() < 1e-6


def test_conv3d_channel_mismatch_names_axis():
    spec = ConvSpec(kernel=1, in_channels=3, out_channels=2)
    with pytest.raises(ConfigError, match="axis 4"):
        conv3d(np.zeros((1, 2, 2, 2, 5)), np.zeros((1, 1, 1, 3, 2)), None, spec)


def test_conv3d_extent_underflow_names_axis():
    spec = ConvSpec(kernel=3, in_channels=1, out_channels=1)
    with pytest.raises(ConfigError, match="height"):
        conv3d(np.zeros((1, 4, 2, 4, 1)), np.zeros((3, 3, 3, 1, 1)), None, spec)


@settings(max_examples=40, deadline=None)
@given(k=st.integers(1, 4), s=st.integers(1, 2), p=st.integers(0, 2),
       n=st.integers(1, 9))
def test_conv_shape_formula(k, s, p, n):
    spec = ConvSpec(kernel=k, in_channels=1, out_channels=1, stride=s, padding=p)
    expected = (n + 2 * p - k) // s + 1
    if expected < 1:
        with pytest.raises(ConfigError):
            spec.out_shape((n, n, n))
    else:
        assert spec.out_shape((n, n, n)) == (expected,) * 3
        x = np.zeros((1, n, n, n, 1))
        w = np.zeros((k, k, k, 1, 1))
        out = conv3d(x, w, None, spec)
        assert out.data.shape == (1, expected, expected, expected, 1)


# ---------------------------------------------------------------------------
# conv3d_transposed


def test_transposed_doubles_extent():
    spec = ConvSpec(kernel=2, in_channels=1, out_channels=1, stride=2)
    x = np.zeros((1, 2, 2, 2, 1))
    w = np.zeros((2, 2, 2, 1, 1))
    assert conv3d_transposed(x, w, None, spec).data.shape == (1, 4, 4, 4, 1)


def test_transposed_disjoint_tiling_of_ones():
    spec = ConvSpec(kernel=2, in_channels=1, out_channels=1, stride=2)
    x = np.ones((1, 3, 2, 2, 1))
    w = np.ones((2, 2, 2, 1, 1))
    out = conv3d_transposed(x, w, None, spec).data
    np.testing.assert_allclose(out, 1.0)


def test_transposed_output_extent_error():
    spec = ConvSpec(kernel=1, in_channels=1, out_channels=1, stride=1, padding=1)
    with pytest.raises(ConfigError, match="non-positive"):
        conv3d_transposed(np.zeros((1, 2, 2, 2, 1)), np.zeros((1, 1, 1, 1, 1)),
                          None, spec)


def _pairing(a, b):
    return float(np.sum(a * b))


@pytest.mark.parametrize("k,s,p,groups", [(2, 2, 0, 1), (3, 1, 1, 1), (3, 2, 1, 2),
                                          (1, 1, 0, 1), (4, 2, 2, 1)])
def test_transposed_is_adjoint_of_conv(k, s, p, groups, rng):
    cin, cout = 4, 6
    out_extent = 3
    n = (out_extent - 1) * s + k - 2 * p  # conv consumes the input exactly
    if n < 1:
        pytest.skip("degenerate extent")
    spec = ConvSpec(kernel=k, in_channels=cin, out_channels=cout,
                    stride=s, padding=p, groups=groups)
    w = rng.standard_normal((k, k, k, cin // groups, cout))
    x = rng.standard_normal((2, n, n, n, cin))
    y = rng.standard_normal((2, out_extent, out_extent, out_extent, cout))
    tspec = ConvSpec(kernel=k, in_channels=cout, out_channels=cin,
                     stride=s, padding=p, groups=groups)
    lhs = _pairing(conv3d(x, w, None, spec).data, y)
    rhs = _pairing(x, conv3d_transposed(y, w, None, tspec).data)
    assert abs(lhs - rhs) / max(abs(lhs), 1e-9) < 1e-6


# ---------------------------------------------------------------------------
# upsample_trilinear


def test_upsample_preserves_constant():
    x = np.full((1, 2, 3, 2, 2), 3.5)
    out = upsample_trilinear(x, (4, 6, 4)).data
    np.testing.assert_allclose(out, 3.5)


def test_upsample_identity_when_target_equals_source(rng):
    x = rng.standard_normal((1, 3, 4, 5, 2))
    np.testing.assert_array_equal(upsample_trilinear(x, (3, 4, 5)).data, x)


def test_upsample_degenerate_line_values():
    # (i + 0.5) * 2/4 - 0.5 sampling of [0, 1] -> [0, 0.25, 0.75, 1]
    x = np.array([0.0, 1.0]).reshape(1, 2, 1, 1, 1)
    out = upsample_trilinear(x, (4, 1, 1)).data.ravel()
    np.testing.assert_allclose(out, [0.0, 0.25, 0.75, 1.0])


def test_upsample_rejects_shrinking():
    with pytest.raises(ConfigError, match="smaller than source"):
        upsample_trilinear(np.zeros((1, 4, 4, 4, 1)), (4, 2, 4))


@settings(max_examples=25, deadline=None)
@given(d=st.integers(1, 4), h=st.integers(1, 4), w=st.integers(1, 4),
       fd=st.integers(1, 3), fh=st.integers(1, 3), fw=st.integers(1, 3))
def test_upsample_within_input_bounds(d, h, w, fd, fh, fw):
    rng = np.random.default_rng(d * 100 + h * 10 + w)
    x = rng.standard_normal((1, d, h, w, 2))
    out = upsample_trilinear(x, (d * fd, h * fh, w * fw)).data
    assert out.min() >= x.min() - 1e-12
    assert out.max() <= x.max() + 1e-12


# ---------------------------------------------------------------------------
# norms and activations


def test_layer_norm_two_point():
    x = np.array([1.0, 3.0]).reshape(1, 1, 1, 1, 2)
    out = ops.layer_norm(x, np.ones(2), np.zeros(2), eps=0.0).data.ravel()
    np.testing.assert_allclose(out, [-1.0, 1.0])


def test_layer_norm_statistics(rng):
    x = rng.standard_normal((2, 3, 3, 3, 16))
    out = ops.layer_norm(x, np.ones(16), np.zeros(16)).data
    mu = out.mean(axis=-1)
    var = out.var(axis=-1)
    assert np.abs(mu).max() < 1e-6
    assert np.abs(var - 1.0).max() < 1e-4


def test_batch_norm_eval_identity(rng):
    x = rng.standard_normal((2, 3, 3, 3, 4))
    out = ops.batch_norm3d(x, np.ones(4), np.zeros(4), np.zeros(4), np.ones(4),
                           eps=0.0, training=False).data
    np.testing.assert_allclose(out, x)


def test_batch_norm_training_statistics(rng):
    x = 3.0 + 2.0 * rng.standard_normal((4, 4, 4, 4, 6))
    rm, rv = np.zeros(6), np.ones(6)
    out = ops.batch_norm3d(x, np.ones(6), np.zeros(6), rm, rv, training=True).data
    assert np.abs(out.mean(axis=(0, 1, 2, 3))).max() < 1e-6
    assert np.abs(out.var(axis=(0, 1, 2, 3)) - 1.0).max() < 1e-4
    assert rm.max() > 0  # running stats were advanced


def test_affine_shape_check():
    with pytest.raises(ConfigError, match="shape"):
        ops.layer_norm(np.zeros((1, 1, 1, 1, 4)), np.ones(3), np.zeros(3))


def test_gelu_relu_softmax_point_values():
    assert ops.gelu(np.array(0.0)).data == pytest.approx(0.0)
    assert ops.relu(np.array(-2.0)).data == pytest.approx(0.0)
    sm = ops.softmax_channels(np.full((1, 4), 1.7)).data
    np.testing.assert_allclose(sm, 0.25)


def test_gelu_matches_erf_oracle():
    for v in (1.0, -0.5, 2.3, 0.1):
        ours = ops.gelu(np.array(v)).data.item()
        assert abs(ours - erf_gelu(v)) < 1e-6


def test_gelu_at_one_frozen_value():
    # x * Phi(x) at x = 1: Phi(1) = 0.841344746...
    assert ops.gelu(np.array(1.0)).data.item() == pytest.approx(0.8413447460685429,
                                                                abs=1e-6)


def test_softmax_sums_to_one(rng):
    x = rng.standard_normal((2, 3, 5))
    s = ops.softmax_channels(x).data.sum(axis=-1)
    np.testing.assert_allclose(s, 1.0, atol=1e-12)


def test_finite_outputs_for_finite_inputs(rng):
    x = rng.standard_normal((1, 4, 4, 4, 4)) * 50
    spec = ConvSpec(kernel=3, in_channels=4, out_channels=4, padding=1)
    w = rng.standard_normal((3, 3, 3, 4, 4))
    for t in (conv3d(x, w, None, spec), upsample_trilinear(x, (5, 5, 5)),
              ops.layer_norm(x, np.ones(4), np.zeros(4)), ops.gelu(x),
              ops.softmax_channels(x)):
        assert np.isfinite(t.data).all()


def test_tensor_basic_algebra_sanity(rng):
    # d(w*x)^2/dw = 2*w*x^2, matched exactly
    w = Tensor(np.array(1.5), requires_grad=True)
    x = Tensor(np.array(3.0))
    loss = (w * x) * (w * x)
    loss.backward()
    assert w.grad.item() == pytest.approx(2 * 1.5 * 9.0)
    assert math.isfinite(loss.item())
