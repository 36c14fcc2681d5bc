import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import scalar_attention, scalar_block_mlp

from afnoseg.afno import (AfnoConfig, AfnoWeights, MhsaWeights, afno3d_forward,
                          afno_param_count, block_mlp, merge_blocks,
                          mhsa_forward, mhsa_param_count, partition_blocks,
                          soft_shrink)
from afnoseg.errors import ConfigError
from afnoseg.fft import rfft3
from afnoseg.tensor import Tensor


def _zero_weights(cfg, dtype=np.complex128):
    k, c, h = cfg.num_blocks, cfg.block_width, cfg.hidden_width
    z = lambda shape: Tensor(np.zeros(shape, dtype))
    return AfnoWeights(w1=z((k, c, h)), b1=z((k, h)), w2=z((k, h, c)), b2=z((k, c)))


def _random_weights(cfg, rng, scale=0.4):
    k, c, h = cfg.num_blocks, cfg.block_width, cfg.hidden_width
    def cw(shape):
        return Tensor((rng.standard_normal(shape)
                       + 1j * rng.standard_normal(shape)) * scale)
    return AfnoWeights(w1=cw((k, c, h)), b1=cw((k, h)), w2=cw((k, h, c)), b2=cw((k, c)))


# ---------------------------------------------------------------------------
# partition / merge


def test_partition_round_trip(rng):
    z = rng.standard_normal((1, 2, 3, 3, 8)) + 1j * rng.standard_normal((1, 2, 3, 3, 8))
    blocked = partition_blocks(z, 4)
    assert blocked.data.shape == (1, 2, 3, 3, 4, 2)
    np.testing.assert_array_equal(merge_blocks(blocked).data, z)


def test_partition_single_block_is_identity(rng):
    z = rng.standard_normal((1, 1, 2, 2, 6)).astype(np.complex128)
    blocked = partition_blocks(z, 1)
    assert blocked.data.shape == (1, 1, 2, 2, 1, 6)
    np.testing.assert_array_equal(blocked.data[..., 0, :], z)


def test_partition_prime_width_blocks():
    # 23 channels split into 23 width-1 blocks, the only nontrivial legal split
    z = np.zeros((1, 1, 1, 2, 23), dtype=np.complex128)
    blocked = partition_blocks(z, 23)
    assert blocked.data.shape == (1, 1, 1, 2, 23, 1)
    with pytest.raises(ConfigError, match="not divisible"):
        partition_blocks(z, 4)


# ---------------------------------------------------------------------------
# block MLP


def test_block_mlp_zero_input_emits_bias(rng):
    cfg = AfnoConfig(channels=6, num_blocks=3)
    w = _zero_weights(cfg)
    w.b2 = Tensor(rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2)))
    blocked = Tensor(np.zeros((1, 2, 2, 2, 3, 2), np.complex128))
    out = block_mlp(blocked, w)
    np.testing.assert_allclose(out.data, np.broadcast_to(w.b2.data, out.data.shape))


def test_block_mlp_identity_weights_nonnegative_input(rng):
    cfg = AfnoConfig(channels=4, num_blocks=2)
    eye = np.stack([np.eye(2), np.eye(2)]).astype(np.complex128)
    w = AfnoWeights(w1=Tensor(eye.copy()), b1=Tensor(np.zeros((2, 2), np.complex128)),
                    w2=Tensor(eye.copy()), b2=Tensor(np.zeros((2, 2), np.complex128)))
    z = np.abs(rng.standard_normal((1, 1, 2, 2, 2, 2))) \
        + 1j * np.abs(rng.standard_normal((1, 1, 2, 2, 2, 2)))
    out = block_mlp(Tensor(z), w)
    np.testing.assert_allclose(out.data, z, atol=1e-14)


def test_block_mlp_against_scalar_reference(rng):
    cfg = AfnoConfig(channels=4, num_blocks=2, hidden_mult=1)
    w = _random_weights(cfg, rng)
    blocked = rng.standard_normal((1, 2, 2, 2, 2, 2)) \
        + 1j * rng.standard_normal((1, 2, 2, 2, 2, 2))
    ours = block_mlp(Tensor(blocked), w).data
    ref = scalar_block_mlp(blocked, w.w1.data, w.b1.data, w.w2.data, w.b2.data)
    assert np.abs(ours - ref).max() < 1e-12


def test_block_mlp_width_mismatch():
    cfg = AfnoConfig(channels=4, num_blocks=2)
    w = _zero_weights(cfg)
    with pytest.raises(ConfigError, match="block width"):
        block_mlp(Tensor(np.zeros((1, 1, 1, 1, 4, 1), np.complex128)), w)


# ---------------------------------------------------------------------------
# soft shrink


def test_soft_shrink_zero_threshold_is_identity(rng):
    z = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    np.testing.assert_array_equal(soft_shrink(z, 0.0).data, z)


def test_soft_shrink_componentwise_value():
    out = soft_shrink(np.array([0.05 + 0.5j]), 0.1).data[0]
    assert out == pytest.approx(0.0 + 0.4j)


def test_soft_shrink_sparsity_monotone_in_threshold(rng):
    z = rng.standard_normal((64,)) + 1j * rng.standard_normal((64,))
    fractions = []
    for lam in (0.0, 0.01, 0.1, 1.0):
        s = soft_shrink(z, lam).data
        zero_components = (s.real == 0).sum() + (s.imag == 0).sum()
        fractions.append(zero_components / (2 * z.size))
    assert all(a <= b for a, b in zip(fractions, fractions[1:]))


def test_soft_shrink_negative_threshold_rejected():
    with pytest.raises(ConfigError):
        soft_shrink(np.zeros(2, np.complex128), -0.1)


# ---------------------------------------------------------------------------
# full block


def test_zero_weights_give_exact_identity(rng):
    cfg = AfnoConfig(channels=4, num_blocks=2, shrink=0.3)
    w = _zero_weights(cfg)
    for _ in range(20):
        x = rng.standard_normal((1, 2, 3, 4, 4))
        out = afno3d_forward(Tensor(x), cfg, w)
        np.testing.assert_array_equal(out.data, x)


def test_forward_matches_component_composition(rng):
    cfg = AfnoConfig(channels=6, num_blocks=3, shrink=0.02)
    w = _random_weights(cfg, rng)
    x = Tensor(rng.standard_normal((1, 2, 2, 4, 6)))
    fused = afno3d_forward(x, cfg, w).data
    from afnoseg.fft import irfft3
    z = rfft3(x)
    manual = irfft3(soft_shrink(merge_blocks(block_mlp(
        partition_blocks(z, cfg.num_blocks), w)), cfg.shrink), 4) + x
    np.testing.assert_array_equal(fused, manual.data)


def test_constant_input_dc_only_hand_computation(rng):
    # constant volume with bias-free weights: only the DC bin is nonzero, so
    # the whole block collapses to one complex 2x2 matrix-vector product
    cfg = AfnoConfig(channels=2, num_blocks=1, shrink=0.0)
    w = _random_weights(cfg, rng)
    w.b1 = Tensor(np.zeros_like(w.b1.data))
    w.b2 = Tensor(np.zeros_like(w.b2.data))
    const = np.array([0.7, -1.2])
    x = np.broadcast_to(const, (1, 2, 2, 2, 2)).copy()
    out = afno3d_forward(Tensor(x), cfg, w).data
    v = 8  # 2*2*2 voxels
    dc = v * const.astype(np.complex128)
    h = w.w1.data[0].T @ dc
    h = np.maximum(h.real, 0) + 1j * np.maximum(h.imag, 0)
    y = w.w2.data[0].T @ h
    expected = (y / v).real + const
    for c in range(2):
        np.testing.assert_allclose(out[..., c], expected[c], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(d=st.integers(1, 3), h=st.integers(1, 3), wi=st.sampled_from([1, 2, 4]),
       k=st.sampled_from([1, 2, 4]))
def test_shape_preservation_sweep(d, h, wi, k):
    rng = np.random.default_rng(d * 97 + h * 13 + wi + k)
    cfg = AfnoConfig(channels=4, num_blocks=k, shrink=0.01)
    w = _random_weights(cfg, rng)
    x = rng.standard_normal((2, d, h, wi, 4))
    assert afno3d_forward(Tensor(x), cfg, w).data.shape == x.shape


def test_translation_equivariance_of_linear_configuration(rng):
    # phases commute with the C-linear per-frequency map, so the block with
    # zero biases and the identity activation shifts exactly with its input
    cfg = AfnoConfig(channels=4, num_blocks=2, shrink=0.0)
    w = _random_weights(cfg, rng)
    w.b1 = Tensor(np.zeros_like(w.b1.data))
    w.b2 = Tensor(np.zeros_like(w.b2.data))
    x = rng.standard_normal((1, 4, 6, 8, 4))
    out = afno3d_forward(Tensor(x), cfg, w, activation="identity").data
    for shift in ((1, 0, 0), (0, 2, 3), (2, 1, 5)):
        xs = np.roll(x, shift, axis=(1, 2, 3))
        out_shifted = afno3d_forward(Tensor(xs), cfg, w, activation="identity").data
        expected = np.roll(out, shift, axis=(1, 2, 3))
        rel = np.abs(out_shifted - expected).max() / np.abs(out).max()
        assert rel < 1e-8


def test_spatial_mean_shift_invariant_with_full_nonlinearity(rng):
    # the DC bin carries no phase, so the output mean is shift-invariant even
    # with biases and the split ReLU active
    cfg = AfnoConfig(channels=4, num_blocks=2, shrink=0.0)
    w = _random_weights(cfg, rng)
    x = rng.standard_normal((1, 4, 4, 8, 4))
    mean0 = afno3d_forward(Tensor(x), cfg, w).data.mean(axis=(1, 2, 3))
    xs = np.roll(x, (2, 3, 1), axis=(1, 2, 3))
    mean1 = afno3d_forward(Tensor(xs), cfg, w).data.mean(axis=(1, 2, 3))
    np.testing.assert_allclose(mean0, mean1, rtol=1e-10)


def test_kept_modes_hook_defaults_to_all(rng):
    cfg = AfnoConfig(channels=4, num_blocks=2, shrink=0.0)
    assert cfg.kept_modes is None
    w = _random_weights(cfg, rng)
    x = rng.standard_normal((1, 4, 4, 4, 4))
    full = afno3d_forward(Tensor(x), cfg, w).data
    # a cap covering every mode changes nothing; a DC-only cap does
    all_modes = AfnoConfig(channels=4, num_blocks=2, shrink=0.0, kept_modes=4)
    dc_only = AfnoConfig(channels=4, num_blocks=2, shrink=0.0, kept_modes=1)
    np.testing.assert_allclose(afno3d_forward(Tensor(x), all_modes, w).data, full)
    assert np.abs(afno3d_forward(Tensor(x), dc_only, w).data - full).max() > 1e-6


def test_param_count_formula_matches_enumeration(rng):
    cfg = AfnoConfig(channels=64, num_blocks=8, hidden_mult=1)
    w = _random_weights(cfg, rng)
    stored = sum(2 * t.data.size for _, t in w.named("m"))
    assert stored == afno_param_count(cfg) == 2304


def test_blocked_mixing_is_k_fold_smaller_than_dense():
    for c, k, m in ((64, 8, 1), (128, 4, 2), (32, 32, 1)):
        blocked = AfnoConfig(channels=c, num_blocks=k, hidden_mult=m)
        dense = AfnoConfig(channels=c, num_blocks=1, hidden_mult=m)
        blocked_mixing = 2 * (k * blocked.block_width * blocked.hidden_width * 2)
        dense_mixing = 2 * (c * dense.hidden_width * 2)
        assert dense_mixing == k * blocked_mixing


# ---------------------------------------------------------------------------
# attention baseline


def _mhsa_weights(rng, c):
    return MhsaWeights(
        wqkv=Tensor(rng.standard_normal((c, 3 * c)) * 0.4),
        bqkv=Tensor(rng.standard_normal(3 * c) * 0.1),
        wo=Tensor(rng.standard_normal((c, c)) * 0.4),
        bo=Tensor(rng.standard_normal(c) * 0.1),
    )


def test_mhsa_single_token_is_value_projection(rng):
    c = 4
    w = _mhsa_weights(rng, c)
    x = rng.standard_normal((1, 1, 1, 1, c))
    out = mhsa_forward(Tensor(x), 2, w).data.reshape(c)
    qkv = x.reshape(c) @ w.wqkv.data + w.bqkv.data
    v = qkv[2 * c:]
    expected = v @ w.wo.data + w.bo.data
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_mhsa_identical_tokens_identical_outputs(rng):
    c = 6
    w = _mhsa_weights(rng, c)
    token = rng.standard_normal(c)
    x = np.broadcast_to(token, (1, 2, 2, 2, c)).copy()
    out = mhsa_forward(Tensor(x), 3, w).data
    first = out[0, 0, 0, 0]
    np.testing.assert_allclose(out, np.broadcast_to(first, out.shape), atol=1e-12)


def test_mhsa_against_scalar_reference(rng):
    c, heads = 4, 2
    w = _mhsa_weights(rng, c)
    x = rng.standard_normal((1, 1, 2, 2, c))
    ours = mhsa_forward(Tensor(x), heads, w).data.reshape(4, c)
    ref = scalar_attention(x.reshape(4, c), w.wqkv.data, w.bqkv.data,
                           w.wo.data, w.bo.data, heads)
    assert np.abs(ours - ref).max() < 1e-10


def test_mhsa_token_cap(rng):
    w = _mhsa_weights(rng, 4)
    with pytest.raises(ConfigError, match="quadratic memory guard"):
        mhsa_forward(Tensor(np.zeros((1, 4, 4, 4, 4))), 2, w, max_tokens=63)


def test_mhsa_head_divisibility(rng):
    w = _mhsa_weights(rng, 4)
    with pytest.raises(ConfigError, match="heads"):
        mhsa_forward(Tensor(np.zeros((1, 1, 1, 2, 4))), 3, w)


def test_mhsa_param_count():
    assert mhsa_param_count(64) == 16640
