"""Strided 3D convolution, its transpose, and trilinear upsampling.

Convolutions run as a sum over kernel offsets: each offset contributes one
strided slice of the (padded) input contracted against a (Cin/groups, Cout)
weight plane, so the inner loops all live inside numpy.  Weight layout is
``(K_d, K_h, K_w, Cin/groups, Cout)`` with the output-channel axis ordered
group-major; the transposed convolution reuses the same layout and is the
exact adjoint of ``conv3d`` with the same weight array.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, as_tensor

AXIS_NAMES = ("depth", "height", "width")


def _kernel3(kernel) -> tuple[int, int, int]:
    if isinstance(kernel, int):
        return (kernel, kernel, kernel)
    k = tuple(int(v) for v in kernel)
    if len(k) != 3:
        raise ConfigError(f"kernel must be an int or a 3-tuple, got {kernel!r}")
    return k


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract of one 3D convolution."""

    kernel: tuple[int, int, int]
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _kernel3(self.kernel))
        if any(k < 1 for k in self.kernel):
            raise ConfigError(f"kernel extents must be >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )

    def out_extent(self, extent: int, axis: int) -> int:
        k = self.kernel[axis]
        n = (extent + 2 * self.padding - k) // self.stride + 1
        if n < 1:
            raise ConfigError(
                f"conv {AXIS_NAMES[axis]} extent {extent} underflows with kernel "
                f"{k}, stride {self.stride}, padding {self.padding}"
            )
        return n

    def out_shape(self, spatial) -> tuple[int, int, int]:
        return tuple(self.out_extent(n, i) for i, n in enumerate(spatial))

    def transposed_out_extent(self, extent: int, axis: int) -> int:
        n = (extent - 1) * self.stride - 2 * self.padding + self.kernel[axis]
        if n < 1:
            raise ConfigError(
                f"transposed conv {AXIS_NAMES[axis]} extent {extent} gives "
                f"non-positive output with kernel {self.kernel[axis]}, stride "
                f"{self.stride}, padding {self.padding}"
            )
        return n

    def transposed_out_shape(self, spatial) -> tuple[int, int, int]:
        return tuple(self.transposed_out_extent(n, i) for i, n in enumerate(spatial))


def _check_weight(w, spec: ConvSpec):
    expected = spec.kernel + (spec.in_channels // spec.groups, spec.out_channels)
    if w.shape != expected:
        raise ConfigError(f"conv weight shape {w.shape} != expected {expected}")


def _offset_slice(base: int, stride: int, count: int) -> slice:
    return slice(base, base + stride * count, stride)


def _apply_plane(xs: np.ndarray, wk: np.ndarray, groups: int) -> np.ndarray:
    """Contract channels of one offset slice against one (Cin_g, Cout) plane."""
    cin_g, cout = wk.shape
    if groups == 1:
        lead = xs.shape[:-1]
        return (xs.reshape(-1, cin_g) @ wk).reshape(lead + (cout,))
    if cin_g == 1 and cout == groups:  # depthwise
        return xs * wk[0]
    wg = wk.reshape(cin_g, groups, cout // groups)
    xg = xs.reshape(xs.shape[:-1] + (groups, cin_g))
    out = np.einsum("bdhwgi,igo->bdhwgo", xg, wg)
    return out.reshape(xs.shape[:-1] + (cout,))


def _apply_plane_t(gs: np.ndarray, wk: np.ndarray, groups: int) -> np.ndarray:
    """Adjoint contraction: map Cout-channel data back through one plane."""
    cin_g, cout = wk.shape
    if groups == 1:
        lead = gs.shape[:-1]
        return (gs.reshape(-1, cout) @ wk.T).reshape(lead + (cin_g,))
    if cin_g == 1 and cout == groups:
        return gs * wk[0]
    wg = wk.reshape(cin_g, groups, cout // groups)
    gg = gs.reshape(gs.shape[:-1] + (groups, cout // groups))
    out = np.einsum("bdhwgo,igo->bdhwgi", gg, wg)
    return out.reshape(gs.shape[:-1] + (groups * cin_g,))


def _plane_weight_grad(xs: np.ndarray, gs: np.ndarray, groups: int,
                       cin_g: int, cout: int) -> np.ndarray:
    if groups == 1:
        return xs.reshape(-1, cin_g).T @ gs.reshape(-1, cout)
    if cin_g == 1 and cout == groups:
        return (xs * gs).sum(axis=(0, 1, 2, 3))[None, :]
    xg = xs.reshape(xs.shape[:-1] + (groups, cin_g))
    gg = gs.reshape(gs.shape[:-1] + (groups, cout // groups))
    return np.einsum("bdhwgi,bdhwgo->igo", xg, gg).reshape(cin_g, cout)


def conv3d(x, w, b, spec: ConvSpec) -> Tensor:
    """Dense/grouped 3D convolution of a (B, D, H, W, Cin) volume."""
    x = as_tensor(x)
    w = as_tensor(w)
    if x.data.ndim != 5:
        raise ConfigError(f"conv3d expects a 5-axis volume, got ndim={x.data.ndim}")
    if x.data.shape[4] != spec.in_channels:
        raise ConfigError(
            f"conv3d channel axis (axis 4) has {x.data.shape[4]} channels, "
            f"spec expects {spec.in_channels}"
        )
    _check_weight(w.data, spec)
    batch = x.data.shape[0]
    spatial = x.data.shape[1:4]
    out_spatial = spec.out_shape(spatial)
    p, s, g_count = spec.padding, spec.stride, spec.groups
    cin_g = spec.in_channels // g_count
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (p, p), (0, 0))) if p else x.data
    offsets = list(product(range(spec.kernel[0]), range(spec.kernel[1]),
                           range(spec.kernel[2])))
    out = np.zeros((batch,) + out_spatial + (spec.out_channels,), dtype=x.data.dtype)
    slices = {
        k: tuple(_offset_slice(k[i], s, out_spatial[i]) for i in range(3))
        for k in offsets
    }
    for k in offsets:
        sl = slices[k]
        xs = xp[:, sl[0], sl[1], sl[2], :]
        out += _apply_plane(xs, w.data[k], g_count)
    parents = [x, w]
    bias = None
    if b is not None:
        bias = as_tensor(b)
        if bias.data.shape != (spec.out_channels,):
            raise ConfigError(
                f"conv bias shape {bias.data.shape} != ({spec.out_channels},)"
            )
        out = out + bias.data
        parents.append(bias)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for k in offsets:
            sl = slices[k]
            xs = xp[:, sl[0], sl[1], sl[2], :]
            gw[k] = _plane_weight_grad(xs, g, g_count, cin_g, spec.out_channels)
            gxp[:, sl[0], sl[1], sl[2], :] += _apply_plane_t(g, w.data[k], g_count)
        gx = gxp[:, p: p + spatial[0], p: p + spatial[1], p: p + spatial[2], :] if p else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1, 2, 3)))
        return tuple(grads)

    return Tensor.from_op(out, tuple(parents), vjp)


def conv3d_transposed(x, w, b, spec: ConvSpec) -> Tensor:
    """Transposed 3D convolution; the adjoint of conv3d with the same weight.

    ``spec.in_channels`` is the input's channel count (the weight's Cout
    axis) and ``spec.out_channels`` the produced channel count (the weight's
    Cin axis times groups).  Output extent per axis is
    ``(n - 1) * stride - 2 * padding + kernel``.
    """
    x = as_tensor(x)
    w = as_tensor(w)
    if x.data.ndim != 5:
        raise ConfigError(f"conv3d_transposed expects a 5-axis volume, got ndim={x.data.ndim}")
    if x.data.shape[4] != spec.in_channels:
        raise ConfigError(
            f"conv3d_transposed channel axis (axis 4) has {x.data.shape[4]} "
            f"channels, spec expects {spec.in_channels}"
        )
    g_count = spec.groups
    cout_g = spec.out_channels // g_count
    expected = spec.kernel + (cout_g, spec.in_channels)
    if w.data.shape != expected:
        raise ConfigError(f"transposed conv weight shape {w.data.shape} != expected {expected}")
    batch = x.data.shape[0]
    spatial = x.data.shape[1:4]
    out_spatial = spec.transposed_out_shape(spatial)
    p, s = spec.padding, spec.stride
    full_spatial = tuple((n - 1) * s + spec.kernel[i] for i, n in enumerate(spatial))
    offsets = list(product(range(spec.kernel[0]), range(spec.kernel[1]),
                           range(spec.kernel[2])))
    slices = {
        k: tuple(_offset_slice(k[i], s, spatial[i]) for i in range(3))
        for k in offsets
    }
    full = np.zeros((batch,) + full_spatial + (spec.out_channels,), dtype=x.data.dtype)
    for k in offsets:
        sl = slices[k]
        full[:, sl[0], sl[1], sl[2], :] += _apply_plane_t(x.data, w.data[k], g_count)
    out = full[:, p: p + out_spatial[0], p: p + out_spatial[1], p: p + out_spatial[2], :]
    out = np.ascontiguousarray(out)
    parents = [x, w]
    bias = None
    if b is not None:
        bias = as_tensor(b)
        if bias.data.shape != (spec.out_channels,):
            raise ConfigError(
                f"transposed conv bias shape {bias.data.shape} != ({spec.out_channels},)"
            )
        out = out + bias.data
        parents.append(bias)

    def vjp(g):
        gfull = np.zeros((batch,) + full_spatial + (spec.out_channels,), dtype=g.dtype)
        gfull[:, p: p + out_spatial[0], p: p + out_spatial[1], p: p + out_spatial[2], :] = g
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        for k in offsets:
            sl = slices[k]
            gs = gfull[:, sl[0], sl[1], sl[2], :]
            gx += _apply_plane(gs, w.data[k], g_count)
            gw[k] = _plane_weight_grad(gs, x.data, g_count, cout_g, spec.in_channels)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1, 2, 3)))
        return tuple(grads)

    return Tensor.from_op(out, tuple(parents), vjp)


def _interp_axis_coeffs(n_in: int, n_out: int):
    """align-corners-false sampling: centers at (i + 0.5) * n_in/n_out - 0.5."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def upsample_trilinear(x, target) -> Tensor:
    """Trilinear upsampling of a (B, D, H, W, C) volume to ``target`` extents."""
    x = as_tensor(x)
    if x.data.ndim != 5:
        raise ConfigError(f"upsample expects a 5-axis volume, got ndim={x.data.ndim}")
    target = tuple(int(t) for t in target)
    if len(target) != 3:
        raise ConfigError(f"target must give (D, H, W), got {target!r}")
    source = x.data.shape[1:4]
    for i, (src, tgt) in enumerate(zip(source, target)):
        if tgt < src:
            raise ConfigError(
                f"upsample target {AXIS_NAMES[i]} extent {tgt} is smaller than "
                f"source extent {src}"
            )
    coeffs = []
    data = x.data
    for i, (src, tgt) in enumerate(zip(source, target)):
        axis = i + 1
        if src == tgt:
            coeffs.append(None)
            continue
        lo, hi, frac = _interp_axis_coeffs(src, tgt)
        shape = [1] * data.ndim
        shape[axis] = tgt
        f = frac.reshape(shape).astype(data.dtype)
        a = np.take(data, lo, axis=axis)
        bb = np.take(data, hi, axis=axis)
        data = a * (1.0 - f) + bb * f
        coeffs.append((lo, hi, frac, src))

    def vjp(g):
        for i in (2, 1, 0):
            if coeffs[i] is None:
                continue
            lo, hi, frac, src = coeffs[i]
            axis = i + 1
            gm = np.moveaxis(g, axis, 0)
            f = frac.reshape((-1,) + (1,) * (gm.ndim - 1)).astype(g.dtype)
            acc = np.zeros((src,) + gm.shape[1:], dtype=g.dtype)
            np.add.at(acc, lo, gm * (1.0 - f))
            np.add.at(acc, hi, gm * f)
            g = np.moveaxis(acc, 0, axis)
        return (g,)

    return Tensor.from_op(data, (x,), vjp)
