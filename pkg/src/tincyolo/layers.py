"""Reference (full-precision) layer implementations.

These are the float32 oracles every reduced-precision path is verified
against: im2col lowering, GEMM, convolution, max-pooling, activations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GeometryError
from .tensor import FeatureMap, Matrix

LEAKY_SLOPE = 0.1  # Darknet's fixed leaky-ReLU slope

ACTIVATIONS = ("linear", "relu", "leaky_relu")


@dataclass
class ConvSpec:
    """Hyperparameters of one convolutional layer."""

    kernel_size: int
    stride: int
    pad: int
    out_channels: int
    activation: str = "linear"

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.out_channels < 1:
            raise ConfigError(
                f"kernel_size/stride/out_channels must be >= 1, got "
                f"({self.kernel_size},{self.stride},{self.out_channels})"
            )
        if self.pad < 0:
            raise ConfigError(f"pad must be >= 0, got {self.pad}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation '{self.activation}'")

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        """Output height/width for an input of size h x w (floor-divided, Darknet style)."""
        h_out = (h + 2 * self.pad - self.kernel_size) // self.stride + 1
        w_out = (w + 2 * self.pad - self.kernel_size) // self.stride + 1
        if h_out < 1 or w_out < 1:
            raise GeometryError(
                f"conv K={self.kernel_size} S={self.stride} P={self.pad} "
                f"yields non-positive output for input {h}x{w}"
            )
        return h_out, w_out


@dataclass
class WeightSet:
    """Convolution parameters: C'*C*K*K weights in (out, in, ky, kx) order plus per-output bias."""

    weights: np.ndarray  # flat float32, length out_channels*in_channels*K*K
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32).reshape(-1)
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float32).reshape(-1)

    def validate(self, in_channels: int, spec: ConvSpec):
        expect = spec.out_channels * in_channels * spec.kernel_size * spec.kernel_size
        if self.weights.size != expect:
            raise ConfigError(
                f"weight count {self.weights.size} does not match "
                f"C'={spec.out_channels} C={in_channels} K={spec.kernel_size} (expected {expect})"
            )
        if self.bias is not None and self.bias.size != spec.out_channels:
            raise ConfigError(
                f"bias length {self.bias.size} does not match C'={spec.out_channels}"
            )

    def as_rows(self, in_channels: int, spec: ConvSpec) -> np.ndarray:
        """Weights as a (C', C*K*K) matrix whose row order matches im2col's rows."""
        self.validate(in_channels, spec)
        k = spec.kernel_size
        return self.weights.reshape(spec.out_channels, in_channels * k * k)

    def bias_or_zeros(self, out_channels: int) -> np.ndarray:
        if self.bias is None:
            return np.zeros(out_channels, dtype=np.float32)
        return self.bias


def activate(x, kind: str):
    """Apply an activation to a scalar or array. relu: max(0,x); leaky_relu slope 0.1."""
    if kind == "linear":
        return x
    if kind == "relu":
        return np.maximum(x, 0) if isinstance(x, np.ndarray) else max(0.0, x)
    if kind == "leaky_relu":
        if isinstance(x, np.ndarray):
            return np.where(x > 0, x, np.float32(LEAKY_SLOPE) * x)
        return x if x > 0 else LEAKY_SLOPE * x
    raise ConfigError(f"unknown activation '{kind}'")


def pad_channels(arr: np.ndarray, pad: int, fill=0):
    """Zero-pad the spatial axes of a (C,H,W) array."""
    if pad == 0:
        return arr
    return np.pad(arr, ((0, 0), (pad, pad), (pad, pad)), constant_values=fill)


def gather_lowered_rows(padded: np.ndarray, k: int, stride: int, h_out: int, w_out: int,
                        out: np.ndarray):
    """Fill `out` (rows = C*K*K, cols = h_out*w_out) with kernel footprints.

    Row order is (in_channel, ky, kx); column j is output position
    (j // w_out, j % w_out). `padded` must already include the padding halo.
    """
    c_in = padded.shape[0]
    r = 0
    for c in range(c_in):
        for ky in range(k):
            for kx in range(k):
                window = padded[c,
                                ky:ky + stride * h_out:stride,
                                kx:kx + stride * w_out:stride]
                out[r] = window.reshape(-1)
                r += 1
    return out


def im2col(fm: FeatureMap, k: int, stride: int, pad: int) -> Matrix:
    """Lower a feature map to the (K^2*C) x (H_out*W_out) multiplicand matrix.

    Padded positions contribute 0. With stride 1 and same-padding this
    inflates the data volume by exactly K^2.
    """
    spec = ConvSpec(kernel_size=k, stride=stride, pad=pad, out_channels=1)
    h_out, w_out = spec.out_hw(fm.h, fm.w)
    padded = pad_channels(fm.data, pad)
    out = np.empty((fm.c * k * k, h_out * w_out), dtype=np.float32)
    gather_lowered_rows(padded, k, stride, h_out, w_out, out)
    return Matrix(out)


def gemm_ref(a: Matrix, b: Matrix) -> Matrix:
    """Plain matrix product; the reference against which fused kernels are checked."""
    if a.cols != b.rows:
        raise GeometryError(f"inner dims disagree: {a.rows}x{a.cols} @ {b.rows}x{b.cols}")
    return Matrix(a.data @ b.data)


def conv_forward_ref(fm: FeatureMap, w: WeightSet, spec: ConvSpec) -> FeatureMap:
    """Reference convolution: weights-as-rows GEMM over the im2col lowering.

    Output element = K^2*C dot product + bias, then the spec's activation.
    """
    w.validate(fm.c, spec)
    h_out, w_out = spec.out_hw(fm.h, fm.w)
    cols = im2col(fm, spec.kernel_size, spec.stride, spec.pad)
    acc = gemm_ref(Matrix(w.as_rows(fm.c, spec)), cols).data
    acc = acc + w.bias_or_zeros(spec.out_channels)[:, None]
    out = activate(acc, spec.activation)
    return FeatureMap(out.reshape(spec.out_channels, h_out, w_out))


def maxpool_forward(fm: FeatureMap, size: int, stride: int) -> FeatureMap:
    """Per-channel window maximum, Darknet geometry: H_out = ceil(H/stride).

    Windows are clipped at the right/bottom border, so size=2 stride=1
    keeps the spatial size (the layer-12 pool).
    """
    if size < 1 or stride < 1:
        raise ConfigError(f"pool size/stride must be >= 1, got ({size},{stride})")
    h_out = math.ceil(fm.h / stride)
    w_out = math.ceil(fm.w / stride)
    out = np.empty((fm.c, h_out, w_out), dtype=np.float32)
    pool_into(fm.data, size, stride, h_out, w_out, out)
    return FeatureMap(out)


def pool_into(data: np.ndarray, size: int, stride: int, h_out: int, w_out: int,
              out: np.ndarray):
    """Window-maximum of a (C,H,W) array into `out`, clipping windows at the border."""
    h, w = data.shape[1], data.shape[2]
    for yo in range(h_out):
        y0 = yo * stride
        y1 = min(y0 + size, h)
        for xo in range(w_out):
            x0 = xo * stride
            x1 = min(x0 + size, w)
            out[:, yo, xo] = data[:, y0:y1, x0:x1].max(axis=(1, 2))
    return out


def pool_out_hw(h: int, w: int, stride: int) -> tuple[int, int]:
    return math.ceil(h / stride), math.ceil(w / stride)
