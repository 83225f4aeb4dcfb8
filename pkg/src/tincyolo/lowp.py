"""Reduced-precision compute paths.

Holds the quantization contract types, the rounding-shift primitive, the
lane-sliced fused im2col+GEMM kernel (integer accumulators, 32-bit exact or
16-bit saturating), and the bit-exact binary-weight / thresholded-activation
convolution that stands in for the offloaded QNN accelerator.

Integer matmuls run through float64 BLAS: every partial sum is an integer far
below 2^53, so the results are bit-exact and fast.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GeometryError
from .layers import ConvSpec, gather_lowered_rows, pad_channels, pool_into, pool_out_hw
from .tensor import FeatureMap

INT16_MIN = -(1 << 15)
INT16_MAX = (1 << 15) - 1

SUPPORTED_LANES = (1, 4, 8, 16)


@dataclass
class QuantSpec:
    """The quantization contract: widths, scale/offset, accumulator behavior.

    Real value = scale * (code - zero_point). pre_shift is the rounding right
    shift applied to every product before a 16-bit accumulation; it must be 0
    on the 32-bit (exact) path.
    """

    activation_bits: int = 8
    weight_bits: int = 8
    scale: float = 1.0
    zero_point: int = 0
    accumulator_bits: int = 32
    pre_shift: int = 0

    def __post_init__(self):
        if not (1 <= self.activation_bits <= 8 and 1 <= self.weight_bits <= 8):
            raise ConfigError(
                f"bit widths must be in [1,8], got a={self.activation_bits} w={self.weight_bits}"
            )
        if self.scale <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        if self.accumulator_bits not in (16, 32):
            raise ConfigError(f"accumulator_bits must be 16 or 32, got {self.accumulator_bits}")
        if self.pre_shift < 0:
            raise ConfigError(f"pre_shift must be >= 0, got {self.pre_shift}")
        if self.accumulator_bits == 32 and self.pre_shift != 0:
            raise ConfigError("pre_shift must be 0 on the 32-bit accumulator path")

    def check_reduction(self, length: int):
        """Reject 16-bit configs whose worst-case shifted sum cannot avoid overflow."""
        if self.accumulator_bits != 16:
            return
        max_prod = (1 << (self.activation_bits - 1)) * (1 << (self.weight_bits - 1))
        if length * (max_prod >> self.pre_shift) > INT16_MAX and self.pre_shift == 0:
            raise ConfigError(
                f"16-bit accumulation over {length} products of magnitude up to "
                f"{max_prod} requires a pre-accumulation shift"
            )


def code_bounds(bits: int, signed: bool = True) -> tuple[int, int]:
    if signed:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


@dataclass
class QuantTensor:
    """Integer-coded tensor plus its quantization contract.

    `bits` is the width every code must fit (activation or weight width,
    depending on the tensor's role). Codes are kept as int32.
    """

    codes: np.ndarray
    spec: QuantSpec
    bits: int = 8
    signed: bool = True

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int32)
        lo, hi = code_bounds(self.bits, self.signed)
        if self.codes.size and (self.codes.min() < lo or self.codes.max() > hi):
            raise ConfigError(
                f"codes outside [{lo},{hi}] for a {self.bits}-bit "
                f"{'signed' if self.signed else 'unsigned'} tensor"
            )

    @property
    def dims(self) -> tuple[int, ...]:
        return self.codes.shape


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def quantize_linear(fm: FeatureMap, bits: int, scale: float, zero_point: int = 0,
                    signed: bool = True) -> QuantTensor:
    """Linear quantization: clamp(round(v/scale) + zero_point) into the code range.

    Rounding is half-away-from-zero; out-of-range values saturate. Pass
    signed=False for the unsigned code books used by the thresholded 3-bit path.
    """
    if not (1 <= bits <= 8):
        raise ConfigError(f"bits must be in [1,8], got {bits}")
    if scale <= 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    lo, hi = code_bounds(bits, signed)
    codes = _round_half_away(fm.data.astype(np.float64) / scale) + zero_point
    codes = np.clip(codes, lo, hi).astype(np.int32)
    spec = QuantSpec(activation_bits=bits, weight_bits=bits, scale=scale,
                     zero_point=zero_point)
    return QuantTensor(codes, spec, bits=bits, signed=signed)


def dequantize_linear(qt: QuantTensor) -> FeatureMap:
    """Inverse of quantize_linear up to the quantization step: scale * (code - zero_point)."""
    if len(qt.codes.shape) != 3:
        raise GeometryError(f"expected a (C,H,W) code tensor, got shape {qt.codes.shape}")
    values = (qt.codes.astype(np.float64) - qt.spec.zero_point) * qt.spec.scale
    return FeatureMap(values.astype(np.float32))


def rshift_round(x: int, n: int) -> int:
    """Rounding right shift: (x + 2^(n-1)) >> n for n > 0, identity for n = 0.

    Arithmetic shift; rounds half toward +infinity, the hardware
    rounding-shift idiom.
    """
    if n < 0:
        raise ConfigError(f"shift must be >= 0, got {n}")
    if n == 0:
        return x
    return (x + (1 << (n - 1))) >> n


def _rshift_round_arr(x: np.ndarray, n: int) -> np.ndarray:
    if n == 0:
        return x
    return (x + (1 << (n - 1))) >> n


@dataclass
class BinaryWeightSet:
    """Binary (+1/-1) convolution weights packed 8 bits per byte.

    Bit order is (out_channel, in_channel, ky, kx), MSB-first within each
    byte; each filter's C*K*K bits are padded to a byte boundary. bit=1
    means weight +1, bit=0 means -1.
    """

    packed: np.ndarray  # uint8, shape (out_channels, row_bytes)
    out_channels: int
    in_channels: int
    kernel_size: int

    def __post_init__(self):
        self.packed = np.asarray(self.packed, dtype=np.uint8)
        expect = (self.out_channels, self.row_bytes)
        if self.packed.shape != expect:
            raise ConfigError(f"packed weights shape {self.packed.shape}, expected {expect}")

    @property
    def bits_per_filter(self) -> int:
        return self.in_channels * self.kernel_size * self.kernel_size

    @property
    def row_bytes(self) -> int:
        return (self.bits_per_filter + 7) // 8

    @classmethod
    def from_signs(cls, signs: np.ndarray) -> "BinaryWeightSet":
        """Pack a (C', C, K, K) array of +1/-1 weights."""
        signs = np.asarray(signs)
        if signs.ndim != 4 or signs.shape[2] != signs.shape[3]:
            raise ConfigError(f"expected (C',C,K,K) signs, got shape {signs.shape}")
        if not np.all(np.abs(signs) == 1):
            raise ConfigError("binary weights must be +1 or -1")
        c_out, c_in, k, _ = signs.shape
        bits = (signs.reshape(c_out, -1) > 0).astype(np.uint8)
        packed = np.packbits(bits, axis=1)
        return cls(packed, c_out, c_in, k)

    @classmethod
    def from_bytes(cls, buf: bytes, out_channels: int, in_channels: int,
                   kernel_size: int) -> "BinaryWeightSet":
        row_bytes = (in_channels * kernel_size * kernel_size + 7) // 8
        expect = out_channels * row_bytes
        if len(buf) != expect:
            raise ConfigError(f"packed weight payload is {len(buf)} bytes, expected {expect}")
        packed = np.frombuffer(buf, dtype=np.uint8).reshape(out_channels, row_bytes)
        return cls(packed.copy(), out_channels, in_channels, kernel_size)

    def to_bytes(self) -> bytes:
        return self.packed.tobytes()

    def unpack_signs(self) -> np.ndarray:
        """Unpack to a (C', C*K*K) array of +1/-1 int8 values."""
        bits = np.unpackbits(self.packed, axis=1)[:, : self.bits_per_filter]
        return (bits.astype(np.int8) * 2 - 1)


@dataclass
class ThresholdSet:
    """Per-output-channel ascending integer thresholds, 2^bits - 1 per channel."""

    values: np.ndarray  # int32, shape (out_channels, 2^bits - 1)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int32)
        if self.values.ndim != 2:
            raise ConfigError(f"thresholds must be (C', 2^bits-1), got shape {self.values.shape}")
        n = self.values.shape[1]
        if n < 1 or (n + 1) & n:  # n+1 must be a power of two
            raise ConfigError(f"threshold count per channel must be 2^bits - 1, got {n}")
        if not np.all(np.diff(self.values, axis=1) > 0):
            raise ConfigError("thresholds must be strictly ascending per channel")

    @property
    def bits(self) -> int:
        return int(self.values.shape[1] + 1).bit_length() - 1

    @property
    def out_channels(self) -> int:
        return self.values.shape[0]


def threshold_activate(acc: int, thresholds) -> int:
    """Map an accumulator to the count of thresholds <= acc (a 0..2^bits-1 code)."""
    th = np.asarray(thresholds)
    if th.ndim != 1 or (th.size > 1 and not np.all(np.diff(th) > 0)):
        raise ConfigError("thresholds must be a strictly ascending vector")
    return int(np.searchsorted(th, acc, side="right"))


def _lowering_indices(c_in: int, k: int):
    """Row index -> (channel, ky, kx) arrays for the lowered matrix."""
    r = np.arange(c_in * k * k)
    return r // (k * k), (r // k) % k, r % k


def fused_conv_lowp(fm8: QuantTensor, w8: QuantTensor, spec: ConvSpec, qs: QuantSpec,
                    lanes: int, bias: np.ndarray | None = None) -> FeatureMap:
    """Fused im2col+GEMM over integer codes, producing integer accumulators.

    The multiplicand matrix is never materialized: it is produced `lanes`
    columns at a time into one reusable slice buffer, and each slice yields
    `lanes` outputs per output channel as parallel dot products. With a
    32-bit accumulator the result is the exact integer dot product (+ bias).
    With a 16-bit accumulator every product is passed through the rounding
    right shift and added with saturation, in row order, never wrapping.

    Code value 0 is used for the padding halo (symmetric zero_point).
    """
    if lanes not in SUPPORTED_LANES:
        raise ConfigError(f"lane count {lanes} unsupported, pick one of {SUPPORTED_LANES}")
    codes = fm8.codes
    if codes.ndim != 3:
        raise GeometryError(f"activation codes must be (C,H,W), got shape {codes.shape}")
    c_in, h, w = codes.shape
    k = spec.kernel_size
    w_rows = np.asarray(w8.codes).reshape(spec.out_channels, -1)
    reduction = c_in * k * k
    if w_rows.shape[1] != reduction:
        raise ConfigError(
            f"weight codes ({w_rows.shape}) do not match C={c_in}, K={k}, C'={spec.out_channels}"
        )
    h_out, w_out = spec.out_hw(h, w)
    n = h_out * w_out

    padded = pad_channels(codes, spec.pad).astype(np.float64)
    row_c, row_ky, row_kx = _lowering_indices(c_in, k)
    pos = np.arange(n)
    pos_y = (pos // w_out) * spec.stride
    pos_x = (pos % w_out) * spec.stride

    out = np.empty((spec.out_channels, n), dtype=np.int64)
    buf = np.empty((reduction, lanes), dtype=np.float64)  # the one reused slice buffer
    w_f64 = w_rows.astype(np.float64)
    w_i64 = w_rows.astype(np.int64)

    for j0 in range(0, n, lanes):
        width = min(lanes, n - j0)
        for lane in range(width):
            j = j0 + lane
            buf[:, lane] = padded[row_c, pos_y[j] + row_ky, pos_x[j] + row_kx]
        if qs.accumulator_bits == 32:
            acc = np.rint(w_f64 @ buf[:, :width]).astype(np.int64)
        else:
            acc = _accumulate_16bit(w_i64, buf[:, :width].astype(np.int64), qs.pre_shift)
        out[:, j0:j0 + width] = acc

    if bias is not None:
        bias = np.asarray(bias, dtype=np.int64).reshape(-1)
        if bias.size != spec.out_channels:
            raise ConfigError(f"bias length {bias.size} does not match C'={spec.out_channels}")
        if qs.accumulator_bits == 32:
            out += bias[:, None]
        else:
            out = np.clip(out + bias[:, None], INT16_MIN, INT16_MAX)

    return FeatureMap(out.reshape(spec.out_channels, h_out, w_out).astype(np.float32))


def _accumulate_16bit(w_rows: np.ndarray, cols: np.ndarray, pre_shift: int) -> np.ndarray:
    """Shift each product, then saturating-add in row order into 16-bit accumulators."""
    acc = np.zeros((w_rows.shape[0], cols.shape[1]), dtype=np.int64)
    for r in range(cols.shape[0]):
        prod = w_rows[:, r:r + 1] * cols[r]
        acc = np.clip(acc + _rshift_round_arr(prod, pre_shift), INT16_MIN, INT16_MAX)
    return acc


def binary_conv(fmq: QuantTensor, bw: BinaryWeightSet, spec: ConvSpec,
                th: ThresholdSet) -> QuantTensor:
    """Binary-weight convolution with threshold activation, bit-exact.

    Accumulator per output element is the signed sum of input codes
    (+code for bit 1, -code for bit 0); the output code is the number of
    that channel's thresholds the accumulator meets or exceeds. This is
    the software twin of the fabric accelerator.
    """
    codes = fmq.codes
    if codes.ndim != 3:
        raise GeometryError(f"activation codes must be (C,H,W), got shape {codes.shape}")
    c_in, h, w = codes.shape
    if bw.in_channels != c_in or bw.kernel_size != spec.kernel_size \
            or bw.out_channels != spec.out_channels:
        raise ConfigError(
            f"binary weights ({bw.out_channels},{bw.in_channels},K={bw.kernel_size}) "
            f"do not match input C={c_in} and spec C'={spec.out_channels} K={spec.kernel_size}"
        )
    if th.out_channels != spec.out_channels:
        raise ConfigError(f"threshold channels {th.out_channels} != C'={spec.out_channels}")

    acc = binary_conv_acc(fmq, bw, spec)
    out_codes = apply_thresholds(acc, th)
    return QuantTensor(out_codes, fmq.spec, bits=th.bits, signed=False)


def binary_conv_acc(fmq: QuantTensor, bw: BinaryWeightSet, spec: ConvSpec) -> np.ndarray:
    """The integer accumulators of binary_conv, before thresholding: (C',H_out,W_out)."""
    codes = fmq.codes
    c_in, h, w = codes.shape
    k = spec.kernel_size
    h_out, w_out = spec.out_hw(h, w)
    padded = pad_channels(codes, spec.pad).astype(np.float64)
    cols = np.empty((c_in * k * k, h_out * w_out), dtype=np.float64)
    gather_lowered_rows(padded, k, spec.stride, h_out, w_out, cols)
    signs = bw.unpack_signs().astype(np.float64)
    acc = np.rint(signs @ cols).astype(np.int64)
    return acc.reshape(spec.out_channels, h_out, w_out)


def apply_thresholds(acc: np.ndarray, th: ThresholdSet) -> np.ndarray:
    """Vectorized threshold_activate over a (C', ...) accumulator volume."""
    flat = acc.reshape(th.out_channels, -1)
    codes = (flat[:, None, :] >= th.values[:, :, None]).sum(axis=1, dtype=np.int32)
    return codes.reshape(acc.shape)


def maxpool_codes(qt: QuantTensor, size: int, stride: int) -> QuantTensor:
    """Max-pooling directly on integer codes (same clipped-window geometry)."""
    if size < 1 or stride < 1:
        raise ConfigError(f"pool size/stride must be >= 1, got ({size},{stride})")
    codes = qt.codes
    if codes.ndim != 3:
        raise GeometryError(f"codes must be (C,H,W), got shape {codes.shape}")
    c, h, w = codes.shape
    h_out, w_out = pool_out_hw(h, w, stride)
    out = np.empty((c, h_out, w_out), dtype=np.int32)
    pool_into(codes, size, stride, h_out, w_out, out)
    return QuantTensor(out, qt.spec, bits=qt.bits, signed=qt.signed)
