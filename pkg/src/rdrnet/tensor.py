"""Dense NCHW tensors and the forward-only operators the blocks are built from.

Everything here is a pure function: tensors are immutable once constructed
and operators allocate fresh outputs.  Two evaluation paths exist for
convolution:

* ``conv2d`` — the production path.  Patches are gathered once (im2col) and
  reduced either with a single BLAS matmul (32-bit) or with an explicit
  fixed-order accumulation loop (64-bit).  The 64-bit path accumulates in
  ascending (channel, row, col) patch order, which makes it bit-identical
  to the naive reference below.
* ``conv2d_reference`` — a direct loop-nest evaluation kept as the
  independent oracle for tests.  Unusably slow beyond toy sizes.

Repeated calls on identical inputs are bit-identical: each path has a fixed
reduction order, and the BLAS kernel is deterministic for a fixed thread
count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError

F32 = "f32"
F64 = "f64"

_NP_DTYPES = {F32: np.float32, F64: np.float64}
_DTYPE_TAGS = {np.dtype(np.float32): F32, np.dtype(np.float64): F64}


def np_dtype(tag):
    """Map a precision tag ("f32"/"f64") to the numpy dtype."""
    try:
        return _NP_DTYPES[tag]
    except KeyError:
        raise ContractError(f"unknown precision tag {tag!r}; expected 'f32' or 'f64'")


@dataclass(frozen=True)
class Tensor4:
    """A dense, immutable (n, c, h, w) activation or weight tensor."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 4:
            raise DimensionError(
                f"Tensor4 requires 4 axes (n, c, h, w), got shape {self.data.shape}"
            )
        if self.data.dtype not in _DTYPE_TAGS:
            raise ContractError(f"unsupported dtype {self.data.dtype}; use float32/float64")
        if not self.data.flags.c_contiguous:
            object.__setattr__(self, "data", np.ascontiguousarray(self.data))
        self.data.flags.writeable = False

    @classmethod
    def from_array(cls, arr, dtype=None):
        """Validated entry point for external data: checks finiteness."""
        arr = np.asarray(arr)
        if dtype is not None:
            arr = arr.astype(np_dtype(dtype), copy=False)
        elif arr.dtype not in _DTYPE_TAGS:
            arr = arr.astype(np.float32)
        arr = np.ascontiguousarray(arr)
        if not np.isfinite(arr).all():
            raise ContractError("tensor contains NaN or Inf")
        return cls(arr)

    @classmethod
    def zeros(cls, dims, dtype=F32):
        return cls(np.zeros(dims, dtype=np_dtype(dtype)))

    @classmethod
    def full(cls, dims, value, dtype=F32):
        return cls(np.full(dims, value, dtype=np_dtype(dtype)))

    @property
    def dims(self):
        return self.data.shape

    @property
    def dtype(self):
        return _DTYPE_TAGS[self.data.dtype]

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def c(self):
        return self.data.shape[1]

    @property
    def h(self):
        return self.data.shape[2]

    @property
    def w(self):
        return self.data.shape[3]

    def astype(self, dtype):
        return Tensor4(self.data.astype(np_dtype(dtype)))

    def validate_finite(self):
        if not np.isfinite(self.data).all():
            raise ContractError("tensor contains NaN or Inf")
        return self


@dataclass(frozen=True)
class ConvSpec:
    """Convolution hyperparameters. kernel 1 or 3, stride 1 or 2, padding 0 or 1."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.kernel not in (1, 3):
            raise ContractError(f"kernel must be 1 or 3, got {self.kernel}")
        if self.stride not in (1, 2):
            raise ContractError(f"stride must be 1 or 2, got {self.stride}")
        if self.padding not in (0, 1):
            raise ContractError(f"padding must be 0 or 1, got {self.padding}")
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise DimensionError("channel counts must be positive", axis="channel")
        if self.groups < 1:
            raise ContractError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise DimensionError(
                f"channels ({self.in_channels}->{self.out_channels}) not divisible "
                f"by groups ({self.groups})",
                axis="channel",
            )

    def out_hw(self, h, w):
        """Output spatial size; raises if it would be empty."""
        oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if oh < 1:
            raise DimensionError(
                f"conv output height is {oh} for input h={h} (k={self.kernel}, "
                f"s={self.stride}, p={self.padding})",
                axis="height",
            )
        if ow < 1:
            raise DimensionError(
                f"conv output width is {ow} for input w={w} (k={self.kernel}, "
                f"s={self.stride}, p={self.padding})",
                axis="width",
            )
        return oh, ow


@dataclass(frozen=True)
class ConvWeights:
    """Kernel tensor of dims (out, in/groups, k, k) plus optional per-channel bias."""

    weight: Tensor4
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.bias is not None:
            bias = np.ascontiguousarray(np.asarray(self.bias))
            if bias.ndim != 1:
                raise DimensionError("bias must be 1-D (one value per output channel)")
            if bias.shape[0] != self.weight.n:
                raise DimensionError(
                    f"bias length {bias.shape[0]} != out_channels {self.weight.n}",
                    axis="channel",
                )
            if bias.dtype != self.weight.data.dtype:
                bias = bias.astype(self.weight.data.dtype)
            bias.flags.writeable = False
            object.__setattr__(self, "bias", bias)

    def check_spec(self, spec: ConvSpec):
        expect = (
            spec.out_channels,
            spec.in_channels // spec.groups,
            spec.kernel,
            spec.kernel,
        )
        if self.weight.dims != expect:
            raise DimensionError(
                f"weight dims {self.weight.dims} do not match spec {expect}"
            )

    def astype(self, dtype):
        bias = None if self.bias is None else self.bias.astype(np_dtype(dtype))
        return ConvWeights(self.weight.astype(dtype), bias)


@dataclass(frozen=True)
class BNParams:
    """Frozen inference-time batch-norm statistics and affine factors."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        arrays = {}
        length = None
        for name in ("gamma", "beta", "mean", "var"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name)))
            if arr.ndim != 1:
                raise DimensionError(f"{name} must be 1-D per-channel", axis="channel")
            if length is None:
                length = arr.shape[0]
            elif arr.shape[0] != length:
                raise DimensionError(
                    f"{name} length {arr.shape[0]} != {length}", axis="channel"
                )
            arrays[name] = arr
        if (arrays["var"] < 0).any():
            raise ContractError("variance entries must be non-negative")
        if not self.eps > 0:
            raise ContractError(f"eps must be positive, got {self.eps}")
        dtype = arrays["gamma"].dtype
        for name, arr in arrays.items():
            arr = arr.astype(dtype) if arr.dtype != dtype else arr
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def channels(self):
        return self.gamma.shape[0]

    def astype(self, dtype):
        dt = np_dtype(dtype)
        return BNParams(
            self.gamma.astype(dt),
            self.beta.astype(dt),
            self.mean.astype(dt),
            self.var.astype(dt),
            self.eps,
        )


def _check_same_dtype(a, b, what):
    if a.dtype != b.dtype:
        raise ContractError(f"{what}: mixed precisions {a.dtype} vs {b.dtype}")


def _im2col(xp, k, stride, oh, ow):
    """Gather (n, c*k*k, oh*ow) patch columns from the already-padded input.

    Column index order is C-contiguous over (channel, kernel row, kernel col),
    which fixes the reduction order used by both conv paths.
    """
    n, c = xp.shape[0], xp.shape[1]
    if k == 1 and stride == 1:
        return xp.reshape(n, c, oh * ow)
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[
                :, :, ki : ki + (oh - 1) * stride + 1 : stride,
                kj : kj + (ow - 1) * stride + 1 : stride,
            ]
    return cols.reshape(n, c * k * k, oh * ow)


def conv2d(x: Tensor4, spec: ConvSpec, w: ConvWeights) -> Tensor4:
    """Grouped 2-D cross-correlation with zero padding."""
    if x.c != spec.in_channels:
        raise DimensionError(
            f"input has {x.c} channels, conv expects {spec.in_channels}",
            axis="channel",
        )
    w.check_spec(spec)
    _check_same_dtype(x, w.weight, "conv2d")
    n, _, h, wd = x.dims
    oh, ow = spec.out_hw(h, wd)
    k, s, p, g = spec.kernel, spec.stride, spec.padding, spec.groups

    if p:
        xp = np.zeros((n, x.c, h + 2 * p, wd + 2 * p), dtype=x.data.dtype)
        xp[:, :, p : p + h, p : p + wd] = x.data
    else:
        xp = x.data

    cg = spec.in_channels // g
    og = spec.out_channels // g
    out = np.empty((n, spec.out_channels, oh * ow), dtype=x.data.dtype)
    wmat = w.weight.data.reshape(spec.out_channels, cg * k * k)

    for gi in range(g):
        cols = _im2col(xp[:, gi * cg : (gi + 1) * cg], k, s, oh, ow)
        wg = wmat[gi * og : (gi + 1) * og]
        if x.data.dtype == np.float64:
            # Fixed-order accumulation: ascending patch index, matching the
            # reference loop nest bit-for-bit.
            acc = np.zeros((n, og, oh * ow), dtype=np.float64)
            for kk in range(wg.shape[1]):
                acc += wg[:, kk : kk + 1] * cols[:, kk : kk + 1, :]
            out[:, gi * og : (gi + 1) * og] = acc
        else:
            out[:, gi * og : (gi + 1) * og] = np.matmul(wg, cols)

    if w.bias is not None:
        out += w.bias[None, :, None]
    return Tensor4(out.reshape(n, spec.out_channels, oh, ow))


def conv2d_reference(x: Tensor4, spec: ConvSpec, w: ConvWeights) -> Tensor4:
    """Direct loop-nest convolution. Oracle only; O(n·c·k²·h·w) python loops."""
    if x.c != spec.in_channels:
        raise DimensionError(
            f"input has {x.c} channels, conv expects {spec.in_channels}",
            axis="channel",
        )
    w.check_spec(spec)
    _check_same_dtype(x, w.weight, "conv2d_reference")
    n, _, h, wd = x.dims
    oh, ow = spec.out_hw(h, wd)
    k, s, p, g = spec.kernel, spec.stride, spec.padding, spec.groups
    cg = spec.in_channels // g
    og = spec.out_channels // g
    xd = x.data
    wdta = w.weight.data
    out = np.zeros((n, spec.out_channels, oh, ow), dtype=x.data.dtype)
    scalar = out.dtype.type
    for ni in range(n):
        for oc in range(spec.out_channels):
            gi = oc // og
            for oi in range(oh):
                for oj in range(ow):
                    acc = scalar(0.0)
                    for ic in range(cg):
                        for ki in range(k):
                            ii = oi * s + ki - p
                            if ii < 0 or ii >= h:
                                continue
                            for kj in range(k):
                                jj = oj * s + kj - p
                                if jj < 0 or jj >= wd:
                                    continue
                                acc += scalar(
                                    wdta[oc, ic, ki, kj] * xd[ni, gi * cg + ic, ii, jj]
                                )
                    if w.bias is not None:
                        acc += scalar(w.bias[oc])
                    out[ni, oc, oi, oj] = acc
    return Tensor4(out)


def batchnorm(x: Tensor4, bn: BNParams) -> Tensor4:
    """Per-channel y = gamma*(x - mean)/sqrt(var + eps) + beta."""
    if x.c != bn.channels:
        raise DimensionError(
            f"input has {x.c} channels, batchnorm expects {bn.channels}",
            axis="channel",
        )
    if x.data.dtype != bn.gamma.dtype:
        raise ContractError(
            f"batchnorm: mixed precisions {x.data.dtype} vs {bn.gamma.dtype}"
        )
    inv = bn.gamma / np.sqrt(bn.var + x.data.dtype.type(bn.eps))
    shift = bn.beta - bn.mean * inv
    return Tensor4(x.data * inv[None, :, None, None] + shift[None, :, None, None])


def relu(x: Tensor4) -> Tensor4:
    return Tensor4(np.maximum(x.data, 0))


def add(a: Tensor4, b: Tensor4) -> Tensor4:
    if a.dims != b.dims:
        raise DimensionError(f"add requires identical dims, got {a.dims} vs {b.dims}")
    _check_same_dtype(a, b, "add")
    return Tensor4(a.data + b.data)


def concat_channels(tensors) -> Tensor4:
    tensors = list(tensors)
    base = tensors[0]
    for t in tensors[1:]:
        if (t.n, t.h, t.w) != (base.n, base.h, base.w):
            raise DimensionError(
                f"concat requires matching (n, h, w), got {t.dims} vs {base.dims}"
            )
        _check_same_dtype(base, t, "concat")
    return Tensor4(np.concatenate([t.data for t in tensors], axis=1))


def _resize_axis_coords(n_out, n_in, dtype):
    """Half-pixel-center source coordinates, clamped to the valid range."""
    s = dtype.type
    centers = (np.arange(n_out, dtype=dtype) + s(0.5)) * (s(n_in) / s(n_out)) - s(0.5)
    centers = np.clip(centers, 0, n_in - 1)
    i0 = np.floor(centers).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = (centers - i0).astype(dtype)
    return i0, i1, frac


def resize_bilinear(x: Tensor4, out_hw) -> Tensor4:
    """Bilinear resampling with half-pixel centers (corners not aligned)."""
    oh, ow = out_hw
    if oh < 1 or ow < 1:
        raise DimensionError(f"resize target {out_hw} must be positive")
    if (oh, ow) == (x.h, x.w):
        return x
    dt = x.data.dtype
    r0, r1, fy = _resize_axis_coords(oh, x.h, dt)
    c0, c1, fx = _resize_axis_coords(ow, x.w, dt)
    rows0 = x.data[:, :, r0, :]
    rows1 = x.data[:, :, r1, :]
    fy = fy[None, None, :, None]
    fx = fx[None, None, None, :]
    top = rows0[:, :, :, c0] * (1 - fx) + rows0[:, :, :, c1] * fx
    bot = rows1[:, :, :, c0] * (1 - fx) + rows1[:, :, :, c1] * fx
    return Tensor4(top * (1 - fy) + bot * fy)


def bilinear_upsample(x: Tensor4, factor: int) -> Tensor4:
    """Scale both spatial axes by an integer factor >= 2."""
    if factor < 2:
        raise ContractError(f"upsample factor must be >= 2, got {factor}")
    return resize_bilinear(x, (x.h * factor, x.w * factor))


def avg_pool(x: Tensor4, kernel: int, stride: int, padding: int) -> Tensor4:
    """Window mean with zero padding; the divisor is always kernel**2."""
    if kernel < 1 or stride < 1 or padding < 0:
        raise ContractError(
            f"bad pooling geometry (k={kernel}, s={stride}, p={padding})"
        )
    n, c, h, w = x.dims
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"pool output {oh}x{ow} is empty for input {h}x{w} "
            f"(k={kernel}, s={stride}, p={padding})",
            axis="height" if oh < 1 else "width",
        )
    if padding:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.data.dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data
    acc = np.zeros((n, c, oh, ow), dtype=x.data.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            acc += xp[
                :, :, ki : ki + (oh - 1) * stride + 1 : stride,
                kj : kj + (ow - 1) * stride + 1 : stride,
            ]
    return Tensor4(acc / x.data.dtype.type(kernel * kernel))


def global_avg_pool(x: Tensor4) -> Tensor4:
    """Mean over the full spatial extent, keeping a 1x1 spatial footprint."""
    return Tensor4(x.data.mean(axis=(2, 3), keepdims=True))
