"""Lossless weight-rewriting passes: multi-path training structures are
rewritten into single convolutions that compute the same function.

Each pass preserves the forward map exactly (up to floating-point rounding):
batch-norm folds into the preceding convolution, stacked 1x1 convolutions
multiply out into one, 1x1 kernels and identity shortcuts embed into 3x3
kernels, and parallel same-spec branches sum weight-wise.  Composing the
passes turns a full multi-path block into one 3x3 convolution; the ReLU that
follows the branch sum is never folded and still runs at inference time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import BNParams, ConvSpec, ConvWeights, Tensor4

if TYPE_CHECKING:
    from .blocks import RBParams


@dataclass(frozen=True)
class FusedConv:
    """A single deployment convolution (bias always present)."""

    spec: ConvSpec
    weights: ConvWeights

    def __post_init__(self):
        self.weights.check_spec(self.spec)
        if self.weights.bias is None:
            raise ContractError("FusedConv requires an explicit bias")

    @property
    def param_count(self):
        return self.weights.weight.data.size + self.weights.bias.size

    def astype(self, dtype):
        return FusedConv(self.spec, self.weights.astype(dtype))


def as_fused(spec: ConvSpec, w: ConvWeights) -> FusedConv:
    """Wrap a BN-less convolution, materializing a zero bias if needed."""
    if w.bias is None:
        w = ConvWeights(w.weight, np.zeros(spec.out_channels, w.weight.data.dtype))
    return FusedConv(spec, w)


def fuse_conv_bn(spec: ConvSpec, w: ConvWeights, bn: BNParams) -> FusedConv:
    """Absorb frozen batch-norm statistics into the convolution.

    W' = (gamma/sqrt(var+eps)) * W per output channel,
    B' = (B - mean) * gamma/sqrt(var+eps) + beta.
    """
    if bn.channels != spec.out_channels:
        raise DimensionError(
            f"batchnorm has {bn.channels} channels, conv produces {spec.out_channels}",
            axis="channel",
        )
    w.check_spec(spec)
    dt = w.weight.data.dtype
    if bn.gamma.dtype != dt:
        raise ContractError(f"fuse_conv_bn: mixed precisions {dt} vs {bn.gamma.dtype}")
    scale = bn.gamma / np.sqrt(bn.var + dt.type(bn.eps))
    new_w = w.weight.data * scale[:, None, None, None]
    bias = w.bias if w.bias is not None else np.zeros(spec.out_channels, dt)
    new_b = (bias - bn.mean) * scale + bn.beta
    return FusedConv(spec, ConvWeights(Tensor4(new_w), new_b))


def merge_serial_1x1(
    spec1: ConvSpec, w1: ConvWeights, spec2: ConvSpec, w2: ConvWeights
) -> FusedConv:
    """Collapse two stacked 1x1 convolutions into one.

    Valid only when the second convolution has stride 1 (otherwise the
    intermediate feature map is subsampled and the product form no longer
    computes the same function).  The merged kernel is the matrix product
    W2 @ W1 and the merged bias W2 @ B1 + B2; stride and padding come from
    the first convolution.
    """
    if spec1.kernel != 1 or spec2.kernel != 1:
        raise ContractError("merge_serial_1x1 requires 1x1 kernels on both sides")
    if spec1.groups != 1 or spec2.groups != 1:
        raise ContractError("merge_serial_1x1 requires ungrouped convolutions")
    if spec2.stride != 1:
        raise ContractError(
            "the second 1x1 convolution must have stride 1 to merge serially"
        )
    if spec1.out_channels != spec2.in_channels:
        raise DimensionError(
            f"serial channel mismatch: first produces {spec1.out_channels}, "
            f"second consumes {spec2.in_channels}",
            axis="channel",
        )
    w1.check_spec(spec1)
    w2.check_spec(spec2)
    dt = w1.weight.data.dtype
    m1 = w1.weight.data.reshape(spec1.out_channels, spec1.in_channels)
    m2 = w2.weight.data.reshape(spec2.out_channels, spec2.in_channels)
    merged_w = (m2 @ m1).reshape(spec2.out_channels, spec1.in_channels, 1, 1)
    b1 = w1.bias if w1.bias is not None else np.zeros(spec1.out_channels, dt)
    b2 = w2.bias if w2.bias is not None else np.zeros(spec2.out_channels, dt)
    merged_b = m2 @ b1 + b2
    merged_spec = ConvSpec(
        spec1.in_channels,
        spec2.out_channels,
        kernel=1,
        stride=spec1.stride,
        padding=spec1.padding,
    )
    return FusedConv(merged_spec, ConvWeights(Tensor4(merged_w), merged_b))


def embed_1x1_into_3x3(spec: ConvSpec, w: ConvWeights) -> FusedConv:
    """Re-express a 1x1 convolution as a 3x3 with the weight at the center tap.

    Padding is promoted 0 -> 1 so spatial geometry is preserved: at stride 1
    the two forms agree everywhere, and at stride 2 the output grids and
    sampled centers coincide (both produce floor((H-1)/2)+1 rows).
    """
    if spec.kernel != 1:
        raise ContractError("embed_1x1_into_3x3 expects a 1x1 convolution")
    if spec.padding != 0:
        raise ContractError("1x1 convolutions to embed must be unpadded")
    w.check_spec(spec)
    dt = w.weight.data.dtype
    cg = spec.in_channels // spec.groups
    new_w = np.zeros((spec.out_channels, cg, 3, 3), dtype=dt)
    new_w[:, :, 1, 1] = w.weight.data[:, :, 0, 0]
    bias = w.bias if w.bias is not None else np.zeros(spec.out_channels, dt)
    new_spec = ConvSpec(
        spec.in_channels,
        spec.out_channels,
        kernel=3,
        stride=spec.stride,
        padding=1,
        groups=spec.groups,
    )
    return FusedConv(new_spec, ConvWeights(Tensor4(new_w), bias))


def identity_to_conv(channels_in: int, channels_out: int, dtype=np.float32) -> FusedConv:
    """A 1x1 convolution that reproduces its input on the first channels.

    Weight is 1 where output index equals input index and 0 elsewhere;
    requires channels_in <= channels_out.
    """
    if channels_in > channels_out:
        raise ContractError(
            f"identity embedding needs channels_in ({channels_in}) <= "
            f"channels_out ({channels_out})"
        )
    dt = np.dtype(dtype)
    w = np.zeros((channels_out, channels_in, 1, 1), dtype=dt)
    for i in range(channels_in):
        w[i, i, 0, 0] = 1
    spec = ConvSpec(channels_in, channels_out, kernel=1)
    return FusedConv(spec, ConvWeights(Tensor4(w), np.zeros(channels_out, dt)))


def sum_parallel(branches: Sequence[FusedConv]) -> FusedConv:
    """Sum same-spec parallel branches weight-wise, in the given order."""
    branches = list(branches)
    if not branches:
        raise ContractError("sum_parallel needs at least one branch")
    spec = branches[0].spec
    for b in branches[1:]:
        if b.spec != spec:
            raise ContractError(
                f"parallel branches must share a spec: {b.spec} != {spec}"
            )
    w = branches[0].weights.weight.data.copy()
    bias = branches[0].weights.bias.copy()
    for b in branches[1:]:
        w += b.weights.weight.data
        bias += b.weights.bias
    return FusedConv(spec, ConvWeights(Tensor4(w), bias))


def reparameterize_rb(rb: "RBParams") -> FusedConv:
    """Collapse a multi-path block into one 3x3 convolution.

    Pipeline: fold BN into every convolution; multiply the stacked 1x1 pair
    into one 1x1; embed the 1x1 result and the identity shortcut into 3x3
    kernels; sum all branches.  The trailing ReLU stays outside.
    """
    branches = [fuse_conv_bn(rb.spec3, rb.w3, rb.bn3)]
    if rb.spec1a is not None:
        a = fuse_conv_bn(rb.spec1a, rb.w1a, rb.bn1a)
        if rb.spec1b is not None:
            b = fuse_conv_bn(rb.spec1b, rb.w1b, rb.bn1b)
            merged = merge_serial_1x1(a.spec, a.weights, b.spec, b.weights)
        else:
            merged = a
        branches.append(embed_1x1_into_3x3(merged.spec, merged.weights))
    if rb.has_residual:
        ident = identity_to_conv(
            rb.spec3.in_channels, rb.spec3.out_channels, rb.w3.weight.data.dtype
        )
        if rb.bn_res is not None:
            ident = fuse_conv_bn(ident.spec, ident.weights, rb.bn_res)
        branches.append(embed_1x1_into_3x3(ident.spec, ident.weights))
    return sum_parallel(branches)


def reparameterize_rppm_pair(
    spec: ConvSpec,
    w_a: ConvWeights,
    bn_a: BNParams,
    w_b: ConvWeights,
    bn_b: BNParams,
) -> FusedConv:
    """Merge two parallel grouped convolutions (each with its own BN) into one."""
    return sum_parallel(
        [fuse_conv_bn(spec, w_a, bn_a), fuse_conv_bn(spec, w_b, bn_b)]
    )
