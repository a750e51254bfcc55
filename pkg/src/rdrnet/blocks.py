"""Runtime blocks in training (multi-path) and deployment (single-path) form.

Parameter records are frozen dataclasses; a conv slot holds either a
``ConvBN`` (training form) or a ``FusedConv`` (deployment form), and the
forward functions accept both so the two structures share code wherever the
topology itself does not change.

Blocks that feed a bilateral-fusion point return their branch sum *before*
the ReLU: the fusion applies the single ReLU after adding the cross-branch
term, so activation placement matches in both structures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .errors import ContractError, DimensionError
from .reparam import FusedConv
from .tensor import (
    BNParams,
    ConvSpec,
    ConvWeights,
    Tensor4,
    add,
    avg_pool,
    batchnorm,
    concat_channels,
    conv2d,
    global_avg_pool,
    relu,
    resize_bilinear,
)


@dataclass(frozen=True)
class ConvBN:
    """A bias-free convolution followed by frozen batch normalization."""

    spec: ConvSpec
    w: ConvWeights
    bn: BNParams

    def __post_init__(self):
        self.w.check_spec(self.spec)
        if self.bn.channels != self.spec.out_channels:
            raise DimensionError(
                f"batchnorm has {self.bn.channels} channels, conv produces "
                f"{self.spec.out_channels}",
                axis="channel",
            )


ConvUnit = Union[ConvBN, FusedConv]


def apply_conv_unit(x: Tensor4, unit: ConvUnit) -> Tensor4:
    if isinstance(unit, ConvBN):
        return batchnorm(conv2d(x, unit.spec, unit.w), unit.bn)
    return conv2d(x, unit.spec, unit.weights)


def _unit_out_channels(unit: ConvUnit) -> int:
    return unit.spec.out_channels


@dataclass(frozen=True)
class RBParams:
    """Training-form multi-path block.

    Paths: a 3x3 convolution, optionally a stack of one or two 1x1
    convolutions (the first carries the stride), and optionally the identity
    shortcut (stride-1, equal-width blocks only).  Disabled paths are None.
    """

    spec3: ConvSpec
    w3: ConvWeights
    bn3: BNParams
    spec1a: ConvSpec | None = None
    w1a: ConvWeights | None = None
    bn1a: BNParams | None = None
    spec1b: ConvSpec | None = None
    w1b: ConvWeights | None = None
    bn1b: BNParams | None = None
    has_residual: bool = False
    bn_res: BNParams | None = None

    def __post_init__(self):
        s3 = self.spec3
        if s3.kernel != 3 or s3.padding != 1:
            raise ContractError("the dense path must be a padded 3x3 convolution")
        if self.has_residual:
            if s3.stride != 1:
                raise ContractError("the identity shortcut requires stride 1")
            if s3.in_channels != s3.out_channels:
                raise ContractError("the identity shortcut requires equal widths")
        if self.spec1a is not None:
            a = self.spec1a
            if a.kernel != 1 or a.stride != s3.stride:
                raise ContractError(
                    "the first 1x1 convolution must carry the block stride"
                )
            if a.in_channels != s3.in_channels:
                raise DimensionError("1x1 path input width mismatch", axis="channel")
            if self.spec1b is not None:
                b = self.spec1b
                if b.kernel != 1 or b.stride != 1:
                    raise ContractError("the second 1x1 convolution must have stride 1")
                if a.out_channels != b.in_channels:
                    raise DimensionError("1x1 stack width mismatch", axis="channel")
                if b.out_channels != s3.out_channels:
                    raise DimensionError("1x1 path output width mismatch", axis="channel")
            elif a.out_channels != s3.out_channels:
                raise DimensionError("1x1 path output width mismatch", axis="channel")
        elif self.spec1b is not None:
            raise ContractError("second 1x1 convolution present without the first")
        if self.bn_res is not None and not self.has_residual:
            raise ContractError("bn_res given but the block has no identity shortcut")

    @property
    def stride(self):
        return self.spec3.stride

    @property
    def in_channels(self):
        return self.spec3.in_channels

    @property
    def out_channels(self):
        return self.spec3.out_channels


def rb_forward_train(x: Tensor4, p: RBParams, apply_relu: bool = True) -> Tensor4:
    y = batchnorm(conv2d(x, p.spec3, p.w3), p.bn3)
    if p.spec1a is not None:
        t = batchnorm(conv2d(x, p.spec1a, p.w1a), p.bn1a)
        if p.spec1b is not None:
            t = batchnorm(conv2d(t, p.spec1b, p.w1b), p.bn1b)
        y = add(y, t)
    if p.has_residual:
        r = x if p.bn_res is None else batchnorm(x, p.bn_res)
        y = add(y, r)
    return relu(y) if apply_relu else y


def rb_forward_deploy(x: Tensor4, fused: FusedConv, apply_relu: bool = True) -> Tensor4:
    y = conv2d(x, fused.spec, fused.weights)
    return relu(y) if apply_relu else y


@dataclass(frozen=True)
class BBParams:
    """Bottleneck block: 1x1 reduce to out/2, 3x3 (carries stride), 1x1 expand,
    projected or identity residual, single ReLU after the sum.  Never
    structurally reparameterized; only its BNs fold at deployment.
    """

    reduce: ConvUnit
    mid: ConvUnit
    expand: ConvUnit
    project: ConvUnit | None = None

    def __post_init__(self):
        out = _unit_out_channels(self.expand)
        if _unit_out_channels(self.mid) != out // 2:
            raise ContractError(
                f"bottleneck middle width {_unit_out_channels(self.mid)} "
                f"must be half of the output width {out}"
            )
        needs_project = (
            self.mid.spec.stride != 1 or self.reduce.spec.in_channels != out
        )
        if needs_project and self.project is None:
            raise ContractError("bottleneck with changed shape needs a projection")
        if not needs_project and self.project is not None:
            raise ContractError("identity-shaped bottleneck must not project")

    @property
    def in_channels(self):
        return self.reduce.spec.in_channels

    @property
    def out_channels(self):
        return _unit_out_channels(self.expand)


def bb_forward(x: Tensor4, p: BBParams, apply_relu: bool = True) -> Tensor4:
    h = relu(apply_conv_unit(x, p.reduce))
    h = relu(apply_conv_unit(h, p.mid))
    h = apply_conv_unit(h, p.expand)
    r = apply_conv_unit(x, p.project) if p.project is not None else x
    y = add(h, r)
    return relu(y) if apply_relu else y


@dataclass(frozen=True)
class FusionParams:
    """Bilateral exchange between the semantic and detail branches.

    s2d compresses semantic features 1x1 and upsamples them onto the detail
    grid; d2s downsamples detail features with one or two stride-2 3x3
    convolutions (ReLU between the two).  Both transforms end conv+BN with
    no trailing activation; the single ReLU runs after each sum.
    """

    s2d: ConvUnit
    up_factor: int
    d2s: tuple

    def __post_init__(self):
        if self.up_factor not in (2, 4):
            raise ContractError(f"fusion upsample factor must be 2 or 4, got {self.up_factor}")
        if len(self.d2s) not in (1, 2):
            raise ContractError("detail-to-semantics needs one or two stride-2 convs")
        if len(self.d2s) * 2 != self.up_factor:
            raise ContractError(
                "detail-to-semantics depth must match the upsample factor"
            )
        for u in self.d2s:
            if u.spec.kernel != 3 or u.spec.stride != 2:
                raise ContractError("detail-to-semantics convs must be 3x3 stride 2")
        if self.s2d.spec.kernel != 1:
            raise ContractError("semantics-to-detail transform must be 1x1")


def bilateral_fuse(xs: Tensor4, xd: Tensor4, p: FusionParams):
    """Both inputs are pre-ReLU branch outputs; returns post-ReLU pairs."""
    if xd.h != xs.h * p.up_factor or xd.w != xs.w * p.up_factor:
        raise DimensionError(
            f"branch scales inconsistent with fusion factor {p.up_factor}: "
            f"semantic {xs.h}x{xs.w} vs detail {xd.h}x{xd.w}"
        )
    t = apply_conv_unit(xd, p.d2s[0])
    if len(p.d2s) == 2:
        t = apply_conv_unit(relu(t), p.d2s[1])
    xs_out = relu(add(xs, t))
    u = resize_bilinear(apply_conv_unit(xs, p.s2d), (xd.h, xd.w))
    xd_out = relu(add(xd, u))
    return xs_out, xd_out


@dataclass(frozen=True)
class PoolDef:
    """Average-pooling geometry for one pyramid branch; None means global."""

    kernel: int | None
    stride: int | None = None
    padding: int | None = None

    @classmethod
    def global_pool(cls):
        return cls(kernel=None)

    @property
    def is_global(self):
        return self.kernel is None


DEFAULT_POOLS = (
    PoolDef(5, 2, 2),
    PoolDef(9, 4, 4),
    PoolDef(17, 8, 8),
    PoolDef.global_pool(),
)


@dataclass(frozen=True)
class RPPMParams:
    """Pyramid pooling with a reparameterizable grouped stage.

    In training form the concatenated pyramid passes through two parallel
    grouped 3x3 convolutions (each with its own BN) whose outputs are summed;
    at deployment the pair is merged into one grouped convolution.  Exactly
    one of ``pair``/``merged`` is set.
    """

    scale0: ConvUnit
    pools: tuple
    pool_convs: tuple
    grouped_spec: ConvSpec
    pair: tuple | None  # (w_a, bn_a, w_b, bn_b)
    merged: FusedConv | None
    compression: ConvUnit
    shortcut: ConvUnit

    def __post_init__(self):
        if (self.pair is None) == (self.merged is None):
            raise ContractError("exactly one of pair/merged must be set")
        if len(self.pools) != len(self.pool_convs):
            raise ContractError("each pyramid branch needs its pooling and conv")
        branch = _unit_out_channels(self.scale0)
        for u in self.pool_convs:
            if _unit_out_channels(u) != branch:
                raise ContractError("pyramid branches must share the branch width")
        if self.grouped_spec.in_channels != branch * len(self.pools):
            raise DimensionError(
                "grouped stage width must equal the concatenated pyramid width",
                axis="channel",
            )
        if self.merged is not None and self.merged.spec != self.grouped_spec:
            raise ContractError("merged conv must match the grouped spec")

    @property
    def in_channels(self):
        return self.scale0.spec.in_channels

    @property
    def branch_channels(self):
        return _unit_out_channels(self.scale0)

    @property
    def out_channels(self):
        return _unit_out_channels(self.compression)


def rppm_forward(x: Tensor4, p: RPPMParams, mode: str) -> Tensor4:
    if mode not in ("train", "deploy"):
        raise ContractError(f"mode must be 'train' or 'deploy', got {mode!r}")
    if mode == "train" and p.pair is None:
        raise ContractError("train-mode forward needs the unmerged conv pair")
    if mode == "deploy" and p.merged is None:
        raise ContractError("deploy-mode forward needs the merged conv")
    s0 = apply_conv_unit(x, p.scale0)
    ys = []
    for pool, unit in zip(p.pools, p.pool_convs):
        if pool.is_global:
            pooled = global_avg_pool(x)
        else:
            pooled = avg_pool(x, pool.kernel, pool.stride, pool.padding)
        b = apply_conv_unit(pooled, unit)
        b = resize_bilinear(b, (s0.h, s0.w))
        ys.append(add(b, s0))
    cat = concat_channels(ys)
    if mode == "train":
        w_a, bn_a, w_b, bn_b = p.pair
        g = add(
            batchnorm(conv2d(cat, p.grouped_spec, w_a), bn_a),
            batchnorm(conv2d(cat, p.grouped_spec, w_b), bn_b),
        )
    else:
        g = conv2d(cat, p.merged.spec, p.merged.weights)
    comp = apply_conv_unit(concat_channels([s0, g]), p.compression)
    return add(comp, apply_conv_unit(x, p.shortcut))


@dataclass(frozen=True)
class HeadParams:
    """Segmentation head: 3x3 conv (+BN) to the head width, ReLU, then a 1x1
    classifier with a plain bias; logits are upsampled to the target size."""

    conv3: ConvUnit
    cls_spec: ConvSpec
    cls_w: ConvWeights

    def __post_init__(self):
        if self.conv3.spec.kernel != 3:
            raise ContractError("head feature conv must be 3x3")
        if self.cls_spec.kernel != 1:
            raise ContractError("classifier must be a 1x1 convolution")
        if self.cls_spec.in_channels != _unit_out_channels(self.conv3):
            raise DimensionError("classifier width mismatch", axis="channel")
        if self.cls_w.bias is None:
            raise ContractError("classifier carries a plain bias")

    @property
    def num_classes(self):
        return self.cls_spec.out_channels


def head_forward(x: Tensor4, p: HeadParams, out_hw) -> Tensor4:
    h = relu(apply_conv_unit(x, p.conv3))
    logits = conv2d(h, p.cls_spec, p.cls_w)
    return resize_bilinear(logits, out_hw)


# ---------------------------------------------------------------------------
# deployment-form conversion (BN folding; RPPM additionally merges its pair)
# ---------------------------------------------------------------------------

def fuse_unit(unit: ConvUnit) -> FusedConv:
    from .reparam import fuse_conv_bn

    if isinstance(unit, FusedConv):
        return unit
    return fuse_conv_bn(unit.spec, unit.w, unit.bn)


def fuse_bb(p: BBParams) -> BBParams:
    return BBParams(
        reduce=fuse_unit(p.reduce),
        mid=fuse_unit(p.mid),
        expand=fuse_unit(p.expand),
        project=None if p.project is None else fuse_unit(p.project),
    )


def fuse_fusion(p: FusionParams) -> FusionParams:
    return FusionParams(
        s2d=fuse_unit(p.s2d),
        up_factor=p.up_factor,
        d2s=tuple(fuse_unit(u) for u in p.d2s),
    )


def fuse_rppm(p: RPPMParams) -> RPPMParams:
    from .reparam import reparameterize_rppm_pair

    if p.merged is not None:
        raise ContractError("pyramid module is already in deployment form")
    w_a, bn_a, w_b, bn_b = p.pair
    return RPPMParams(
        scale0=fuse_unit(p.scale0),
        pools=p.pools,
        pool_convs=tuple(fuse_unit(u) for u in p.pool_convs),
        grouped_spec=p.grouped_spec,
        pair=None,
        merged=reparameterize_rppm_pair(p.grouped_spec, w_a, bn_a, w_b, bn_b),
        compression=fuse_unit(p.compression),
        shortcut=fuse_unit(p.shortcut),
    )


def fuse_head(p: HeadParams) -> HeadParams:
    # the classifier has no BN; only the feature conv folds
    return HeadParams(conv3=fuse_unit(p.conv3), cls_spec=p.cls_spec, cls_w=p.cls_w)


def contains_bn(obj) -> bool:
    """Structural probe: does this parameter record still hold any BN?"""
    from .tensor import BNParams as _BN

    if isinstance(obj, _BN):
        return True
    if isinstance(obj, ConvBN):
        return True
    if isinstance(obj, FusedConv):
        return False
    if isinstance(obj, (list, tuple)):
        return any(contains_bn(o) for o in obj)
    if isinstance(obj, (BBParams, FusionParams, RPPMParams, HeadParams, RBParams)):
        import dataclasses

        return any(contains_bn(getattr(obj, f.name)) for f in dataclasses.fields(obj))
    return False
