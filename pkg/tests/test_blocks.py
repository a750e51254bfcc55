"""Block forwards against composed-operator oracles, plus per-block
train/deploy equivalence after conversion."""

import numpy as np
import pytest

from rdrnet.blocks import (
    BBParams,
    ConvBN,
    DEFAULT_POOLS,
    FusionParams,
    HeadParams,
    PoolDef,
    RPPMParams,
    bb_forward,
    bilateral_fuse,
    contains_bn,
    fuse_bb,
    fuse_fusion,
    fuse_head,
    fuse_rppm,
    fuse_unit,
    head_forward,
    rb_forward_deploy,
    rb_forward_train,
    rppm_forward,
)
from rdrnet.errors import ContractError, DimensionError
from rdrnet.reparam import FusedConv, reparameterize_rb
from rdrnet.tensor import (
    ConvSpec,
    ConvWeights,
    Tensor4,
    add,
    avg_pool,
    batchnorm,
    conv2d,
    global_avg_pool,
    relu,
    resize_bilinear,
)

from conftest import (
    identity_bn,
    max_abs_diff,
    rand_bn,
    rand_conv_weights,
    rand_convbn,
    rand_rb,
    rand_tensor,
)


def make_bb(rng, cin, cout, stride, dtype="f32"):
    mid = cout // 2
    reduce = rand_convbn(rng, ConvSpec(cin, mid, kernel=1), dtype)
    midu = rand_convbn(rng, ConvSpec(mid, mid, kernel=3, stride=stride, padding=1), dtype)
    expand = rand_convbn(rng, ConvSpec(mid, cout, kernel=1), dtype)
    project = None
    if stride != 1 or cin != cout:
        project = rand_convbn(rng, ConvSpec(cin, cout, kernel=1, stride=stride), dtype)
    return BBParams(reduce=reduce, mid=midu, expand=expand, project=project)


def make_fusion(rng, sem_c, det_c, stage, dtype="f32"):
    # stage 4: factor 2, one down conv; stage 5: factor 4, two down convs
    if stage == 4:
        d2s = (rand_convbn(rng, ConvSpec(det_c, sem_c, kernel=3, stride=2, padding=1), dtype),)
        factor = 2
    else:
        mid = sem_c // 2
        d2s = (
            rand_convbn(rng, ConvSpec(det_c, mid, kernel=3, stride=2, padding=1), dtype),
            rand_convbn(rng, ConvSpec(mid, sem_c, kernel=3, stride=2, padding=1), dtype),
        )
        factor = 4
    s2d = rand_convbn(rng, ConvSpec(sem_c, det_c, kernel=1), dtype)
    return FusionParams(s2d=s2d, up_factor=factor, d2s=d2s)


def make_rppm(rng, cin, branch, cout, dtype="f32", pools=DEFAULT_POOLS):
    grouped_spec = ConvSpec(4 * branch, 4 * branch, kernel=3, padding=1, groups=4)
    return RPPMParams(
        scale0=rand_convbn(rng, ConvSpec(cin, branch, kernel=1), dtype),
        pools=tuple(pools),
        pool_convs=tuple(
            rand_convbn(rng, ConvSpec(cin, branch, kernel=1), dtype) for _ in pools
        ),
        grouped_spec=grouped_spec,
        pair=(
            rand_conv_weights(rng, grouped_spec, dtype),
            rand_bn(rng, 4 * branch, dtype),
            rand_conv_weights(rng, grouped_spec, dtype),
            rand_bn(rng, 4 * branch, dtype),
        ),
        merged=None,
        compression=rand_convbn(rng, ConvSpec(5 * branch, cout, kernel=1), dtype),
        shortcut=rand_convbn(rng, ConvSpec(cin, cout, kernel=1), dtype),
    )


def make_head(rng, cin, oc, classes, dtype="f32"):
    cls_spec = ConvSpec(oc, classes, kernel=1)
    return HeadParams(
        conv3=rand_convbn(rng, ConvSpec(cin, oc, kernel=3, padding=1), dtype),
        cls_spec=cls_spec,
        cls_w=rand_conv_weights(rng, cls_spec, dtype, bias=True),
    )


class TestRBForward:
    def test_dense_only_reduces_to_relu_conv(self, rng):
        rb = rand_rb(rng, 4, 4, stride=1, use_1x1=False, residual=False)
        x = rand_tensor(rng, (1, 4, 6, 6))
        expect = relu(batchnorm(conv2d(x, rb.spec3, rb.w3), rb.bn3))
        assert max_abs_diff(rb_forward_train(x, rb), expect) == 0.0

    @pytest.mark.parametrize("stride,hw", [(1, (8, 10)), (2, (8, 10))])
    def test_spatial_halving(self, rng, stride, hw):
        rb = rand_rb(rng, 4, 8, stride=stride, residual=False)
        out = rb_forward_train(rand_tensor(rng, (1, 4) + hw), rb)
        expect = tuple(d // stride for d in hw)
        assert (out.h, out.w) == expect

    def test_train_equals_deploy_after_reparam(self, rng):
        rb = rand_rb(rng, 6, 6, stride=1)
        x = rand_tensor(rng, (2, 6, 8, 8))
        fused = reparameterize_rb(rb)
        assert max_abs_diff(
            rb_forward_train(x, rb), rb_forward_deploy(x, fused)
        ) <= 1e-4

    @pytest.mark.parametrize("dtype,tol", [("f32", 1e-4), ("f64", 1e-10)])
    def test_equivalence_over_100_draws(self, rng, dtype, tol):
        worst = 0.0
        for draw in range(100):
            stride = 1 if draw % 2 else 2
            cin = int(rng.integers(2, 6))
            cout = cin if stride == 1 else int(rng.integers(2, 6))
            rb = rand_rb(rng, cin, cout, stride=stride, dtype=dtype)
            x = rand_tensor(rng, (1, cin, 6, 8), dtype)
            worst = max(worst, max_abs_diff(
                rb_forward_train(x, rb),
                rb_forward_deploy(x, reparameterize_rb(rb)),
            ))
        assert worst <= tol

    def test_deploy_identity_kernel(self, rng):
        from rdrnet.reparam import embed_1x1_into_3x3, identity_to_conv

        ident = identity_to_conv(3, 3)
        fused = embed_1x1_into_3x3(ident.spec, ident.weights)
        x = Tensor4(np.abs(rand_tensor(rng, (1, 3, 5, 5)).data) + 0.1)
        assert np.array_equal(rb_forward_deploy(x, fused).data, x.data)

    def test_deploy_zero_kernel(self, rng):
        spec = ConvSpec(3, 4, kernel=3, padding=1)
        fused = FusedConv(
            spec,
            ConvWeights(Tensor4(np.zeros((4, 3, 3, 3), np.float32)),
                        np.zeros(4, np.float32)),
        )
        out = rb_forward_deploy(rand_tensor(rng, (1, 3, 4, 4)), fused)
        assert np.all(out.data == 0)


class TestBBForward:
    def test_silent_main_path_is_relu_identity(self, rng):
        # zero the expand conv's BN so the residual alone survives
        bb = make_bb(rng, 8, 8, stride=1)
        silent = ConvBN(
            bb.expand.spec,
            bb.expand.w,
            identity_bn(8).__class__(
                gamma=np.zeros(8, np.float32), beta=np.zeros(8, np.float32),
                mean=np.zeros(8, np.float32), var=np.ones(8, np.float32),
            ),
        )
        import dataclasses

        bb = dataclasses.replace(bb, expand=silent)
        x = rand_tensor(rng, (1, 8, 6, 6))
        assert max_abs_diff(bb_forward(x, bb), relu(x)) <= 1e-6

    def test_matches_composed_ops(self, rng):
        bb = make_bb(rng, 6, 12, stride=2)
        x = rand_tensor(rng, (2, 6, 8, 10))
        u = lambda t, unit: batchnorm(conv2d(t, unit.spec, unit.w), unit.bn)
        h = relu(u(x, bb.reduce))
        h = relu(u(h, bb.mid))
        h = u(h, bb.expand)
        expect = relu(add(h, u(x, bb.project)))
        assert max_abs_diff(bb_forward(x, bb), expect) == 0.0

    def test_stage6_halving_shape(self, rng):
        bb = make_bb(rng, 8, 16, stride=2)
        out = bb_forward(rand_tensor(rng, (1, 8, 32, 64)), bb)
        assert (out.h, out.w) == (16, 32)

    def test_train_deploy_equivalence(self, rng):
        bb = make_bb(rng, 6, 12, stride=2)
        x = rand_tensor(rng, (1, 6, 8, 8))
        assert max_abs_diff(bb_forward(x, bb), bb_forward(x, fuse_bb(bb))) <= 1e-4

    def test_mid_width_enforced(self, rng):
        with pytest.raises(ContractError):
            BBParams(
                reduce=rand_convbn(rng, ConvSpec(4, 4, kernel=1)),
                mid=rand_convbn(rng, ConvSpec(4, 4, kernel=3, padding=1)),
                expand=rand_convbn(rng, ConvSpec(4, 12, kernel=1)),
                project=rand_convbn(rng, ConvSpec(4, 12, kernel=1)),
            )


class TestBilateralFuse:
    def test_zero_cross_terms(self, rng):
        fp = make_fusion(rng, 16, 8, stage=4)
        silent_bn = lambda c: rand_bn(rng, c).__class__(
            gamma=np.zeros(c, np.float32), beta=np.zeros(c, np.float32),
            mean=np.zeros(c, np.float32), var=np.ones(c, np.float32),
        )
        import dataclasses

        fp = dataclasses.replace(
            fp,
            s2d=ConvBN(fp.s2d.spec, fp.s2d.w, silent_bn(8)),
            d2s=(ConvBN(fp.d2s[0].spec, fp.d2s[0].w, silent_bn(16)),),
        )
        xs = rand_tensor(rng, (1, 16, 4, 4))
        xd = rand_tensor(rng, (1, 8, 8, 8))
        xs2, xd2 = bilateral_fuse(xs, xd, fp)
        assert max_abs_diff(xs2, relu(xs)) == 0.0
        assert max_abs_diff(xd2, relu(xd)) == 0.0

    def test_shape_contract(self, rng):
        fp = make_fusion(rng, 16, 8, stage=4)
        xs = rand_tensor(rng, (1, 16, 8, 16))
        xd = rand_tensor(rng, (1, 8, 16, 32))
        xs2, xd2 = bilateral_fuse(xs, xd, fp)
        assert xs2.dims == xs.dims and xd2.dims == xd.dims

    def test_matches_composed_ops_stage5(self, rng):
        fp = make_fusion(rng, 32, 8, stage=5)
        xs = rand_tensor(rng, (1, 32, 4, 4))
        xd = rand_tensor(rng, (1, 8, 16, 16))
        u = lambda t, unit: batchnorm(conv2d(t, unit.spec, unit.w), unit.bn)
        t = u(relu(u(xd, fp.d2s[0])), fp.d2s[1])
        expect_s = relu(add(xs, t))
        expect_d = relu(add(xd, resize_bilinear(u(xs, fp.s2d), (16, 16))))
        xs2, xd2 = bilateral_fuse(xs, xd, fp)
        assert max_abs_diff(xs2, expect_s) == 0.0
        assert max_abs_diff(xd2, expect_d) == 0.0

    def test_scale_mismatch_rejected(self, rng):
        fp = make_fusion(rng, 16, 8, stage=4)
        with pytest.raises(DimensionError):
            bilateral_fuse(
                rand_tensor(rng, (1, 16, 4, 4)), rand_tensor(rng, (1, 8, 16, 16)), fp
            )

    def test_train_deploy_equivalence(self, rng):
        fp = make_fusion(rng, 32, 8, stage=5)
        xs = rand_tensor(rng, (1, 32, 4, 4))
        xd = rand_tensor(rng, (1, 8, 16, 16))
        train = bilateral_fuse(xs, xd, fp)
        deploy = bilateral_fuse(xs, xd, fuse_fusion(fp))
        assert max_abs_diff(train[0], deploy[0]) <= 1e-4
        assert max_abs_diff(train[1], deploy[1]) <= 1e-4


class TestRPPMForward:
    def test_train_deploy_equivalence(self, rng):
        p = make_rppm(rng, 32, 8, 16)
        x = rand_tensor(rng, (2, 32, 16, 32), scale=0.5)
        train = rppm_forward(x, p, "train")
        deploy = rppm_forward(x, fuse_rppm(p), "deploy")
        assert max_abs_diff(train, deploy) <= 1e-4

    def test_silent_second_grouped_conv(self, rng):
        p = make_rppm(rng, 16, 4, 8)
        w_a, bn_a, w_b, _ = p.pair
        silent = rand_bn(rng, 16).__class__(
            gamma=np.zeros(16, np.float32), beta=np.zeros(16, np.float32),
            mean=np.zeros(16, np.float32), var=np.ones(16, np.float32),
        )
        import dataclasses

        p2 = dataclasses.replace(p, pair=(w_a, bn_a, w_b, silent))
        x = rand_tensor(rng, (1, 16, 8, 16))
        # single-conv forward: replace the pair sum by just branch a
        s0 = batchnorm(conv2d(x, p.scale0.spec, p.scale0.w), p.scale0.bn)
        ys = []
        for pool, unit in zip(p.pools, p.pool_convs):
            pooled = global_avg_pool(x) if pool.is_global else avg_pool(
                x, pool.kernel, pool.stride, pool.padding
            )
            b = batchnorm(conv2d(pooled, unit.spec, unit.w), unit.bn)
            ys.append(add(resize_bilinear(b, (s0.h, s0.w)), s0))
        from rdrnet.tensor import concat_channels

        cat = concat_channels(ys)
        g = batchnorm(conv2d(cat, p.grouped_spec, w_a), bn_a)
        comp = batchnorm(
            conv2d(concat_channels([s0, g]), p.compression.spec, p.compression.w),
            p.compression.bn,
        )
        expect = add(comp, batchnorm(conv2d(x, p.shortcut.spec, p.shortcut.w),
                                     p.shortcut.bn))
        assert max_abs_diff(rppm_forward(x, p2, "train"), expect) <= 1e-6

    def test_constant_input_pooled_branches_match_scale0(self, rng):
        # padding-free pools on a 16x32 grid, with every branch conv sharing
        # scale0's weights, turn each pyramid branch into scale0 + scale0
        pools = (PoolDef(4, 2, 0), PoolDef(8, 4, 0), PoolDef(16, 8, 0),
                 PoolDef.global_pool())
        p = make_rppm(rng, 8, 4, 8, pools=pools)
        import dataclasses

        p = dataclasses.replace(p, pool_convs=tuple(p.scale0 for _ in pools))
        x = Tensor4(np.full((1, 8, 16, 32), 0.7, np.float32))
        s0 = batchnorm(conv2d(x, p.scale0.spec, p.scale0.w), p.scale0.bn)
        assert np.allclose(s0.data, s0.data[:, :, :1, :1], atol=1e-6)
        ys_expected = add(s0, s0)
        # reproduce the pyramid stage only
        for pool, unit in zip(p.pools, p.pool_convs):
            pooled = global_avg_pool(x) if pool.is_global else avg_pool(
                x, pool.kernel, pool.stride, pool.padding
            )
            b = batchnorm(conv2d(pooled, unit.spec, unit.w), unit.bn)
            b = resize_bilinear(b, (s0.h, s0.w))
            assert max_abs_diff(add(b, s0), ys_expected) <= 1e-5

    def test_mode_mismatch_rejected(self, rng):
        p = make_rppm(rng, 16, 4, 8)
        x = rand_tensor(rng, (1, 16, 8, 8))
        with pytest.raises(ContractError):
            rppm_forward(x, p, "deploy")
        with pytest.raises(ContractError):
            rppm_forward(x, fuse_rppm(p), "train")


class TestHeadForward:
    def test_class_channel_count_and_upsample(self, rng):
        head = make_head(rng, 16, 32, classes=19)
        x = rand_tensor(rng, (1, 16, 8, 16))
        out = head_forward(x, head, (64, 128))
        assert out.dims == (1, 19, 64, 128)

    def test_matches_composed_ops(self, rng):
        head = make_head(rng, 8, 16, classes=4)
        x = rand_tensor(rng, (1, 8, 4, 8))
        h = relu(batchnorm(conv2d(x, head.conv3.spec, head.conv3.w), head.conv3.bn))
        expect = resize_bilinear(conv2d(h, head.cls_spec, head.cls_w), (32, 64))
        assert max_abs_diff(head_forward(x, head, (32, 64)), expect) == 0.0

    def test_train_deploy_equivalence(self, rng):
        head = make_head(rng, 8, 16, classes=4)
        x = rand_tensor(rng, (1, 8, 4, 8))
        assert max_abs_diff(
            head_forward(x, head, (32, 64)),
            head_forward(x, fuse_head(head), (32, 64)),
        ) <= 1e-4


class TestDeployStructure:
    def test_no_bn_after_fusing(self, rng):
        assert contains_bn(make_bb(rng, 4, 8, 2))
        assert not contains_bn(fuse_bb(make_bb(rng, 4, 8, 2)))
        assert contains_bn(make_fusion(rng, 16, 8, 4))
        assert not contains_bn(fuse_fusion(make_fusion(rng, 16, 8, 4)))
        p = make_rppm(rng, 16, 4, 8)
        assert contains_bn(p) and not contains_bn(fuse_rppm(p))
        h = make_head(rng, 8, 16, 4)
        assert contains_bn(h) and not contains_bn(fuse_head(h))

    def test_fuse_unit_idempotent(self, rng):
        unit = rand_convbn(rng, ConvSpec(4, 4, kernel=3, padding=1))
        once = fuse_unit(unit)
        assert fuse_unit(once) is once
