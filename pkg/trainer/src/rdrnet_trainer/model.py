"""Torch mirror of the inference engine's micro network.

Every numeric convention is locked to the engine's documented choices:
bias-free convs followed by BatchNorm2d (eps 1e-5), bilinear interpolation
with align_corners=False (half-pixel centers), average pooling that divides
by the full window (count_include_pad=True), blocks that feed a fusion
point emit their pre-ReLU sum, the pyramid module contains no activations,
and input images normalize as (v/255 - 0.5) / 0.5.

``export_weights`` walks the modules in the engine's canonical naming
grammar so exported checkpoints drop straight into its weight-store slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class EngineNetDef:
    """The subset of the engine's .cfg schema the trainer needs."""

    variant: str
    stem_widths: tuple
    stem_blocks: tuple
    semantic_widths: tuple
    semantic_blocks: tuple
    detail_widths: tuple
    detail_blocks: tuple
    head_channels: int
    num_classes: int
    aux_head: bool = True


def parse_engine_config(path) -> EngineNetDef:
    """Minimal reader for the engine's key = value / [section] format."""
    section = ""
    values = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                continue
            key, _, val = line.partition("=")
            values[(section, key.strip())] = val.strip()

    def ints3(sec, key):
        return tuple(int(p) for chunk in values[(sec, key)].split(",")
                     for p in chunk.split())

    return EngineNetDef(
        variant=values[("", "variant")],
        stem_widths=ints3("stem", "widths"),
        stem_blocks=ints3("stem", "blocks"),
        semantic_widths=ints3("semantic", "widths"),
        semantic_blocks=ints3("semantic", "blocks"),
        detail_widths=ints3("detail", "widths"),
        detail_blocks=ints3("detail", "blocks"),
        head_channels=int(values[("", "head_channels")]),
        num_classes=int(values[("", "num_classes")]),
        aux_head=values.get(("", "aux_head"), "true").lower()
        in ("true", "yes", "on", "1"),
    )


def normalize_images(images_u8: np.ndarray) -> torch.Tensor:
    """(n, h, w, 3) uint8 -> normalized float32 NCHW tensor."""
    x = images_u8.astype(np.float32) / 255.0
    x = (x - 0.5) / 0.5
    return torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))


def conv_bn(cin, cout, k, stride=1):
    pad = 1 if k == 3 else 0
    return nn.Conv2d(cin, cout, k, stride, pad, bias=False), nn.BatchNorm2d(cout)


class RBlock(nn.Module):
    """Three training paths: 3x3+BN, two stacked 1x1+BN, identity."""

    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv3, self.bn3 = conv_bn(cin, cout, 3, stride)
        self.conv1a, self.bn1a = conv_bn(cin, cout, 1, stride)
        self.conv1b, self.bn1b = conv_bn(cout, cout, 1, 1)
        self.has_residual = stride == 1 and cin == cout

    def forward(self, x, apply_relu=True):
        y = self.bn3(self.conv3(x))
        y = y + self.bn1b(self.conv1b(self.bn1a(self.conv1a(x))))
        if self.has_residual:
            y = y + x
        return F.relu(y) if apply_relu else y


class Bottleneck(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        mid = cout // 2
        self.reduce_conv, self.reduce_bn = conv_bn(cin, mid, 1)
        self.mid_conv, self.mid_bn = conv_bn(mid, mid, 3, stride)
        self.expand_conv, self.expand_bn = conv_bn(mid, cout, 1)
        self.project = None
        if stride != 1 or cin != cout:
            pc, pb = conv_bn(cin, cout, 1, stride)
            self.project = nn.ModuleList([pc, pb])

    def forward(self, x):
        h = F.relu(self.reduce_bn(self.reduce_conv(x)))
        h = F.relu(self.mid_bn(self.mid_conv(h)))
        h = self.expand_bn(self.expand_conv(h))
        r = self.project[1](self.project[0](x)) if self.project is not None else x
        return F.relu(h + r)


class Fusion(nn.Module):
    """Bilateral exchange; inputs are pre-ReLU branch sums."""

    def __init__(self, sem_c, det_c, stage):
        super().__init__()
        self.s2d_conv, self.s2d_bn = conv_bn(sem_c, det_c, 1)
        if stage == 4:
            d0 = conv_bn(det_c, sem_c, 3, 2)
            self.d2s = nn.ModuleList([*d0])
            self.two_step = False
        else:
            mid = sem_c // 2
            d0 = conv_bn(det_c, mid, 3, 2)
            d1 = conv_bn(mid, sem_c, 3, 2)
            self.d2s = nn.ModuleList([*d0, *d1])
            self.two_step = True

    def forward(self, xs, xd):
        t = self.d2s[1](self.d2s[0](xd))
        if self.two_step:
            t = self.d2s[3](self.d2s[2](F.relu(t)))
        xs_out = F.relu(xs + t)
        u = self.s2d_bn(self.s2d_conv(xs))
        u = F.interpolate(u, size=xd.shape[2:], mode="bilinear",
                          align_corners=False)
        xd_out = F.relu(xd + u)
        return xs_out, xd_out


class PyramidPool(nn.Module):
    """Multi-scale context with a reparameterizable grouped pair; affine
    (no activations), exactly like the engine's module."""

    POOLS = ((5, 2, 2), (9, 4, 4), (17, 8, 8), None)

    def __init__(self, cin, branch, cout):
        super().__init__()
        self.scale0_conv, self.scale0_bn = conv_bn(cin, branch, 1)
        self.pool_convs = nn.ModuleList()
        for _ in self.POOLS:
            self.pool_convs.extend(conv_bn(cin, branch, 1))
        wide = 4 * branch
        self.grouped_a = nn.Conv2d(wide, wide, 3, 1, 1, groups=4, bias=False)
        self.grouped_a_bn = nn.BatchNorm2d(wide)
        self.grouped_b = nn.Conv2d(wide, wide, 3, 1, 1, groups=4, bias=False)
        self.grouped_b_bn = nn.BatchNorm2d(wide)
        self.compression_conv, self.compression_bn = conv_bn(5 * branch, cout, 1)
        self.shortcut_conv, self.shortcut_bn = conv_bn(cin, cout, 1)

    def forward(self, x):
        s0 = self.scale0_bn(self.scale0_conv(x))
        ys = []
        for i, pool in enumerate(self.POOLS):
            if pool is None:
                p = x.mean(dim=(2, 3), keepdim=True)
            else:
                k, s, pad = pool
                p = F.avg_pool2d(x, k, s, pad, count_include_pad=True)
            b = self.pool_convs[2 * i + 1](self.pool_convs[2 * i](p))
            b = F.interpolate(b, size=s0.shape[2:], mode="bilinear",
                              align_corners=False)
            ys.append(b + s0)
        cat = torch.cat(ys, dim=1)
        g = self.grouped_a_bn(self.grouped_a(cat)) + self.grouped_b_bn(
            self.grouped_b(cat))
        comp = self.compression_bn(
            self.compression_conv(torch.cat([s0, g], dim=1)))
        return comp + self.shortcut_bn(self.shortcut_conv(x))


class Head(nn.Module):
    def __init__(self, cin, oc, classes):
        super().__init__()
        self.conv3, self.bn = conv_bn(cin, oc, 3)
        self.classifier = nn.Conv2d(oc, classes, 1, bias=True)

    def forward(self, x, out_hw):
        h = F.relu(self.bn(self.conv3(x)))
        logits = self.classifier(h)
        return F.interpolate(logits, size=out_hw, mode="bilinear",
                             align_corners=False)


def _stage(cin, cout, lead_stride, count):
    blocks = [RBlock(cin, cout, lead_stride)]
    blocks.extend(RBlock(cout, cout, 1) for _ in range(count - 1))
    return nn.ModuleList(blocks)


class DualResolutionNet(nn.Module):
    def __init__(self, cfg: EngineNetDef):
        super().__init__()
        self.cfg = cfg
        w1, w2, w3 = cfg.stem_widths
        sw4, sw5, sw6 = cfg.semantic_widths
        dw4, dw5, dw6 = cfg.detail_widths
        self.stage1 = _stage(3, w1, 2, cfg.stem_blocks[0])
        self.stage2 = _stage(w1, w2, 2, cfg.stem_blocks[1])
        self.stage3 = _stage(w2, w3, 2, cfg.stem_blocks[2])
        self.stage4_semantic = _stage(w3, sw4, 2, cfg.semantic_blocks[0])
        self.stage4_detail = _stage(w3, dw4, 1, cfg.detail_blocks[0])
        self.fusion1 = Fusion(sw4, dw4, stage=4)
        self.stage5_semantic = _stage(sw4, sw5, 2, cfg.semantic_blocks[1])
        self.stage5_detail = _stage(dw4, dw5, 1, cfg.detail_blocks[1])
        self.fusion2 = Fusion(sw5, dw5, stage=5)
        self.stage6_semantic = nn.ModuleList(
            [Bottleneck(sw5 if i == 0 else sw6, sw6, 2 if i == 0 else 1)
             for i in range(cfg.semantic_blocks[2])])
        self.stage6_detail = nn.ModuleList(
            [Bottleneck(dw5 if i == 0 else dw6, dw6, 1)
             for i in range(cfg.detail_blocks[2])])
        self.rppm = PyramidPool(sw6, sw6 // 4, dw6)
        self.head = Head(dw6, cfg.head_channels, cfg.num_classes)
        self.aux_head = (Head(dw4, cfg.head_channels, cfg.num_classes)
                         if cfg.aux_head else None)

    @staticmethod
    def _run_stage(x, blocks, pre_relu_tail=False):
        for i, blk in enumerate(blocks):
            last = i == len(blocks) - 1
            x = blk(x, apply_relu=not (last and pre_relu_tail))
        return x

    def forward(self, x, want_aux=False):
        in_hw = x.shape[2:]
        x = self._run_stage(x, self.stage1)
        x = self._run_stage(x, self.stage2)
        x = self._run_stage(x, self.stage3)
        xs = self._run_stage(x, self.stage4_semantic, pre_relu_tail=True)
        xd = self._run_stage(x, self.stage4_detail, pre_relu_tail=True)
        xs, xd = self.fusion1(xs, xd)
        aux_feat = xd
        xs = self._run_stage(xs, self.stage5_semantic, pre_relu_tail=True)
        xd = self._run_stage(xd, self.stage5_detail, pre_relu_tail=True)
        xs, xd = self.fusion2(xs, xd)
        for bb in self.stage6_semantic:
            xs = bb(xs)
        for bb in self.stage6_detail:
            xd = bb(xd)
        ctx = F.interpolate(self.rppm(xs), size=xd.shape[2:], mode="bilinear",
                            align_corners=False)
        logits = self.head(xd + ctx, in_hw)
        if want_aux:
            return logits, self.aux_head(aux_feat, in_hw)
        return logits


# ---------------------------------------------------------------------------
# canonical-name export
# ---------------------------------------------------------------------------

def _emit_bn(out, name, bn: nn.BatchNorm2d):
    out.append((f"{name}.gamma", bn.weight.detach().numpy()))
    out.append((f"{name}.beta", bn.bias.detach().numpy()))
    out.append((f"{name}.mean", bn.running_mean.detach().numpy()))
    out.append((f"{name}.var", bn.running_var.detach().numpy()))
    out.append((f"{name}.eps", np.array([bn.eps], np.float32)))


def _emit_rb(out, name, blk: RBlock):
    out.append((f"{name}.conv3.weight", blk.conv3.weight.detach().numpy()))
    _emit_bn(out, f"{name}.bn3", blk.bn3)
    out.append((f"{name}.conv1a.weight", blk.conv1a.weight.detach().numpy()))
    _emit_bn(out, f"{name}.bn1a", blk.bn1a)
    out.append((f"{name}.conv1b.weight", blk.conv1b.weight.detach().numpy()))
    _emit_bn(out, f"{name}.bn1b", blk.bn1b)


def _emit_unit(out, name, conv, bn):
    out.append((f"{name}.conv.weight", conv.weight.detach().numpy()))
    _emit_bn(out, f"{name}.bn", bn)


def _emit_bb(out, name, bb: Bottleneck):
    _emit_unit(out, f"{name}.reduce", bb.reduce_conv, bb.reduce_bn)
    _emit_unit(out, f"{name}.mid", bb.mid_conv, bb.mid_bn)
    _emit_unit(out, f"{name}.expand", bb.expand_conv, bb.expand_bn)
    if bb.project is not None:
        _emit_unit(out, f"{name}.project", bb.project[0], bb.project[1])


def _emit_head(out, name, head: Head):
    _emit_unit(out, f"{name}.conv3", head.conv3, head.bn)
    out.append((f"{name}.classifier.weight",
                head.classifier.weight.detach().numpy()))
    out.append((f"{name}.classifier.bias",
                head.classifier.bias.detach().numpy()))


def export_weights(net: DualResolutionNet):
    """(name, float32 array) pairs in the engine's naming grammar."""
    out = []
    stages = [
        ("stage1", net.stage1), ("stage2", net.stage2), ("stage3", net.stage3),
        ("stage4.semantic", net.stage4_semantic),
        ("stage4.detail", net.stage4_detail),
        ("stage5.semantic", net.stage5_semantic),
        ("stage5.detail", net.stage5_detail),
    ]
    for prefix, blocks in stages:
        for i, blk in enumerate(blocks):
            _emit_rb(out, f"{prefix}.block{i}", blk)
    for fname, fus in (("fusion1", net.fusion1), ("fusion2", net.fusion2)):
        _emit_unit(out, f"{fname}.s2d", fus.s2d_conv, fus.s2d_bn)
        _emit_unit(out, f"{fname}.d2s0", fus.d2s[0], fus.d2s[1])
        if fus.two_step:
            _emit_unit(out, f"{fname}.d2s1", fus.d2s[2], fus.d2s[3])
    for prefix, blocks in (("stage6.semantic", net.stage6_semantic),
                           ("stage6.detail", net.stage6_detail)):
        for i, bb in enumerate(blocks):
            _emit_bb(out, f"{prefix}.block{i}", bb)
    p = net.rppm
    _emit_unit(out, "rppm.scale0", p.scale0_conv, p.scale0_bn)
    for i in range(len(p.POOLS)):
        _emit_unit(out, f"rppm.pool{i}", p.pool_convs[2 * i],
                   p.pool_convs[2 * i + 1])
    out.append(("rppm.grouped_a.conv.weight", p.grouped_a.weight.detach().numpy()))
    _emit_bn(out, "rppm.grouped_a.bn", p.grouped_a_bn)
    out.append(("rppm.grouped_b.conv.weight", p.grouped_b.weight.detach().numpy()))
    _emit_bn(out, "rppm.grouped_b.bn", p.grouped_b_bn)
    _emit_unit(out, "rppm.compression", p.compression_conv, p.compression_bn)
    _emit_unit(out, "rppm.shortcut", p.shortcut_conv, p.shortcut_bn)
    _emit_head(out, "head", net.head)
    if net.aux_head is not None:
        _emit_head(out, "aux_head", net.aux_head)
    return [(name, np.ascontiguousarray(arr, np.float32)) for name, arr in out]
