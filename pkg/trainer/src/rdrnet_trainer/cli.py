"""Trainer command line: generate-data, train, export-forward."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np


def build_parser():
    parser = argparse.ArgumentParser(prog="rdrnet-trainer")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("generate-data", help="write the synthetic scene dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=20240601)
    p.add_argument("--train-size", type=int, default=512)
    p.add_argument("--val-size", type=int, default=128)

    p = subs.add_parser("train", help="train the micro variant")
    p.add_argument("--config", required=True, help="engine .cfg file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)

    p = subs.add_parser("export-forward",
                        help="store eval-mode logits for pinned val samples")
    p.add_argument("--config", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--out", required=True)
    return parser


def cmd_generate(args):
    from .data import SyntheticSceneSpec, generate_dataset

    spec = SyntheticSceneSpec(seed=args.seed, train_size=args.train_size,
                              val_size=args.val_size)
    manifest = generate_dataset(spec, args.out)
    print(f"wrote {manifest['splits']} to {args.out}")
    return 0


def cmd_train(args):
    from .model import parse_engine_config
    from .train import train_micro

    cfg = parse_engine_config(args.config)
    _, history = train_micro(cfg, args.dataset, args.out, epochs=args.epochs,
                             base_lr=args.lr, batch_size=args.batch_size,
                             seed=args.seed)
    final = history[-1]
    print(f"epoch {final['epoch']}: total {final['total']:.4f} "
          f"val mIoU {final['val_miou']:.4f}")
    print(f"wrote {os.path.join(args.out, 'weights.rdrw')}")
    return 0


def cmd_export_forward(args):
    import torch

    from .model import DualResolutionNet, parse_engine_config
    from .rdrw import read_store
    from .train import export_reference_forward, load_split

    cfg = parse_engine_config(args.config)
    net = DualResolutionNet(cfg)
    stored = read_store(args.weights)
    with torch.no_grad():
        from .model import export_weights

        for name, arr in export_weights(net):
            if name.endswith(".eps"):
                continue
            if name not in stored:
                raise SystemExit(f"weights file is missing {name!r}")
        _load_into(net, stored)
    images, _ = load_split(args.dataset, "val")
    export_reference_forward(net, images[: args.count], args.out)
    print(f"wrote logits for {min(args.count, len(images))} samples to {args.out}")
    return 0


def _load_into(net, stored):
    """Copy a stored training-structure checkpoint back into the modules."""
    import torch

    from .model import export_weights

    index = {}
    for name, _ in export_weights(net):
        index[name] = None
    # walk again, this time assigning; export_weights yields detached copies,
    # so map names to the live parameters through the same walk order
    live = _live_slots(net)
    for name in index:
        if name.endswith(".eps"):
            continue
        tensor = torch.from_numpy(stored[name].copy())
        target = live[name]
        with torch.no_grad():
            target.copy_(tensor)


def _live_slots(net):
    """name -> live tensor, mirroring export_weights' naming."""
    import torch.nn as nn

    slots = {}

    def bn(name, module):
        slots[f"{name}.gamma"] = module.weight
        slots[f"{name}.beta"] = module.bias
        slots[f"{name}.mean"] = module.running_mean
        slots[f"{name}.var"] = module.running_var

    def rb(name, blk):
        slots[f"{name}.conv3.weight"] = blk.conv3.weight
        bn(f"{name}.bn3", blk.bn3)
        slots[f"{name}.conv1a.weight"] = blk.conv1a.weight
        bn(f"{name}.bn1a", blk.bn1a)
        slots[f"{name}.conv1b.weight"] = blk.conv1b.weight
        bn(f"{name}.bn1b", blk.bn1b)

    def unit(name, conv, norm):
        slots[f"{name}.conv.weight"] = conv.weight
        bn(f"{name}.bn", norm)

    for prefix, blocks in (
        ("stage1", net.stage1), ("stage2", net.stage2), ("stage3", net.stage3),
        ("stage4.semantic", net.stage4_semantic),
        ("stage4.detail", net.stage4_detail),
        ("stage5.semantic", net.stage5_semantic),
        ("stage5.detail", net.stage5_detail),
    ):
        for i, blk in enumerate(blocks):
            rb(f"{prefix}.block{i}", blk)
    for fname, fus in (("fusion1", net.fusion1), ("fusion2", net.fusion2)):
        unit(f"{fname}.s2d", fus.s2d_conv, fus.s2d_bn)
        unit(f"{fname}.d2s0", fus.d2s[0], fus.d2s[1])
        if fus.two_step:
            unit(f"{fname}.d2s1", fus.d2s[2], fus.d2s[3])
    for prefix, blocks in (("stage6.semantic", net.stage6_semantic),
                           ("stage6.detail", net.stage6_detail)):
        for i, bb in enumerate(blocks):
            unit(f"{prefix}.block{i}.reduce", bb.reduce_conv, bb.reduce_bn)
            unit(f"{prefix}.block{i}.mid", bb.mid_conv, bb.mid_bn)
            unit(f"{prefix}.block{i}.expand", bb.expand_conv, bb.expand_bn)
            if bb.project is not None:
                unit(f"{prefix}.block{i}.project", bb.project[0], bb.project[1])
    p = net.rppm
    unit("rppm.scale0", p.scale0_conv, p.scale0_bn)
    for i in range(len(p.POOLS)):
        unit(f"rppm.pool{i}", p.pool_convs[2 * i], p.pool_convs[2 * i + 1])
    slots["rppm.grouped_a.conv.weight"] = p.grouped_a.weight
    bn("rppm.grouped_a.bn", p.grouped_a_bn)
    slots["rppm.grouped_b.conv.weight"] = p.grouped_b.weight
    bn("rppm.grouped_b.bn", p.grouped_b_bn)
    unit("rppm.compression", p.compression_conv, p.compression_bn)
    unit("rppm.shortcut", p.shortcut_conv, p.shortcut_bn)
    for hname, head in (("head", net.head), ("aux_head", net.aux_head)):
        if head is None:
            continue
        unit(f"{hname}.conv3", head.conv3, head.bn)
        slots[f"{hname}.classifier.weight"] = head.classifier.weight
        slots[f"{hname}.classifier.bias"] = head.classifier.bias
    return slots


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return {"generate-data": cmd_generate, "train": cmd_train,
            "export-forward": cmd_export_forward}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
