"""Command-line surface.

Subcommands: verify, bench, infer, count, reparam, eval.
Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.
``RDRNET_THREADS`` sets the default BLAS thread budget; ``--threads``
overrides it per invocation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bench import run_bench
from .config import resolve_config
from .errors import RdrnetError
from .imgio import (
    colorize,
    default_palette,
    image_to_input,
    load_palette,
    read_image,
    read_pgm,
    write_image,
    write_pgm,
)
from .metrics import ConfusionMatrix, miou, pixel_accuracy
from .network import (
    INPUT_DIVISOR,
    build,
    count_flops,
    count_params,
    forward,
    reparameterize_network,
    stage_shapes,
)
from .store import WeightStore, convert_checkpoint, load, save, store_from_network
from .verify import verify_equivalence

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2


def _parse_hw(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected HxW (e.g. 256x512), got {text!r}"
        ) from None


def _add_common(sub, *, weights=False):
    sub.add_argument("--config", required=True,
                     help="config file path or shipped variant name")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--precision", choices=("f32", "f64"), default="f32")
    sub.add_argument("--threads", type=int, default=None,
                     help="BLAS thread budget (default: RDRNET_THREADS or library default)")
    if weights:
        sub.add_argument("--weights", required=True, help="weight store path")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rdrnet",
        description="Dual-resolution segmentation: build, rewrite, verify, "
                    "benchmark, and run the deployment engine.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("verify", help="prove train/deploy forward equivalence")
    _add_common(p)
    p.add_argument("--trials", type=int, default=8,
                   help="number of random inputs to compare")
    p.add_argument("--input-hw", type=_parse_hw, default=(64, 128))
    p.add_argument("--corrupt-block", default=None, help=argparse.SUPPRESS)

    p = subs.add_parser("bench", help="wall-time distribution of forward passes")
    _add_common(p)
    p.add_argument("--structure", choices=("train", "deploy", "both"), default="both")
    p.add_argument("--input-hw", type=_parse_hw, default=(256, 512))
    p.add_argument("--runs", type=int, default=22,
                   help="total runs; the first 2 are warmup and unrecorded")

    p = subs.add_parser("infer", help="segment one image with stored weights")
    _add_common(p, weights=True)
    p.add_argument("--image", required=True, help="input PNG or binary PPM")
    p.add_argument("--seg-out", required=True, help="class-index map output (PGM)")
    p.add_argument("--overlay-out", default=None,
                   help="palette overlay output (PNG or PPM)")
    p.add_argument("--palette", default=None, help="text palette (r g b per line)")
    p.add_argument("--dump-logits", default=None,
                   help="also write raw logits as a weight-store file")

    p = subs.add_parser("count", help="parameter and operation accounting")
    _add_common(p)
    p.add_argument("--input-hw", type=_parse_hw, default=(1024, 2048))

    p = subs.add_parser("reparam", help="convert a training checkpoint to deploy form")
    _add_common(p)
    p.add_argument("--in-weights", required=True)
    p.add_argument("--out-weights", required=True)

    p = subs.add_parser("eval", help="evaluate stored weights on an image/label directory")
    _add_common(p, weights=True)
    p.add_argument("--dataset", required=True,
                   help="directory of img_*.ppm|png with matching lbl_*.pgm")
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_verify(args):
    cfg = resolve_config(args.config)
    report = verify_equivalence(
        cfg, seed=args.seed, dtype=args.precision, trials=args.trials,
        input_hw=args.input_hw, corrupt_block=args.corrupt_block,
    )
    for line in report.lines():
        print(line)
    if report.passed:
        print("verify: PASS")
        return EXIT_OK
    print(f"verify: FAIL ({', '.join(report.failing_blocks)})")
    return EXIT_VERIFY_FAILED


def cmd_bench(args):
    cfg = resolve_config(args.config)
    structures = ("train", "deploy") if args.structure == "both" else (args.structure,)
    reports = [
        run_bench(cfg, structure, args.input_hw, args.runs,
                  threads=args.threads, seed=args.seed, dtype=args.precision)
        for structure in structures
    ]
    for rep in reports:
        for line in rep.lines():
            print(line)
    for rep in reports:
        print(rep.machine_row())
    if len(reports) == 2:
        train_med, deploy_med = reports[0].median, reports[1].median
        print(f"speedup: deploy is {train_med / deploy_med:.2f}x the training "
              f"structure's speed")
    return EXIT_OK


def _check_input_dims(h, w):
    if h % INPUT_DIVISOR or w % INPUT_DIVISOR:
        raise RdrnetError(
            f"image is {h}x{w}; spatial dims must be multiples of {INPUT_DIVISOR}"
        )


def cmd_infer(args):
    cfg = resolve_config(args.config)
    net = build(cfg, load(args.weights), dtype=args.precision)
    rgb = read_image(args.image)
    _check_input_dims(rgb.shape[0], rgb.shape[1])
    x = image_to_input(rgb, dtype=args.precision)
    logits = forward(net, x)
    class_map = np.argmax(logits.data[0], axis=0).astype(np.uint8)
    write_pgm(args.seg_out, class_map)
    palette = (load_palette(args.palette, cfg.num_classes) if args.palette
               else default_palette(cfg.num_classes))
    overlay_path = args.overlay_out
    if overlay_path is None:
        base, _ = os.path.splitext(args.seg_out)
        overlay_path = base + "_overlay.png"
    write_image(overlay_path, colorize(class_map, palette))
    if args.dump_logits:
        out = WeightStore.from_pairs([("logits", logits.data)])
        save(out, args.dump_logits)
    print(f"wrote {args.seg_out} and {overlay_path} "
          f"({class_map.shape[0]}x{class_map.shape[1]}, structure={net.structure})")
    return EXIT_OK


def cmd_count(args):
    cfg = resolve_config(args.config)
    train_net = build(cfg, args.seed, dtype=args.precision)
    deploy_net = reparameterize_network(train_net)
    h, w = args.input_hw
    rep_train = count_flops(train_net, (h, w))
    rep_deploy = count_flops(deploy_net, (h, w))

    print(f"variant: {cfg.variant}   input: {h}x{w}")
    print(f"{'':28s}{'train':>16s}{'deploy':>16s}")
    rows = [
        ("parameters (with aux)", count_params(train_net, include_aux=True), None),
        ("parameters", count_params(train_net, include_aux=False),
         count_params(deploy_net)),
        ("conv MACs", rep_train.conv_macs, rep_deploy.conv_macs),
        ("elementwise ops", rep_train.elementwise, rep_deploy.elementwise),
        ("FLOPs (2*MAC + elementwise)", rep_train.flops, rep_deploy.flops),
    ]
    for label, tval, dval in rows:
        dtxt = "-" if dval is None else f"{dval:>16,d}"
        print(f"{label:28s}{tval:>16,d}{dtxt:>17s}")
    print(f"\nheadline figures (deploy structure, published convention):")
    print(f"  params  {count_params(deploy_net) / 1e6:7.2f} M")
    print(f"  GFLOPs  {rep_deploy.table_gflops:7.1f}  (MAC count; the doubled "
          f"figure is {rep_deploy.flops / 1e9:.1f} G)")
    print("\nconventions: deploy form folds every BN and drops the auxiliary "
          "head;\nthe training column includes BN affine factors and both 1x1-"
          "path convolutions;\nthe auxiliary head only ever contributes to the "
          "'with aux' row.")
    shapes = stage_shapes(cfg, (h, w))
    print("\nstage output dims (semantic | detail):")
    for stage in ("stage1", "stage2", "stage3", "stage4", "stage5", "stage6"):
        val = shapes[stage]
        if isinstance(val[0], tuple):
            print(f"  {stage}: {val[0][0]}x{val[0][1]} | {val[1][0]}x{val[1][1]}")
        else:
            print(f"  {stage}: {val[0]}x{val[1]}")
    return EXIT_OK


def cmd_reparam(args):
    cfg = resolve_config(args.config)
    deploy_store = convert_checkpoint(load(args.in_weights), cfg)
    save(deploy_store, args.out_weights)
    print(f"wrote {args.out_weights} ({len(deploy_store)} tensors)")
    return EXIT_OK


def _dataset_pairs(root):
    images = sorted(
        f for f in os.listdir(root)
        if f.startswith("img_") and f.lower().endswith((".ppm", ".png"))
    )
    pairs = []
    for img in images:
        stem = os.path.splitext(img)[0][len("img_"):]
        label = f"lbl_{stem}.pgm"
        if not os.path.exists(os.path.join(root, label)):
            raise RdrnetError(f"no label file {label} for image {img}")
        pairs.append((os.path.join(root, img), os.path.join(root, label)))
    if not pairs:
        raise RdrnetError(f"no img_*.ppm|png files found in {root}")
    return pairs


def cmd_eval(args):
    cfg = resolve_config(args.config)
    net = build(cfg, load(args.weights), dtype=args.precision)
    cm = ConfusionMatrix(cfg.num_classes)
    pairs = _dataset_pairs(args.dataset)
    for img_path, lbl_path in pairs:
        rgb = read_image(img_path)
        _check_input_dims(rgb.shape[0], rgb.shape[1])
        logits = forward(net, image_to_input(rgb, dtype=args.precision))
        pred = np.argmax(logits.data[0], axis=0)
        cm.add(pred, read_pgm(lbl_path).astype(np.int64))
    result = {
        "samples": len(pairs),
        "miou": round(miou(cm), 6),
        "pixel_accuracy": round(pixel_accuracy(cm), 6),
        "structure": net.structure,
    }
    print(f"evaluated {result['samples']} samples: "
          f"mIoU {result['miou']:.4f}, pixel accuracy {result['pixel_accuracy']:.4f}")
    print("EVAL_JSON " + json.dumps(result, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "verify": cmd_verify,
    "bench": cmd_bench,
    "infer": cmd_infer,
    "count": cmd_count,
    "reparam": cmd_reparam,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads is None:
        env = os.environ.get("RDRNET_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                print(f"error: RDRNET_THREADS={env!r} is not an integer",
                      file=sys.stderr)
                return EXIT_USAGE
            args.threads = threads
    ctx = None
    if threads is not None and args.command != "bench":
        from threadpoolctl import threadpool_limits

        ctx = threadpool_limits(limits=threads)
    try:
        return _COMMANDS[args.command](args)
    except RdrnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        if ctx is not None:
            ctx.unregister()


if __name__ == "__main__":
    sys.exit(main())
