"""Equivalence verification: builds a seeded training-form network, rewrites
it, and measures per-block plus end-to-end deviations on random inputs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import (
    bb_forward,
    bilateral_fuse,
    head_forward,
    rb_forward_deploy,
    rppm_forward,
)
from .errors import ContractError
from .network import NetworkInstance, build, forward, reparameterize_network
from .reparam import FusedConv
from .tensor import ConvWeights, Tensor4, np_dtype

END_TO_END_TOL = {"f32": 1e-3, "f64": 1e-8}


@dataclass
class VerifyReport:
    variant: str
    dtype: str
    trials: int
    input_hw: tuple
    tolerance: float
    block_diffs: dict = field(default_factory=dict)
    end_to_end: float = 0.0

    @property
    def worst_block(self):
        if not self.block_diffs:
            return None, 0.0
        name = max(self.block_diffs, key=self.block_diffs.get)
        return name, self.block_diffs[name]

    @property
    def passed(self):
        return (
            self.end_to_end <= self.tolerance
            and all(d <= self.tolerance for d in self.block_diffs.values())
        )

    @property
    def failing_blocks(self):
        bad = [n for n, d in self.block_diffs.items() if d > self.tolerance]
        if self.end_to_end > self.tolerance:
            bad.append("end_to_end")
        return bad

    def lines(self):
        out = [
            f"variant={self.variant} dtype={self.dtype} trials={self.trials} "
            f"input={self.input_hw[0]}x{self.input_hw[1]} tolerance={self.tolerance:g}"
        ]
        for name, diff in self.block_diffs.items():
            marker = "ok  " if diff <= self.tolerance else "FAIL"
            out.append(f"  {marker} {name:<28s} max_abs_diff={diff:.3e}")
        marker = "ok  " if self.end_to_end <= self.tolerance else "FAIL"
        out.append(f"  {marker} {'end_to_end':<28s} max_abs_diff={self.end_to_end:.3e}")
        return out


def corrupt_fused_tensor(net: NetworkInstance, block_name: str, delta=1.0):
    """Test hook: additively perturb one deployment block's bias.

    Returns a new instance; used to prove the verifier localizes faults.
    """
    if net.structure != "deploy":
        raise ContractError("corruption hook targets deployment networks")
    import dataclasses

    def bump(fused: FusedConv) -> FusedConv:
        bias = fused.weights.bias.copy()
        bias[0] += bias.dtype.type(delta)
        return FusedConv(fused.spec, ConvWeights(fused.weights.weight, bias))

    for fname in ("stage1", "stage2", "stage3", "stage4_semantic", "stage4_detail",
                  "stage5_semantic", "stage5_detail"):
        blocks = getattr(net, fname)
        prefix = fname.replace("_semantic", ".semantic").replace("_detail", ".detail")
        for i in range(len(blocks)):
            if f"{prefix}.block{i}" == block_name:
                new_blocks = list(blocks)
                new_blocks[i] = bump(blocks[i])
                return dataclasses.replace(net, **{fname: tuple(new_blocks)})
    raise ContractError(f"no reparameterized block named {block_name!r}")


def _block_diff(a: Tensor4, b: Tensor4) -> float:
    return float(np.max(np.abs(a.data - b.data)))


def _compare_blocks(train_net, deploy_net, trace, diffs):
    """Re-run each deployment block on the training trace's inputs."""
    pairs = [
        ("stage1", train_net.stage1, deploy_net.stage1, "stage1"),
        ("stage2", train_net.stage2, deploy_net.stage2, "stage2"),
        ("stage3", train_net.stage3, deploy_net.stage3, "stage3"),
        ("stage4.semantic", train_net.stage4_semantic, deploy_net.stage4_semantic, None),
        ("stage4.detail", train_net.stage4_detail, deploy_net.stage4_detail, None),
        ("stage5.semantic", train_net.stage5_semantic, deploy_net.stage5_semantic, None),
        ("stage5.detail", train_net.stage5_detail, deploy_net.stage5_detail, None),
    ]
    for prefix, train_blocks, deploy_blocks, _ in pairs:
        for i, fused in enumerate(deploy_blocks):
            name = f"{prefix}.block{i}"
            if name not in trace:
                continue
            x_in, y_train = trace[name]
            tail = i == len(train_blocks) - 1 and prefix.startswith(
                ("stage4", "stage5")
            )
            y_dep = rb_forward_deploy(x_in, fused, apply_relu=not tail)
            diffs[name] = max(diffs.get(name, 0.0), _block_diff(y_train, y_dep))
    for prefix, deploy_blocks in (("stage6.semantic", deploy_net.stage6_semantic),
                                  ("stage6.detail", deploy_net.stage6_detail)):
        for i, bb in enumerate(deploy_blocks):
            name = f"{prefix}.block{i}"
            if name not in trace:
                continue
            x_in, y_train = trace[name]
            diffs[name] = max(diffs.get(name, 0.0),
                              _block_diff(y_train, bb_forward(x_in, bb)))
    for fname, fus in (("fusion1", deploy_net.fusion1), ("fusion2", deploy_net.fusion2)):
        if fus is None or fname not in trace:
            continue
        (xs_pre, xd_pre), (ys_train, yd_train) = trace[fname]
        ys_dep, yd_dep = bilateral_fuse(xs_pre, xd_pre, fus)
        diffs[fname] = max(
            diffs.get(fname, 0.0),
            max(_block_diff(ys_train, ys_dep), _block_diff(yd_train, yd_dep)),
        )
    if deploy_net.rppm is not None and "rppm" in trace:
        x_in, y_train = trace["rppm"]
        y_dep = rppm_forward(x_in, deploy_net.rppm, "deploy")
        diffs["rppm"] = max(diffs.get("rppm", 0.0), _block_diff(y_train, y_dep))
    if "head" in trace:
        x_in, y_train = trace["head"]
        y_dep = head_forward(x_in, deploy_net.head, (y_train.h, y_train.w))
        diffs["head"] = max(diffs.get("head", 0.0), _block_diff(y_train, y_dep))


def verify_equivalence(
    cfg,
    seed=0,
    dtype="f32",
    trials=8,
    input_hw=(64, 128),
    tolerance=None,
    corrupt_block=None,
    batch=4,
) -> VerifyReport:
    """Build, rewrite, compare.  ``trials`` counts independent random inputs;
    they are evaluated in batches to amortize per-op overhead."""
    if tolerance is None:
        tolerance = END_TO_END_TOL[dtype]
    train_net = build(cfg, seed, dtype=dtype)
    deploy_net = reparameterize_network(train_net)
    if corrupt_block is not None:
        deploy_net = corrupt_fused_tensor(deploy_net, corrupt_block)

    report = VerifyReport(cfg.variant, dtype, trials, tuple(input_hw), tolerance)
    rng = np.random.default_rng(seed + 1)
    dt = np_dtype(dtype)
    remaining = trials
    first = True
    while remaining > 0:
        # the traced batch stays small: per-block traces hold every
        # intermediate activation pair
        n = min(4 if first else batch, remaining)
        remaining -= n
        x = Tensor4(rng.standard_normal((n, 3) + tuple(input_hw)).astype(dt))
        trace = {} if first else None
        logits_train = forward(train_net, x, trace=trace)
        logits_deploy = forward(deploy_net, x)
        report.end_to_end = max(report.end_to_end,
                                _block_diff(logits_train, logits_deploy))
        if first:
            _compare_blocks(train_net, deploy_net, trace, report.block_diffs)
            first = False
    return report
