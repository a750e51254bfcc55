"""Model structure and the canonical-name export."""

from pathlib import Path

import numpy as np
import pytest
import torch

from rdrnet_trainer.model import (
    DualResolutionNet,
    export_weights,
    normalize_images,
    parse_engine_config,
)

MICRO_CFG = str(Path(__file__).resolve().parents[2]
                / "src" / "rdrnet" / "configs" / "micro.cfg")

# must equal the engine's training-structure count for the same config
# (weights + BN affine factors + classifier biases)
MICRO_PARAM_COUNT = 249_848
MICRO_TENSOR_COUNT = 274


@pytest.fixture(scope="module")
def cfg():
    return parse_engine_config(MICRO_CFG)


@pytest.fixture(scope="module")
def net(cfg):
    torch.manual_seed(0)
    model = DualResolutionNet(cfg)
    model.eval()
    return model


def test_config_parse(cfg):
    assert cfg.variant == "micro"
    assert cfg.stem_widths == (8, 8, 16)
    assert cfg.semantic_widths == (32, 64, 128)
    assert cfg.detail_widths == (16, 16, 32)
    assert cfg.num_classes == 4 and cfg.head_channels == 32


def test_parameter_count_locks_to_engine(net):
    assert sum(p.numel() for p in net.parameters()) == MICRO_PARAM_COUNT


def test_forward_shapes(net):
    x = torch.randn(2, 3, 64, 128)
    with torch.no_grad():
        logits, aux = net(x, want_aux=True)
    assert logits.shape == (2, 4, 64, 128)
    assert aux.shape == (2, 4, 64, 128)


def test_export_slot_census(net):
    pairs = export_weights(net)
    names = [n for n, _ in pairs]
    assert len(names) == MICRO_TENSOR_COUNT
    assert len(set(names)) == MICRO_TENSOR_COUNT
    for expected in (
        "stage1.block0.conv3.weight",
        "stage4.detail.block0.bn1b.var",
        "fusion2.d2s1.conv.weight",
        "stage6.semantic.block0.project.conv.weight",
        "rppm.grouped_b.bn.eps",
        "head.classifier.bias",
        "aux_head.conv3.conv.weight",
    ):
        assert expected in names, expected
    for name, arr in pairs:
        assert arr.dtype == np.float32, name


def test_pre_relu_tail_feeds_fusion(net):
    # the fused stage-4 outputs must be able to go negative before fusion
    torch.manual_seed(1)
    x = torch.randn(1, 3, 64, 64)
    with torch.no_grad():
        h = net._run_stage(x, net.stage1)
        h = net._run_stage(h, net.stage2)
        h = net._run_stage(h, net.stage3)
        xs = net._run_stage(h, net.stage4_semantic, pre_relu_tail=True)
    assert float(xs.min()) < 0.0


def test_normalization_convention():
    imgs = np.zeros((1, 64, 64, 3), np.uint8)
    assert float(normalize_images(imgs).min()) == pytest.approx(-1.0)
    imgs = np.full((1, 64, 64, 3), 255, np.uint8)
    assert float(normalize_images(imgs).max()) == pytest.approx(1.0)
