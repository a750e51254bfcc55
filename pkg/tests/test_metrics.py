"""Losses and metrics against exhaustive scalar oracles."""

import numpy as np
import pytest

from rdrnet.errors import ContractError, DimensionError
from rdrnet.metrics import (
    ConfusionMatrix,
    LabelMap,
    miou,
    ohem_ce,
    pixel_accuracy,
    softmax,
    total_loss,
)


def ohem_oracle(logits, labels, threshold, min_kept, ignore_index=255):
    """Literal statement of the selection rule, all python loops."""
    n, c, h, w = logits.shape
    entries = []  # (loss, p_true)
    for ni in range(n):
        for i in range(h):
            for j in range(w):
                lab = int(labels[ni, i, j])
                if lab == ignore_index:
                    continue
                z = logits[ni, :, i, j].astype(np.float64)
                e = np.exp(z - z.max())
                p = e / e.sum()
                entries.append((-np.log(p[lab]), p[lab]))
    if not entries:
        return 0.0
    hard = [loss for loss, p in entries if p < threshold]
    if len(hard) < min_kept:
        hard = sorted((loss for loss, _ in entries), reverse=True)[
            : min(min_kept, len(entries))
        ]
    return float(np.mean(hard))


class TestOhem:
    def test_top_up_path(self):
        # p(true) = 0.9 everywhere: nothing clears the threshold, so the
        # single kept pixel carries loss -ln(0.9)
        p = 0.9
        logit_gap = np.log(p / (1 - p))
        logits = np.zeros((1, 2, 2, 2), np.float32)
        logits[:, 1] = logit_gap
        labels = np.ones((1, 2, 2), np.int64)
        loss = ohem_ce(logits, labels, threshold=0.7, min_kept=1)
        assert loss == pytest.approx(-np.log(0.9), abs=1e-6)

    def test_uniform_logits(self):
        logits = np.zeros((1, 5, 3, 4), np.float32)
        labels = np.random.default_rng(0).integers(0, 5, (1, 3, 4))
        loss = ohem_ce(logits, labels, threshold=0.7, min_kept=3)
        assert loss == pytest.approx(np.log(5), abs=1e-6)

    @pytest.mark.parametrize("case", range(10))
    def test_matches_exhaustive_oracle(self, case):
        rng = np.random.default_rng(100 + case)
        n, c, h, w = 2, 4, 5, 6
        logits = rng.normal(0, 2.0, (n, c, h, w)).astype(np.float32)
        labels = rng.integers(0, c, (n, h, w))
        labels[rng.random((n, h, w)) < 0.1] = 255
        threshold = float(rng.uniform(0.3, 0.9))
        min_kept = int(rng.integers(1, n * h * w))
        got = ohem_ce(logits, labels, threshold=threshold, min_kept=min_kept)
        want = ohem_oracle(logits, labels, threshold, min_kept)
        assert got == pytest.approx(want, abs=1e-7)

    def test_plain_ce_limit(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(1, 3, 4, 4)).astype(np.float32)
        labels = rng.integers(0, 3, (1, 4, 4))
        got = ohem_ce(logits, labels, threshold=1.0, min_kept=16)
        probs = softmax(logits.astype(np.float64))
        ce = []
        for i in range(4):
            for j in range(4):
                ce.append(-np.log(probs[0, labels[0, i, j], i, j]))
        assert got == pytest.approx(np.mean(ce), abs=1e-7)

    def test_all_ignored_warns_and_returns_zero(self):
        logits = np.zeros((1, 2, 2, 2), np.float32)
        labels = np.full((1, 2, 2), 255, np.int64)
        with pytest.warns(RuntimeWarning):
            assert ohem_ce(logits, labels, threshold=0.7, min_kept=1) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ohem_ce(np.zeros((1, 2, 4, 4), np.float32), np.zeros((1, 3, 3), np.int64))


class TestTotalLoss:
    def test_worked_example(self):
        assert total_loss(1.0, 0.5, alpha=0.4) == pytest.approx(1.2)

    def test_zero_alpha(self):
        assert total_loss(0.7, 123.0, alpha=0.0) == pytest.approx(0.7)

    def test_default_alpha(self):
        assert total_loss(1.0, 1.0) == pytest.approx(1.4)

    def test_non_finite_rejected(self):
        with pytest.raises(ContractError):
            total_loss(float("nan"), 0.0)


class TestConfusionAndMiou:
    def test_perfect_prediction(self):
        cm = ConfusionMatrix(3).add(
            np.array([0, 1, 2, 1]), np.array([0, 1, 2, 1])
        )
        assert miou(cm) == pytest.approx(1.0)
        assert pixel_accuracy(cm) == pytest.approx(1.0)

    def test_fully_disjoint(self):
        cm = ConfusionMatrix(2).add(np.array([1, 1]), np.array([0, 0]))
        assert miou(cm) == pytest.approx(0.0)

    def test_hand_computed_2x2(self):
        cm = ConfusionMatrix(2, counts=[[3, 1], [1, 3]])
        assert miou(cm) == pytest.approx(0.6)
        assert pixel_accuracy(cm) == pytest.approx(0.75)

    def test_zero_support_class_excluded(self):
        cm = ConfusionMatrix(3).add(np.array([0, 1, 0, 1]), np.array([0, 1, 0, 1]))
        assert miou(cm) == pytest.approx(1.0)  # class 2 absent everywhere

    def test_ignore_index_excluded(self):
        cm = ConfusionMatrix(2).add(
            np.array([0, 1, 1]), np.array([0, 255, 1])
        )
        assert cm.total == 2
        assert pixel_accuracy(cm) == pytest.approx(1.0)

    def test_empty_matrix_errors(self):
        with pytest.raises(ContractError):
            miou(ConfusionMatrix(2))
        with pytest.raises(ContractError):
            pixel_accuracy(ConfusionMatrix(2))

    def test_sharded_accumulation_exact(self):
        rng = np.random.default_rng(0)
        preds = rng.integers(0, 4, 1000)
        labels = rng.integers(0, 4, 1000)
        whole = ConfusionMatrix(4).add(preds, labels)
        parts = ConfusionMatrix(4)
        for k in range(0, 1000, 100):
            parts = parts.merge(ConfusionMatrix(4).add(preds[k:k+100], labels[k:k+100]))
        assert np.array_equal(whole.counts, parts.counts)

    def test_class_relabel_equivariance(self):
        rng = np.random.default_rng(1)
        preds = rng.integers(0, 4, 500)
        labels = rng.integers(0, 4, 500)
        perm = np.array([2, 0, 3, 1])
        direct = miou(ConfusionMatrix(4).add(preds, labels))
        relabeled = miou(ConfusionMatrix(4).add(perm[preds], perm[labels]))
        assert direct == pytest.approx(relabeled, abs=1e-12)


class TestLabelMap:
    def test_valid(self):
        LabelMap(np.array([[[0, 1], [255, 2]]]), num_classes=3)

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            LabelMap(np.array([[[0, 7]]]), num_classes=3)

    def test_wrong_rank(self):
        with pytest.raises(DimensionError):
            LabelMap(np.zeros((2, 2), np.int64), num_classes=2)
