"""Forward-only losses and segmentation metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor4

IGNORE_INDEX = 255


@dataclass(frozen=True)
class LabelMap:
    """Integer class indices of shape (n, h, w); 255 marks ignored pixels."""

    data: np.ndarray
    num_classes: int
    ignore_index: int = IGNORE_INDEX

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise DimensionError(f"labels must be (n, h, w), got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ContractError("labels must be integers")
        valid = (arr >= 0) & (arr < self.num_classes) | (arr == self.ignore_index)
        if not valid.all():
            bad = np.unique(arr[~valid])
            raise ContractError(f"labels contain out-of-range values {bad.tolist()}")
        object.__setattr__(self, "data", arr)


def _as_label_array(labels, num_classes):
    if isinstance(labels, LabelMap):
        return labels.data, labels.ignore_index
    return LabelMap(np.asarray(labels), num_classes).data, IGNORE_INDEX


def softmax(logits: np.ndarray, axis=1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def ohem_ce(logits, labels, threshold=0.7, min_kept=None, ignore_index=None):
    """Cross entropy over the hardest pixels.

    Pixels whose true-class probability falls below ``threshold`` are
    selected; if fewer than ``min_kept`` qualify, the highest-loss pixels
    top the set up to ``min_kept``.  Ignored pixels never participate.  With
    every pixel ignored the loss is defined as 0.0 (a warning is emitted).
    """
    ld = logits.data if isinstance(logits, Tensor4) else np.asarray(logits)
    if ld.ndim != 4:
        raise DimensionError(f"logits must be (n, classes, h, w), got {ld.shape}")
    num_classes = ld.shape[1]
    lab, ign = _as_label_array(labels, num_classes)
    if ignore_index is not None:
        ign = ignore_index
    if lab.shape != (ld.shape[0], ld.shape[2], ld.shape[3]):
        raise DimensionError(
            f"labels {lab.shape} do not match logits {ld.shape}"
        )
    if not 0.0 < threshold <= 1.0:
        raise ContractError(f"threshold must be in (0, 1], got {threshold}")

    valid = (lab != ign).ravel()
    n_valid = int(valid.sum())
    if n_valid == 0:
        warnings.warn("every pixel is ignored; loss defined as 0", RuntimeWarning)
        return 0.0
    if min_kept is None:
        min_kept = max(1, n_valid // 16)
    if min_kept < 1:
        raise ContractError(f"min_kept must be >= 1, got {min_kept}")

    probs = softmax(ld.astype(np.float64), axis=1)
    flat = probs.transpose(0, 2, 3, 1).reshape(-1, num_classes)
    lab_flat = lab.ravel()
    safe_labels = np.where(valid, lab_flat, 0)
    p_true = flat[np.arange(flat.shape[0]), safe_labels][valid]
    losses = -np.log(np.maximum(p_true, 1e-300))

    n_hard = int((p_true < threshold).sum())
    keep = min(max(n_hard, min_kept), n_valid)
    # -log is monotone, so the hard set is exactly the top-loss set
    kept_losses = np.sort(losses)[::-1][:keep]
    return float(kept_losses.mean())


def total_loss(l_normal, l_aux, alpha=0.4):
    """Deep-supervision objective: main loss plus alpha-weighted aux loss."""
    if not (np.isfinite(l_normal) and np.isfinite(l_aux)):
        raise ContractError("loss terms must be finite")
    return float(l_normal) + float(alpha) * float(l_aux)


class ConfusionMatrix:
    """Per-class contingency counts; rows are labels, columns predictions."""

    def __init__(self, num_classes, counts=None):
        if num_classes < 2:
            raise ContractError("need at least 2 classes")
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        else:
            counts = np.asarray(counts, dtype=np.int64)
            if counts.shape != (num_classes, num_classes):
                raise DimensionError(
                    f"counts must be {num_classes}x{num_classes}, got {counts.shape}"
                )
            if (counts < 0).any():
                raise ContractError("confusion counts must be non-negative")
        self.counts = counts

    def add(self, predictions, labels, ignore_index=IGNORE_INDEX):
        pred = np.asarray(predictions).ravel()
        lab = np.asarray(labels).ravel()
        if pred.shape != lab.shape:
            raise DimensionError(
                f"predictions {pred.shape} do not match labels {lab.shape}"
            )
        keep = lab != ignore_index
        pred, lab = pred[keep], lab[keep]
        if ((lab < 0) | (lab >= self.num_classes)).any():
            raise ContractError("labels out of range")
        if ((pred < 0) | (pred >= self.num_classes)).any():
            raise ContractError("predictions out of range")
        flat = lab.astype(np.int64) * self.num_classes + pred
        binned = np.bincount(flat, minlength=self.num_classes**2)
        self.counts += binned.reshape(self.num_classes, self.num_classes)
        return self

    def merge(self, other):
        if other.num_classes != self.num_classes:
            raise DimensionError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    @property
    def total(self):
        return int(self.counts.sum())


def miou(cm: ConfusionMatrix) -> float:
    """Mean intersection-over-union; classes with no support on either side
    are excluded from the mean."""
    if cm.total == 0:
        raise ContractError("confusion matrix is empty")
    tp = np.diag(cm.counts).astype(np.float64)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    union = tp + fp + fn
    present = union > 0
    if not present.any():
        raise ContractError("no class has any support")
    return float((tp[present] / union[present]).mean())


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ContractError("confusion matrix is empty")
    return float(np.diag(cm.counts).sum() / cm.total)
