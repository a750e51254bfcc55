"""Hard-example-mining cross entropy and the deep-supervision total.

Selection rule: keep pixels whose true-class probability is under the
threshold; if fewer than ``min_kept`` qualify, top the set up with the
highest-loss pixels.  -log is monotone, so the kept set is exactly the
top-k of the per-pixel losses with k = max(#hard, min_kept).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

IGNORE_INDEX = 255
ALPHA = 0.4


def ohem_cross_entropy(logits, labels, threshold=0.7, min_kept=None):
    n, c, h, w = logits.shape
    flat_logits = logits.permute(0, 2, 3, 1).reshape(-1, c)
    flat_labels = labels.reshape(-1)
    valid = flat_labels != IGNORE_INDEX
    if valid.sum() == 0:
        return logits.sum() * 0.0
    flat_logits = flat_logits[valid]
    flat_labels = flat_labels[valid].long()
    if min_kept is None:
        min_kept = max(1, int(valid.sum().item()) // 16)

    log_probs = F.log_softmax(flat_logits, dim=1)
    losses = -log_probs[torch.arange(flat_labels.numel()), flat_labels]
    with torch.no_grad():
        p_true = torch.exp(-losses)
        n_hard = int((p_true < threshold).sum().item())
        keep = min(max(n_hard, min_kept), losses.numel())
    kept, _ = torch.topk(losses, keep)
    return kept.mean()


def total_loss(l_normal, l_aux, alpha=ALPHA):
    return l_normal + alpha * l_aux
