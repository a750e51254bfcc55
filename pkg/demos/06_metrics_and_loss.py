"""Hard-example-mining cross entropy and segmentation metrics.

The loss keeps only pixels the model finds hard (true-class probability
under a threshold), topping the set up to a floor with the highest-loss
pixels.  Metrics come from an accumulated confusion matrix.
"""

import numpy as np

from rdrnet.metrics import ConfusionMatrix, miou, ohem_ce, pixel_accuracy, total_loss

rng = np.random.default_rng(0)

# 4 classes on a 8x8 grid; make most pixels easy, a few hard
logits = rng.normal(0, 0.5, (1, 4, 8, 8)).astype(np.float32)
labels = rng.integers(0, 4, (1, 8, 8))
for i in range(8):            # boost the true class for "easy" pixels
    for j in range(8):
        if (i + j) % 3:
            logits[0, labels[0, i, j], i, j] += 4.0

for thr in (0.5, 0.7, 0.9):
    loss = ohem_ce(logits, labels, threshold=thr, min_kept=4)
    print(f"threshold {thr}: kept-pixel mean CE = {loss:.4f}")
print("(higher thresholds admit easier pixels, diluting the mean)")

plain = ohem_ce(logits, labels, threshold=1.0, min_kept=64)
print(f"threshold 1.0 + keep-all floor = plain mean CE = {plain:.4f}")

aux = 0.5 * plain
print(f"\ndeep-supervision total: {plain:.4f} + 0.4 * {aux:.4f} "
      f"= {total_loss(plain, aux):.4f}")

# metrics from a confusion matrix, accumulated in shards
preds = rng.integers(0, 4, 4096)
truth = np.where(rng.random(4096) < 0.7, preds, rng.integers(0, 4, 4096))
cm = ConfusionMatrix(4)
for k in range(0, 4096, 1024):
    cm.add(preds[k:k + 1024], truth[k:k + 1024])
print(f"\nnoisy predictions: mIoU {miou(cm):.4f}, "
      f"pixel accuracy {pixel_accuracy(cm):.4f}")
