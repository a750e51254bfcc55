"""Toy-scale training loop: SGD with momentum 0.9, weight decay 5e-4, and a
polynomial learning-rate schedule with power 0.9, over the synthetic scene
dataset.  Augmentation at this scale is horizontal flips plus random
64x64 crops.  Every epoch logs the main, auxiliary, and total losses plus
the validation mIoU as one JSON line."""

from __future__ import annotations

import json
import os

import numpy as np
import torch

from .data import NUM_CLASSES, read_pgm, read_ppm
from .losses import ALPHA, ohem_cross_entropy, total_loss
from .model import DualResolutionNet, EngineNetDef, export_weights, normalize_images
from .rdrw import write_store


def load_split(root, split):
    split_dir = os.path.join(root, split)
    images, labels = [], []
    for name in sorted(os.listdir(split_dir)):
        if name.startswith("img_"):
            stem = name[len("img_"):-len(".ppm")]
            images.append(read_ppm(os.path.join(split_dir, name)))
            labels.append(read_pgm(os.path.join(split_dir, f"lbl_{stem}.pgm")))
    return np.stack(images), np.stack(labels)


def _augment(images, labels, rng):
    """Random horizontal flip and a random 64x64 crop, per sample."""
    n, h, w = labels.shape
    crop = 64
    out_img = np.empty((n, crop, crop, 3), images.dtype)
    out_lab = np.empty((n, crop, crop), labels.dtype)
    for i in range(n):
        img, lab = images[i], labels[i]
        if rng.random() < 0.5:
            img, lab = img[:, ::-1], lab[:, ::-1]
        y0 = int(rng.integers(0, h - crop + 1))
        x0 = int(rng.integers(0, w - crop + 1))
        out_img[i] = img[y0:y0 + crop, x0:x0 + crop]
        out_lab[i] = lab[y0:y0 + crop, x0:x0 + crop]
    return out_img, out_lab


@torch.no_grad()
def evaluate_miou(net, images, labels, batch=32):
    """Validation mIoU from an accumulated confusion matrix (eval mode,
    running BN statistics), excluding classes with no support."""
    net.eval()
    cm = np.zeros((NUM_CLASSES, NUM_CLASSES), np.int64)
    for k in range(0, len(images), batch):
        x = normalize_images(images[k:k + batch])
        pred = net(x).argmax(dim=1).numpy()
        lab = labels[k:k + batch]
        keep = lab != 255
        flat = lab[keep].astype(np.int64) * NUM_CLASSES + pred[keep]
        cm += np.bincount(flat, minlength=NUM_CLASSES**2).reshape(
            NUM_CLASSES, NUM_CLASSES)
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(0) + cm.sum(1) - tp
    present = union > 0
    return float((tp[present] / union[present]).mean())


def train_micro(cfg: EngineNetDef, dataset_root, out_dir, epochs=40,
                base_lr=0.02, batch_size=16, seed=0, ohem_threshold=0.7):
    """Trains, writes ``weights.rdrw`` (training structure, running BN
    statistics) and ``metrics.jsonl``; returns (net, history)."""
    os.makedirs(out_dir, exist_ok=True)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net = DualResolutionNet(cfg)
    train_images, train_labels = load_split(dataset_root, "train")
    val_images, val_labels = load_split(dataset_root, "val")

    optimizer = torch.optim.SGD(net.parameters(), lr=base_lr, momentum=0.9,
                                weight_decay=5e-4)
    steps_per_epoch = max(1, len(train_images) // batch_size)
    max_iter = epochs * steps_per_epoch

    history = []
    log_path = os.path.join(out_dir, "metrics.jsonl")
    with open(log_path, "w") as log:
        it = 0
        for epoch in range(epochs):
            net.train()
            order = rng.permutation(len(train_images))
            epoch_ln, epoch_la = [], []
            for k in range(steps_per_epoch):
                idx = order[k * batch_size:(k + 1) * batch_size]
                imgs, labs = _augment(train_images[idx], train_labels[idx], rng)
                x = normalize_images(imgs)
                y = torch.from_numpy(labs.astype(np.int64))
                lr = base_lr * (1 - it / max_iter) ** 0.9
                for group in optimizer.param_groups:
                    group["lr"] = lr
                logits, aux_logits = net(x, want_aux=True)
                l_n = ohem_cross_entropy(logits, y, threshold=ohem_threshold)
                l_a = ohem_cross_entropy(aux_logits, y, threshold=ohem_threshold)
                loss = total_loss(l_n, l_a)
                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"training diverged (non-finite loss) at epoch {epoch} "
                        f"iteration {it} with seed {seed}"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_ln.append(l_n.item())
                epoch_la.append(l_a.item())
                it += 1
            l_n_mean = float(np.mean(epoch_ln))
            l_a_mean = float(np.mean(epoch_la))
            record = {
                "epoch": epoch,
                "lr": lr,
                "l_normal": l_n_mean,
                "l_aux": l_a_mean,
                "total": total_loss(l_n_mean, l_a_mean),
                "alpha": ALPHA,
                "val_miou": evaluate_miou(net, val_images, val_labels),
            }
            history.append(record)
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()

    net.eval()
    write_store(export_weights(net), os.path.join(out_dir, "weights.rdrw"))
    return net, history


@torch.no_grad()
def export_reference_forward(net, images_u8, path):
    """Eval-mode logits for pinned samples, stored for engine parity checks."""
    net.eval()
    logits = net(normalize_images(images_u8))
    pairs = [
        ("logits", logits.numpy().astype(np.float32)),
        ("sample_count", np.array([len(images_u8)], np.float32)),
    ]
    write_store(pairs, path)
    return logits.numpy()
