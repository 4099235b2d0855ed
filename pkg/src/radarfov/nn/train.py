"""Segmentation loss, Adam, dataset loading and the training loop.

The loss is a weighted BCE + Dice sum. BCE is the elementwise mean with
predictions clamped away from 0/1; Dice is batch-aggregated with additive
smoothing, 1 - (2*sum(y*p) + eps) / (sum(y^2) + sum(p^2) + eps), which is
well defined for empty labels and exactly zero for a perfect binary
prediction.

Training is single-process and fully deterministic for a given seed: the
parameter init and the per-epoch shuffles come from one seeded generator,
so identical runs produce byte-identical history files.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, NumericalError
from ..labelgen import read_labels_manifest, read_pgm
from ..tensor import read_rten
from .model import ModelConfig, UNet, save_checkpoint

HISTORY_HEADER = "epoch,lr,train_loss,val_loss,val_iou"


@dataclass
class LossConfig:
    bce_weight: float = 0.5
    dice_weight: float = 0.5
    dice_epsilon: float = 1.0
    clamp: float = 1e-7

    def __post_init__(self):
        if self.bce_weight < 0 or self.dice_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.bce_weight == 0 and self.dice_weight == 0:
            raise ValueError("at least one loss weight must be positive")


def seg_loss(pred: np.ndarray, label: np.ndarray, cfg: LossConfig):
    """Weighted BCE + Dice; returns (scalar loss, gradient wrt pred).

    ``pred`` holds probabilities in [0, 1]; ``label`` is binary.
    """
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {p.shape} != label shape {y.shape}")
    m = p.size
    lo, hi = cfg.clamp, 1.0 - cfg.clamp
    pc = np.clip(p, lo, hi)
    bce = -np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    interior = (p > lo) & (p < hi)
    dbce = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / m * interior

    eps = cfg.dice_epsilon
    num = 2.0 * np.sum(y * p) + eps
    den = np.sum(y * y) + np.sum(p * p) + eps
    dice = 1.0 - num / den
    ddice = -(2.0 * y * den - num * 2.0 * p) / (den * den)

    loss = cfg.bce_weight * bce + cfg.dice_weight * dice
    grad = cfg.bce_weight * dbce + cfg.dice_weight * ddice
    return float(loss), grad


@dataclass
class AdamState:
    """First/second moments per parameter plus the learning-rate schedule."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_initial: float = 0.000314
    lr_decay: float = 0.95

    @classmethod
    def for_params(cls, params, lr_initial=0.000314, lr_decay=0.95) -> "AdamState":
        return cls(m=[np.zeros_like(p.value) for p in params],
                   v=[np.zeros_like(p.value) for p in params],
                   lr_initial=lr_initial, lr_decay=lr_decay)

    def lr_at(self, epoch: int) -> float:
        return self.lr_initial * self.lr_decay ** epoch


def adam_step(params, state: AdamState, lr: float | None = None) -> None:
    """One bias-corrected Adam update from each param's accumulated grad."""
    if lr is None:
        lr = state.lr_initial
    state.step += 1
    b1c = 1.0 - state.beta1 ** state.step
    b2c = 1.0 - state.beta2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {p.name} at step {state.step}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)


# ----------------------------------------------------------------------
# Dataset access
# ----------------------------------------------------------------------

@dataclass
class SegDataset:
    inputs: np.ndarray        # (N, C, H, W) float32
    labels: np.ndarray        # (N, H, W) uint8
    scene_classes: list
    frame_ids: list

    def __len__(self):
        return self.inputs.shape[0]


def load_segmentation_dataset(dataset_dir, input_mode: str = "rd",
                              normalize: bool = True,
                              labels: str = "pipeline") -> SegDataset:
    """Load model inputs plus labels for every frame in the manifest.

    ``labels``: "pipeline" reads the occupancy-pipeline labels written by
    the labels command; "geometric" reads the simulator's ground truth.
    """
    manifest_path = os.path.join(dataset_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"no manifest.json in {dataset_dir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)

    label_files = {}
    if labels == "pipeline":
        lm_path = os.path.join(dataset_dir, "labels_manifest.json")
        if not os.path.exists(lm_path):
            raise DataError("labels_manifest.json missing; run the labels command first")
        for fid, entry in read_labels_manifest(lm_path).items():
            label_files[fid] = entry["label"]
    elif labels != "geometric":
        raise ValueError(f"unknown label source {labels!r}")

    xs, ys, classes, ids = [], [], [], []
    for fr in manifest["frames"]:
        fid = fr["id"]
        in_path = os.path.join(dataset_dir, f"input_{input_mode}_{fid:05d}.rten")
        if not os.path.exists(in_path):
            raise DataError(
                f"{in_path} missing; run the dsp command with mode={input_mode}")
        x = read_rten(in_path).astype(np.float32)
        if normalize:
            rms = np.sqrt(np.mean(x.astype(np.float64) ** 2)) + 1e-12
            x = (x / rms).astype(np.float32)
        if labels == "pipeline":
            if fid not in label_files:
                raise DataError(f"frame {fid} has no pipeline label")
            y = read_pgm(os.path.join(dataset_dir, label_files[fid]))
        else:
            y = read_pgm(os.path.join(dataset_dir, fr["gtlabel"]))
        xs.append(x)
        ys.append(y)
        classes.append(fr["scene_class"])
        ids.append(fid)
    if not xs:
        raise DataError("dataset manifest lists no frames")
    return SegDataset(np.stack(xs), np.stack(ys), classes, ids)


def train_val_split(ds: SegDataset, val_fraction: float):
    """Deterministic class-balanced split: every k-th frame of each class
    goes to validation, k = round(1 / val_fraction)."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError("val_fraction must be in [0, 1)")
    if val_fraction == 0.0:
        return list(range(len(ds))), []
    k = max(2, round(1.0 / val_fraction))
    seen = {}
    train_idx, val_idx = [], []
    for i, cls in enumerate(ds.scene_classes):
        j = seen.get(cls, 0)
        (val_idx if j % k == 0 else train_idx).append(i)
        seen[cls] = j + 1
    return train_idx, val_idx


# ----------------------------------------------------------------------
# Training loop
# ----------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 0.000314
    lr_decay: float = 0.95
    val_fraction: float = 0.2
    seed: int = 0
    input_mode: str = "rd"
    normalize: bool = True
    labels: str = "pipeline"
    checkpoint_every: int = 1


@dataclass
class TrainResult:
    model: UNet
    history: list
    adam: AdamState
    train_idx: list
    val_idx: list


def _forward_batches(model, inputs, idx, batch_size):
    for s in range(0, len(idx), batch_size):
        chunk = idx[s:s + batch_size]
        yield chunk, model.forward(inputs[chunk])


def _mean_sample_iou(pred, label, threshold=0.5):
    mask = pred >= threshold
    lab = label.astype(bool)
    tp = (mask & lab).sum(axis=(1, 2))
    fp = (mask & ~lab).sum(axis=(1, 2))
    fn = (~mask & lab).sum(axis=(1, 2))
    denom = tp + fp + fn
    iou = np.where(denom > 0, tp / np.maximum(denom, 1), 1.0)
    return float(iou.mean())


def train(ds: SegDataset, model_cfg: ModelConfig, loss_cfg: LossConfig,
          train_cfg: TrainConfig, out_dir=None, log=None) -> TrainResult:
    """Train from scratch; returns the model plus one history row per epoch.

    History rows: (epoch, lr, train_loss, val_loss, val_iou) where val_iou
    is the mean per-sample IoU at threshold 0.5. Raises NumericalError on a
    non-finite loss, naming the offending batch.
    """
    rng = np.random.default_rng(train_cfg.seed)
    model = UNet(model_cfg, seed=train_cfg.seed, dtype=np.float32)
    params = model.parameters()
    adam = AdamState.for_params(params, train_cfg.learning_rate, train_cfg.lr_decay)
    train_idx, val_idx = train_val_split(ds, train_cfg.val_fraction)
    if not train_idx:
        raise DataError("training split is empty")

    history = []
    for epoch in range(train_cfg.epochs):
        lr = adam.lr_at(epoch)
        order = np.array(train_idx)[rng.permutation(len(train_idx))]
        t0 = time.time()
        losses = []
        for bi, s in enumerate(range(0, len(order), train_cfg.batch_size)):
            chunk = order[s:s + train_cfg.batch_size]
            pred = model.forward(ds.inputs[chunk])
            loss, dpred = seg_loss(pred, ds.labels[chunk], loss_cfg)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} batch {bi} "
                    f"(frames {[ds.frame_ids[i] for i in chunk]})")
            model.zero_grad()
            model.backward(dpred)
            adam_step(params, adam, lr)
            losses.append(loss)

        val_loss, val_iou = float("nan"), float("nan")
        if val_idx:
            vl, vi, n = 0.0, 0.0, 0

            for chunk, pred in _forward_batches(model, ds.inputs, val_idx,
                                                train_cfg.batch_size):
                loss, _ = seg_loss(pred, ds.labels[chunk], loss_cfg)
                vl += loss * len(chunk)
                vi += _mean_sample_iou(pred, ds.labels[chunk]) * len(chunk)
                n += len(chunk)
            val_loss, val_iou = vl / n, vi / n
        row = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)),
               "val_loss": val_loss, "val_iou": val_iou}
        history.append(row)
        if log:
            log(f"epoch {epoch:3d}  lr {lr:.3e}  train {row['train_loss']:.4f}  "
                f"val {val_loss:.4f}  iou {val_iou:.4f}  ({time.time() - t0:.1f}s)")
        if out_dir and (epoch + 1) % train_cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_{epoch:03d}.ckpt"),
                            model, epoch=epoch, metrics=row)
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "model.ckpt"), model,
                        epoch=train_cfg.epochs - 1,
                        metrics=history[-1] if history else {})
    return TrainResult(model, history, adam, train_idx, val_idx)


def write_history_csv(path, history) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['lr']!r},{row['train_loss']!r},"
                     f"{row['val_loss']!r},{row['val_iou']!r}\n")
    os.replace(tmp, path)
