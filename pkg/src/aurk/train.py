"""Training and inference loops for the static detector."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from aurk.labels import assign_roi_labels_batch, binarize_logits, merge_roi_predictions
from aurk.nn.loss import sigmoid_ce_loss
from aurk.nn.optim import OptimState, lr_schedule, sgd_momentum_step
from aurk.nn.preprocess import preprocess
from aurk.partition import AUPartitionTable


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 5
    base_lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_decay: float = 0.1
    lr_step: int = 10
    mirror: bool = True
    seed: int = 0


@dataclass
class TrainLog:
    iteration_loss: list[float] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)


def to_input(images: np.ndarray, scale: float, mean_pixel) -> np.ndarray:
    """uint8 ``(N, C, H, W)`` -> scaled float64 with the per-channel mean removed."""
    x = np.asarray(images, dtype=np.float64) * scale
    return x - np.asarray(mean_pixel, dtype=np.float64).reshape(1, -1, 1, 1)


def input_stats(images: np.ndarray) -> tuple[float, np.ndarray]:
    """``(scale, mean_pixel)``: unit overall pixel std and per-channel means after scaling."""
    x = np.asarray(images, dtype=np.float64)
    std = float(x.std())
    scale = 1.0 / std if std > 0 else 1.0
    return scale, x.mean(axis=(0, 2, 3)) * scale


FlowFn = Callable[[np.ndarray], np.ndarray]


def mirror_flow(stack: np.ndarray) -> np.ndarray:
    """Horizontal flip of a ``(2k, H, W)`` flow stack; x components change sign."""
    out = stack[:, :, ::-1].copy()
    out[0::2] *= -1.0
    return out


def train(model, x: np.ndarray, boxes: np.ndarray, frame_labels: np.ndarray,
          table: AUPartitionTable, cfg: TrainConfig, state: OptimState | None = None,
          on_iteration: Callable[[int, int, float], None] | None = None,
          flow_fn: FlowFn | None = None) -> tuple[OptimState, TrainLog]:
    """Momentum SGD over mini-batches of frames.

    ``x`` is the preprocessed input ``(N, C, H, W)``, ``boxes`` the image-space
    boxes ``(N, R, 4)``, ``frame_labels`` the ``(N, L)`` image labels. Each RoI
    row is supervised with its space-constrained label row. With ``flow_fn``
    (frame indices -> flow stacks) the model is called as
    ``forward(images, flows, boxes)``.
    """
    rng = np.random.default_rng(cfg.seed)
    roi_labels = assign_roi_labels_batch(frame_labels, table).astype(np.float64)
    state = state or OptimState(momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    log = TrainLog()
    n = len(x)
    slots = table.box_slots
    width = x.shape[3]
    it = 0
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        state.lr = lr_schedule(epoch, cfg.base_lr, cfg.lr_decay, cfg.lr_step)
        order = rng.permutation(n)
        flips = rng.random(n) < 0.5 if cfg.mirror else np.zeros(n, dtype=bool)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = np.empty((len(idx),) + x.shape[1:])
            bb = np.empty((len(idx),) + boxes.shape[1:])
            for k, i in enumerate(idx):
                xb[k], bb[k] = preprocess(x[i], boxes[i], slots, mirror=bool(flips[i]))
            yb = roi_labels[idx].reshape(-1, table.L)
            model.zero_grad()
            if flow_fn is None:
                logits, cache = model.forward(xb, bb)
            else:
                fb = flow_fn(idx)
                for k, i in enumerate(idx):
                    if flips[i]:
                        fb[k] = mirror_flow(fb[k])
                logits, cache = model.forward(xb, fb, bb)
            loss, grad = sigmoid_ce_loss(logits, yb)
            model.backward(grad, cache)
            sgd_momentum_step(model.params, state)
            log.iteration_loss.append(loss)
            total += loss * len(idx)
            if on_iteration is not None:
                on_iteration(epoch, it, loss)
            it += 1
        log.epoch_loss.append(total / max(n, 1))
    if cfg.epochs:
        state.epoch = cfg.epochs
    return state, log


def predict_logits(model, x: np.ndarray, boxes: np.ndarray, batch_size: int = 25,
                   flow_fn: FlowFn | None = None) -> np.ndarray:
    """``(N, R, L)`` RoI logits."""
    out = []
    for s in range(0, len(x), batch_size):
        if flow_fn is None:
            lg = model.forward(x[s:s + batch_size], boxes[s:s + batch_size])[0]
        else:
            idx = np.arange(s, min(s + batch_size, len(x)))
            lg = model.forward(x[s:s + batch_size], flow_fn(idx), boxes[s:s + batch_size])[0]
        out.append(lg.reshape(-1, boxes.shape[1], lg.shape[1]))
    return np.concatenate(out) if out else np.zeros((0, boxes.shape[1], 0))


def frame_predictions(roi_logits: np.ndarray, table: AUPartitionTable) -> np.ndarray:
    """Binarize each RoI row (logit > 0, space constraint) and OR-merge per frame."""
    return np.stack([merge_roi_predictions(binarize_logits(lg, table)) for lg in roi_logits]) \
        if len(roi_logits) else np.zeros((0, table.L), dtype=np.uint8)
