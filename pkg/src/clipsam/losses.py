"""Segmentation objective: focal plus dice, stage-weighted.

Both losses consume the foreground-probability map for one stage, upsampled
to ground-truth resolution. Focal is read on the true-class probability
(p where the pixel is anomalous, 1-p where it is not); dice measures overlap
of the soft prediction with the binary mask.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

CLAMP_EPS = 1e-7
DICE_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    stage_weights: tuple = (0.1, 0.1, 0.1, 0.7)
    lr: float = 1e-4
    batch: int = 8
    epochs: int = 6
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.stage_weights or any(w <= 0 for w in self.stage_weights):
            raise ValueError("stage weights must be positive")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be >= 1")


@dataclass
class GroundTruth:
    """Binary anomaly mask; 1 marks anomalous pixels."""
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask)
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("ground-truth mask must be binary")
        self.mask = self.mask.astype(np.float64)


def focal_loss(p: Tensor, y: GroundTruth, gamma: float) -> Tensor:
    """-(1/N) sum (1 - p_true)^gamma * log(p_true) over pixels."""
    if p.shape != y.mask.shape:
        raise ValueError(f"prediction {p.shape} vs mask {y.mask.shape}")
    ym = T.tensor(y.mask)
    p = T.clamp(p, CLAMP_EPS, 1.0 - CLAMP_EPS)
    inv = T.sadd(T.smul(p, -1.0), 1.0)
    inv_y = T.sadd(T.smul(ym, -1.0), 1.0)
    p_true = T.add(T.mul(p, ym), T.mul(inv, inv_y))
    weight = T.power(T.sadd(T.smul(p_true, -1.0), 1.0), gamma)
    total = T.sum_all(T.mul(weight, T.log(p_true)))
    return T.smul(total, -1.0 / p.size)


def dice_loss(p: Tensor, y: GroundTruth) -> Tensor:
    """1 - (2*sum(y*p) + eps) / (sum(y^2) + sum(p^2) + eps)."""
    if p.shape != y.mask.shape:
        raise ValueError(f"prediction {p.shape} vs mask {y.mask.shape}")
    ym = T.tensor(y.mask)
    inter = T.sum_all(T.mul(p, ym))
    denom = T.add(T.sum_all(T.power(p, 2.0)), T.sum_all(T.power(ym, 2.0)))
    ratio = T.div(T.sadd(T.smul(inter, 2.0), DICE_EPS), T.sadd(denom, DICE_EPS))
    return T.sadd(T.smul(ratio, -1.0), 1.0)


def stage_foreground(stage_logits: Tensor, out_h: int, out_w: int) -> Tensor:
    """Upsample one stage's logits to mask resolution; foreground probability."""
    up = T.bilinear_resize(stage_logits, out_h, out_w)
    return T.take_channel(T.softmax_lastdim(up), 1)


def total_loss(stage_logits: list[Tensor], y: GroundTruth,
               cfg: LossConfig) -> tuple[Tensor, Tensor, Tensor]:
    """Stage-weighted sum of focal + dice; returns (total, focal, dice) where
    the parts carry the same stage weights as the total."""
    if len(cfg.stage_weights) != len(stage_logits):
        raise ValueError(f"{len(cfg.stage_weights)} stage weights for "
                         f"{len(stage_logits)} stages")
    out_h, out_w = y.mask.shape
    focal_acc = None
    dice_acc = None
    for lam, logits in zip(cfg.stage_weights, stage_logits):
        p = stage_foreground(logits, out_h, out_w)
        f = T.smul(focal_loss(p, y, cfg.gamma), lam)
        d = T.smul(dice_loss(p, y), lam)
        focal_acc = f if focal_acc is None else T.add(focal_acc, f)
        dice_acc = d if dice_acc is None else T.add(dice_acc, d)
    return T.add(focal_acc, dice_acc), focal_acc, dice_acc
