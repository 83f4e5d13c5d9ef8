"""Minibatch training of the interaction module with decoupled weight decay."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .losses import GroundTruth, LossConfig, total_loss
from .params import Param, ParamStore


class AdamW:
    """Adam with decoupled weight decay (betas 0.9/0.999, eps 1e-8)."""

    def __init__(self, params: list[Param], lr: float, weight_decay: float = 0.01,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.tensor.data) for p in params}
        self.v = {p.name: np.zeros_like(p.tensor.data) for p in params}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                continue
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.tensor.data = p.tensor.data * (1.0 - self.lr * self.weight_decay) \
                - self.lr * update


@dataclass
class TraceRow:
    epoch: int
    step: int
    focal: float
    dice: float
    total: float

    def line(self) -> str:
        return (f"{self.epoch},{self.step},{self.focal!r},"
                f"{self.dice!r},{self.total!r}")


TRACE_HEADER = "epoch,step,focal,dice,total"


def write_trace(path, rows: list[TraceRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRACE_HEADER + "\n")
        for r in rows:
            fh.write(r.line() + "\n")


def epoch_means(rows: list[TraceRow]) -> dict[int, float]:
    sums: dict[int, list] = {}
    for r in rows:
        sums.setdefault(r.epoch, []).append(r.total)
    return {e: float(np.mean(v)) for e, v in sums.items()}


def train(model, samples: list, token_cache: list, text_lookup: dict,
          cfg: LossConfig, store: ParamStore) -> list[TraceRow]:
    """Seeded minibatch descent over precomputed stage tokens.

    ``samples`` supplies masks and categories, ``token_cache[i]`` the matching
    StageTokens, ``text_lookup`` the per-category text features. Iteration
    order is reshuffled per epoch from the loss seed. Aborts on a non-finite
    loss with a diagnostic.
    """
    if not samples:
        raise ValueError("training dataset is empty")
    opt = AdamW(store.params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7241]))
    trace: list[TraceRow] = []
    n = len(samples)
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(n)
        for step, lo in enumerate(range(0, n, cfg.batch), start=1):
            idx = order[lo:lo + cfg.batch]
            store.zero_grad()
            tot = foc = dic = None
            for i in idx:
                sample = samples[i]
                gt = GroundTruth(sample.mask)
                logits = model.stage_logits(token_cache[i], text_lookup[sample.category])
                t, f, d = total_loss(logits, gt, cfg)
                tot = t if tot is None else T.add(tot, t)
                foc = f if foc is None else T.add(foc, f)
                dic = d if dic is None else T.add(dic, d)
            scale = 1.0 / len(idx)
            batch_loss = T.smul(tot, scale)
            value = batch_loss.item()
            if not math.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch} step {step}; "
                    "check data ranges and learning rate")
            batch_loss.backward()
            opt.step()
            trace.append(TraceRow(epoch, step, foc.item() * scale,
                                  dic.item() * scale, value))
    return trace
