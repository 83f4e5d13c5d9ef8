"""Trainable cross-modal rough-segmentation module.

Per encoder stage, projected patch tokens interact with the two-class text
feature along two parallel paths. The strip path pools tokens into full-row
and full-column features and runs a two-step attention (text queries visual,
a GRU folds the attended summary back into the text tokens, then the strip
queries the updated text). The scale path pools at two kernel sizes and
attends each pooled grid against text-derived key/value tokens. Both path
outputs are upsampled, fused with a residual of the projected tokens, and a
pointwise MLP head emits the per-cell two-class logits. Stage logits are
averaged, resized to image resolution, and softmaxed into a probability map.

Every convolution, projection and GRU owns its own parameters; nothing is
shared across directions, scales or stages.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import EncoderConfig, StageTokens
from .params import ParamStore
from .prompts import TextFeature
from .tensor import Tensor


@dataclass(frozen=True)
class UmciConfig:
    c_h: int = 32
    s1: int = 3
    s2: int = 9
    include_strip: bool = True
    include_scale: bool = True

    def __post_init__(self):
        if self.c_h < 1 or self.s1 < 1 or self.s2 < 1:
            raise ValueError("c_h, s1 and s2 must be >= 1")
        if self.s1 == self.s2:
            raise ValueError("scale-path kernel sizes must differ")
        if not (self.include_strip or self.include_scale):
            raise ValueError("at least one path must be enabled")


class Conv2d:
    def __init__(self, store: ParamStore, name: str, kh: int, kw: int, cin: int, cout: int):
        fan_in = kh * kw * cin
        self.w = store.make(f"{name}.weight", (kh, kw, cin, cout), fan_in)
        self.b = store.make(f"{name}.bias", (cout,), fan_in)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b)


class Linear:
    """Pointwise map over row vectors; also serves as a 1x1 convolution."""

    def __init__(self, store: ParamStore, name: str, din: int, dout: int,
                 bias: bool = True):
        self.w = store.make(f"{name}.weight", (din, dout), din)
        self.b = store.make(f"{name}.bias", (dout,), din) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.w)
        return T.add_bias(out, self.b) if self.b is not None else out


class GruCell:
    def __init__(self, store: ParamStore, name: str, d: int):
        self.p = {}
        for gate in ("wz", "uz", "wr", "ur", "wn", "un"):
            self.p[gate] = store.make(f"{name}.{gate}", (d, d), d)
        for gate in ("bz", "br", "bn"):
            self.p[gate] = store.make(f"{name}.{gate}", (d,), d)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return T.gru_cell(x, h, self.p)


def project_tokens(linear: Linear, tokens: Tensor) -> Tensor:
    """Pointwise linear map aligning patch tokens with the text dimension."""
    h, w, c = tokens.shape
    flat = T.reshape(tokens, (h * w, c))
    return T.reshape(linear(flat), (h, w, linear.w.shape[1]))


class StripDirection:
    """Two-step cross-modal attention along one pooled strip."""

    def __init__(self, store: ParamStore, name: str, c_t: int, c_h: int, along_rows: bool):
        kh, kw = (3, 1) if along_rows else (1, 3)
        self.conv = Conv2d(store, f"{name}.conv", kh, kw, c_t, c_h)
        self.text1 = Linear(store, f"{name}.text1", c_t, c_h)
        self.text2 = Linear(store, f"{name}.text2", c_t, c_h)
        self.gru = GruCell(store, f"{name}.gru", c_h)
        self.c_h = c_h
        self.along_rows = along_rows

    def __call__(self, phat: Tensor, l_rows: Tensor) -> Tensor:
        h, w, _ = phat.shape
        if self.along_rows:
            pooled = T.avg_pool2d(phat, 1, w)       # H x 1 x c_t
            n = h
        else:
            pooled = T.avg_pool2d(phat, h, 1)       # 1 x W x c_t
            n = w
        v = T.reshape(self.conv(pooled), (n, self.c_h))
        t1 = self.text1(l_rows)                      # 2 x c_h
        t2 = self.text2(l_rows)
        summary = T.attention(t1, v, v, self.c_h)    # text queries the strip
        t_new = self.gru(summary, t1)                # fold vision into text tokens
        attended = T.attention(v, t_new, t2, self.c_h)
        return T.l2_normalize_rows(T.add(attended, v))


class StripPath:
    def __init__(self, store: ParamStore, name: str, c_t: int, c_h: int):
        self.row = StripDirection(store, f"{name}.row", c_t, c_h, along_rows=True)
        self.col = StripDirection(store, f"{name}.col", c_t, c_h, along_rows=False)
        self.out_conv = Conv2d(store, f"{name}.out", 3, 3, c_h, c_h)
        self.c_h = c_h

    def __call__(self, phat: Tensor, l_rows: Tensor) -> Tensor:
        h, w, _ = phat.shape
        m_row = T.reshape(self.row(phat, l_rows), (h, 1, self.c_h))
        m_col = T.reshape(self.col(phat, l_rows), (1, w, self.c_h))
        merged = T.add(T.bilinear_resize(m_row, h, w), T.bilinear_resize(m_col, h, w))
        return self.out_conv(merged)


class ScaleLevel:
    """Cross-modal attention over one pooled-grid scale."""

    def __init__(self, store: ParamStore, name: str, c_t: int, c_h: int, s: int):
        self.conv = Conv2d(store, f"{name}.conv", 3, 3, c_t, c_h)
        # no key bias: softmax row-shift invariance would zero its gradient
        self.text_k = Linear(store, f"{name}.text_k", c_t, c_h, bias=False)
        self.text_v = Linear(store, f"{name}.text_v", c_t, c_h)
        self.c_h = c_h
        self.s = s

    def __call__(self, phat: Tensor, l_rows: Tensor) -> Tensor:
        h, w, _ = phat.shape
        kh, kw = min(self.s, h), min(self.s, w)  # kernels floor to the grid
        v = self.conv(T.avg_pool2d(phat, kh, kw))
        hg, wg, _ = v.shape
        q = T.reshape(v, (hg * wg, self.c_h))
        attended = T.attention(q, self.text_k(l_rows), self.text_v(l_rows), self.c_h)
        m = T.l2_normalize_rows(T.add(attended, q))
        return T.reshape(m, (hg, wg, self.c_h))


class ScalePath:
    def __init__(self, store: ParamStore, name: str, c_t: int, c_h: int, s1: int, s2: int):
        self.g1 = ScaleLevel(store, f"{name}.g1", c_t, c_h, s1)
        self.g2 = ScaleLevel(store, f"{name}.g2", c_t, c_h, s2)
        self.out_conv = Conv2d(store, f"{name}.out", 3, 3, c_h, c_h)

    def __call__(self, phat: Tensor, l_rows: Tensor) -> Tensor:
        h, w, _ = phat.shape
        m1 = T.bilinear_resize(self.g1(phat, l_rows), h, w)
        m2 = T.bilinear_resize(self.g2(phat, l_rows), h, w)
        return self.out_conv(T.add(m1, m2))


class UmciStage:
    """One stage's full interaction block: paths, fusion, segmentation head."""

    def __init__(self, store: ParamStore, name: str, enc: EncoderConfig, cfg: UmciConfig):
        c_t, c_h = enc.c_t, cfg.c_h
        self.cfg = cfg
        self.proj = Linear(store, f"{name}.proj", enc.c_img, c_t)
        self.strip = StripPath(store, f"{name}.strip", c_t, c_h) if cfg.include_strip else None
        self.scale = (ScalePath(store, f"{name}.scale", c_t, c_h, cfg.s1, cfg.s2)
                      if cfg.include_scale else None)
        self.ori_conv = Conv2d(store, f"{name}.fuse.ori", 3, 3, c_t, c_h)
        self.all_conv = Conv2d(store, f"{name}.fuse.all", 3, 3, 3 * c_h, c_t)
        self.head1 = Linear(store, f"{name}.head.fc1", c_t, c_h)
        self.head2 = Linear(store, f"{name}.head.fc2", c_h, 2)
        self.c_h = c_h

    def __call__(self, tokens: Tensor, l_rows: Tensor) -> Tensor:
        h, w, _ = tokens.shape
        phat = project_tokens(self.proj, tokens)
        # A disabled path contributes zeros so head dimensions stay stable
        # across structural ablations.
        zero = T.zeros((h, w, self.c_h))
        m_strip = self.strip(phat, l_rows) if self.strip else zero
        m_scale = self.scale(phat, l_rows) if self.scale else zero
        v_ori = self.ori_conv(phat)
        m_all = self.all_conv(T.concat_lastdim([v_ori, m_strip, m_scale]))
        fused = T.relu(T.add(m_all, phat))
        c_t = phat.shape[2]
        flat = T.reshape(fused, (h * w, c_t))
        logits = self.head2(T.relu(self.head1(flat)))
        return T.reshape(logits, (h, w, 2))


class UmciModel:
    """Independent per-stage interaction blocks plus logit aggregation."""

    def __init__(self, store: ParamStore, enc: EncoderConfig, cfg: UmciConfig):
        self.enc = enc
        self.cfg = cfg
        self.store = store
        self.stages = [UmciStage(store, f"stage{i}", enc, cfg)
                       for i in range(enc.n_stages)]

    def stage_logits(self, tokens: StageTokens, text: TextFeature) -> list[Tensor]:
        if tokens.n != len(self.stages):
            raise ValueError(f"expected {len(self.stages)} stages, got {tokens.n}")
        l_rows = text.rows()
        return [stage(tok, l_rows) for stage, tok in zip(self.stages, tokens.stages)]

    def aggregate(self, logits: list[Tensor], out_h: int, out_w: int) -> Tensor:
        """Mean of stage logits, resized to image resolution, softmaxed per
        pixel into a two-class probability map."""
        acc = logits[0]
        for o in logits[1:]:
            acc = T.add(acc, o)
        mean = T.smul(acc, 1.0 / len(logits))
        return T.softmax_lastdim(T.bilinear_resize(mean, out_h, out_w))

    def forward(self, tokens: StageTokens, text: TextFeature,
                out_h: int, out_w: int) -> tuple[list[Tensor], Tensor]:
        logits = self.stage_logits(tokens, text)
        return logits, self.aggregate(logits, out_h, out_w)

    def rough_map(self, tokens: StageTokens, text: TextFeature,
                  out_h: int, out_w: int) -> np.ndarray:
        """Foreground-probability channel of the aggregated map."""
        _, probs = self.forward(tokens, text, out_h, out_w)
        return np.ascontiguousarray(probs.data[:, :, 1])
