"""Deterministic stand-ins for the text/image encoders and the mask decoder.

These mocks expose the interfaces a real-checkpoint adapter would satisfy:
text in -> unit embedding, image in -> per-stage patch-token grids, and
(image, heatmap, prompts) -> a multi-granularity mask set with confidences.
Everything is a pure function of its inputs plus the configured seed.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    """Desk-scale dimensions replacing a pretrained vision-language backbone."""
    c_t: int = 64           # text / projection dim
    c_img: int = 64         # patch-token dim
    grid_h: int = 16
    grid_w: int = 16
    n_stages: int = 4
    seed: int = 0
    token_scale: float = 40.0  # token magnitude; keeps the anomaly signal large

    def __post_init__(self):
        for name in ("c_t", "c_img", "grid_h", "grid_w", "n_stages"):
            if getattr(self, name) < 1:
                raise ValueError(f"encoder config field {name} must be >= 1")


@dataclass
class StageTokens:
    """Patch-token grids from successive encoder stages, all on one grid."""
    stages: list

    def __post_init__(self):
        if not self.stages:
            raise ValueError("StageTokens requires at least one stage")
        first = self.stages[0].shape
        for s in self.stages:
            if s.shape != first:
                raise ValueError("all stages must share the same grid and channel count")

    @property
    def n(self) -> int:
        return len(self.stages)


@dataclass
class SamMaskSet:
    """Per-box nested binary masks and their confidence scores.

    ``masks`` has shape (q, 3, H, W) with values in {0, 1}; ``scores`` has
    shape (q, 3) with finite values in [0, 1]. For every box the three masks
    are nested from coarse to fine.
    """
    masks: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.uint8)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.masks.ndim != 4 or self.masks.shape[1] != 3:
            raise ValueError("masks must be q x 3 x H x W")
        if self.scores.shape != self.masks.shape[:2]:
            raise ValueError("scores must be q x 3")
        if not np.all((self.masks == 0) | (self.masks == 1)):
            raise ValueError("masks must be binary")
        if not (np.all(np.isfinite(self.scores))
                and np.all(self.scores >= 0.0) and np.all(self.scores <= 1.0)):
            raise ValueError("scores must be finite and in [0, 1]")

    @property
    def q(self) -> int:
        return self.masks.shape[0]


def _sentence_rng(sentence: str, seed: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{sentence}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def encode_text_mock(sentence: str, cfg: EncoderConfig) -> Tensor:
    """Deterministic unit-norm embedding driven by a seeded hash of the text."""
    if not sentence:
        raise ValueError("cannot encode an empty sentence")
    rng = _sentence_rng(sentence, cfg.seed)
    v = rng.normal(size=cfg.c_t)
    v /= np.linalg.norm(v)
    return Tensor(v)


def _image_projection(cfg: EncoderConfig):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x1A6E]))
    w = rng.normal(0.0, cfg.token_scale, size=cfg.c_img)
    biases = rng.normal(0.0, 0.25 * cfg.token_scale, size=(cfg.n_stages, cfg.c_img))
    return w, biases


def patch_pool(image: np.ndarray, grid_h: int, grid_w: int) -> np.ndarray:
    """Average the image over a grid of near-equal contiguous patches."""
    h, w = image.shape
    re = [i * h // grid_h for i in range(grid_h + 1)]
    ce = [j * w // grid_w for j in range(grid_w + 1)]
    out = np.empty((grid_h, grid_w))
    for i in range(grid_h):
        for j in range(grid_w):
            out[i, j] = image[re[i]:re[i + 1], ce[j]:ce[j + 1]].mean()
    return out


def encode_image_mock(image: np.ndarray, cfg: EncoderConfig) -> StageTokens:
    """Patch-pool the image to the token grid, then lift each cell mean into
    token space via a fixed seeded projection plus a stage-specific bias.

    The lift is affine in the cell mean, so intensity anomalies remain
    linearly detectable in every stage.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("expected a grayscale H x W image")
    if image.shape[0] < cfg.grid_h or image.shape[1] < cfg.grid_w:
        raise ValueError(f"image extents {image.shape} below token grid "
                         f"({cfg.grid_h}x{cfg.grid_w})")
    if not np.all(np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values must be finite and in [0, 1]")
    means = patch_pool(image, cfg.grid_h, cfg.grid_w)
    w, biases = _image_projection(cfg)
    stages = [Tensor(means[:, :, None] * w + biases[i])
              for i in range(cfg.n_stages)]
    return StageTokens(stages)


SAM_LEVELS = (0.3, 0.5, 0.7)


def _component_from(mask: np.ndarray, start: tuple) -> np.ndarray:
    """8-connected component of ``start`` inside a binary mask."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    stack = [start]
    out[start] = 1
    while stack:
        r, c = stack.pop()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and mask[rr, cc] and not out[rr, cc]:
                    out[rr, cc] = 1
                    stack.append((rr, cc))
    return out


def _nearest_anchor(points, eligible: np.ndarray, center) -> tuple | None:
    """Closest prompt point to ``center`` that lies on the eligible mask."""
    best = None
    best_d2 = np.inf
    for px, py in points:
        if not eligible[px, py]:
            continue
        d2 = (px - center[0]) ** 2 + (py - center[1]) ** 2
        if d2 < best_d2:
            best_d2 = d2
            best = (int(px), int(py))
    return best


def sam_decode_mock(image: np.ndarray, heatmap: np.ndarray, prompts) -> SamMaskSet:
    """Promptable decoder stand-in: three nested threshold masks per box.

    Granularity level i keeps the heatmap pixels at or above its threshold,
    clipped to the box and restricted to the connected component containing
    the nearest eligible prompt point to the box center. Eligibility chains
    through the levels (the level-i anchor must lie inside the level-(i-1)
    mask) which guarantees the nesting m3 within m2 within m1. With no point
    prompts the box center seeds the chain. A level with no eligible anchor
    yields an empty mask. Each mask's confidence is the mean heatmap value
    inside it, zero for an empty mask.
    """
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if heatmap.ndim != 2:
        raise ValueError("heatmap must be 2-D")
    if heatmap.min() < 0.0 or heatmap.max() > 1.0:
        raise ValueError("heatmap values must lie in [0, 1]")
    h, w = heatmap.shape
    boxes = list(prompts.boxes)
    points = list(prompts.points)
    if not boxes:
        raise ValueError("decoder requires at least one box prompt")
    masks = np.zeros((len(boxes), 3, h, w), dtype=np.uint8)
    scores = np.zeros((len(boxes), 3))
    for bi, (bx, by, bh, bw) in enumerate(boxes):
        if bx < 0 or by < 0 or bh < 1 or bw < 1 or bx + bh > h or by + bw > w:
            raise ValueError(f"box {(bx, by, bh, bw)} outside image bounds {h}x{w}")
        center = (bx + (bh - 1) / 2.0, by + (bw - 1) / 2.0)
        seeds = points if points else [(int(round(center[0])), int(round(center[1])))]
        parent = np.ones((h, w), dtype=np.uint8)
        for li, level in enumerate(SAM_LEVELS):
            level_mask = np.zeros((h, w), dtype=np.uint8)
            region = heatmap[bx:bx + bh, by:by + bw] >= level
            level_mask[bx:bx + bh, by:by + bw] = region
            level_mask &= parent
            anchor = _nearest_anchor(seeds, level_mask, center)
            if anchor is not None:
                m = _component_from(level_mask, anchor)
            else:
                m = np.zeros((h, w), dtype=np.uint8)
            masks[bi, li] = m
            area = int(m.sum())
            scores[bi, li] = float(heatmap[m.astype(bool)].mean()) if area else 0.0
            parent = m
    return SamMaskSet(masks, scores)
