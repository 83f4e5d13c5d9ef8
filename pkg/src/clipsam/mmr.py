"""Mask refinement: rough map -> spatial prompts -> decoder masks -> fusion.

The foreground map is binarized, its 8-connected regions become dilated
bounding-box prompts plus a shared set of random point prompts, the decoder
returns three nested masks with confidences per box, and the confidence-
weighted mask sum is fused back onto the rough map and min-max normalized.

Coordinates follow (x, y) = (row, column) indexing into map[x, y]; boxes are
(x, y, h, w) records anchored at their top-left pixel.
"""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class BinaryMask:
    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if not np.all((self.grid == 0) | (self.grid == 1)):
            raise ValueError("mask values must be 0 or 1")
        self.grid = self.grid.astype(np.uint8)


@dataclass
class Region:
    """One connected anomalous area: its pixels and tight bounding box."""
    label: int
    pixels: np.ndarray          # (n, 2) rows of (x, y)
    bbox: tuple                 # (x, y, h, w), undilated


@dataclass
class PromptSet:
    points: list = field(default_factory=list)   # [(x, y), ...]
    boxes: list = field(default_factory=list)    # [(x, y, h, w), ...]

    def export_lines(self) -> list[str]:
        lines = [f"P {x} {y}" for x, y in self.points]
        lines += [f"B {x} {y} {h} {w}" for x, y, h, w in self.boxes]
        return lines

    @classmethod
    def parse_lines(cls, lines) -> "PromptSet":
        ps = cls()
        for raw in lines:
            parts = raw.split()
            if not parts:
                continue
            if parts[0] == "P" and len(parts) == 3:
                ps.points.append((int(parts[1]), int(parts[2])))
            elif parts[0] == "B" and len(parts) == 5:
                ps.boxes.append(tuple(int(v) for v in parts[1:]))
            else:
                raise ValueError(f"bad prompt line: {raw!r}")
        return ps


@dataclass
class RefinedMap:
    o_final: np.ndarray

    def __post_init__(self):
        self.o_final = np.asarray(self.o_final, dtype=np.float64)
        if self.o_final.min() < 0.0 or self.o_final.max() > 1.0:
            raise ValueError("refined map must be normalized to [0, 1]")


def binarize(o_f: np.ndarray, thr: float) -> BinaryMask:
    """Pixel is anomalous iff its foreground probability strictly exceeds thr."""
    if not 0.0 <= thr <= 1.0:
        raise ValueError(f"threshold {thr} outside [0, 1]")
    o_f = np.asarray(o_f, dtype=np.float64)
    return BinaryMask((o_f > thr).astype(np.uint8))


_NEIGHBORS8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def connected_components(mask: BinaryMask) -> list[Region]:
    """8-connectivity labeling in scan order; BFS per seed pixel."""
    grid = mask.grid
    h, w = grid.shape
    labels = np.zeros((h, w), dtype=np.int32)
    regions: list[Region] = []
    next_label = 0
    for sx in range(h):
        for sy in range(w):
            if not grid[sx, sy] or labels[sx, sy]:
                continue
            next_label += 1
            queue = deque([(sx, sy)])
            labels[sx, sy] = next_label
            pix = []
            while queue:
                x, y = queue.popleft()
                pix.append((x, y))
                for dx, dy in _NEIGHBORS8:
                    xx, yy = x + dx, y + dy
                    if 0 <= xx < h and 0 <= yy < w and grid[xx, yy] and not labels[xx, yy]:
                        labels[xx, yy] = next_label
                        queue.append((xx, yy))
            arr = np.array(pix, dtype=np.int64)
            x0, y0 = arr.min(axis=0)
            x1, y1 = arr.max(axis=0)
            regions.append(Region(next_label, arr,
                                  (int(x0), int(y0), int(x1 - x0 + 1), int(y1 - y0 + 1))))
    return regions


def extract_points(regions: list[Region], m: int, seed: int) -> list[tuple]:
    """m seeded points from the union of anomalous pixels; sampled without
    replacement, falling back to replacement when fewer than m exist."""
    if m < 0:
        raise ValueError("point count must be >= 0")
    if m == 0:
        return []
    if not regions:
        warnings.warn("no anomalous pixels to sample prompt points from")
        return []
    pool = np.concatenate([r.pixels for r in regions], axis=0)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x90A7]))
    replace = len(pool) < m
    idx = rng.choice(len(pool), size=m, replace=replace)
    return [(int(pool[i, 0]), int(pool[i, 1])) for i in idx]


def extract_boxes(regions: list[Region], shape: tuple) -> list[tuple]:
    """One bounding box per region, dilated by one pixel, clamped to bounds."""
    h, w = shape
    boxes = []
    for r in regions:
        x, y, bh, bw = r.bbox
        x0 = max(x - 1, 0)
        y0 = max(y - 1, 0)
        x1 = min(x + bh + 1, h)
        y1 = min(y + bw + 1, w)
        boxes.append((x0, y0, x1 - x0, y1 - y0))
    return boxes


def normalize_map(x: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a constant map becomes all 0.5."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot normalize a non-finite map")
    lo = x.min()
    hi = x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def refine(o_f: np.ndarray, image: np.ndarray, decoder, thr: float,
           m: int, seed: int) -> RefinedMap:
    """Fuse decoder masks onto the rough foreground map.

    With no boxes (nothing above threshold) the result is exactly the
    normalized rough map, which is also the refinement-disabled path.
    """
    o_f = np.asarray(o_f, dtype=np.float64)
    ob = binarize(o_f, thr)
    regions = connected_components(ob)
    boxes = extract_boxes(regions, o_f.shape)
    if not boxes:
        return RefinedMap(normalize_map(o_f))
    points = extract_points(regions, m, seed)
    prompts = PromptSet(points=points, boxes=boxes)
    result = decoder(image, o_f, prompts)
    fused = o_f.copy()
    for bi in range(result.q):
        for li in range(3):
            fused += result.masks[bi, li] * result.scores[bi, li]
    return RefinedMap(normalize_map(fused))
