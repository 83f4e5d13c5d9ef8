import warnings

import numpy as np
import pytest

from clipsam.encoders import sam_decode_mock
from clipsam.mmr import (BinaryMask, PromptSet, binarize, connected_components,
                         extract_boxes, extract_points, normalize_map, refine)


def flood_fill_labels(grid):
    """Recursive-style flood-fill oracle (depth bounded via explicit stack)."""
    h, w = grid.shape
    labels = np.zeros((h, w), dtype=np.int64)
    nxt = 0
    for sx in range(h):
        for sy in range(w):
            if grid[sx, sy] and not labels[sx, sy]:
                nxt += 1
                stack = [(sx, sy)]
                labels[sx, sy] = nxt
                while stack:
                    x, y = stack.pop()
                    for dx in (-1, 0, 1):
                        for dy in (-1, 0, 1):
                            xx, yy = x + dx, y + dy
                            if (0 <= xx < h and 0 <= yy < w and grid[xx, yy]
                                    and not labels[xx, yy]):
                                labels[xx, yy] = nxt
                                stack.append((xx, yy))
    return labels, nxt


def labels_from_regions(regions, shape):
    out = np.zeros(shape, dtype=np.int64)
    for r in regions:
        out[r.pixels[:, 0], r.pixels[:, 1]] = r.label
    return out


def same_up_to_relabeling(a, b):
    if np.any((a > 0) != (b > 0)):
        return False
    mapping = {}
    for va, vb in zip(a.reshape(-1), b.reshape(-1)):
        if va == 0:
            continue
        if va in mapping and mapping[va] != vb:
            return False
        mapping[va] = vb
    return len(set(mapping.values())) == len(mapping)


class TestBinarize:
    def test_strict_inequality_at_threshold(self):
        out = binarize(np.full((4, 4), 0.47), 0.47)
        assert out.grid.sum() == 0

    def test_zero_map(self):
        assert binarize(np.zeros((3, 3)), 0.47).grid.sum() == 0

    def test_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(0)
        m = rng.uniform(size=(20, 20))
        got = binarize(m, 0.47).grid
        want = np.zeros((20, 20), dtype=np.uint8)
        for i in range(20):
            for j in range(20):
                want[i, j] = 1 if m[i, j] > 0.47 else 0
        assert np.array_equal(got, want)

    def test_threshold_out_of_range(self):
        with pytest.raises(ValueError):
            binarize(np.zeros((2, 2)), 1.5)


class TestConnectedComponents:
    def test_empty_mask(self):
        assert connected_components(BinaryMask(np.zeros((5, 5)))) == []

    def test_diagonal_touch_is_one_region(self):
        grid = np.zeros((4, 4))
        grid[1, 1] = 1
        grid[2, 2] = 1
        regions = connected_components(BinaryMask(grid))
        assert len(regions) == 1
        assert len(regions[0].pixels) == 2

    @pytest.mark.parametrize("seed", range(40))
    def test_matches_flood_fill_oracle(self, seed):
        rng = np.random.default_rng(seed)
        grid = (rng.uniform(size=(32, 32)) > 0.6).astype(np.uint8)
        regions = connected_components(BinaryMask(grid))
        got = labels_from_regions(regions, grid.shape)
        want, count = flood_fill_labels(grid)
        assert len(regions) == count
        assert same_up_to_relabeling(got, want)

    def test_bbox_is_tight(self):
        grid = np.zeros((8, 8))
        grid[2:5, 3:7] = 1
        (region,) = connected_components(BinaryMask(grid))
        assert region.bbox == (2, 3, 3, 4)


class TestExtractPoints:
    def region_fixture(self):
        grid = np.zeros((10, 10))
        grid[4:7, 4:7] = 1
        return connected_components(BinaryMask(grid))

    def test_zero_points(self):
        assert extract_points(self.region_fixture(), 0, seed=1) == []

    def test_single_pixel_replacement(self):
        grid = np.zeros((6, 6))
        grid[2, 3] = 1
        regions = connected_components(BinaryMask(grid))
        pts = extract_points(regions, 3, seed=0)
        assert pts == [(2, 3)] * 3

    def test_points_lie_on_mask(self):
        regions = self.region_fixture()
        pts = extract_points(regions, 5, seed=4)
        assert len(pts) == 5
        for x, y in pts:
            assert 4 <= x < 7 and 4 <= y < 7

    def test_no_pixels_warns_and_returns_empty(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            pts = extract_points([], 3, seed=0)
        assert pts == []
        assert len(caught) == 1

    def test_deterministic(self):
        regions = self.region_fixture()
        assert extract_points(regions, 4, seed=9) == extract_points(regions, 4, seed=9)


class TestExtractBoxes:
    def test_dilation_geometry(self):
        grid = np.zeros((16, 16))
        grid[5:8, 5:8] = 1
        regions = connected_components(BinaryMask(grid))
        boxes = extract_boxes(regions, grid.shape)
        assert boxes == [(4, 4, 5, 5)]

    def test_zero_regions(self):
        assert extract_boxes([], (8, 8)) == []

    def test_clamped_at_border(self):
        grid = np.zeros((6, 6))
        grid[0:2, 4:6] = 1
        boxes = extract_boxes(connected_components(BinaryMask(grid)), grid.shape)
        assert boxes == [(0, 3, 3, 3)]

    def test_region_pixels_inside_box(self):
        rng = np.random.default_rng(3)
        grid = (rng.uniform(size=(20, 20)) > 0.7).astype(np.uint8)
        regions = connected_components(BinaryMask(grid))
        boxes = extract_boxes(regions, grid.shape)
        for r, (bx, by, bh, bw) in zip(regions, boxes):
            assert np.all(r.pixels[:, 0] >= bx)
            assert np.all(r.pixels[:, 0] < bx + bh)
            assert np.all(r.pixels[:, 1] >= by)
            assert np.all(r.pixels[:, 1] < by + bw)


class TestNormalizeMap:
    def test_affine(self):
        out = normalize_map(np.array([0.0, 2.0, 4.0]))
        assert np.array_equal(out, [0.0, 0.5, 1.0])

    def test_constant_becomes_half(self):
        out = normalize_map(np.full((3, 3), 7.0))
        assert np.array_equal(out, np.full((3, 3), 0.5))

    def test_argmax_invariant(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(9, 9))
        assert np.argmax(normalize_map(x)) == np.argmax(x)


class TestRefine:
    def test_no_boxes_equals_normalized_rough(self):
        o = np.full((12, 12), 0.2)
        o[3, 3] = 0.4  # below threshold, no regions
        out = refine(o, None, sam_decode_mock, thr=0.47, m=3, seed=0)
        assert np.array_equal(out.o_final, normalize_map(o))

    def test_all_empty_masks_same_as_no_boxes(self):
        class EmptyDecoder:
            def __call__(self, image, heatmap, prompts):
                from clipsam.encoders import SamMaskSet
                q = len(prompts.boxes)
                return SamMaskSet(np.zeros((q, 3) + heatmap.shape), np.zeros((q, 3)))

        o = np.full((10, 10), 0.1)
        o[4:6, 4:6] = 0.9
        out = refine(o, None, EmptyDecoder(), thr=0.47, m=3, seed=0)
        assert np.array_equal(out.o_final, normalize_map(o))

    def test_full_image_mask_preserves_argmax(self):
        class FullDecoder:
            def __call__(self, image, heatmap, prompts):
                from clipsam.encoders import SamMaskSet
                q = len(prompts.boxes)
                masks = np.zeros((q, 3) + heatmap.shape)
                masks[:, 0] = 1.0
                scores = np.zeros((q, 3))
                scores[:, 0] = 1.0
                return SamMaskSet(masks, scores)

        rng = np.random.default_rng(5)
        o = rng.uniform(0, 0.4, size=(14, 14))
        o[6, 7] = 0.95
        out = refine(o, None, FullDecoder(), thr=0.47, m=2, seed=1)
        assert np.argmax(out.o_final) == np.argmax(o)

    def test_output_in_unit_interval_and_deterministic(self):
        rng = np.random.default_rng(7)
        o = rng.uniform(size=(24, 24))
        a = refine(o, None, sam_decode_mock, thr=0.47, m=3, seed=11)
        b = refine(o, None, sam_decode_mock, thr=0.47, m=3, seed=11)
        assert np.array_equal(a.o_final, b.o_final)
        assert a.o_final.min() >= 0.0 and a.o_final.max() <= 1.0

    def test_covered_pixels_never_lose_rank_to_uncovered(self):
        """A pixel inside a positively-scored mask keeps outranking every
        uncovered pixel it outranked in the no-refinement baseline."""
        rng = np.random.default_rng(13)
        for _ in range(10):
            o = rng.uniform(size=(16, 16))
            ob = binarize(o, 0.47)
            regions = connected_components(ob)
            boxes = extract_boxes(regions, o.shape)
            if not boxes:
                continue
            points = extract_points(regions, 3, seed=3)
            result = sam_decode_mock(None, o, PromptSet(points=points, boxes=boxes))
            covered = np.zeros_like(o, dtype=bool)
            added = np.zeros_like(o)
            for bi in range(result.q):
                for li in range(3):
                    if result.scores[bi, li] > 0:
                        covered |= result.masks[bi, li].astype(bool)
                    added += result.masks[bi, li] * result.scores[bi, li]
            refined = refine(o, None, sam_decode_mock, thr=0.47, m=3, seed=3).o_final
            base = normalize_map(o)
            for cx, cy in np.argwhere(covered)[:20]:
                beaten = base[cx, cy] > base
                still_beaten = refined[cx, cy] > refined
                assert np.all(still_beaten[beaten & ~covered])

    def test_rebinarized_saturated_map_is_superset(self):
        """With saturated regions (each mask at full confidence) re-binarizing
        the refined map keeps every originally-anomalous pixel."""
        o = np.full((20, 20), 0.05)
        o[4:8, 4:8] = 1.0
        o[12:15, 13:17] = 1.0
        refined = refine(o, None, sam_decode_mock, thr=0.47, m=3, seed=2).o_final
        before = binarize(normalize_map(o), 0.47).grid
        after = binarize(refined, 0.47).grid
        assert np.all(after >= before)


class TestPromptSetIO:
    def test_round_trip(self):
        ps = PromptSet(points=[(3, 4), (7, 1)], boxes=[(0, 2, 5, 6)])
        lines = ps.export_lines()
        back = PromptSet.parse_lines(lines)
        assert back.points == ps.points
        assert back.boxes == ps.boxes

    def test_bad_line_rejected(self):
        with pytest.raises(ValueError):
            PromptSet.parse_lines(["Q 1 2"])
