import itertools

import numpy as np
import pytest

from clipsam.encoders import (EncoderConfig, SamMaskSet, StageTokens,
                              encode_image_mock, encode_text_mock,
                              sam_decode_mock)
from clipsam.mmr import PromptSet

CFG = EncoderConfig(c_t=64, c_img=16, grid_h=8, grid_w=8, n_stages=4, seed=3)


class TestTextMock:
    def test_deterministic(self):
        a = encode_text_mock("a photo of a perfect plate.", CFG)
        b = encode_text_mock("a photo of a perfect plate.", CFG)
        assert np.array_equal(a.data, b.data)

    def test_unit_norm(self):
        v = encode_text_mock("anything at all", CFG)
        assert abs(np.linalg.norm(v.data) - 1.0) <= 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            encode_text_mock("", CFG)

    def test_distinct_sentences_not_collinear(self):
        vecs = [encode_text_mock(f"sentence number {i}", CFG).data
                for i in range(150)]
        worst = 0.0
        pairs = 0
        for a, b in itertools.combinations(vecs, 2):
            worst = max(worst, abs(float(a @ b)))
            pairs += 1
            if pairs >= 1000:
                break
        assert worst < 0.99

    def test_seed_changes_embedding(self):
        other = EncoderConfig(c_t=64, c_img=16, grid_h=8, grid_w=8, n_stages=4, seed=4)
        a = encode_text_mock("same words", CFG)
        b = encode_text_mock("same words", other)
        assert not np.array_equal(a.data, b.data)


class TestImageMock:
    def test_constant_image_constant_tokens(self):
        img = np.full((32, 32), 0.5)
        toks = encode_image_mock(img, CFG)
        assert toks.n == 4
        for s in toks.stages:
            assert s.shape == (8, 8, 16)
            assert np.max(np.abs(s.data - s.data[0, 0])) == 0.0

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (32, 32))
        a = encode_image_mock(img, CFG)
        b = encode_image_mock(img, CFG)
        for sa, sb in zip(a.stages, b.stages):
            assert np.array_equal(sa.data, sb.data)

    def test_defect_cell_separates_from_background(self):
        img = np.full((32, 32), 0.4)
        img[8:12, 8:12] = 0.9  # exactly grid cell (2, 2) at 4x4 patches
        toks = encode_image_mock(img, CFG)
        for s in toks.stages:
            defect = s.data[2, 2]
            background = s.data[5, 5]
            assert np.linalg.norm(defect - background) > 1.0

    def test_shared_grid_invariant(self):
        img = np.random.default_rng(1).uniform(0, 1, (33, 47))
        toks = encode_image_mock(img, CFG)
        shapes = {s.shape for s in toks.stages}
        assert len(shapes) == 1

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            encode_image_mock(np.full((32, 32), 1.5), CFG)

    def test_degenerate_extent_rejected(self):
        with pytest.raises(ValueError):
            encode_image_mock(np.zeros((4, 32)), CFG)

    def test_mismatched_stage_grids_rejected(self):
        from clipsam.tensor import tensor
        with pytest.raises(ValueError):
            StageTokens([tensor(np.zeros((2, 2, 3))), tensor(np.zeros((3, 2, 3)))])


class TestSamMock:
    def test_saturated_box(self):
        heat = np.zeros((24, 24))
        heat[5:11, 7:15] = 1.0
        prompts = PromptSet(points=[(6, 8)], boxes=[(5, 7, 6, 8)])
        out = sam_decode_mock(None, heat, prompts)
        box = np.zeros((24, 24), dtype=np.uint8)
        box[5:11, 7:15] = 1
        for li in range(3):
            assert np.array_equal(out.masks[0, li], box)
            assert out.scores[0, li] == 1.0

    def test_zero_heatmap_empty_masks(self):
        heat = np.zeros((16, 16))
        prompts = PromptSet(points=[(4, 4)], boxes=[(2, 2, 6, 6)])
        out = sam_decode_mock(None, heat, prompts)
        assert out.masks.sum() == 0
        assert np.array_equal(out.scores, np.zeros((1, 3)))

    def test_ramp_heatmap_areas_non_increasing(self):
        heat = np.tile(np.linspace(0, 1, 20), (20, 1))
        prompts = PromptSet(points=[(10, 18)], boxes=[(0, 0, 20, 20)])
        out = sam_decode_mock(None, heat, prompts)
        areas = [int(out.masks[0, li].sum()) for li in range(3)]
        assert areas[0] >= areas[1] >= areas[2] > 0

    def test_nesting_property(self):
        rng = np.random.default_rng(8)
        for trial in range(25):
            heat = rng.uniform(0, 1, (18, 18))
            pts = [(int(rng.integers(0, 18)), int(rng.integers(0, 18)))
                   for _ in range(3)]
            boxes = [(2, 3, 10, 9), (0, 0, 18, 18)]
            out = sam_decode_mock(None, heat, PromptSet(points=pts, boxes=boxes))
            for bi in range(2):
                m1, m2, m3 = out.masks[bi]
                assert np.all(m3 <= m2)
                assert np.all(m2 <= m1)

    def test_component_restriction(self):
        heat = np.zeros((16, 16))
        heat[2:5, 2:5] = 0.9    # component A, holds the anchor
        heat[10:13, 10:13] = 0.9  # component B, disconnected
        prompts = PromptSet(points=[(3, 3)], boxes=[(0, 0, 16, 16)])
        out = sam_decode_mock(None, heat, prompts)
        for li in range(3):
            assert out.masks[0, li, 3, 3] == 1
            assert out.masks[0, li, 11, 11] == 0

    def test_box_outside_bounds_rejected(self):
        heat = np.zeros((8, 8))
        with pytest.raises(ValueError):
            sam_decode_mock(None, heat, PromptSet(points=[], boxes=[(4, 4, 8, 8)]))

    def test_requires_a_box(self):
        with pytest.raises(ValueError):
            sam_decode_mock(None, np.zeros((8, 8)), PromptSet(points=[(1, 1)], boxes=[]))

    def test_mask_set_validation(self):
        with pytest.raises(ValueError):
            SamMaskSet(np.full((1, 3, 4, 4), 2), np.zeros((1, 3)))
        with pytest.raises(ValueError):
            SamMaskSet(np.zeros((1, 3, 4, 4)), np.full((1, 3), 1.5))
