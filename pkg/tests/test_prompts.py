import numpy as np
import pytest

from clipsam.encoders import EncoderConfig, encode_text_mock
from clipsam.prompts import (PromptBank, TextFeature, build_sentences,
                             build_text_feature, load_prompt_bank,
                             parse_prompt_bank)

CFG = EncoderConfig(c_t=32, c_img=8, grid_h=4, grid_w=4, n_stages=1, seed=0)


def small_bank(category="bottle"):
    return PromptBank(
        templates=["a photo of a {}.", "a cropped photo of the {}."],
        normal_states=["perfect", "flawless", "normal"],
        abnormal_states=["damaged", "broken"],
        category=category,
    )


class TestBankValidation:
    def test_template_without_placeholder_rejected(self):
        with pytest.raises(ValueError, match="placeholder|{}"):
            PromptBank(["a photo"], ["perfect"], ["damaged"], "bottle")

    def test_template_with_two_placeholders_rejected(self):
        with pytest.raises(ValueError):
            PromptBank(["{} and {}"], ["perfect"], ["damaged"], "bottle")

    def test_empty_sections_rejected(self):
        with pytest.raises(ValueError):
            PromptBank(["a {}"], [], ["damaged"], "bottle")


class TestBuildSentences:
    def test_cardinality_is_product(self):
        assert len(build_sentences(small_bank(), "normal")) == 6
        assert len(build_sentences(small_bank(), "abnormal")) == 4

    def test_state_category_substitution(self):
        sents = build_sentences(small_bank(), "normal")
        assert "a photo of a perfect bottle." in sents

    def test_unknown_category_placeholder(self):
        sents = build_sentences(small_bank(category="object"), "normal")
        assert all("object" in s for s in sents)

    def test_bad_kind_rejected(self):
        with pytest.raises(ValueError):
            build_sentences(small_bank(), "weird")


class TestTextFeature:
    def test_single_sentence_per_class(self):
        bank = PromptBank(["a photo of a {}."], ["perfect"], ["damaged"], "plate")
        feat = build_text_feature(bank, encode_text_mock, CFG)
        n = encode_text_mock("a photo of a perfect plate.", CFG).data
        a = encode_text_mock("a photo of a damaged plate.", CFG).data
        assert np.array_equal(feat.l[:, 0], n)
        assert np.array_equal(feat.l[:, 1], a)

    def test_duplication_invariance(self):
        bank = small_bank()
        feat = build_text_feature(bank, encode_text_mock, CFG)
        doubled = PromptBank(bank.templates * 2, bank.normal_states,
                             bank.abnormal_states, bank.category)
        feat2 = build_text_feature(doubled, encode_text_mock, CFG)
        assert np.array_equal(feat.l, feat2.l)

    def test_permutation_invariance(self):
        bank = small_bank()
        feat = build_text_feature(bank, encode_text_mock, CFG)
        shuffled = PromptBank(bank.templates[::-1], bank.normal_states[::-1],
                              bank.abnormal_states[::-1], bank.category)
        feat2 = build_text_feature(shuffled, encode_text_mock, CFG)
        assert np.array_equal(feat.l, feat2.l)

    def test_column_norms_bounded(self):
        feat = build_text_feature(small_bank(), encode_text_mock, CFG)
        assert np.linalg.norm(feat.l[:, 0]) <= 1.0 + 1e-12
        assert np.linalg.norm(feat.l[:, 1]) <= 1.0 + 1e-12

    def test_rows_transposes(self):
        feat = TextFeature(np.arange(8, dtype=float).reshape(4, 2))
        assert feat.rows().shape == (2, 4)
        assert feat.rows().data[0, 3] == 6.0


class TestBankFile:
    def test_parse_sections(self):
        text = """
# comment
[templates]
a photo of a {}.

[normal]
perfect

[abnormal]
broken
"""
        bank = parse_prompt_bank(text, "lens")
        assert bank.templates == ["a photo of a {}."]
        assert bank.normal_states == ["perfect"]
        assert bank.abnormal_states == ["broken"]
        assert bank.category == "lens"

    def test_entry_before_section_rejected(self):
        with pytest.raises(ValueError):
            parse_prompt_bank("perfect\n[templates]\na {}\n", "x")

    def test_unknown_section_rejected(self):
        with pytest.raises(ValueError):
            parse_prompt_bank("[weird]\nfoo\n", "x")

    def test_default_bank_loads(self):
        bank = load_prompt_bank(category="capsule")
        assert len(bank.templates) >= 1
        assert len(bank.normal_states) >= 1
        assert len(bank.abnormal_states) >= 1
        sents = build_sentences(bank, "normal")
        assert len(sents) == len(bank.templates) * len(bank.normal_states)

    def test_bank_from_explicit_file(self, tmp_path):
        p = tmp_path / "bank.txt"
        p.write_text("[templates]\nsee the {}\n[normal]\ngood\n[abnormal]\nbad\n")
        bank = load_prompt_bank(p, category="chip")
        assert build_sentences(bank, "abnormal") == ["see the bad chip"]
