"""Compositional prompt ensemble producing the two-class text feature.

State phrases ("perfect", "damaged", ...) are combined with an object
category ("perfect bottle") and substituted into templates ("a photo of a
perfect bottle"). Embeddings of all sentences for a class are averaged into
one column; the normal and abnormal columns concatenate to a c_t x 2 feature.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .tensor import Tensor

PLACEHOLDER = "{}"
UNKNOWN_CATEGORY = "object"


@dataclass
class PromptBank:
    templates: list[str]
    normal_states: list[str]
    abnormal_states: list[str]
    category: str

    def __post_init__(self):
        if not (self.templates and self.normal_states and self.abnormal_states):
            raise ValueError("prompt bank needs at least one template and one state per class")
        for t in self.templates:
            if t.count(PLACEHOLDER) != 1:
                raise ValueError(f"template must contain exactly one {PLACEHOLDER!r}: {t!r}")


@dataclass
class TextFeature:
    """c_t x 2 feature; column 0 is the normal class, column 1 abnormal."""
    l: np.ndarray

    def __post_init__(self):
        self.l = np.asarray(self.l, dtype=np.float64)
        if self.l.ndim != 2 or self.l.shape[1] != 2:
            raise ValueError("text feature must be c_t x 2")
        if not np.all(np.isfinite(self.l)):
            raise ValueError("text feature must be finite")

    def rows(self) -> Tensor:
        """Class-token rows (2 x c_t) for attention consumption."""
        return Tensor(np.ascontiguousarray(self.l.T))


def parse_prompt_bank(text: str, category: str) -> PromptBank:
    """Parse the plain-text bank format: [templates] / [normal] / [abnormal]
    section headers, one entry per line, '#' starts a comment line."""
    sections: dict[str, list[str]] = {"templates": [], "normal": [], "abnormal": []}
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in sections:
                raise ValueError(f"unknown prompt bank section {name!r}")
            current = name
            continue
        if current is None:
            raise ValueError(f"prompt bank entry before any section: {line!r}")
        sections[current].append(line)
    return PromptBank(sections["templates"], sections["normal"],
                      sections["abnormal"], category)


def load_prompt_bank(path=None, category: str = UNKNOWN_CATEGORY) -> PromptBank:
    """Bank from a file, or the packaged default bank when no path is given."""
    if path is None:
        text = resources.files("clipsam").joinpath("data/prompt_bank.txt").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return parse_prompt_bank(text, category)


def build_sentences(bank: PromptBank, class_kind: str) -> list[str]:
    """Cartesian product of templates and per-class state phrases."""
    if class_kind == "normal":
        states = bank.normal_states
    elif class_kind == "abnormal":
        states = bank.abnormal_states
    else:
        raise ValueError(f"class_kind must be 'normal' or 'abnormal', got {class_kind!r}")
    return [t.replace(PLACEHOLDER, f"{s} {bank.category}")
            for t in bank.templates for s in states]


def _class_feature(sentences: list[str], encode, cfg) -> np.ndarray:
    # Averaging runs over the distinct sentence set in sorted order, which
    # makes the result exactly invariant to ordering and duplication.
    unique = sorted(set(sentences))
    acc = np.zeros(cfg.c_t)
    for s in unique:
        acc += encode(s, cfg).data
    return acc / len(unique)


def build_text_feature(bank: PromptBank, encode, cfg) -> TextFeature:
    """Encode every sentence of both classes and average per class."""
    normal = _class_feature(build_sentences(bank, "normal"), encode, cfg)
    abnormal = _class_feature(build_sentences(bank, "abnormal"), encode, cfg)
    return TextFeature(np.stack([normal, abnormal], axis=1))
