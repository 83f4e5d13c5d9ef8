"""End-to-end orchestration: train, infer, evaluate, and the ablation matrix.

The rough stage encodes an image into stage tokens, runs the trained
interaction module, and yields a foreground-probability map at image
resolution. The refinement stage extracts prompts from the binarized map,
queries the mask decoder, and fuses the returned masks. Evaluation reports
metrics for both maps so the refinement delta is directly observable.

All artifacts (checkpoints, traces, metric tables, images) are pure
functions of (config, seed); files never embed timestamps.
"""
from __future__ import annotations

import os
from dataclasses import replace

import numpy as np

from .config import ConfigError, RunConfig, dump_config, load_config
from .encoders import encode_image_mock, sam_decode_mock
from .imageio import heatmap_overlay, save_pgm, save_ppm
from .losses import GroundTruth
from .metrics import MetricsReport, evaluate_map, write_reports
from .mmr import PromptSet, binarize, connected_components, extract_boxes, \
    extract_points, normalize_map, refine
from .params import ParamStore
from .prompts import TextFeature, build_text_feature, load_prompt_bank
from .synth import CATEGORIES, SyntheticSample, generate_dataset
from .tensor import bilinear_resize_np
from .train import epoch_means, train, write_trace
from .umci import UmciModel


def build_model(cfg: RunConfig, training: bool) -> tuple[UmciModel, ParamStore]:
    store = ParamStore(seed=cfg.seed, training=training)
    return UmciModel(store, cfg.encoder, cfg.umci), store


def text_features(cfg: RunConfig, categories=CATEGORIES) -> dict[str, TextFeature]:
    from .encoders import encode_text_mock
    feats = {}
    for cat in categories:
        bank = load_prompt_bank(category=cat)
        feats[cat] = build_text_feature(bank, encode_text_mock, cfg.encoder)
    return feats


def test_seed(cfg: RunConfig) -> int:
    """Held-out split seed; offset keeps it disjoint from the train stream."""
    return cfg.seed + 1


def rough_map_for_sample(model: UmciModel, sample: SyntheticSample,
                         feats: dict, cfg: RunConfig) -> np.ndarray:
    tokens = encode_image_mock(sample.image, cfg.encoder)
    return model.rough_map(tokens, feats[sample.category],
                           cfg.image_extent, cfg.image_extent)


def similarity_rough_map(image: np.ndarray, text: TextFeature,
                         cfg: RunConfig) -> np.ndarray:
    """Interaction-free baseline: cosine similarity between seed-initialized
    projected patch tokens and the two text columns, softmaxed per cell."""
    tokens = encode_image_mock(image, cfg.encoder)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x51A1]))
    bound = 1.0 / np.sqrt(cfg.encoder.c_img)
    proj = rng.uniform(-bound, bound, size=(cfg.encoder.c_img, cfg.encoder.c_t))
    l = text.l / np.maximum(np.linalg.norm(text.l, axis=0, keepdims=True), 1e-12)
    acc = None
    for stage in tokens.stages:
        p = stage.data @ proj
        p = p / np.maximum(np.linalg.norm(p, axis=2, keepdims=True), 1e-12)
        logits = p @ l
        acc = logits if acc is None else acc + logits
    mean = acc / len(tokens.stages)
    up = bilinear_resize_np(mean, image.shape[0], image.shape[1])
    shifted = up - up.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=2, keepdims=True)
    return np.ascontiguousarray(probs[:, :, 1])


def _box_mean(img: np.ndarray, k: int) -> np.ndarray:
    """Edge-padded k x k box mean via an integral image."""
    pad = k // 2
    padded = np.pad(img, pad, mode="edge")
    integral = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1))
    integral[1:, 1:] = padded.cumsum(axis=0).cumsum(axis=1)
    h, w = img.shape
    s = (integral[k:k + h, k:k + w] - integral[:h, k:k + w]
         - integral[k:k + h, :w] + integral[:h, :w])
    return s / (k * k)


SALIENCY_SCALE = 0.3
SALIENCY_WINDOWS = (5, 11, 21)


def decoder_saliency(image: np.ndarray) -> np.ndarray:
    """Image-level contrast map standing in for the mask decoder's own
    perception: deviation from multi-scale local background estimates,
    on a fixed scale so granularity thresholds stay calibrated."""
    image = np.asarray(image, dtype=np.float64)
    sal = np.zeros_like(image)
    for k in SALIENCY_WINDOWS:
        np.maximum(sal, np.abs(image - _box_mean(image, k)), out=sal)
    return np.clip(sal / SALIENCY_SCALE, 0.0, 1.0)


def image_aware_decoder(image: np.ndarray, heatmap: np.ndarray, prompts):
    """Decoder adapter: like the real promptable segmenter, masks derive from
    the image itself; the rough map steers only the prompts."""
    return sam_decode_mock(image, decoder_saliency(image), prompts)


def refine_map(rough: np.ndarray, image: np.ndarray, cfg: RunConfig,
               sample_seed: int) -> np.ndarray:
    return refine(rough, image, image_aware_decoder, thr=cfg.mmr.threshold,
                  m=cfg.mmr.points, seed=sample_seed).o_final


def run_train(cfg: RunConfig, out_dir=None) -> dict:
    out = out_dir if out_dir is not None else cfg.out_dir
    os.makedirs(out, exist_ok=True)
    samples = generate_dataset(cfg.train_count, cfg.image_extent, cfg.seed)
    feats = text_features(cfg)
    tokens = [encode_image_mock(s.image, cfg.encoder) for s in samples]
    model, store = build_model(cfg, training=True)
    trace = train(model, samples, tokens, feats, cfg.loss, store)
    ckpt = os.path.join(out, "model.ckpt")
    store.save(ckpt)
    with open(ckpt + ".cfg", "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    write_trace(os.path.join(out, "trace.csv"), trace)
    return {"checkpoint": ckpt, "trace": trace, "epoch_means": epoch_means(trace)}


def load_model_for_checkpoint(ckpt_path) -> tuple[UmciModel, RunConfig]:
    cfg_path = str(ckpt_path) + ".cfg"
    if not os.path.exists(cfg_path):
        raise ConfigError(f"missing checkpoint config {cfg_path!r}")
    cfg = load_config(cfg_path)
    model, store = build_model(cfg, training=False)
    try:
        store.load(ckpt_path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return model, cfg


def evaluate_split(cfg: RunConfig, samples: list[SyntheticSample],
                   rough_fn) -> tuple[list, list]:
    """Per-image metric reports for the rough and the refined maps."""
    rough_reports: list[MetricsReport] = []
    refined_reports: list[MetricsReport] = []
    mmr_seeds = np.random.SeedSequence([cfg.seed, 0x3EED]).generate_state(len(samples))
    for i, sample in enumerate(samples):
        gt = GroundTruth(sample.mask)
        rough = rough_fn(sample)
        refined = refine_map(rough, sample.image, cfg, int(mmr_seeds[i]))
        rough_reports.append(evaluate_map(rough, gt))
        refined_reports.append(evaluate_map(refined, gt))
    return rough_reports, refined_reports


def run_eval(model: UmciModel, cfg: RunConfig, seed: int, count: int,
             out_dir) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    samples = generate_dataset(count, cfg.image_extent, seed)
    feats = text_features(cfg)

    def rough_fn(sample):
        return rough_map_for_sample(model, sample, feats, cfg)

    rough_reports, refined_reports = evaluate_split(cfg, samples, rough_fn)
    rough_mean = write_reports(os.path.join(out_dir, "metrics_rough.csv"), rough_reports)
    refined_mean = write_reports(os.path.join(out_dir, "metrics_refined.csv"), refined_reports)
    return {"rough": rough_mean, "refined": refined_mean}


def run_eval_similarity(cfg: RunConfig, seed: int, count: int, out_dir) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    samples = generate_dataset(count, cfg.image_extent, seed)
    feats = text_features(cfg)

    def rough_fn(sample):
        return similarity_rough_map(sample.image, feats[sample.category], cfg)

    rough_reports, refined_reports = evaluate_split(cfg, samples, rough_fn)
    rough_mean = write_reports(os.path.join(out_dir, "metrics_rough.csv"), rough_reports)
    refined_mean = write_reports(os.path.join(out_dir, "metrics_refined.csv"), refined_reports)
    return {"rough": rough_mean, "refined": refined_mean}


def run_infer(ckpt_path, image: np.ndarray, out_dir, stem: str,
              no_mmr: bool = False, no_umci: bool = False) -> dict:
    """Write rough map, binary mask, prompt dump, refined map and overlay."""
    model, cfg = load_model_for_checkpoint(ckpt_path)
    os.makedirs(out_dir, exist_ok=True)
    bank = load_prompt_bank()  # category-unknown mode: 'object' placeholder
    from .encoders import encode_text_mock
    text = build_text_feature(bank, encode_text_mock, cfg.encoder)
    h, w = image.shape
    if no_umci:
        rough = similarity_rough_map(image, text, cfg)
    else:
        tokens = encode_image_mock(image, cfg.encoder)
        rough = model.rough_map(tokens, text, h, w)
    ob = binarize(rough, cfg.mmr.threshold)
    regions = connected_components(ob)
    boxes = extract_boxes(regions, rough.shape)
    points = extract_points(regions, cfg.mmr.points, seed=cfg.seed) if boxes else []
    prompts = PromptSet(points=points, boxes=boxes)
    if no_mmr:
        final = normalize_map(rough)
    else:
        final = refine_map(rough, image, cfg, cfg.seed)
    paths = {
        "rough": os.path.join(out_dir, f"{stem}_rough.pgm"),
        "mask": os.path.join(out_dir, f"{stem}_mask.pgm"),
        "prompts": os.path.join(out_dir, f"{stem}_prompts.txt"),
        "refined": os.path.join(out_dir, f"{stem}_refined.pgm"),
        "overlay": os.path.join(out_dir, f"{stem}_overlay.ppm"),
    }
    save_pgm(paths["rough"], rough)
    save_pgm(paths["mask"], ob.grid.astype(np.float64))
    with open(paths["prompts"], "w", encoding="utf-8") as fh:
        for line in prompts.export_lines():
            fh.write(line + "\n")
    save_pgm(paths["refined"], final)
    save_ppm(paths["overlay"], heatmap_overlay(image, final))
    return {"paths": paths, "rough": rough, "refined": final, "prompts": prompts}


ABLATION_VARIANTS = ("full", "strip_only", "scale_only", "no_umci", "no_mmr")


def variant_config(cfg: RunConfig, variant: str) -> RunConfig:
    if variant == "strip_only":
        return replace(cfg, umci=replace(cfg.umci, include_scale=False))
    if variant == "scale_only":
        return replace(cfg, umci=replace(cfg.umci, include_strip=False))
    return cfg


def run_ablate(cfg: RunConfig) -> dict:
    """Train and evaluate the structural variant matrix.

    ``no_mmr`` reuses the full model's rough maps; ``no_umci`` replaces the
    trained rough stage with the similarity baseline. Outputs are
    byte-reproducible for a fixed (config, seed).
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    eval_seed = test_seed(cfg)
    results: dict[str, dict] = {}
    for variant in ("full", "strip_only", "scale_only"):
        vcfg = variant_config(cfg, variant)
        vdir = os.path.join(cfg.out_dir, variant)
        run_train(vcfg, out_dir=vdir)
        model, _ = load_model_for_checkpoint(os.path.join(vdir, "model.ckpt"))
        results[variant] = run_eval(model, vcfg, eval_seed, cfg.test_count, vdir)
    results["no_umci"] = run_eval_similarity(
        cfg, eval_seed, cfg.test_count, os.path.join(cfg.out_dir, "no_umci"))
    # refinement-disabled row: the full model's rough metrics
    results["no_mmr"] = {"rough": results["full"]["rough"],
                         "refined": results["full"]["rough"]}
    summary = os.path.join(cfg.out_dir, "summary.csv")
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write("variant,map,auroc,ap,f1_max,pro\n")
        for variant in ABLATION_VARIANTS:
            for kind in ("rough", "refined"):
                r = results[variant][kind]
                fh.write(f"{variant},{kind},{r.auroc!r},{r.ap!r},"
                         f"{r.f1_max!r},{r.pro!r}\n")
    return results
