"""Pixel-level evaluation: AUROC, average precision, F1-max and per-region
overlap, each implemented as an efficient sweep with a brute-force oracle
twin living in the test suite.

All four metrics depend on scores only through their ordering, so they are
invariant under strictly increasing transforms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import GroundTruth
from .mmr import BinaryMask, connected_components

PRO_FPR_LIMIT = 0.3


@dataclass
class ScoredPixels:
    """Flat per-pixel scores with binary labels, paired by index."""
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels).reshape(-1)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels must pair up by index")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be binary")
        self.labels = self.labels.astype(np.int64)
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(len(self.labels) - self.labels.sum())


@dataclass
class MetricsReport:
    auroc: float
    ap: float
    f1_max: float
    pro: float

    def __post_init__(self):
        for name in ("auroc", "ap", "f1_max", "pro"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def line(self, tag: str) -> str:
        return (f"{tag},{self.auroc!r},{self.ap!r},"
                f"{self.f1_max!r},{self.pro!r}")


REPORT_HEADER = "image,auroc,ap,f1_max,pro"


def write_reports(path, reports: list[MetricsReport]) -> MetricsReport:
    """Per-image comma-separated lines plus a dataset-mean footer line."""
    mean = MetricsReport(
        float(np.mean([r.auroc for r in reports])),
        float(np.mean([r.ap for r in reports])),
        float(np.mean([r.f1_max for r in reports])),
        float(np.mean([r.pro for r in reports])))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(REPORT_HEADER + "\n")
        for i, r in enumerate(reports):
            fh.write(r.line(str(i)) + "\n")
        fh.write(mean.line("mean") + "\n")
    return mean


def auroc(sp: ScoredPixels) -> float:
    """Probability a random positive outranks a random negative; ties count
    one half (rank-sum / Mann-Whitney formulation)."""
    p, n = sp.n_pos, sp.n_neg
    if p == 0 or n == 0:
        raise ValueError("AUROC needs both classes present")
    order = np.argsort(sp.scores, kind="stable")
    sorted_scores = sp.scores[order]
    ranks = np.empty(len(order))
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[i:j + 1] = 0.5 * (i + j) + 1.0  # average 1-based rank over the tie group
        i = j + 1
    pos_rank_sum = ranks[sp.labels[order] == 1].sum()
    return float((pos_rank_sum - p * (p + 1) / 2.0) / (p * n))


def average_precision(sp: ScoredPixels) -> float:
    """Step-wise AP: precision accumulated at each positive in descending
    score order, ties broken by original index (stable sort)."""
    p = sp.n_pos
    if p == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-sp.scores, kind="stable")
    hits = sp.labels[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    precision = tp / ranks
    return float(precision[hits == 1].sum() / p)


def f1_max(sp: ScoredPixels) -> float:
    """Best F1 over thresholds t in the distinct score values, predicting
    positive where score >= t."""
    p = sp.n_pos
    if p == 0:
        raise ValueError("F1-max needs at least one positive")
    order = np.argsort(-sp.scores, kind="stable")
    scores = sp.scores[order]
    hits = sp.labels[order]
    tp = np.cumsum(hits)
    k = np.arange(1, len(hits) + 1)
    # only evaluate at the last index of each tie group (prediction set for
    # threshold == that score includes every tied pixel)
    last_of_group = np.ones(len(scores), dtype=bool)
    last_of_group[:-1] = scores[:-1] != scores[1:]
    f1 = 2.0 * tp[last_of_group] / (k[last_of_group] + p)
    return float(f1.max())


def _pro_curve(anomaly_map: np.ndarray, gt: GroundTruth):
    """(fpr, mean-per-region-overlap) points at every distinct score level,
    descending, starting from the empty prediction at (0, 0)."""
    regions = connected_components(BinaryMask(gt.mask.astype(np.uint8)))
    if not regions:
        raise ValueError("PRO needs at least one ground-truth region")
    scores = np.asarray(anomaly_map, dtype=np.float64).reshape(-1)
    labels = gt.mask.reshape(-1).astype(bool)
    n_neg = int((~labels).sum())
    if n_neg == 0:
        raise ValueError("PRO needs at least one negative pixel")
    region_ids = np.zeros(scores.shape, dtype=np.int64)  # 0 = background
    h, w = gt.mask.shape
    for r in regions:
        region_ids[r.pixels[:, 0] * w + r.pixels[:, 1]] = r.label
    sizes = np.array([len(r.pixels) for r in regions], dtype=np.float64)

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_region = region_ids[order]
    sorted_neg = ~labels[order]

    fprs = [0.0]
    pros = [0.0]
    tp_per_region = np.zeros(len(regions) + 1)
    fp = 0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        for idx in range(i, j + 1):
            if sorted_neg[idx]:
                fp += 1
            else:
                tp_per_region[sorted_region[idx]] += 1
        fprs.append(fp / n_neg)
        pros.append(float(np.mean(tp_per_region[1:] / sizes)))
        i = j + 1
    return np.array(fprs), np.array(pros)


def integrate_to_limit(fprs: np.ndarray, pros: np.ndarray,
                       limit: float = PRO_FPR_LIMIT) -> float:
    """Left-step area under the (fpr, pro) curve up to the FPR limit,
    normalized by the limit.

    Between observed operating points no intermediate prediction set exists,
    so only overlap already achieved at the lower FPR is credited. This makes
    a prediction disjoint from every region score exactly 0 and an exact
    prediction score exactly 1.
    """
    area = 0.0
    last_x = 0.0
    last_y = 0.0
    for x, y in zip(fprs, pros):
        if x > last_x:
            area += last_y * (min(x, limit) - last_x)
            if x >= limit:
                last_x = limit
                break
            last_x = x
        last_y = y
    if last_x < limit:
        area += last_y * (limit - last_x)
    return float(area / limit)


def pro(anomaly_map: np.ndarray, gt: GroundTruth) -> float:
    """Mean fraction of each connected ground-truth region covered by the
    thresholded prediction, integrated over FPR in [0, 0.3], normalized."""
    fprs, pros = _pro_curve(anomaly_map, gt)
    return integrate_to_limit(fprs, pros)


def evaluate_map(anomaly_map: np.ndarray, gt: GroundTruth) -> MetricsReport:
    sp = ScoredPixels(np.asarray(anomaly_map).reshape(-1), gt.mask.reshape(-1))
    return MetricsReport(auroc(sp), average_precision(sp), f1_max(sp),
                         pro(anomaly_map, gt))
