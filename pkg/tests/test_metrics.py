import numpy as np
import pytest

from clipsam.losses import GroundTruth
from clipsam.metrics import (MetricsReport, ScoredPixels, auroc,
                             average_precision, evaluate_map, f1_max,
                             integrate_to_limit, pro, write_reports)

# ---------------------------------------------------------------------------
# brute-force oracles


def auroc_pair_counting(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def ap_rank_walk(scores, labels):
    order = np.argsort(-scores, kind="stable")
    total = 0.0
    p = int(labels.sum())
    for rank, idx in enumerate(order, start=1):
        if labels[idx] == 1:
            hits = sum(1 for jdx in order[:rank] if labels[jdx] == 1)
            total += hits / rank
    return total / p


def f1_threshold_sweep(scores, labels):
    best = 0.0
    p = int(labels.sum())
    for t in np.unique(scores):
        pred = scores >= t
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        fn = p - tp
        denom = 2 * tp + fp + fn
        if denom:
            best = max(best, 2 * tp / denom)
    return best


def pro_dense_sweep(anomaly_map, gt_mask, limit=0.3):
    """Recompute the whole curve per threshold with explicit region loops and
    integrate with an independent left-step accumulation."""
    from clipsam.mmr import BinaryMask, connected_components
    regions = connected_components(BinaryMask(gt_mask.astype(np.uint8)))
    neg = gt_mask == 0
    n_neg = int(neg.sum())
    points = [(0.0, 0.0)]
    for t in sorted(np.unique(anomaly_map), reverse=True):
        pred = anomaly_map >= t
        fpr = float((pred & neg).sum()) / n_neg
        overlaps = []
        for r in regions:
            inside = sum(1 for x, y in r.pixels if pred[x, y])
            overlaps.append(inside / len(r.pixels))
        points.append((fpr, float(np.mean(overlaps))))
    area = 0.0
    for (x0, y0), (x1, _) in zip(points, points[1:]):
        lo = min(x0, limit)
        hi = min(x1, limit)
        area += y0 * (hi - lo)
    last_x, last_y = points[-1]
    if last_x < limit:
        area += last_y * (limit - last_x)
    return area / limit


def random_instance(rng, n=200, tie_prob=0.0):
    scores = rng.normal(size=n)
    if tie_prob > 0:
        scores = np.round(scores, 1)  # heavy ties
    labels = (rng.uniform(size=n) < 0.3).astype(int)
    if labels.sum() == 0:
        labels[rng.integers(0, n)] = 1
    if labels.sum() == n:
        labels[rng.integers(0, n)] = 0
    return scores, labels


# ---------------------------------------------------------------------------


class TestAuroc:
    def test_perfect_ranking(self):
        sp = ScoredPixels([3.0, 2.5, 1.0, 0.5], [1, 1, 0, 0])
        assert auroc(sp) == 1.0

    def test_all_ties(self):
        sp = ScoredPixels([1.0] * 6, [1, 0, 1, 0, 0, 1])
        assert auroc(sp) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auroc(ScoredPixels([1.0, 2.0], [1, 1]))

    @pytest.mark.parametrize("seed", range(30))
    def test_against_pair_counting(self, seed):
        rng = np.random.default_rng(seed)
        scores, labels = random_instance(rng, tie_prob=0.5 if seed % 2 else 0.0)
        got = auroc(ScoredPixels(scores, labels))
        want = auroc_pair_counting(scores, labels)
        assert abs(got - want) <= 1e-12

    def test_label_flip_complement_without_ties(self):
        rng = np.random.default_rng(99)
        scores = rng.permutation(np.arange(50, dtype=float))
        labels = (rng.uniform(size=50) < 0.4).astype(int)
        labels[0] = 1
        labels[1] = 0
        a = auroc(ScoredPixels(scores, labels))
        b = auroc(ScoredPixels(scores, 1 - labels))
        assert abs(a + b - 1.0) <= 1e-12


class TestAveragePrecision:
    def test_positives_first(self):
        sp = ScoredPixels([5.0, 4.0, 1.0, 0.5], [1, 1, 0, 0])
        assert average_precision(sp) == 1.0

    def test_single_positive_ranked_last(self):
        k = 7
        scores = np.arange(k, 0, -1, dtype=float)
        labels = np.zeros(k, dtype=int)
        labels[-1] = 1
        assert abs(average_precision(ScoredPixels(scores, labels)) - 1.0 / k) <= 1e-15

    def test_no_positives_rejected(self):
        with pytest.raises(ValueError):
            average_precision(ScoredPixels([1.0], [0]))

    @pytest.mark.parametrize("seed", range(30))
    def test_against_rank_walk(self, seed):
        rng = np.random.default_rng(seed + 100)
        scores, labels = random_instance(rng, tie_prob=0.5 if seed % 3 == 0 else 0.0)
        got = average_precision(ScoredPixels(scores, labels))
        want = ap_rank_walk(scores, labels)
        assert abs(got - want) <= 1e-12


class TestF1Max:
    def test_perfect_separation(self):
        sp = ScoredPixels([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert f1_max(sp) == 1.0

    def test_all_positive_labels(self):
        sp = ScoredPixels([0.3, 0.9, 0.5], [1, 1, 1])
        assert f1_max(sp) == 1.0

    @pytest.mark.parametrize("seed", range(30))
    def test_against_threshold_sweep(self, seed):
        rng = np.random.default_rng(seed + 200)
        scores, labels = random_instance(rng, tie_prob=0.5 if seed % 2 else 0.0)
        got = f1_max(ScoredPixels(scores, labels))
        want = f1_threshold_sweep(scores, labels)
        assert abs(got - want) <= 1e-12


class TestPro:
    def gt_with_regions(self, rng, hw=24):
        mask = np.zeros((hw, hw))
        mask[3:7, 3:8] = 1
        mask[15:19, 14:20] = 1
        if rng.uniform() > 0.5:
            mask[10, 10] = 1
        return mask

    def test_perfect_prediction(self):
        rng = np.random.default_rng(0)
        mask = self.gt_with_regions(rng)
        assert pro(mask.astype(float), GroundTruth(mask)) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_prediction(self):
        mask = np.zeros((16, 16))
        mask[2:5, 2:5] = 1
        pred = np.zeros((16, 16))
        pred[10:13, 10:13] = 1.0
        value = pro(pred, GroundTruth(mask))
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_empty_gt_rejected(self):
        with pytest.raises(ValueError):
            pro(np.zeros((8, 8)), GroundTruth(np.zeros((8, 8))))

    @pytest.mark.parametrize("seed", range(20))
    def test_against_dense_sweep(self, seed):
        rng = np.random.default_rng(seed + 300)
        mask = self.gt_with_regions(rng)
        amap = rng.uniform(size=mask.shape)
        amap[mask == 1] += rng.uniform(0, 0.5)
        amap = np.clip(amap, 0, 1)
        got = pro(amap, GroundTruth(mask))
        want = pro_dense_sweep(amap, mask)
        assert abs(got - want) <= 1e-6


class TestInvariances:
    @pytest.mark.parametrize("seed", range(10))
    def test_increasing_transform_invariance(self, seed):
        rng = np.random.default_rng(seed + 400)
        mask = np.zeros((12, 12))
        mask[4:8, 5:9] = 1
        amap = rng.uniform(size=(12, 12))
        transformed = np.exp(2.0 * amap) + 3.0
        a = evaluate_map(amap, GroundTruth(mask))
        b = evaluate_map(transformed / transformed.max(), GroundTruth(mask))
        assert abs(a.auroc - b.auroc) <= 1e-12
        assert abs(a.ap - b.ap) <= 1e-12
        assert abs(a.f1_max - b.f1_max) <= 1e-12
        assert abs(a.pro - b.pro) <= 1e-9


class TestReportIO:
    def test_range_validation(self):
        with pytest.raises(ValueError):
            MetricsReport(1.2, 0.5, 0.5, 0.5)

    def test_write_reports_footer_mean(self, tmp_path):
        reports = [MetricsReport(1.0, 1.0, 1.0, 1.0),
                   MetricsReport(0.5, 0.3, 0.2, 0.6)]
        path = tmp_path / "r.csv"
        mean = write_reports(path, reports)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "image,auroc,ap,f1_max,pro"
        assert len(lines) == 4
        assert lines[-1].startswith("mean,")
        assert mean.auroc == 0.75
