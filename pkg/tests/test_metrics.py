import numpy as np
import pytest
from scipy import stats as sps

from vidground.errors import UndefinedMetricError
from vidground.metrics import (
    GroundingReport,
    ReportMismatchError,
    VideoGrounding,
    aggregate_by_category,
    auc,
    correlations,
    instructional_majority,
    intra_video_auc,
    segment_auc,
    win_rate,
)


def brute_force_auc(pos, neg):
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


class TestAuc:
    def test_all_pairs_won(self):
        assert auc([0.9], [0.1, 0.5]) == 1.0

    def test_tie_counts_half(self):
        assert auc([0.5], [0.5]) == 0.5

    def test_hand_enumerated(self):
        # pairs: (.8,.5) w, (.8,.1) w, (.3,.5) l, (.3,.1) w -> 3/4
        assert auc([0.8, 0.3], [0.5, 0.1]) == 0.75

    def test_empty_side_rejected(self):
        with pytest.raises(UndefinedMetricError):
            auc([], [0.1])
        with pytest.raises(UndefinedMetricError):
            auc([0.1], [])

    def test_matches_brute_force_exactly(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n_pos = int(rng.integers(1, 12))
            n_neg = int(rng.integers(1, 12))
            # quantized scores force plenty of ties
            pos = rng.integers(0, 6, size=n_pos) / 5.0
            neg = rng.integers(0, 6, size=n_neg) / 5.0
            assert auc(pos, neg) == brute_force_auc(pos.tolist(), neg.tolist())

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            pos = rng.normal(size=5)
            neg = rng.normal(size=7)
            base = auc(pos, neg)
            assert auc(np.exp(pos), np.exp(neg)) == pytest.approx(base, abs=1e-12)
            assert auc(3 * pos + 2, 3 * neg + 2) == pytest.approx(base, abs=1e-12)


class TestIntraVideoAuc:
    def test_identity_like_matrix(self):
        sim = np.eye(4)
        assert intra_video_auc(sim) == 1.0

    def test_constant_matrix_is_half(self):
        assert intra_video_auc(np.full((3, 3), 0.7)) == 0.5

    def test_hand_matrix_matches_enumeration(self):
        sim = np.array([[0.9, 0.2, 0.4], [0.1, 0.5, 0.3], [0.6, 0.0, 0.7]])
        pos = [0.9, 0.5, 0.7]
        neg = [0.2, 0.4, 0.1, 0.3, 0.6, 0.0]
        assert intra_video_auc(sim) == brute_force_auc(pos, neg)

    def test_needs_two_segments(self):
        with pytest.raises(UndefinedMetricError):
            intra_video_auc(np.array([[1.0]]))

    def test_random_scores_mean_near_half(self):
        # label-distribution insensitivity: holds for varied matrix sizes
        rng = np.random.default_rng(2)
        for n in (2, 8, 32):
            vals = [intra_video_auc(rng.normal(size=(n, n))) for _ in range(1500)]
            assert abs(np.mean(vals) - 0.5) < 0.02


class TestSegmentAuc:
    def test_strictly_largest_wins(self):
        sim = np.array([[0.9, 0.1], [0.2, 0.8]])
        assert segment_auc(sim, 0) == 1.0
        assert segment_auc(sim, 1) == 1.0

    def test_strictly_smallest_loses(self):
        sim = np.array([[0.0, 0.5], [0.5, 0.0]])
        assert segment_auc(sim, 0) == 0.0

    def test_column_with_tie(self):
        # caption j ranked against the other clips in its column
        sim = np.zeros((3, 3))
        sim[:, 1] = [0.2, 0.5, 0.2]
        sim[:, 0] = [0.2, 0.5, 0.2]
        assert segment_auc(sim, 1) == 1.0
        assert segment_auc(sim, 0) == 0.25  # 0.2 vs {0.5, 0.2}: one loss, one tie

    def test_transpose_variant_uses_rows(self):
        sim = np.array([[0.9, 0.0, 0.0], [0.5, 0.1, 0.9], [0.0, 0.0, 0.2]])
        # row 1 = [0.5, 0.1, 0.9]: pos 0.1 vs {0.5, 0.9} -> 0
        assert segment_auc(sim, 1, transpose=True) == 0.0
        # column 1 = [0.0, 0.1, 0.0]: pos 0.1 vs {0.0, 0.0} -> 1
        assert segment_auc(sim, 1) == 1.0


def _report(rows):
    videos = [VideoGrounding(vid, 2, score, []) for vid, score in rows]
    return GroundingReport(videos=videos, n_skipped=0)


class TestAggregation:
    def test_mean_over_videos(self):
        rep = _report([("a", 0.6), ("b", 0.8)])
        cats = aggregate_by_category(rep, {"a": ["c1"], "b": ["c1"]})
        assert len(cats) == 1
        assert cats[0].mean_auc == pytest.approx(0.7)
        assert cats[0].n_videos == 2

    def test_multilabel_video_counts_everywhere(self):
        rep = _report([("a", 0.6), ("b", 0.9)])
        cats = aggregate_by_category(rep, {"a": ["c1", "c2"], "b": ["c2"]})
        by_id = {c.category_id: c for c in cats}
        assert by_id["c1"].n_videos == 1
        assert by_id["c2"].n_videos == 2
        assert by_id["c2"].mean_auc == pytest.approx(0.75)

    def test_min_videos_threshold(self):
        rep = _report([("a", 0.6), ("b", 0.7), ("c", 0.8)])
        labels = {"a": ["big"], "b": ["big"], "c": ["small"]}
        cats = aggregate_by_category(rep, labels, min_videos=2)
        assert [c.category_id for c in cats] == ["big"]

    def test_vertical_attached(self):
        rep = _report([("a", 0.6)])
        cats = aggregate_by_category(rep, {"a": ["c1"]}, verticals={"c1": "food"})
        assert cats[0].vertical_id == "food"


class TestCorrelations:
    def test_perfect_monotone(self):
        x = [1.0, 2.0, 3.0, 4.0, 5.0]
        y = [2.0, 4.0, 6.0, 8.0, 10.0]
        for kind in ("spearman", "pearson"):
            r, p = correlations(x, y, kind=kind)
            assert r == pytest.approx(1.0)
            assert p == 0.0

    def test_perfect_inverse(self):
        x = [1.0, 2.0, 3.0, 4.0]
        r, _ = correlations(x, [-v for v in x], kind="spearman")
        assert r == pytest.approx(-1.0)

    def test_spearman_matches_rank_then_pearson(self):
        x = [3.0, 1.0, 1.0, 4.0, 2.0]  # one tie pair
        y = [0.5, 0.9, 0.3, 0.1, 0.8]
        r, _ = correlations(x, y, kind="spearman")
        rx, ry = sps.rankdata(x), sps.rankdata(y)
        expected = np.corrcoef(rx, ry)[0, 1]
        assert r == pytest.approx(expected, abs=1e-12)

    def test_pvalue_matches_t_approximation(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=30)
        y = 0.4 * x + rng.normal(size=30)
        r, p = correlations(x, y, kind="pearson")
        t = r * np.sqrt(28 / (1 - r * r))
        assert p == pytest.approx(2 * sps.t.sf(abs(t), df=28), rel=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(UndefinedMetricError):
            correlations([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], kind="pearson")

    def test_permutation_pvalue_reasonable(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=40)
        y = x + 0.2 * rng.normal(size=40)
        _, p = correlations(x, y, kind="spearman", permutations=200, seed=0)
        assert p <= 0.01  # strong signal
        x2 = rng.normal(size=40)
        y2 = rng.normal(size=40)
        _, p2 = correlations(x2, y2, kind="spearman", permutations=200, seed=0)
        assert p2 > 0.05  # no signal


class TestWinRate:
    def test_identical_reports_half(self):
        a = {"v1": 0.6, "v2": 0.7}
        assert win_rate(a, dict(a)) == 0.5

    def test_strictly_better_everywhere(self):
        a = {"v1": 0.9, "v2": 0.8}
        b = {"v1": 0.1, "v2": 0.2}
        assert win_rate(a, b) == 1.0

    def test_two_thirds(self):
        a = {"v1": 0.9, "v2": 0.8, "v3": 0.1}
        b = {"v1": 0.5, "v2": 0.5, "v3": 0.5}
        assert win_rate(a, b) == pytest.approx(2 / 3)

    def test_self_comparison_exactly_half(self):
        rng = np.random.default_rng(5)
        a = {f"v{i}": float(rng.uniform()) for i in range(37)}
        assert win_rate(a, dict(a)) == 0.5

    def test_mismatched_sets_listed(self):
        with pytest.raises(ReportMismatchError, match="v2"):
            win_rate({"v1": 0.5, "v2": 0.5}, {"v1": 0.5})

    def test_instructional_filter(self):
        votes = {"v1": (1, 1, 0), "v2": (0, 0, 1), "v3": (1, 1, 1)}
        a = {"v1": 0.9, "v2": 0.9, "v3": 0.1}
        b = {"v1": 0.1, "v2": 0.1, "v3": 0.9}
        keep = instructional_majority(votes, want_instructional=True)
        assert win_rate(a, b, include=keep) == pytest.approx(0.5)  # v1 win, v3 loss
        keep_non = instructional_majority(votes, want_instructional=False)
        assert win_rate(a, b, include=keep_non) == 1.0  # v2 only
