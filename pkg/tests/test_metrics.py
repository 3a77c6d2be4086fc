import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evidnet import metrics as met
from evidnet.exceptions import ArgumentError

score_lists = st.lists(
    st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=15
)


def brute_force_pauc(pos, neg, spec_lo, spec_hi, steps=2_000_000):
    """Rectangle-sum integration of the step ROC (valid when scores are untied)."""
    pos = np.asarray(pos)
    neg = np.asarray(neg)
    f_lo, f_hi = 1.0 - spec_hi, 1.0 - spec_lo
    xs = np.linspace(f_lo, f_hi, steps, endpoint=False) + (f_hi - f_lo) / (2 * steps)
    # tpr as a function of fpr on the step curve
    thresholds = np.sort(np.unique(np.concatenate([pos, neg])))[::-1]
    fprs = np.array([np.mean(neg > t) for t in thresholds] + [1.0])
    tprs = np.array([np.mean(pos > t) for t in thresholds] + [1.0])
    idx = np.searchsorted(fprs, xs, side="left")
    vals = tprs[np.clip(idx, 0, len(tprs) - 1)]
    return vals.mean()


class TestRoc:
    def test_perfect_separation(self):
        assert met.roc([0.9, 0.8], [0.1, 0.2]).auc == 1.0

    def test_identical_distributions(self):
        assert met.roc([0.3, 0.7], [0.3, 0.7]).auc == pytest.approx(0.5, abs=1e-12)

    def test_pairwise_counting(self):
        # 4 pairs: wins 3, losses 1
        assert met.roc([0.8, 0.4], [0.6, 0.2]).auc == pytest.approx(0.75, abs=1e-12)

    def test_empty_class_rejected(self):
        with pytest.raises(ArgumentError):
            met.roc([], [0.1])

    def test_endpoints_present(self, rng):
        analysis = met.roc(rng.uniform(size=9), rng.uniform(size=7))
        sens = [p.sensitivity for p in analysis.points]
        assert sens[0] == 0.0 and analysis.points[0].specificity == 1.0
        assert sens[-1] == 1.0 and analysis.points[-1].specificity == 0.0
        thresholds = [p.threshold for p in analysis.points]
        assert all(a > b for a, b in zip(thresholds, thresholds[1:]))
        assert all(a <= b for a, b in zip(sens, sens[1:]))

    @given(score_lists, score_lists)
    @settings(max_examples=300, deadline=None)
    def test_trapezoid_equals_mann_whitney(self, pos, neg):
        analysis = met.roc(pos, neg)
        assert analysis.auc == pytest.approx(met.mann_whitney_auc(pos, neg), abs=1e-12)

    # coarse grid so the transform below stays strictly increasing in float64
    coarse = score_lists.map(lambda xs: [round(x, 3) for x in xs])

    @given(coarse, coarse)
    @settings(max_examples=100, deadline=None)
    def test_monotone_transform_invariance(self, pos, neg):
        f = lambda s: np.exp(3.0 * np.asarray(s)) + 1.0  # strictly increasing
        a = met.roc(pos, neg)
        b = met.roc(f(pos), f(neg))
        assert a.auc == pytest.approx(b.auc, abs=1e-9)
        assert met.partial_auc(a) == pytest.approx(met.partial_auc(b), abs=1e-9)
        assert met.tpr_at_specificity(a) == pytest.approx(met.tpr_at_specificity(b), abs=1e-12)


class TestPartialAuc:
    def test_perfect(self):
        assert met.partial_auc(met.roc([0.9, 0.8], [0.1, 0.2])) == pytest.approx(1.0, abs=1e-12)

    def test_diagonal_reference(self):
        # analytic: int_0^0.1 x dx / 0.1 = 0.05 for an idealized TPR=FPR curve;
        # large identical samples give exactly the tie diagonal
        scores = list(np.linspace(0, 1, 50))
        analysis = met.roc(scores, scores)
        assert met.partial_auc(analysis) == pytest.approx(0.05, abs=1e-3)

    def test_full_range_equals_auc(self, rng):
        for _ in range(20):
            analysis = met.roc(rng.uniform(size=8), rng.uniform(size=11))
            assert met.partial_auc(analysis, 0.0, 1.0) == pytest.approx(analysis.auc, abs=1e-12)

    def test_matches_brute_force_rectangles(self, rng):
        scores = rng.permutation(np.linspace(0.01, 0.99, 20))  # untied
        pos, neg = scores[:10], scores[10:]
        analysis = met.roc(pos, neg)
        want = brute_force_pauc(pos, neg, 0.90, 1.0)
        assert met.partial_auc(analysis) == pytest.approx(want, abs=1e-5)

    def test_invalid_range(self):
        analysis = met.roc([0.9], [0.1])
        with pytest.raises(ArgumentError):
            met.partial_auc(analysis, 0.95, 0.90)


class TestTprAtSpecificity:
    def test_perfect(self):
        assert met.tpr_at_specificity(met.roc([0.9, 0.8], [0.1, 0.2])) == 1.0

    def test_degenerate_identical_scores(self):
        analysis = met.roc([0.5] * 4, [0.5] * 4)
        assert met.tpr_at_specificity(analysis, 0.95) == 0.0

    def test_matches_exhaustive_sweep(self, rng):
        pos = rng.uniform(size=10)
        neg = rng.uniform(size=10)
        analysis = met.roc(pos, neg)
        best = 0.0
        for t in np.concatenate([pos, neg, [-np.inf]]):
            spec = np.mean(neg <= t)
            if spec >= 0.95:
                best = max(best, np.mean(pos > t))
        assert met.tpr_at_specificity(analysis, 0.95) == pytest.approx(best, abs=1e-12)


class TestCohensKappa:
    def test_perfect_agreement(self):
        assert met.cohens_kappa([0, 1, 1, 0], [0, 1, 1, 0]) == 1.0

    def test_confusion_matrix_example(self):
        decisions = [0] * 40 + [1] * 10 + [1] * 40 + [0] * 10
        reference = [0] * 50 + [1] * 50
        assert met.cohens_kappa(decisions, reference) == pytest.approx(0.6, abs=1e-12)

    def test_all_negative_vs_balanced(self):
        assert met.cohens_kappa([0] * 10, [0] * 5 + [1] * 5) == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_marginals(self):
        assert met.cohens_kappa([1, 1], [1, 1]) == 1.0
        assert met.cohens_kappa([0, 0], [0, 0]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            met.cohens_kappa([0, 1], [0])

    @given(
        st.lists(st.sampled_from([0, 1]), min_size=2, max_size=30),
        st.lists(st.sampled_from([0, 1]), min_size=2, max_size=30),
    )
    @settings(max_examples=200, deadline=None)
    def test_symmetry(self, a, b):
        n = min(len(a), len(b))
        a, b = a[:n], b[:n]
        assert met.cohens_kappa(a, b) == pytest.approx(met.cohens_kappa(b, a), abs=1e-12)
        if len(set(a)) > 1:
            assert met.cohens_kappa(a, a) == 1.0


class TestSelectThreshold:
    def test_youden_on_separated_scores(self):
        analysis = met.roc([0.9, 0.8], [0.2, 0.1])
        point = met.select_threshold(analysis, met.YOUDEN)
        assert point.sensitivity == 1.0 and point.specificity == 1.0
        assert 0.2 <= point.threshold < 0.8

    def test_at_sensitivity_covers_top_half(self):
        pos = [0.9, 0.7, 0.5, 0.3]
        neg = [0.6, 0.4]
        analysis = met.roc(pos, neg)
        point = met.select_threshold(analysis, met.AT_SENSITIVITY, target=0.5)
        # the point covering exactly the top 2 positives
        assert point.sensitivity == 0.5
        assert sum(p > point.threshold for p in pos) == 2

    def test_youden_matches_exhaustive_sweep(self, rng):
        pos = rng.uniform(size=12)
        neg = rng.uniform(size=12) * 0.8
        analysis = met.roc(pos, neg)
        point = met.select_threshold(analysis, met.YOUDEN)
        best = max(
            np.mean(pos > t) + np.mean(neg <= t) - 1.0
            for t in np.concatenate([pos, neg, [-np.inf]])
        )
        assert point.sensitivity + point.specificity - 1.0 == pytest.approx(best, abs=1e-12)

    def test_unknown_rule(self):
        with pytest.raises(ArgumentError):
            met.select_threshold(met.roc([1.0], [0.0]), "magic")
