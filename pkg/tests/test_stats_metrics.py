import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodulebench.stats import (BENIGN, MALIGNANT, ConfusionCounts, ScoredCase,
                               StatsError, auc_from_scores, band_call,
                               bootstrap_ci, compute_metrics, metric_report,
                               patient_aggregate, point_metrics, reader_case,
                               roc_auc, select_threshold_max_f1)


def cases_from(scores, truths, calls=None):
    calls = calls if calls is not None else [BENIGN] * len(scores)
    return [ScoredCase(id=f"c{i}", truth=t, score=float(s), call=c)
            for i, (s, t, c) in enumerate(zip(scores, truths, calls))]


def mann_whitney_oracle(scores, labels):
    """Independent AUC: pair counting with half credit for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (int(wins) * 2 + int(ties)) / (2 * pos.size * neg.size)


class TestConfusion:
    def test_from_cases(self):
        cases = [
            ScoredCase("a", MALIGNANT, 0.9, MALIGNANT),
            ScoredCase("b", MALIGNANT, 0.2, BENIGN),
            ScoredCase("c", BENIGN, 0.8, MALIGNANT),
            ScoredCase("d", BENIGN, 0.1, BENIGN),
        ]
        counts = ConfusionCounts.from_cases(cases)
        assert (counts.tp, counts.fn, counts.fp, counts.tn) == (1, 1, 1, 1)
        assert counts.total == 4

    def test_rejects_negative(self):
        with pytest.raises(StatsError):
            ConfusionCounts(tp=-1, fp=0, tn=0, fn=0)

    def test_unknown_labels_rejected(self):
        with pytest.raises(StatsError):
            ScoredCase("a", "indeterminate", 0.5, BENIGN)
        with pytest.raises(StatsError):
            ScoredCase("a", BENIGN, 0.5, "maybe")


class TestPointMetrics:
    def test_hand_worked_table(self):
        # tp=3, fn=1, tn=4, fp=2
        vals = point_metrics(ConfusionCounts(tp=3, fp=2, tn=4, fn=1))
        assert vals["sensitivity"] == 0.75
        assert vals["specificity"] == pytest.approx(2 / 3, rel=1e-15)
        assert vals["accuracy"] == 0.7
        assert vals["ppv"] == 0.6
        assert vals["npv"] == 0.8
        assert vals["f1"] == pytest.approx(2 / 3, rel=1e-15)

    def test_perfect_classifier(self):
        truths = [MALIGNANT] * 3 + [BENIGN] * 5
        cases = cases_from([1] * 3 + [0] * 5, truths, calls=truths)
        _, vals = compute_metrics(cases)
        assert vals["sensitivity"] == 1.0
        assert vals["specificity"] == 1.0
        assert vals["accuracy"] == 1.0
        assert vals["fpr"] == 0.0 and vals["fnr"] == 0.0

    def test_undefined_never_zero(self):
        # no malignant truth: sensitivity/fnr undefined, specificity fine
        vals = point_metrics(ConfusionCounts(tp=0, fp=2, tn=3, fn=0))
        assert vals["sensitivity"] is None
        assert vals["fnr"] is None
        assert vals["specificity"] == 0.6
        # no positive calls: ppv undefined
        vals = point_metrics(ConfusionCounts(tp=0, fp=0, tn=3, fn=2))
        assert vals["ppv"] is None

    def test_empty_input_rejected(self):
        with pytest.raises(StatsError):
            compute_metrics([])

    def test_complement_identities_exact(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            tp, fp, tn, fn = (int(v) for v in rng.integers(0, 40, size=4))
            vals = point_metrics(ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn))
            if vals["sensitivity"] is not None:
                assert vals["sensitivity"] + vals["fnr"] == 1.0
            if vals["specificity"] is not None:
                assert vals["specificity"] + vals["fpr"] == 1.0

    def test_formula_oracle_1000_tables(self):
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(1000):
            tp, fp, tn, fn = (int(v) for v in rng.integers(0, 60, size=4))
            if tp + fp + tn + fn == 0:
                continue
            vals = point_metrics(ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn))
            oracle = {
                "sensitivity": tp / (tp + fn) if tp + fn else None,
                "specificity": tn / (tn + fp) if tn + fp else None,
                "accuracy": (tp + tn) / (tp + fp + tn + fn),
                "ppv": tp / (tp + fp) if tp + fp else None,
                "npv": tn / (tn + fn) if tn + fn else None,
                "f1": 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else None,
                "fpr": fp / (fp + tn) if fp + tn else None,
                "fnr": fn / (fn + tp) if fn + tp else None,
            }
            for name, expect in oracle.items():
                if expect is None:
                    assert vals[name] is None, name
                else:
                    assert vals[name] == pytest.approx(expect, rel=1e-12, abs=1e-12), name
                    checked += 1
        assert checked > 4000


class TestRocAuc:
    def test_hand_worked_pairs(self):
        cases = cases_from([0.1, 0.4, 0.35, 0.8],
                           [BENIGN, BENIGN, MALIGNANT, MALIGNANT])
        _, auc = roc_auc(cases)
        assert auc == 0.75

    def test_perfect_separation(self):
        cases = cases_from([0.9, 0.8, 0.2, 0.1],
                           [MALIGNANT, MALIGNANT, BENIGN, BENIGN])
        _, auc = roc_auc(cases)
        assert auc == 1.0

    def test_all_ties(self):
        cases = cases_from([0.5] * 6, [MALIGNANT] * 2 + [BENIGN] * 4)
        _, auc = roc_auc(cases)
        assert auc == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(StatsError):
            roc_auc(cases_from([0.1, 0.9], [BENIGN, BENIGN]))

    def test_curve_endpoints_and_monotonicity(self):
        rng = np.random.default_rng(3)
        scores = rng.random(40)
        truths = [MALIGNANT if v else BENIGN for v in rng.integers(0, 2, size=40)]
        curve, _ = roc_auc(cases_from(scores, truths))
        assert curve[0] == (0.0, 0.0)
        assert curve[-1] == (1.0, 1.0)
        xs, ys = zip(*curve)
        assert all(a <= b for a, b in zip(xs, xs[1:]))
        assert all(a <= b for a, b in zip(ys, ys[1:]))

    @settings(max_examples=120, deadline=None)
    @given(st.data())
    def test_trapezoid_equals_mann_whitney(self, data):
        n = data.draw(st.integers(4, 200))
        # coarse grid forces ties
        scores = data.draw(st.lists(
            st.sampled_from([i / 8 for i in range(9)]), min_size=n, max_size=n))
        labels = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
        if sum(labels) in (0, n):
            labels[0] = 1 - labels[0]
        got = auc_from_scores(np.array(scores), np.array(labels))
        assert got == pytest.approx(mann_whitney_oracle(scores, labels), abs=1e-12)

    def test_reader_ordinal_scores(self):
        rng = np.random.default_rng(5)
        scores = rng.integers(1, 11, size=60)
        labels = rng.integers(0, 2, size=60)
        labels[0], labels[1] = 0, 1
        got = auc_from_scores(scores.astype(float), labels)
        assert got == pytest.approx(mann_whitney_oracle(scores, labels), abs=1e-12)


def brute_force_best_f1(scores, labels):
    """Exhaustive scan oracle: lowest threshold with maximal F1 under >=."""
    uniq = sorted(set(scores))
    cands = [float("-inf")]
    cands += [(a + b) / 2 for a, b in zip(uniq, uniq[1:])]
    cands += [float("inf")]
    best_t, best_f1 = None, -1.0
    for t in cands:
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 0)
        fn = sum(1 for s, y in zip(scores, labels) if s < t and y == 1)
        f1 = 2 * tp / (2 * tp + fp + fn)
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    return best_t, best_f1


class TestThresholdSelection:
    def test_hand_worked_midpoint(self):
        cases = cases_from([0.2, 0.3, 0.7, 0.9],
                           [BENIGN, BENIGN, MALIGNANT, MALIGNANT])
        assert select_threshold_max_f1(cases) == 0.5

    def test_separable_singleton(self):
        cases = cases_from([0.1, 0.2, 0.95],
                           [BENIGN, BENIGN, MALIGNANT])
        t = select_threshold_max_f1(cases)
        assert 0.2 < t < 0.95
        tp = sum(1 for c in cases if c.score >= t and c.truth == MALIGNANT)
        assert tp == 1

    def test_single_class_rejected(self):
        with pytest.raises(StatsError):
            select_threshold_max_f1(cases_from([0.4, 0.6], [MALIGNANT, MALIGNANT]))

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(400):
            n = int(rng.integers(4, 60))
            # mix of continuous and tied grid scores
            if rng.random() < 0.5:
                scores = list(rng.random(n))
            else:
                scores = list(rng.integers(0, 6, size=n) / 5.0)
            labels = list(rng.integers(0, 2, size=n))
            if sum(labels) in (0, n):
                labels[0] = 1 - labels[0]
            got = select_threshold_max_f1(cases_from(
                scores, [MALIGNANT if y else BENIGN for y in labels]))
            want_t, want_f1 = brute_force_best_f1(scores, labels)
            assert got == want_t, (scores, labels, got, want_t, want_f1)


class TestBootstrap:
    def test_constant_statistic_degenerate_interval(self):
        cases = cases_from([0.5] * 10, [BENIGN] * 5 + [MALIGNANT] * 5)
        lo, hi = bootstrap_ci(lambda cs: 0.42, cases, n_resamples=50,
                              rng=np.random.default_rng(0))
        assert (lo, hi) == (0.42, 0.42)

    def test_seeded_determinism(self):
        rng_scores = np.random.default_rng(2)
        scores = rng_scores.random(30)
        truths = [MALIGNANT if v else BENIGN for v in rng_scores.integers(0, 2, 30)]
        cases = cases_from(scores, truths)

        def stat(cs):
            s, y = zip(*((c.score, 1 if c.truth == MALIGNANT else 0) for c in cs))
            return auc_from_scores(np.array(s), np.array(y))

        a = bootstrap_ci(stat, cases, rng=np.random.default_rng(9))
        b = bootstrap_ci(stat, cases, rng=np.random.default_rng(9))
        assert a == b
        assert a[0] <= a[1]

    def test_undefined_resamples_redrawn(self):
        # one malignant among twelve: many resamples are single-class
        cases = cases_from([0.9] + [0.1] * 11, [MALIGNANT] + [BENIGN] * 11)

        def stat(cs):
            s, y = zip(*((c.score, 1 if c.truth == MALIGNANT else 0) for c in cs))
            return auc_from_scores(np.array(s), np.array(y))

        lo, hi = bootstrap_ci(stat, cases, n_resamples=200,
                              rng=np.random.default_rng(4))
        assert 0.0 <= lo <= hi <= 1.0

    def test_redraw_cap(self):
        cases = cases_from([0.5], [BENIGN])

        def always_undefined(cs):
            raise StatsError("nope")

        with pytest.raises(StatsError, match="cap"):
            bootstrap_ci(always_undefined, cases, n_resamples=10,
                         rng=np.random.default_rng(0))


class TestPatientAggregate:
    def test_max_score_rule(self):
        cases = cases_from([3, 8], [BENIGN, MALIGNANT], [BENIGN, MALIGNANT])
        (patient,) = patient_aggregate(cases, ["p1", "p1"])
        assert patient.score == 8
        assert patient.truth == MALIGNANT
        assert patient.call == MALIGNANT

    def test_all_benign_patient(self):
        cases = cases_from([2, 4], [BENIGN, BENIGN], [BENIGN, BENIGN])
        (patient,) = patient_aggregate(cases, ["p1", "p1"])
        assert patient.truth == BENIGN and patient.call == BENIGN

    def test_singleton_identity(self):
        case = ScoredCase("n1", MALIGNANT, 0.7, MALIGNANT)
        (patient,) = patient_aggregate([case], ["p9"])
        assert patient.score == case.score
        assert patient.truth == case.truth and patient.call == case.call
        assert patient.id == "p9"

    def test_auc_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(6)
        n = 60
        scores = rng.random(n)
        truths = [MALIGNANT if v else BENIGN for v in rng.integers(0, 2, n)]
        truths[0], truths[1] = BENIGN, MALIGNANT
        pids = [f"p{int(i)}" for i in rng.integers(0, 25, n)]
        calls = [MALIGNANT if s >= 0.5 else BENIGN for s in scores]

        def patient_auc(transform):
            cs = cases_from([transform(s) for s in scores], truths, calls)
            pts = patient_aggregate(cs, pids)
            s, y = zip(*((c.score, 1 if c.truth == MALIGNANT else 0) for c in pts))
            return auc_from_scores(np.array(s), np.array(y))

        base = patient_auc(lambda s: s)
        assert patient_auc(lambda s: s ** 3) == base
        assert patient_auc(lambda s: math.exp(4 * s) - 2) == base

    def test_mismatched_ids_rejected(self):
        with pytest.raises(StatsError):
            patient_aggregate(cases_from([1], [BENIGN]), ["p1", "p2"])


class TestReaderCases:
    def test_band_call(self):
        assert band_call(1) == BENIGN
        assert band_call(5) == BENIGN
        assert band_call(6) == MALIGNANT
        assert band_call(10) == MALIGNANT

    def test_band_bounds(self):
        for bad in (0, 11, 5.5):
            with pytest.raises(StatsError):
                band_call(bad)

    def test_reader_case_band_consistency(self):
        case = reader_case("r", MALIGNANT, 7, MALIGNANT)
        assert case.score == 7.0
        with pytest.raises(StatsError):
            reader_case("r", MALIGNANT, 7, BENIGN)


class TestMetricReport:
    def test_report_shape_and_cis(self):
        rng = np.random.default_rng(8)
        n = 50
        scores = rng.random(n)
        truths = [MALIGNANT if rng.random() < s else BENIGN for s in scores]
        if MALIGNANT not in truths:
            truths[0] = MALIGNANT
        if BENIGN not in truths:
            truths[1] = BENIGN
        calls = [MALIGNANT if s >= 0.5 else BENIGN for s in scores]
        report = metric_report(cases_from(scores, truths, calls),
                               rng=np.random.default_rng(1), n_resamples=200)
        assert report.n == n and report.level == "nodule"
        for name in ("auc", "sensitivity", "specificity", "accuracy",
                     "ppv", "npv", "f1", "fpr", "fnr"):
            mv = report.metrics[name]
            assert mv.value is not None
            lo, hi = mv.ci
            assert lo <= mv.value <= hi

    def test_report_to_dict_roundtrips_counts(self):
        cases = cases_from([0.9, 0.1], [MALIGNANT, BENIGN], [MALIGNANT, BENIGN])
        report = metric_report(cases, with_ci=False)
        d = report.to_dict()
        assert d["counts"] == {"tp": 1, "fp": 0, "tn": 1, "fn": 0}
        assert d["metrics"]["auc"]["value"] == 1.0
