"""Paired-comparison statistics, agreement, regression, and strata."""
import numpy as np
import pytest
from scipy import stats as scipy_stats

from nodulebench.stats import (BENIGN, MALIGNANT, StatsError, auc_from_scores, band_call,
                               cohens_kappa, delong_paired, diameter_band,
                               difficulty_band, difficulty_labels, kappa_band,
                               kappa_matrix, logistic_fit, mcnemar, metric_report,
                               reader_case, stratified_report)


def labeled(flags):
    return [MALIGNANT if f else BENIGN for f in flags]


@pytest.fixture(scope="module")
def paired():
    rng = np.random.default_rng(0)
    truth = np.array([True] * 50 + [False] * 50)
    sig = truth.astype(float)
    a = sig * 1.2 + rng.normal(0, 1, 100)
    b = sig * 0.8 + 0.6 * (a - sig * 1.2) + rng.normal(0, 0.8, 100)
    return a, b, truth


@pytest.fixture(scope="module")
def synthetic():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(200, 2))
    eta = 0.3 + 1.1 * x[:, 0] - 0.7 * x[:, 1]
    y = (rng.random(200) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
    return x, y


class TestDelong:
    def test_identical_scores_degenerate(self, paired):
        a, _, truth = paired
        res = delong_paired(a, a, truth)
        assert res.z == 0.0
        assert res.p == 1.0
        assert res.var_diff == 0.0
        assert res.auc_a == res.auc_b

    def test_aucs_match_exact_routine(self, paired):
        a, b, truth = paired
        res = delong_paired(a, b, truth)
        assert res.auc_a == auc_from_scores(a, truth)
        assert res.auc_b == auc_from_scores(b, truth)

    def test_variance_against_paired_bootstrap(self, paired):
        a, b, truth = paired
        res = delong_paired(a, b, truth)
        rng = np.random.default_rng(1)
        diffs = []
        while len(diffs) < 2000:
            idx = rng.integers(0, 100, 100)
            t = truth[idx]
            if t.all() or not t.any():
                continue
            diffs.append(auc_from_scores(a[idx], t) - auc_from_scores(b[idx], t))
        boot_var = float(np.var(diffs, ddof=1))
        assert abs(res.var_diff - boot_var) <= 0.15 * boot_var

    def test_sign_and_symmetry(self, paired):
        a, b, truth = paired
        res = delong_paired(a, b, truth)
        flipped = delong_paired(b, a, truth)
        assert res.auc_a > res.auc_b
        assert res.z > 0.0
        assert flipped.z == -res.z
        assert flipped.p == res.p

    def test_monotone_shift_gives_p_one(self, paired):
        a, _, truth = paired
        res = delong_paired(a, a + 3.5, truth)
        assert res.p == 1.0
        assert res.auc_a == res.auc_b

    def test_accepts_class_labels(self, paired):
        a, b, truth = paired
        res = delong_paired(a, b, labeled(truth))
        assert res.auc_a == auc_from_scores(a, truth)

    def test_degenerate_inputs(self):
        with pytest.raises(StatsError, match="both classes"):
            delong_paired([1.0, 2.0], [2.0, 1.0], [True, True])
        with pytest.raises(StatsError, match="length"):
            delong_paired([1.0, 2.0], [2.0], [True, False])
        with pytest.raises(StatsError, match="two cases per class"):
            delong_paired([1.0, 2.0], [2.0, 1.0], [True, False])


class TestMcnemar:
    def test_b_ten_c_zero_exact_binomial(self):
        truth = [MALIGNANT] * 12
        calls_a = [MALIGNANT] * 10 + [BENIGN] * 2
        calls_b = [BENIGN] * 10 + [BENIGN] * 2
        res = mcnemar(calls_a, calls_b, truth)
        assert (res.b, res.c) == (10, 0)
        assert res.exact
        assert res.p == 0.001953125  # 2 * (1/2)**10

    def test_symmetric_discordance_is_one(self):
        truth = [MALIGNANT] * 4 + [BENIGN] * 4
        calls_a = [MALIGNANT, MALIGNANT, BENIGN, BENIGN] + [BENIGN] * 4
        calls_b = [BENIGN, BENIGN, MALIGNANT, MALIGNANT] + [BENIGN] * 4
        res = mcnemar(calls_a, calls_b, truth)
        assert res.b == res.c == 2
        assert res.p == 1.0

    def test_no_discordance(self):
        truth = [MALIGNANT, BENIGN]
        res = mcnemar(truth, truth, truth)
        assert (res.b, res.c) == (0, 0)
        assert res.statistic == 0.0
        assert res.p == 1.0

    def test_large_sample_chi_square_branch(self):
        truth = [MALIGNANT] * 40
        calls_a = [MALIGNANT] * 30 + [BENIGN] * 10
        calls_b = [BENIGN] * 20 + [MALIGNANT] * 20
        res = mcnemar(calls_a, calls_b, truth)
        assert (res.b, res.c) == (20, 10)
        assert not res.exact
        expected_stat = (abs(20 - 10) - 1.0) ** 2 / 30
        assert res.statistic == expected_stat
        assert res.p == pytest.approx(scipy_stats.chi2.sf(expected_stat, 1), rel=1e-12)

    def test_swap_swaps_b_and_c(self):
        rng = np.random.default_rng(2)
        truth = labeled(rng.random(30) < 0.5)
        calls_a = labeled(rng.random(30) < 0.5)
        calls_b = labeled(rng.random(30) < 0.5)
        r1 = mcnemar(calls_a, calls_b, truth)
        r2 = mcnemar(calls_b, calls_a, truth)
        assert (r1.b, r1.c) == (r2.c, r2.b)
        assert r1.p == r2.p

    def test_length_mismatch(self):
        with pytest.raises(StatsError):
            mcnemar([BENIGN], [BENIGN, BENIGN], [BENIGN, BENIGN])


class TestKappa:
    def test_perfect_agreement(self):
        calls = [MALIGNANT, BENIGN, MALIGNANT, BENIGN]
        assert cohens_kappa(calls, calls) == 1.0

    def test_independence_table_is_zero(self):
        # joint counts 25 in every cell of the 2x2 table
        calls_a = labeled([False] * 50 + [True] * 50)
        calls_b = labeled(([False] * 25 + [True] * 25) * 2)
        assert cohens_kappa(calls_a, calls_b) == 0.0

    def test_hand_table(self):
        # [[20, 5], [10, 15]]: p_o = 0.7, p_e = 0.5, kappa = 0.4
        calls_a = labeled([False] * 25 + [True] * 25)
        calls_b = labeled([False] * 20 + [True] * 5 + [False] * 10 + [True] * 15)
        assert cohens_kappa(calls_a, calls_b) == 0.4

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a = labeled(rng.random(40) < 0.4)
        b = labeled(rng.random(40) < 0.6)
        assert cohens_kappa(a, b) == cohens_kappa(b, a)

    def test_constant_identical_raters_undefined(self):
        with pytest.raises(StatsError, match="undefined"):
            cohens_kappa([BENIGN] * 5, [BENIGN] * 5)

    def test_band_cut_points(self):
        assert kappa_band(0.19) == "poor"
        assert kappa_band(-0.3) == "poor"
        assert kappa_band(0.2) == "fair"
        assert kappa_band(0.313) == "fair"
        assert kappa_band(0.4) == "fair"
        assert kappa_band(0.421) == "moderate"
        assert kappa_band(0.6) == "moderate"
        assert kappa_band(0.8) == "substantial"
        assert kappa_band(0.81) == "almost perfect"
        assert kappa_band(1.0) == "almost perfect"

    def test_twelve_reader_matrix(self):
        rng = np.random.default_rng(4)
        base = rng.random(50) < 0.5
        readers = {}
        for i in range(12):
            flips = rng.random(50) < 0.2
            readers[f"r{i:02d}"] = labeled(base ^ flips)
        km = kappa_matrix(readers)
        assert km.matrix.shape == (12, 12)
        assert np.array_equal(km.matrix, km.matrix.T)
        assert np.array_equal(np.diag(km.matrix), np.ones(12))
        upper = km.matrix[np.triu_indices(12, k=1)]
        assert upper.size == 66
        assert km.overall == float(np.mean(upper))
        assert km.overall_band == kappa_band(km.overall)
        assert km.readers == tuple(f"r{i:02d}" for i in range(12))

    def test_matrix_needs_equal_lengths(self):
        with pytest.raises(StatsError, match="different numbers"):
            kappa_matrix({"a": [BENIGN, MALIGNANT], "b": [BENIGN]})

    def test_matrix_flags_degenerate_pair(self):
        readers = {"a": [BENIGN] * 4, "b": [BENIGN] * 4}
        with pytest.raises(StatsError, match="a vs b"):
            kappa_matrix(readers)


class TestLogistic:
    def test_intercept_only_balanced(self):
        fit = logistic_fit(np.empty((10, 0)), [0, 1] * 5)
        assert fit.coef[0] == 0.0
        assert fit.odds_ratio[0] == 1.0
        assert fit.names == ("intercept",)
        assert fit.converged

    def test_matches_reference_mle(self, synthetic):
        import statsmodels.api as sm
        x, y = synthetic
        fit = logistic_fit(x, y, feature_names=("a", "b"))
        ref = sm.Logit(y, sm.add_constant(x)).fit(disp=0)
        assert np.abs(fit.coef - np.asarray(ref.params)).max() < 1e-8
        assert np.abs(fit.std_err - np.asarray(ref.bse)).max() < 1e-8
        assert np.abs(fit.p_value - np.asarray(ref.pvalues)).max() < 1e-8
        assert fit.names == ("intercept", "a", "b")
        assert not fit.separated

    def test_matches_coordinate_grid_search(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(30, 2))
        eta = 0.5 + 0.9 * x[:, 0] - 0.4 * x[:, 1]
        y = (rng.random(30) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        design = np.hstack([np.ones((30, 1)), x])

        # iterated per-coordinate scan, independent of the IRLS path
        def loglik(beta):
            e = design @ beta
            return float(np.sum(y * e - np.log1p(np.exp(np.clip(e, -500, 500)))))

        beta = np.zeros(3)
        width = 2.0
        for _ in range(60):
            for j in range(3):
                grid = beta[j] + np.linspace(-width, width, 41)
                vals = []
                for g in grid:
                    trial = beta.copy()
                    trial[j] = g
                    vals.append(loglik(trial))
                beta[j] = grid[int(np.argmax(vals))]
            width *= 0.7
        fit = logistic_fit(x, y)
        assert np.abs(fit.coef - beta).max() < 1e-3

    def test_odds_ratio_and_ci_shape(self, synthetic):
        x, y = synthetic
        fit = logistic_fit(x, y)
        assert np.array_equal(fit.odds_ratio, np.exp(fit.coef))
        assert fit.or_ci.shape == (3, 2)
        assert (fit.or_ci[:, 0] <= fit.odds_ratio).all()
        assert (fit.odds_ratio <= fit.or_ci[:, 1]).all()
        rows = fit.to_rows()
        assert [r["term"] for r in rows] == ["intercept", "x1", "x2"]

    def test_separation_flagged(self):
        y = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        fit = logistic_fit(y.astype(float), y)
        assert fit.separated

    def test_singular_design(self):
        rng = np.random.default_rng(7)
        col = rng.normal(size=20)
        x = np.stack([col, 2.0 * col], axis=1)
        y = (rng.random(20) < 0.5).astype(int)
        with pytest.raises(StatsError, match="singular"):
            logistic_fit(x, y)

    def test_input_validation(self):
        with pytest.raises(StatsError, match="binary"):
            logistic_fit(np.zeros((4, 1)), [0, 1, 2, 1])
        with pytest.raises(StatsError, match="rows"):
            logistic_fit(np.zeros((2, 2)), [0, 1])
        with pytest.raises(StatsError, match="names"):
            logistic_fit(np.zeros((9, 2)), [0, 1] * 4 + [0], feature_names=("only",))


def make_cases(rng, n=40):
    cases = []
    for i in range(n):
        malignant = bool(rng.random() < 0.5)
        score = int(rng.integers(6, 11)) if malignant else int(rng.integers(1, 6))
        if rng.random() < 0.2:  # some mistakes so metrics are non-trivial
            score = 11 - score
        cases.append(reader_case(f"c{i:03d}", MALIGNANT if malignant else BENIGN,
                                 score, band_call(score)))
    return cases


class TestStrata:
    def test_diameter_bands(self):
        assert diameter_band(4.0) == "4-10mm"
        assert diameter_band(9.999) == "4-10mm"
        assert diameter_band(10.0) == "10-20mm"
        assert diameter_band(20.0) == "20-30mm"
        assert diameter_band(30.0) == "20-30mm"
        with pytest.raises(StatsError):
            diameter_band(3.9)
        with pytest.raises(StatsError):
            diameter_band(30.1)

    def test_difficulty_strict_inequalities(self):
        assert difficulty_band(8 / 12) == "intermediate"   # exactly two thirds
        assert difficulty_band(9 / 12) == "low"
        assert difficulty_band(4 / 12) == "intermediate"   # exactly one third
        assert difficulty_band(3 / 12) == "high"
        assert difficulty_band(1.0) == "low"
        assert difficulty_band(0.0) == "high"

    def test_difficulty_labels_from_counts(self):
        labels = difficulty_labels({"a": (8, 12), "b": (9, 12), "c": (0, 12)})
        assert labels == {"a": "intermediate", "b": "low", "c": "high"}
        with pytest.raises(StatsError):
            difficulty_labels({"bad": (5, 0)})

    def test_partition_identity(self):
        cases = make_cases(np.random.default_rng(8))
        labels = {c.id: "all" for c in cases}
        strat = stratified_report(cases, labels, n_resamples=200)
        flat = metric_report(cases, n_resamples=200)
        assert strat["all"].n == len(cases)
        assert strat["all"].report.to_dict() == flat.to_dict()

    def test_two_strata_partition(self):
        cases = make_cases(np.random.default_rng(9))
        labels = {c.id: ("even" if i % 2 == 0 else "odd")
                  for i, c in enumerate(cases)}
        strat = stratified_report(cases, labels, n_resamples=100)
        assert strat["even"].n + strat["odd"].n == len(cases)
        even_cases = [c for i, c in enumerate(cases) if i % 2 == 0]
        expected = metric_report(even_cases, n_resamples=100)
        assert strat["even"].report.to_dict() == expected.to_dict()

    def test_empty_stratum_reported_not_dropped(self):
        cases = make_cases(np.random.default_rng(10), n=10)
        labels = {c.id: "present" for c in cases}
        strat = stratified_report(cases, labels, order=("present", "absent"),
                                  n_resamples=50)
        assert strat["absent"].n == 0
        assert strat["absent"].report is None
        assert strat["absent"].to_dict() == {"label": "absent", "n": 0, "report": None}

    def test_single_class_stratum_reports_without_auc(self):
        cases = [reader_case(f"m{i}", MALIGNANT, 8, MALIGNANT) for i in range(6)]
        labels = {c.id: "onlymalignant" for c in cases}
        strat = stratified_report(cases, labels, n_resamples=50)
        rep = strat["onlymalignant"].report
        assert rep.value("auc") is None
        assert rep.value("sensitivity") == 1.0

    def test_missing_label_rejected(self):
        cases = make_cases(np.random.default_rng(11), n=4)
        labels = {c.id: "x" for c in cases[:-1]}
        with pytest.raises(StatsError, match="without a stratum label"):
            stratified_report(cases, labels)
