from fractions import Fraction

import numpy as np
import pytest

from llp.core import BagDataset, FiniteClass, sample_dataset
from llp.exact import class_exact_risks, class_risks, exact_bag_expectation, exact_risk
from llp.losses import LossRule, ez_bag_loss
from llp.synthetic import (
    INSTANCE_NAMES,
    LowerBoundFamily,
    ThresholdClass,
    eprm_expfail_instance,
    eprm_tie_probability,
    get_problem,
    hypothesis_by_name,
    lower_bound_sample,
    prop32_instance,
    prop41_instance,
    separable_sample,
    separation_check,
    threshold_class,
    threshold_sample,
)


class TestFixedConstructions:
    def test_square_loss_counterexample(self):
        dist, cls = prop32_instance()
        assert cls.symmetric and cls.vc_dim == 1
        assert dist.probs_exact == (Fraction(1, 3),) * 3
        assert exact_risk(hypothesis_by_name(cls, "f1"), dist) == pytest.approx(2 / 3)
        assert exact_risk(hypothesis_by_name(cls, "f2"), dist) == pytest.approx(1 / 3)

    def test_slow_estimation_instance(self):
        dist, f_star = prop41_instance()
        assert f_star.index == 1
        assert exact_risk(f_star, dist) == 0.0
        assert exact_risk(f_star.cls.hypothesis(0), dist) == 1.0

    def test_slow_estimation_ez_bag_loss_is_plus_minus_half(self):
        dist, f_star = prop41_instance()
        D = sample_dataset(dist, 200, 2, 0)
        values = {ez_bag_loss(f_star, bag, 0.5) for bag in D}
        assert values <= {-0.5, 0.5}

    def test_eprm_expfail(self):
        dist, cls = eprm_expfail_instance(0.1)
        assert dist.p == pytest.approx(0.6)
        np.testing.assert_allclose(class_exact_risks(cls, dist), [0.6, 0.4])

    def test_eprm_expfail_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            eprm_expfail_instance(0.6)

    @pytest.mark.parametrize("k, eps", [(3, 0.1), (5, 0.2), (8, 0.01)])
    def test_tie_probability_matches_enumeration(self, k, eps):
        dist, _ = eprm_expfail_instance(eps)
        impure = exact_bag_expectation(lambda s, c: ((c > 0) & (c < k)) * 1.0, np.zeros(2), dist, k)
        assert eprm_tie_probability(eps, k, 1) == pytest.approx(impure, abs=1e-14)
        assert eprm_tie_probability(eps, k, 7) == pytest.approx(impure**7, rel=1e-12)

    def test_large_bag_tie_probability(self):
        # two-term binomial expansion of (1 - q)^n, q the chance a bag is pure
        q = 0.51**20 + 0.49**20
        approx = 1 - 100 * q + 4950 * q**2
        assert eprm_tie_probability(0.01, 20, 100) == pytest.approx(approx, abs=1e-10)
        assert eprm_tie_probability(0.01, 20, 100) > 0.9997


class TestThresholdClass:
    def setup_method(self):
        self.m = 9
        self.cls = ThresholdClass(self.m)
        self.table = FiniteClass(self.cls.table)

    def test_rows(self):
        t = self.cls.table
        assert t.shape == (18, 9)
        np.testing.assert_array_equal(t[3], (np.arange(9) >= 3).astype(int))
        np.testing.assert_array_equal(t[9 + 3], (np.arange(9) < 3).astype(int))

    @pytest.mark.parametrize("rule", ["EPRM01", "PM_SQ", "PM_LOG", "DSQ", LossRule("EZ", p=0.35), LossRule("EZ", p_mode="split")])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_fast_path_matches_table(self, rule, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 6))
        n = int(rng.integers(2, 15))
        X = rng.integers(0, self.m, (n, k, 1)).astype(float)
        D = BagDataset(X, rng.integers(0, k + 1, n))
        fast = self.cls.empirical_risks(LossRule(rule) if isinstance(rule, str) else rule, D)
        slow = class_risks(rule, self.table, D)
        np.testing.assert_allclose(fast, slow, atol=1e-12)

    def test_exact_risks_match_table(self):
        cls, dist, f_star = threshold_class(self.m, noise=0.2, seed=3)
        np.testing.assert_allclose(cls.exact_risks(dist), class_exact_risks(self.table, dist), atol=1e-15)
        assert cls.exact_risks(dist)[f_star.index] == pytest.approx(0.2)

    def test_predict_all_guard(self):
        with pytest.raises(MemoryError):
            ThresholdClass(2**20).predict_all(np.zeros((100, 1)))

    def test_bad_instances(self):
        with pytest.raises(ValueError):
            self.cls.predict(0, [[9.0]])

    def test_noise_validated(self):
        with pytest.raises(ValueError):
            threshold_class(10, noise=0.5)


class TestThresholdSample:
    def test_law_matches_distribution(self):
        m, noise = 8, 0.3
        cls, dist, f_star = threshold_class(m, noise, seed=1)
        D = threshold_sample(40_000, 5, 0, m, f_star.index, noise)
        x = D.instances[:, 0].astype(int)
        y = D.labels.ravel()
        joint = np.zeros((m, 2))
        np.add.at(joint, (x, y), 1)
        joint /= joint.sum()
        expected = np.zeros((m, 2))
        np.add.at(expected, (dist.points[:, 0].astype(int), dist.labels), dist.probs)
        np.testing.assert_allclose(joint, expected, atol=0.004)

    def test_realizable_labels_follow_target(self):
        D = threshold_sample(50, 3, 4, 100, 40)
        np.testing.assert_array_equal(D.labels.ravel(), (D.instances[:, 0] >= 40).astype(int))


class TestLowerBoundFamily:
    def test_exact_risks(self):
        fam = LowerBoundFamily(3, 0.25, 5)
        risks = fam.exact_risks()
        assert risks[5] == 0.25
        assert np.all(np.delete(risks, 5) == 0.5)

    def test_exact_risks_match_sample(self):
        fam = LowerBoundFamily(3, 0.2, 2)
        D = lower_bound_sample(fam, 4000, 5, 0)
        X, y = D.instances, D.labels.ravel()
        emp = (X.T != y[None, :]).mean(axis=1)
        np.testing.assert_allclose(emp, fam.exact_risks(), atol=0.01)

    def test_validation(self):
        with pytest.raises(ValueError):
            LowerBoundFamily(2, 0.1)
        with pytest.raises(ValueError):
            LowerBoundFamily(3, 0.7)
        with pytest.raises(ValueError):
            LowerBoundFamily(3, 0.1, 8)

    @pytest.mark.parametrize("gamma", [Fraction(1, 2), Fraction(1, 16)])
    def test_separation_values(self, gamma):
        fam = LowerBoundFamily(4, float(gamma))
        # f_j is each member's best hypothesis exactly when j equals that member
        assert separation_check(fam, 3, 3, 7) == gamma
        assert separation_check(fam, 7, 3, 7) == gamma
        assert separation_check(fam, 1, 3, 7) == 2 * gamma
        assert separation_check(fam, 3, 3, 3) == 0

    def test_separation_matches_risk_gaps(self):
        fam = LowerBoundFamily(3, 0.25)
        rng = np.random.default_rng(0)
        for _ in range(50):
            j, i, i2 = rng.integers(0, fam.M, 3)
            gap = (fam.exact_risks(i)[j] - fam.exact_risks(i)[i]) + (fam.exact_risks(i2)[j] - fam.exact_risks(i2)[i2])
            assert float(separation_check(fam, j, i, i2)) == pytest.approx(gap, abs=1e-15)

    def test_deterministic_alpha_at_half(self):
        fam = LowerBoundFamily(4, 0.5, 9)
        D = lower_bound_sample(fam, 30, 6, 2)
        np.testing.assert_array_equal(D.counts, D.X[:, :, 9].sum(axis=1))


class TestSeparableSample:
    def test_margin_and_labels(self):
        D = separable_sample(200, 5, 0, dim=2, margin=0.5)
        rng = np.random.default_rng(0)
        w = rng.normal(size=2)
        w /= np.linalg.norm(w)
        b = rng.uniform(-0.5, 0.5)
        score = D.instances @ w + b
        assert np.all(np.abs(score) >= 0.5)
        np.testing.assert_array_equal(D.labels.ravel(), (score > 0).astype(int))

    def test_deterministic(self):
        assert separable_sample(10, 3, 1) == separable_sample(10, 3, 1)


class TestGetProblem:
    @pytest.mark.parametrize("name", INSTANCE_NAMES)
    def test_all_names_build_and_sample(self, name):
        params = {"m": 64} if name == "threshold" else {}
        problem = get_problem(name, **params)
        D = problem.sample(4, 3, 0)
        assert D.n == 4 and D.k == 3
        if problem.risks is not None:
            assert problem.excess_risk(int(np.argmin(problem.risks))) == 0.0

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown instance"):
            get_problem("nope")
