import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llp.core import Bag, BagDataset, FiniteClass
from llp.losses import (
    LossRule,
    dsq_empirical_risk,
    empirical_risk,
    eprm_bag_loss,
    ez_bag_loss,
    ez_empirical_risk,
    ez_offset,
    pm_log_bag_loss,
    pm_sq_bag_loss,
    predicted_count,
    predicted_mean,
    split_indices,
    zero_one_risk,
)


def table_predictor(values):
    values = np.asarray(values, dtype=np.float64)

    def f(X):
        return values[np.asarray(X)[:, 0].astype(int)]

    return f


@st.composite
def prediction_datasets(draw):
    """Random real-valued prediction matrices with label counts."""
    k = draw(st.integers(1, 8))
    n = draw(st.integers(1, 12))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    F = rng.uniform(0, 1, (n, k))
    if draw(st.booleans()):
        F = np.round(F)
    counts = rng.integers(0, k + 1, n)
    return F, counts


def dataset_from_predictions(F, counts):
    n, k = F.shape
    X = np.arange(n * k, dtype=np.float64).reshape(n, k, 1)
    return BagDataset(X, counts), table_predictor(F.ravel())


class TestLossRule:
    @pytest.mark.parametrize(
        "alias, tag",
        [("eprm", "EPRM01"), ("pm-sq", "PM_SQ"), ("PM.Log", "PM_LOG"), ("dsq", "DSQ"), ("easyllp", "EZ")],
    )
    def test_aliases(self, alias, tag):
        assert LossRule(alias).tag == tag

    def test_unknown_rule(self):
        with pytest.raises(ValueError, match="unknown rule"):
            LossRule("hinge")

    def test_bad_p_mode(self):
        with pytest.raises(ValueError):
            LossRule("EZ", p_mode="guess")

    def test_with_p(self):
        rule = LossRule("EZ", p_mode="plugin").with_p(0.25)
        assert rule.p_mode == "known" and rule.p == 0.25


class TestBagLosses:
    def setup_method(self):
        self.cls = FiniteClass([[0, 1, 1, 0]])
        self.f = self.cls.hypothesis(0)
        # predictions 0, 1, 1, 0, 1 -> three positives
        self.bag = Bag([[0.0], [1.0], [2.0], [3.0], [1.0]], 2)

    def test_predicted_count_and_mean(self):
        assert predicted_count(self.f, self.bag) == 3
        assert predicted_mean(self.f, self.bag) == pytest.approx(0.6)

    def test_eprm(self):
        assert eprm_bag_loss(self.f, self.bag) == 1
        assert eprm_bag_loss(self.f, Bag(self.bag.instances, 3)) == 0

    def test_pm_sq(self):
        assert pm_sq_bag_loss(self.f, self.bag) == pytest.approx(0.2**2)
        assert pm_sq_bag_loss(self.f, self.bag, k_scaled=True) == pytest.approx(5 * 0.2**2)

    def test_pm_log_matches_cross_entropy(self):
        expected = -0.4 * math.log(0.6) - 0.6 * math.log(0.4)
        assert pm_log_bag_loss(self.f, self.bag) == pytest.approx(expected, rel=1e-12)

    def test_pm_log_clamps(self):
        zero = FiniteClass([[0, 0, 0, 0]]).hypothesis(0)
        bag = Bag(self.bag.instances, 1)
        value = pm_log_bag_loss(zero, bag, log_eps=1e-7)
        assert value == pytest.approx(-0.2 * math.log(1e-7) - 0.8 * math.log1p(-1e-7))
        assert np.isfinite(value)

    def test_ez_formula(self):
        k, alpha, p, fbar = 5, 0.4, 0.3, 0.6
        expected = (k * (alpha - p) + p) * (1 - fbar) + (k * (p - alpha) + 1 - p) * fbar
        assert ez_bag_loss(self.f, self.bag, p) == pytest.approx(expected, rel=1e-12)

    def test_ez_rejects_bad_p(self):
        with pytest.raises(ValueError):
            ez_bag_loss(self.f, self.bag, 1.5)

    def test_predicted_count_needs_binary(self):
        with pytest.raises(TypeError):
            predicted_count(lambda X: np.full(len(X), 0.5), self.bag)

    def test_real_outputs_clipped(self):
        bag = Bag([[0.0], [1.0]], 1)
        assert predicted_mean(lambda X: np.array([-1.0, 2.0]), bag) == 0.5


class TestEmpiricalRisk:
    def test_eprm_counts_mismatched_bags(self):
        cls = FiniteClass([[0, 1]])
        D = BagDataset(np.array([[[0], [1]], [[1], [1]], [[0], [0]]], dtype=float), [1, 1, 0])
        assert empirical_risk("EPRM01", cls.hypothesis(0), D) == pytest.approx(1 / 3)

    def test_eprm_rejects_real_predictor(self):
        D = BagDataset(np.zeros((1, 2, 1)), [1])
        with pytest.raises(TypeError):
            empirical_risk("EPRM01", lambda X: np.zeros(len(X)), D)

    def test_dsq_decomposition_matches_loops(self):
        rng = np.random.default_rng(4)
        F = rng.uniform(size=(7, 3))
        counts = rng.integers(0, 4, 7)
        D, f = dataset_from_predictions(F, counts)
        res = dsq_empirical_risk(f, D)
        k = 3
        sq = sum(k * (F[i].mean() - counts[i] / k) ** 2 for i in range(7)) / 7
        bias = (k - 1) * (F.mean() - counts.sum() / 21) ** 2
        assert res.sq == pytest.approx(sq, abs=1e-14)
        assert res.bias == pytest.approx(bias, abs=1e-14)
        assert res.dsq == pytest.approx(sq - bias, abs=1e-14)
        assert empirical_risk("DSQ", f, D) == pytest.approx(res.dsq, abs=1e-14)

    def test_ez_known_plugin_split(self):
        rng = np.random.default_rng(5)
        F = rng.uniform(size=(10, 4))
        counts = rng.integers(0, 5, 10)
        D, f = dataset_from_predictions(F, counts)
        k = 4

        def manual(p, rows):
            return np.mean([(k * (counts[i] / k - p) + p) * (1 - F[i].mean()) + (k * (p - counts[i] / k) + 1 - p) * F[i].mean() for i in rows])

        assert ez_empirical_risk(f, D, "known", 0.3) == pytest.approx(manual(0.3, range(10)), abs=1e-13)
        assert ez_empirical_risk(f, D, "plugin") == pytest.approx(manual(D.p_hat, range(10)), abs=1e-13)
        est, ev = split_indices(10, seed=2)
        p_est = counts[est].sum() / (est.size * k)
        assert ez_empirical_risk(f, D, "split", split_seed=2) == pytest.approx(manual(p_est, ev), abs=1e-13)

    def test_known_mode_requires_p(self):
        D = BagDataset(np.zeros((1, 2, 1)), [1])
        with pytest.raises(ValueError):
            ez_empirical_risk(lambda X: np.zeros(len(X)), D, "known")

    def test_zero_one_risk(self):
        D = BagDataset(np.array([[[0], [1]], [[2], [3]]], dtype=float), [1, 1], [[0, 1], [1, 0]])
        f = table_predictor([0.2, 0.7, 0.5, 0.9])
        # ties at 0.5 predict 1: predictions 0, 1, 1, 1 against labels 0, 1, 1, 0
        assert zero_one_risk(f, D) == 0.25

    def test_zero_one_needs_labels(self):
        with pytest.raises(ValueError):
            zero_one_risk(lambda X: np.zeros(len(X)), BagDataset(np.zeros((1, 2, 1)), [0]))


class TestSplitIndices:
    def test_partition(self):
        est, ev = split_indices(11, seed=3)
        assert sorted(np.concatenate([est, ev]).tolist()) == list(range(11))
        assert est.size == 6 and ev.size == 5

    def test_deterministic(self):
        a = split_indices(20, 1)
        b = split_indices(20, 1)
        np.testing.assert_array_equal(a[0], b[0])

    def test_needs_two_bags(self):
        with pytest.raises(ValueError):
            split_indices(1)


class TestDsqInequalities:
    """Relations between the square risk, its bias term and the debiased risk."""

    @settings(max_examples=300, deadline=None)
    @given(prediction_datasets())
    def test_bias_bounded_by_square_risk(self, data):
        F, counts = data
        D, f = dataset_from_predictions(F, counts)
        r = dsq_empirical_risk(f, D)
        k = D.k
        assert r.bias <= (k - 1) / k * r.sq + 1e-9

    @settings(max_examples=300, deadline=None)
    @given(prediction_datasets())
    def test_debiased_risk_nonnegative(self, data):
        F, counts = data
        D, f = dataset_from_predictions(F, counts)
        assert dsq_empirical_risk(f, D).dsq >= -1e-9

    @settings(max_examples=300, deadline=None)
    @given(prediction_datasets())
    def test_square_risk_bounded_by_k_times_debiased(self, data):
        F, counts = data
        D, f = dataset_from_predictions(F, counts)
        r = dsq_empirical_risk(f, D)
        assert r.sq <= D.k * r.dsq + 1e-9


class TestOffset:
    @settings(max_examples=200, deadline=None)
    @given(prediction_datasets(), st.floats(0, 1), st.integers(0, 2**32 - 1))
    def test_offset_equals_risk_difference(self, data, p, seed):
        F, counts = data
        D, f = dataset_from_predictions(F, counts)
        g = table_predictor(np.random.default_rng(seed).uniform(size=F.size))
        rule = LossRule("EZ", p=p)
        diff = empirical_risk(rule, f, D) - empirical_risk(rule, g, D)
        assert ez_offset(f, g, D, p) == pytest.approx(diff, abs=1e-10)

    def test_offset_of_complement_pair(self):
        # k = 2, f* = identity on {0, 1}; offset of 1 - f* against f* is mean k(2 alpha - 1)^2
        cls = FiniteClass([[1, 0], [0, 1]])
        X = np.array([[[0], [1]], [[1], [1]], [[0], [0]]], dtype=float)
        D = BagDataset(X, [1, 2, 0])
        value = ez_offset(cls.hypothesis(0), cls.hypothesis(1), D, 0.5)
        assert value == pytest.approx(np.mean(2 * (2 * D.alphas - 1) ** 2))
