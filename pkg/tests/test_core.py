from fractions import Fraction

import numpy as np
import pytest

from llp.core import (
    Bag,
    BagDataset,
    BagFormatError,
    DiscreteDistribution,
    FiniteClass,
    load_bags,
    load_csv,
    make_bags,
    sample_dataset,
    save_bags,
)


class TestBag:
    def test_alpha_is_count_over_k(self):
        bag = Bag(np.zeros((4, 2)), 3)
        assert bag.k == 4
        assert bag.feature_dim == 2
        assert bag.alpha() == 0.75

    def test_one_dimensional_instances_become_columns(self):
        bag = Bag([0.0, 1.0, 2.0], 1)
        assert bag.instances.shape == (3, 1)

    @pytest.mark.parametrize("count", [-1, 5, 1.5])
    def test_rejects_bad_counts(self, count):
        with pytest.raises(ValueError):
            Bag(np.zeros((4, 1)), count)

    def test_rejects_nan_features(self):
        with pytest.raises(ValueError, match="NaN"):
            Bag(np.array([[0.0], [np.nan]]), 1)

    def test_labels_must_match_count(self):
        with pytest.raises(ValueError, match="disagrees"):
            Bag(np.zeros((3, 1)), 2, labels=[1, 0, 0])

    def test_immutable(self):
        bag = Bag(np.zeros((2, 1)), 1)
        with pytest.raises(ValueError):
            bag.instances[0, 0] = 5.0

    def test_equality(self):
        a = Bag(np.ones((2, 1)), 1, [0, 1])
        assert a == Bag(np.ones((2, 1)), 1, [0, 1])
        assert a != Bag(np.ones((2, 1)), 1)
        assert a != Bag(np.ones((2, 1)), 2)


class TestBagDataset:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.labels = rng.integers(0, 2, (6, 3))
        self.X = rng.normal(size=(6, 3, 2))
        self.D = BagDataset(self.X, self.labels.sum(axis=1), self.labels)

    def test_shapes(self):
        D = self.D
        assert (D.n, D.k, D.feature_dim) == (6, 3, 2)
        assert D.instances.shape == (18, 2)
        assert len(D) == 6

    def test_p_hat_is_label_mean(self):
        assert self.D.p_hat == pytest.approx(self.labels.mean())

    def test_int_index_gives_bag(self):
        bag = self.D[2]
        assert isinstance(bag, Bag)
        np.testing.assert_array_equal(bag.instances, self.X[2])
        assert bag.label_count == self.labels[2].sum()

    def test_slice_gives_dataset(self):
        sub = self.D[[0, 2]]
        assert isinstance(sub, BagDataset)
        assert sub.n == 2
        np.testing.assert_array_equal(sub.counts, self.D.counts[[0, 2]])

    def test_from_bags_round_trip(self):
        assert BagDataset.from_bags(list(self.D)) == self.D

    def test_from_bags_rejects_mixed_k(self):
        with pytest.raises(ValueError, match="heterogeneous"):
            BagDataset.from_bags([Bag(np.zeros((2, 1)), 0), Bag(np.zeros((3, 1)), 0)])

    def test_without_labels(self):
        D = self.D.without_labels()
        assert not D.has_labels
        np.testing.assert_array_equal(D.counts, self.D.counts)

    def test_counts_validated(self):
        with pytest.raises(ValueError):
            BagDataset(np.zeros((2, 3, 1)), [0, 4])
        with pytest.raises(ValueError, match="integers"):
            BagDataset(np.zeros((2, 3, 1)), [0.5, 1])

    def test_labels_must_agree_with_counts(self):
        with pytest.raises(ValueError, match="disagree"):
            BagDataset(np.zeros((1, 2, 1)), [1], [[1, 1]])


class TestDiscreteDistribution:
    def test_marginal_p(self):
        dist = DiscreteDistribution([0, 1, 2], [1, 0, 1], [0.2, 0.5, 0.3])
        assert dist.p == pytest.approx(0.5)
        assert dist.m == 3

    def test_fractions_kept_exactly(self):
        dist = DiscreteDistribution([0, 1], [0, 1], [Fraction(1, 3), Fraction(2, 3)])
        assert dist.probs_exact == (Fraction(1, 3), Fraction(2, 3))

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            DiscreteDistribution([0, 1], [0, 1], [0.5, 0.6])
        with pytest.raises(ValueError, match="sum"):
            DiscreteDistribution([0, 1], [0, 1], [Fraction(1, 2), Fraction(1, 3)])

    def test_empty_support_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            DiscreteDistribution(np.zeros((0, 1)), [], [])

    def test_sampling_frequencies(self):
        dist = DiscreteDistribution([0, 1, 2], [0, 1, 1], [0.1, 0.6, 0.3])
        X, y = dist.sample(200_000, np.random.default_rng(1))
        freq = np.bincount(X[:, 0].astype(int), minlength=3) / X.shape[0]
        np.testing.assert_allclose(freq, dist.probs, atol=0.005)

    def test_zero_probability_points_never_drawn(self):
        dist = DiscreteDistribution([0, 1, 2], [0, 1, 1], [0.5, 0.0, 0.5])
        X, _ = dist.sample(10_000, np.random.default_rng(2))
        assert not np.any(X[:, 0] == 1)


class TestFiniteClass:
    def test_predict_by_index(self):
        cls = FiniteClass([[0, 1, 1], [1, 0, 0]])
        np.testing.assert_array_equal(cls.predict(0, [[2.0], [0.0]]), [1, 0])
        np.testing.assert_array_equal(cls.hypothesis(1)(np.array([[0.0]])), [1])

    def test_duplicate_rows_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            FiniteClass([[0, 1], [0, 1]])

    def test_symmetric_flag_checked(self):
        FiniteClass([[0, 1], [1, 0]], symmetric=True)
        with pytest.raises(ValueError, match="complement"):
            FiniteClass([[0, 1], [1, 1]], symmetric=True)

    def test_out_of_range_instance(self):
        cls = FiniteClass([[0, 1]])
        with pytest.raises(ValueError, match="indices"):
            cls.predict(0, [[2.0]])

    def test_hypothesis_index_checked(self):
        with pytest.raises(IndexError):
            FiniteClass([[0, 1]]).hypothesis(3)


class TestMakeBags:
    def test_identity_order(self):
        D = make_bags(np.arange(6.0), [1, 0, 0, 1, 1, 1], 3, seed=None)
        np.testing.assert_array_equal(D.counts, [1, 3])
        np.testing.assert_array_equal(D.X[1, :, 0], [3, 4, 5])

    def test_seeded_shuffle_is_reproducible(self):
        y = np.arange(12) % 2
        a = make_bags(np.arange(12.0), y, 4, seed=5)
        b = make_bags(np.arange(12.0), y, 4, seed=5)
        assert a == b
        assert a.counts.sum() == 6

    def test_indivisible_length(self):
        with pytest.raises(ValueError):
            make_bags(np.arange(5.0), np.zeros(5, int), 2)

    def test_sample_dataset_deterministic(self):
        dist = DiscreteDistribution([0, 1], [0, 1], [0.5, 0.5])
        assert sample_dataset(dist, 10, 3, 7) == sample_dataset(dist, 10, 3, 7)
        assert sample_dataset(dist, 10, 3, 7) != sample_dataset(dist, 10, 3, 8)


class TestBagFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 2, (5, 4))
        D = BagDataset(rng.normal(size=(5, 4, 3)), labels.sum(axis=1), labels)
        path = tmp_path / "bags.jsonl"
        save_bags(D, path)
        assert load_bags(path) == D

    def test_round_trip_without_labels(self, tmp_path):
        D = BagDataset(np.zeros((2, 2, 1)), [1, 2], [[0, 1], [1, 1]])
        save_bags(D, tmp_path / "b.jsonl", include_labels=False)
        out = load_bags(tmp_path / "b.jsonl")
        assert not out.has_labels
        np.testing.assert_array_equal(out.counts, [1, 2])

    def test_heterogeneous_k_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            '{"k":2,"alpha_count":1,"instances":[[0],[1]]}\n'
            '{"k":3,"alpha_count":1,"instances":[[0],[1],[2]]}\n'
        )
        with pytest.raises(BagFormatError) as err:
            load_bags(path)
        assert err.value.lineno == 2

    def test_count_out_of_range(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"k":2,"alpha_count":3,"instances":[[0],[1]]}\n')
        with pytest.raises(BagFormatError, match="line 1"):
            load_bags(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"k":2,"alpha_count":1,"instances":[[0],[1]]}\n{oops\n')
        with pytest.raises(BagFormatError) as err:
            load_bags(path)
        assert err.value.lineno == 2


class TestLoadCsv:
    def test_reads_and_bags(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b,y\n0,1,1\n2,3,0\n4,5,1\n6,7,1\n")
        D = load_csv(path, "y", 2, seed=None)
        assert (D.n, D.k, D.feature_dim) == (2, 2, 2)
        np.testing.assert_array_equal(D.counts, [1, 2])
        np.testing.assert_array_equal(D.X[0], [[0, 1], [2, 3]])

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n0,1\n")
        with pytest.raises(BagFormatError, match="not found"):
            load_csv(path, "y", 1)

    def test_bad_cell_names_line_and_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,y\n0,1\nx,0\n")
        with pytest.raises(BagFormatError, match="line 3.*'a'"):
            load_csv(path, "y", 1)

    def test_non_binary_label(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,y\n0,2\n")
        with pytest.raises(BagFormatError, match="not 0 or 1"):
            load_csv(path, "y", 1)
