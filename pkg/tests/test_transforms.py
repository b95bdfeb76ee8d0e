import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from caravan.errors import InvalidArgument
from caravan.transforms import (
    Binarizer,
    MinMaxScaler,
    PCAReduce,
    StandardScaler,
    TfidfTransform,
    VarianceThreshold,
    check_matrix,
    fit_pca,
)


class TestCheckMatrix:
    def test_rejects_1d(self):
        with pytest.raises(InvalidArgument):
            check_matrix([1.0, 2.0])

    def test_rejects_nan(self):
        with pytest.raises(InvalidArgument):
            check_matrix([[np.nan]])

    def test_converts_lists(self):
        out = check_matrix([[1, 2], [3, 4]])
        assert out.dtype == np.float64 and out.shape == (2, 2)


class TestMinMaxScaler:
    def test_hand_example_0_2_4(self):
        scaler = MinMaxScaler().fit([[0.0], [2.0], [4.0]])
        out = scaler.transform([[0.0], [2.0], [4.0]])
        assert out[:, 0].tolist() == [0.0, 0.5, 1.0]

    def test_custom_range(self):
        scaler = MinMaxScaler(feature_range=(-1.0, 1.0)).fit([[0.0], [10.0]])
        assert scaler.transform([[5.0]])[0, 0] == pytest.approx(0.0)

    def test_constant_column_maps_to_low(self):
        scaler = MinMaxScaler().fit([[7.0], [7.0]])
        assert scaler.transform([[7.0]])[0, 0] == 0.0
        assert scaler.constant_columns_ == [0]

    def test_test_rows_may_exceed_range(self):
        scaler = MinMaxScaler().fit([[0.0], [1.0]])
        assert scaler.transform([[2.0]])[0, 0] == 2.0

    def test_invalid_range(self):
        with pytest.raises(InvalidArgument):
            MinMaxScaler(feature_range=(1.0, 1.0)).fit([[0.0]])

    @given(
        arrays(np.float64, (7, 3), elements=st.floats(-50, 50)),
        arrays(np.float64, (4, 3), elements=st.floats(-50, 50)),
    )
    @settings(max_examples=40, deadline=None)
    def test_train_outputs_within_range(self, train, test):
        scaler = MinMaxScaler().fit(train)
        out = scaler.transform(train)
        assert np.all(out >= -1e-12) and np.all(out <= 1 + 1e-12)
        scaler.transform(test)  # must not raise


class TestStandardScaler:
    def test_hand_example_population_std(self):
        scaler = StandardScaler().fit([[1.0], [3.0]])
        out = scaler.transform([[1.0], [3.0]])
        assert out[:, 0].tolist() == [-1.0, 1.0]

    def test_constant_column_scale_one_flagged(self):
        scaler = StandardScaler().fit([[5.0, 1.0], [5.0, 3.0]])
        assert scaler.scale_[0] == 1.0
        assert scaler.constant_columns_ == [0]
        assert scaler.transform([[5.0, 2.0]])[0, 0] == 0.0

    @given(
        arrays(
            np.float64,
            (9, 4),
            elements=st.integers(-100, 100).map(float),
        )
    )
    @settings(max_examples=40, deadline=None)
    def test_scaled_train_mean_zero_std_one(self, train):
        scaler = StandardScaler().fit(train)
        out = scaler.transform(train)
        stds = train.std(axis=0)
        for col in range(train.shape[1]):
            assert abs(out[:, col].mean()) < 1e-9
            if stds[col] > 0:
                assert abs(out[:, col].std() - 1.0) < 1e-9


class TestBinarizer:
    def test_strictly_above_threshold(self):
        out = Binarizer(threshold=0.5).fit_transform([[0.5, 0.51, 0.0, 1.0]])
        assert out.tolist() == [[0.0, 1.0, 0.0, 1.0]]

    def test_custom_threshold(self):
        assert Binarizer(threshold=2.0).fit_transform([[3.0]])[0, 0] == 1.0


class TestTfidf:
    def test_term_in_all_docs_smooth_idf_one(self):
        train = [[1.0], [1.0], [1.0]]
        transform = TfidfTransform(smooth=True).fit(train)
        # smooth idf = ln((1+N)/(1+df)) + 1 = ln(4/4) + 1 = 1
        assert transform.idf_[0] == pytest.approx(1.0)
        assert transform.transform([[1.0]])[0, 0] == pytest.approx(1.0)

    def test_formula_oracle(self):
        train = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 0.0]])
        transform = TfidfTransform(smooth=True).fit(train)
        n_docs = 4
        for col, df in enumerate([3, 1]):
            expected = math.log((1 + n_docs) / (1 + df)) + 1
            assert transform.idf_[col] == pytest.approx(expected, abs=1e-15)

    def test_value_is_tf_times_idf(self):
        transform = TfidfTransform(smooth=True).fit([[2.0], [0.0]])
        idf = math.log(3 / 2) + 1
        assert transform.transform([[2.0]])[0, 0] == pytest.approx(2.0 * idf)

    def test_unsmooth_clamps_zero_df(self):
        transform = TfidfTransform(smooth=False).fit([[0.0]])
        assert np.isfinite(transform.idf_[0])


class TestVarianceThreshold:
    def test_constant_column_removed(self):
        out = VarianceThreshold(0.0).fit_transform([[1.0, 0.0], [1.0, 1.0]])
        assert out.shape == (2, 1)

    def test_support_indices(self):
        selector = VarianceThreshold(0.0).fit([[1.0, 0.0, 3.0], [1.0, 1.0, 4.0]])
        assert selector.get_support().tolist() == [1, 2]

    def test_threshold_boundary_is_exclusive(self):
        # column variance exactly at the threshold is dropped
        train = [[0.0], [1.0]]  # population variance 0.25
        assert VarianceThreshold(0.25).fit_transform(train).shape == (2, 0)
        assert VarianceThreshold(0.24).fit_transform(train).shape == (2, 1)


class TestPCA:
    def test_collinear_points_component_direction(self):
        train = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]
        pca = PCAReduce(n_components=1).fit(train)
        expected = 1 / math.sqrt(2)
        assert pca.components_[0].tolist() == pytest.approx([expected, expected])
        assert pca.explained_variance_ratio_[0] == pytest.approx(1.0)

    def test_n_components_exceeds_columns(self):
        with pytest.raises(InvalidArgument):
            PCAReduce(n_components=3).fit([[1.0, 2.0]])

    def test_sign_convention_largest_entry_positive(self):
        rng = np.random.default_rng(5)
        train = rng.normal(size=(30, 4))
        _, components, _ = fit_pca(train, 4)
        for row in components:
            assert row[np.argmax(np.abs(row))] > 0

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_components_orthonormal(self, seed):
        rng = np.random.default_rng(seed)
        train = rng.normal(size=(12, 5))
        _, components, _ = fit_pca(train, 5)
        gram = components @ components.T
        assert np.abs(gram - np.eye(5)).max() < 1e-8

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_full_rank_reconstruction(self, seed):
        rng = np.random.default_rng(seed)
        train = rng.normal(size=(10, 4))
        pca = PCAReduce(n_components=4).fit(train)
        reconstructed = pca.inverse_transform(pca.transform(train))
        assert np.abs(reconstructed - train).max() < 1e-6

    def test_eigenvalues_sorted_descending(self):
        rng = np.random.default_rng(11)
        train = rng.normal(size=(40, 6)) * np.array([5, 4, 3, 2, 1, 0.5])
        _, _, variances = fit_pca(train, 6)
        assert all(variances[i] >= variances[i + 1] - 1e-12 for i in range(5))

    def test_single_row_train(self):
        pca = PCAReduce(n_components=1).fit([[3.0, 4.0]])
        out = pca.transform([[3.0, 4.0]])
        assert out[0, 0] == pytest.approx(0.0)
