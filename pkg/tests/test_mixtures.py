import math

import numpy as np
import pytest

from otmix import (
    Dataset,
    MixtureParams,
    Responsibilities,
    VarianceSpec,
    component_logpdf,
    neg_loglik,
    sample_mixture,
    vanilla_responsibilities,
)
from conftest import random_instance, random_params


def scalar_params(locs, var=1.0, weights=None):
    locs = np.atleast_2d(np.asarray(locs, dtype=float)).T if np.ndim(locs) == 1 else np.asarray(locs)
    k = locs.shape[0]
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    return MixtureParams(locs, VarianceSpec.shared(var), w)


class TestValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            scalar_params([0.0, 1.0], weights=[0.6, 0.5])

    def test_weights_must_be_positive(self):
        with pytest.raises(ValueError):
            scalar_params([0.0, 1.0], weights=[1.0, 0.0])

    def test_variance_floor_enforced(self):
        with pytest.raises(ValueError):
            VarianceSpec.shared(1e-9)

    def test_nonfinite_points_rejected(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[0.0], [np.nan]]))

    def test_variance_shape_must_match(self):
        with pytest.raises(ValueError):
            MixtureParams(
                np.zeros((2, 3)),
                VarianceSpec.diagonal(np.ones((2, 2))),
                np.array([0.5, 0.5]),
            )

    def test_responsibility_rows_must_normalize(self):
        with pytest.raises(ValueError):
            Responsibilities(np.array([[0.5, 0.4]]))


class TestComponentLogpdf:
    def test_standard_normal_at_mode(self):
        p = scalar_params([0.0])
        assert component_logpdf(p, [0.0], 0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_two_dim_standard_normal(self):
        p = MixtureParams(np.zeros((1, 2)), VarianceSpec.shared(1.0), np.array([1.0]))
        assert component_logpdf(p, [0.0, 0.0], 0) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)

    def test_hand_evaluated_gaussian(self):
        # mean 2, variance 4, evaluated at 0
        p = scalar_params([2.0], var=4.0)
        expected = -0.5 * math.log(2 * math.pi * 4.0) - 0.5
        assert component_logpdf(p, [0.0], 0) == pytest.approx(expected, abs=1e-12)

    def test_index_out_of_range(self):
        p = scalar_params([0.0])
        with pytest.raises(IndexError):
            component_logpdf(p, [0.0], 1)

    def test_nonfinite_point_rejected(self):
        p = scalar_params([0.0])
        with pytest.raises(ValueError):
            component_logpdf(p, [np.inf], 0)


class TestNegLoglik:
    def test_single_standard_normal_at_mode(self):
        p = scalar_params([0.0])
        d = Dataset(np.array([[0.0]]))
        assert neg_loglik(p, d) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_label_symmetry(self):
        a = 1.3
        p = scalar_params([-a, a])
        d = Dataset(np.array([[-0.4], [0.4], [2.0], [-2.0]]))
        assert neg_loglik(p, d) == pytest.approx(neg_loglik(p.permuted([1, 0]), d), abs=1e-12)

    def test_direct_scalar_evaluation(self):
        # K=2, alpha=(0.7, 0.3), theta=(0, 1), sigma^2=1, data={0.5}
        p = scalar_params([0.0, 1.0], weights=[0.7, 0.3])
        d = Dataset(np.array([[0.5]]))
        q = 0.7 * math.exp(-0.125) / math.sqrt(2 * math.pi) + 0.3 * math.exp(-0.125) / math.sqrt(2 * math.pi)
        assert neg_loglik(p, d) == pytest.approx(-math.log(q), abs=1e-12)

    def test_logsumexp_stability_far_locations(self):
        # locations with norm up to 1e3 and floor variances stay finite
        locs = np.array([[1000.0, 0.0], [-1000.0, 0.0]])
        p = MixtureParams(locs, VarianceSpec.shared(1e-6), np.array([0.5, 0.5]))
        d = Dataset(np.array([[0.0, 0.0], [500.0, 0.0]]))
        value = neg_loglik(p, d)
        assert np.isfinite(value)
        resp = vanilla_responsibilities(p, d)
        assert np.all(np.isfinite(resp.matrix))


class TestVanillaResponsibilities:
    def test_single_component_all_ones(self):
        p = scalar_params([3.0])
        d = Dataset(np.array([[0.0], [10.0]]))
        resp = vanilla_responsibilities(p, d)
        assert np.allclose(resp.matrix, 1.0)
        assert resp.kind == "vanilla"

    def test_equidistant_point_splits_evenly(self):
        p = scalar_params([-1.0, 1.0])
        d = Dataset(np.array([[0.0]]))
        resp = vanilla_responsibilities(p, d)
        assert np.allclose(resp.matrix[0], [0.5, 0.5], atol=1e-14)

    def test_logistic_of_log_density_gap(self):
        # K=2, equal weights, theta=(0,1), y=0: gap is 0.5
        p = scalar_params([0.0, 1.0])
        d = Dataset(np.array([[0.0]]))
        resp = vanilla_responsibilities(p, d)
        sigma = 1.0 / (1.0 + math.exp(-0.5))
        assert resp.matrix[0, 0] == pytest.approx(sigma, abs=1e-12)
        assert resp.matrix[0, 1] == pytest.approx(1.0 - sigma, abs=1e-12)

    def test_rows_sum_to_one_on_random_instances(self, rng):
        for _ in range(25):
            params, data = random_instance(rng)
            resp = vanilla_responsibilities(params, data)
            assert np.max(np.abs(resp.matrix.sum(axis=1) - 1.0)) < 1e-10

    def test_permutation_equivariance(self, rng):
        for _ in range(10):
            params, data = random_instance(rng, k=4)
            perm = rng.permutation(4)
            resp = vanilla_responsibilities(params, data)
            resp_p = vanilla_responsibilities(params.permuted(perm), data)
            assert np.allclose(resp_p.matrix, resp.matrix[:, perm], atol=1e-12)
            assert neg_loglik(params, data) == pytest.approx(
                neg_loglik(params.permuted(perm), data), abs=1e-12
            )


class TestSampling:
    def test_zero_points_rejected(self):
        p = scalar_params([0.0])
        with pytest.raises(ValueError):
            sample_mixture(p, 0, 1)

    def test_law_of_large_numbers_at_floor_variance(self):
        p = MixtureParams(np.array([[5.0]]), VarianceSpec.shared(1e-6), np.array([1.0]))
        n = 10000
        d = sample_mixture(p, n, 7)
        assert abs(d.points.mean() - 5.0) < 4 * math.sqrt(1e-6) / math.sqrt(n)

    def test_same_seed_is_bit_identical(self):
        p = scalar_params([0.0, 4.0])
        a = sample_mixture(p, 200, 123)
        b = sample_mixture(p, 200, 123)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.true_labels, b.true_labels)

    def test_component_frequencies_match_weights(self):
        p = scalar_params([0.0, 3.0, -3.0], weights=[0.2, 0.5, 0.3])
        n = 100000
        d = sample_mixture(p, n, 11)
        freqs = np.bincount(d.true_labels, minlength=3) / n
        for k in range(3):
            assert abs(freqs[k] - p.weights[k]) < 3 * math.sqrt(p.weights[k] / n)


class TestIO:
    def test_csv_round_trip_with_labels(self, tmp_path, rng):
        params, data = random_instance(rng, k=3, d=2, n=50)
        path = tmp_path / "data.csv"
        data.save_csv(path)
        loaded = Dataset.load_csv(path)
        assert np.array_equal(loaded.points, data.points)
        assert np.array_equal(loaded.true_labels, data.true_labels)

    def test_csv_round_trip_without_labels(self, tmp_path):
        data = Dataset(np.array([[0.125, -3.5], [1e-8, 2.0]]))
        path = tmp_path / "plain.csv"
        data.save_csv(path)
        loaded = Dataset.load_csv(path)
        assert np.array_equal(loaded.points, data.points)
        assert loaded.true_labels is None

    def test_params_json_round_trip(self, tmp_path, rng):
        for kind in ("shared", "spherical", "diagonal"):
            params = random_params(rng, k=3, d=2, kind=kind)
            path = tmp_path / f"{kind}.json"
            params.save_json(path)
            loaded = MixtureParams.load_json(path)
            assert np.array_equal(loaded.locations, params.locations)
            assert np.array_equal(
                np.atleast_1d(loaded.variances.values), np.atleast_1d(params.variances.values)
            )
            assert np.array_equal(loaded.weights, params.weights)
            assert loaded.variances.kind == params.variances.kind
