import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from submcmc import (
    CacheBuildError,
    Dataset,
    DomainError,
    ExactControlVariate,
    build_data_expanded,
    build_param_expanded,
    differences,
    kmeans_cluster,
    load_cache,
    save_cache,
    select_expansion_point,
    simulate_poisson,
)
from submcmc.special import digamma, trigamma


def poisson_param_cv_closed_form(theta, center, dataset):
    """Worked-example closed form: value + first + second order in the
    linear predictor mu = w'theta.  Independent of the generic cache path."""
    w = np.column_stack([np.ones(dataset.n), dataset.X])
    y = dataset.y
    mu_star = w @ center
    mu = w @ theta
    log_fact = np.array([math.lgamma(v + 1.0) for v in y])
    return (y * mu_star - np.exp(mu_star) - log_fact
            + (y - np.exp(mu_star)) * (mu - mu_star)
            - 0.5 * np.exp(mu_star) * (mu - mu_star) ** 2)


def poisson_data_cv_closed_form(theta, dataset, centroids, assignment):
    """Worked-example closed form for the data-space expansion."""
    y, x = dataset.y, dataset.X[:, 0]
    yc = centroids[assignment, 0]
    xc = centroids[assignment, 1]
    alpha, beta = theta
    mu_c = alpha + beta * xc
    mu_i = alpha + beta * x
    log_fact_c = np.array([math.lgamma(v + 1.0) for v in yc])
    return (yc * mu_c - np.exp(mu_c) - log_fact_c
            + (y - yc) * (mu_c - digamma(yc + 1.0))
            - 0.5 * (y - yc) ** 2 * trigamma(yc + 1.0)
            + (y - np.exp(mu_c)) * (mu_i - mu_c)
            - 0.5 * np.exp(mu_c) * (mu_i - mu_c) ** 2)


class TestParamExpanded:
    def test_exact_at_own_expansion_point(self, poisson_model, poisson_example,
                                          example_center, param_caches):
        ell = poisson_model.loglik(example_center, poisson_example)
        idx = np.arange(poisson_example.n)
        for order in (0, 1, 2):
            q = param_caches[order].values_at(example_center, idx)
            np.testing.assert_array_equal(q, ell)
            d = differences(poisson_model, param_caches[order], poisson_example,
                            example_center, idx)
            np.testing.assert_array_equal(d, np.zeros_like(d))

    def test_matches_worked_example_closed_form(self, poisson_example, example_center,
                                                param_caches):
        rng = np.random.default_rng(31)
        idx = np.arange(poisson_example.n)
        for _ in range(5):
            theta = example_center + rng.normal(scale=0.2, size=2)
            generic = param_caches[2].values_at(theta, idx)
            closed = poisson_param_cv_closed_form(theta, example_center, poisson_example)
            np.testing.assert_allclose(generic, closed, rtol=1e-12, atol=1e-12)

    def test_cached_total_matches_brute_force(self, poisson_example, example_center,
                                              param_caches):
        rng = np.random.default_rng(32)
        idx = np.arange(poisson_example.n)
        for order in (0, 1, 2):
            theta = example_center + rng.normal(scale=0.1, size=2)
            brute = math.fsum(param_caches[order].values_at(theta, idx))
            assert param_caches[order].sum_values(theta) == pytest.approx(brute, rel=1e-9)

    def test_recompute_mode_matches_stored_mode(self, poisson_model, poisson_example,
                                                example_center, param_caches):
        lean = build_param_expanded(poisson_model, poisson_example, example_center,
                                    order=2, store_per_obs=False)
        theta = example_center + 0.05
        idx = np.arange(0, poisson_example.n, 7)
        np.testing.assert_allclose(lean.values_at(theta, idx),
                                   param_caches[2].values_at(theta, idx), rtol=1e-14)
        np.testing.assert_allclose(lean.grads_at(theta, idx),
                                   param_caches[2].grads_at(theta, idx), rtol=1e-14)
        assert lean.sum_values(theta) == param_caches[2].sum_values(theta)

    def test_gradient_paths_match_finite_differences(self, poisson_example,
                                                     example_center, param_caches):
        # displaced from the mode so the gradient dominates FD cancellation;
        # the total is polynomial in theta, so central differences are exact
        theta = example_center + np.array([0.3, -0.2])
        h = 1e-4
        for order in (1, 2):
            cache = param_caches[order]
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                fd = (cache.sum_values(theta + e) - cache.sum_values(theta - e)) / (2 * h)
                assert cache.grad_sum(theta)[j] == pytest.approx(fd, rel=1e-6)
        np.testing.assert_array_equal(param_caches[0].grad_sum(theta), np.zeros(2))

    @pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
    def test_build_error_names_observation(self, poisson_model, poisson_example):
        # exp(w'theta) overflows at the expansion point for every row
        with pytest.raises(CacheBuildError, match="observation 0"):
            build_param_expanded(poisson_model, poisson_example,
                                 np.array([800.0, 0.0]), order=2)

    def test_sums_consistent_with_stored_per_obs(self, param_caches):
        cache = param_caches[2]
        assert cache.sum_ell == pytest.approx(math.fsum(cache.ell), rel=1e-12)
        np.testing.assert_allclose(cache.sum_grad, cache.grad.sum(axis=0), rtol=1e-9)
        np.testing.assert_allclose(cache.sum_hess, cache.sum_hess.T)


class TestKMeans:
    def test_every_point_its_own_centroid(self, poisson_model, poisson_example):
        small = Dataset(y=poisson_example.y[:40], X=poisson_example.X[:40])
        res = kmeans_cluster(small, n_clusters=40, seed=0)
        cache = build_data_expanded(poisson_model, small, res, order=2)
        np.testing.assert_allclose(cache.dev, 0.0, atol=1e-12)

    def test_single_cluster_is_the_mean(self, poisson_example):
        res = kmeans_cluster(poisson_example, n_clusters=1, seed=0)
        np.testing.assert_allclose(res.centroids[0],
                                   poisson_example.points().mean(axis=0), rtol=1e-12)

    def test_objective_non_increasing(self, poisson_example):
        res = kmeans_cluster(poisson_example, n_clusters=20, seed=4)
        path = np.asarray(res.objective_path)
        assert path.size >= 1
        assert np.all(np.diff(path) <= 1e-9)

    def test_deterministic_for_fixed_seed(self, poisson_example):
        a = kmeans_cluster(poisson_example, n_clusters=10, seed=7)
        b = kmeans_cluster(poisson_example, n_clusters=10, seed=7)
        assert np.array_equal(a.centroids, b.centroids)
        assert np.array_equal(a.assignment, b.assignment)

    def test_nearest_centroid_in_standardized_space(self, poisson_example):
        res = kmeans_cluster(poisson_example, n_clusters=15, seed=1)
        S = poisson_example.points() / res.scales
        C = res.centroids / res.scales
        dist2 = np.sum((S[:, None, :] - C[None, :, :]) ** 2, axis=2)
        np.testing.assert_array_equal(res.assignment, np.argmin(dist2, axis=1))

    def test_k_larger_than_n_rejected(self, poisson_example):
        with pytest.raises(DomainError):
            kmeans_cluster(poisson_example, n_clusters=poisson_example.n + 1)


@pytest.fixture(scope="module")
def clustering(poisson_example):
    return kmeans_cluster(poisson_example, n_clusters=75, seed=5)


@pytest.fixture(scope="module")
def cache(poisson_model, poisson_example, clustering):
    return build_data_expanded(poisson_model, poisson_example, clustering, order=2)


class TestDataExpanded:
    def test_observation_at_centroid_gets_centroid_value(self, poisson_model,
                                                         poisson_example, example_center):
        # with K = n every observation sits exactly at its centroid
        small = Dataset(y=poisson_example.y[:30], X=poisson_example.X[:30])
        res = kmeans_cluster(small, n_clusters=30, seed=2)
        for order in (0, 1, 2):
            c = build_data_expanded(poisson_model, small, res, order=order)
            q = c.values_at(example_center, np.arange(30))
            ell = poisson_model.loglik(example_center, small)
            np.testing.assert_allclose(q, ell, rtol=1e-12)

    def test_matches_worked_example_closed_form(self, poisson_example, example_center,
                                                cache, clustering):
        rng = np.random.default_rng(41)
        idx = np.arange(poisson_example.n)
        for _ in range(5):
            theta = example_center + rng.normal(scale=0.2, size=2)
            generic = cache.values_at(theta, idx)
            closed = poisson_data_cv_closed_form(theta, poisson_example,
                                                 clustering.centroids,
                                                 clustering.assignment)
            np.testing.assert_allclose(generic, closed, rtol=1e-12, atol=1e-12)

    def test_cached_total_matches_brute_force(self, poisson_example, example_center, cache):
        theta = example_center + np.array([0.08, -0.05])
        brute = math.fsum(cache.values_at(theta, np.arange(poisson_example.n)))
        assert cache.sum_values(theta) == pytest.approx(brute, rel=1e-9)

    def test_aggregated_moments_match_direct_sums(self, poisson_example, cache):
        Z = poisson_example.points()
        for c in range(cache.n_clusters):
            members = cache.assignment == c
            dev = Z[members] - cache.centroids[c]
            assert cache.counts[c] == members.sum()
            np.testing.assert_allclose(cache.sum_dev[c], dev.sum(axis=0), atol=1e-9)
            np.testing.assert_allclose(cache.sum_outer[c],
                                       np.einsum("ki,kj->ij", dev, dev), atol=1e-9)

    def test_dispersion_insensitive_to_distance_from_center(self, poisson_model,
                                                            poisson_example,
                                                            example_center, cache):
        from submcmc.experiments import sphere_direction

        direction = sphere_direction(2, seed=0)
        idx = np.arange(poisson_example.n)
        sds = []
        for radius in (0.025, 0.25):
            d = differences(poisson_model, cache, poisson_example,
                            example_center + radius * direction, idx)
            sds.append(float(np.std(d)))
        ratio = sds[1] / sds[0]
        assert 0.5 <= ratio <= 2.0

    def test_theta_gradients_unavailable(self, cache, example_center):
        with pytest.raises(NotImplementedError):
            cache.grads_at(example_center, [0])
        with pytest.raises(NotImplementedError):
            cache.grad_sum(example_center)


class TestDifferences:
    def test_cubic_scaling_of_worst_difference(self, poisson_model, poisson_example,
                                               example_center, param_caches):
        # halving the distance to the expansion point shrinks max |d_i| ~8x
        direction = np.array([0.6, 0.8])
        radii = np.array([0.2, 0.1, 0.05, 0.025])
        idx = np.arange(poisson_example.n)
        worst = [np.max(np.abs(differences(poisson_model, param_caches[2], poisson_example,
                                           example_center + r * direction, idx)))
                 for r in radii]
        slope = np.polyfit(np.log(radii), np.log(worst), 1)[0]
        assert 2.6 <= slope <= 3.4

    def test_variance_non_increasing_in_expansion_order(self, poisson_model,
                                                        poisson_example, example_center,
                                                        param_caches):
        direction = np.array([1.0, 1.0]) / math.sqrt(2.0)
        theta = example_center + 0.025 * direction
        idx = np.arange(poisson_example.n)
        variances = [float(np.var(differences(poisson_model, param_caches[o],
                                              poisson_example, theta, idx)))
                     for o in (0, 1, 2)]
        assert variances[0] >= variances[1] >= variances[2]

    def test_index_out_of_range(self, poisson_model, poisson_example, example_center,
                                param_caches):
        with pytest.raises(DomainError):
            differences(poisson_model, param_caches[2], poisson_example,
                        example_center, [poisson_example.n])

    @settings(max_examples=25, deadline=None)
    @given(radius=st.floats(0.0, 0.5), angle=st.floats(0.0, 2.0 * math.pi),
           order=st.sampled_from([0, 1, 2]))
    def test_totals_decompose_exactly(self, poisson_model, poisson_example,
                                      example_center, param_caches, radius, angle,
                                      order):
        # sum_i q_i + sum_i d_i must rebuild sum_i ell_i for any theta
        theta = example_center + radius * np.array([math.cos(angle), math.sin(angle)])
        idx = np.arange(poisson_example.n)
        cache = param_caches[order]
        total = cache.sum_values(theta) + math.fsum(
            differences(poisson_model, cache, poisson_example, theta, idx))
        assert total == pytest.approx(poisson_model.loglik_sum(theta, poisson_example),
                                      rel=1e-9)


class TestExactControlVariate:
    def test_differences_identically_zero(self, poisson_model, poisson_example):
        cache = ExactControlVariate(poisson_model, poisson_example)
        theta = np.array([0.4, 0.3])
        d = differences(poisson_model, cache, poisson_example, theta,
                        np.arange(poisson_example.n))
        np.testing.assert_array_equal(d, np.zeros_like(d))


class TestSerialization:
    def test_param_cache_round_trip(self, poisson_example, example_center,
                                    param_caches, tmp_path):
        path = tmp_path / "param.cvc"
        save_cache(param_caches[2], path)
        back = load_cache(path)
        theta = example_center + 0.04
        idx = np.arange(0, poisson_example.n, 13)
        assert back.sum_values(theta) == param_caches[2].sum_values(theta)
        np.testing.assert_array_equal(back.values_at(theta, idx),
                                      param_caches[2].values_at(theta, idx))

    def test_data_cache_round_trip(self, poisson_model, poisson_example,
                                   example_center, tmp_path):
        clustering = kmeans_cluster(poisson_example, n_clusters=20, seed=3)
        cache = build_data_expanded(poisson_model, poisson_example, clustering, order=2)
        path = tmp_path / "data.cvc"
        save_cache(cache, path)
        back = load_cache(path, model=poisson_model)
        theta = example_center + 0.04
        idx = np.arange(0, poisson_example.n, 13)
        assert back.sum_values(theta) == cache.sum_values(theta)
        np.testing.assert_array_equal(back.values_at(theta, idx),
                                      cache.values_at(theta, idx))

    def test_data_cache_requires_model(self, poisson_model, poisson_example, tmp_path):
        clustering = kmeans_cluster(poisson_example, n_clusters=5, seed=3)
        cache = build_data_expanded(poisson_model, poisson_example, clustering, order=1)
        path = tmp_path / "data.cvc"
        save_cache(cache, path)
        with pytest.raises(DomainError, match="model"):
            load_cache(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.cvc"
        path.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNK")
        with pytest.raises(DomainError, match="magic"):
            load_cache(path)

    def test_truncated_payload_rejected(self, poisson_example, example_center,
                                        param_caches, tmp_path):
        path = tmp_path / "param.cvc"
        save_cache(param_caches[2], path)
        clipped = path.read_bytes()[:len(path.read_bytes()) // 2]
        path.write_bytes(clipped)
        with pytest.raises(DomainError, match="truncated"):
            load_cache(path)


class TestExpansionPoint:
    def test_exact_mode_zeroes_the_posterior_gradient(self, poisson_model,
                                                      poisson_example, example_center):
        g = np.sum(poisson_model.grad_theta(example_center, poisson_example), axis=0) \
            + poisson_model.grad_log_prior(example_center)
        np.testing.assert_allclose(g, 0.0, atol=1e-6)

    def test_pilot_mode_lands_near_exact_mode(self, poisson_model, poisson_example,
                                              example_center):
        pilot = select_expansion_point(poisson_model, poisson_example, seed=2)
        assert np.linalg.norm(pilot - example_center) < 0.2

    def test_pilot_is_deterministic(self, poisson_model, poisson_example):
        a = select_expansion_point(poisson_model, poisson_example, seed=2)
        b = select_expansion_point(poisson_model, poisson_example, seed=2)
        assert np.array_equal(a, b)


def test_simulated_covariate_law_option():
    ds = simulate_poisson(500, (0.5, 0.5), covariate_law="uniform", seed=1)
    assert ds.X.min() >= -1.0 and ds.X.max() <= 1.0


class TestEvaluationCostScaling:
    """Cheap-total benchmarks: parameter-expanded totals do not grow with n,
    data-expanded totals grow at most linearly in the centroid count.
    Generous bounds keep the checks stable on loaded machines."""

    @staticmethod
    def _time_sum(cache, theta, calls=300):
        import time
        cache.sum_values(theta)  # warm-up
        best = float("inf")
        for _ in range(3):
            t0 = time.perf_counter()
            for _ in range(calls):
                cache.sum_values(theta)
            best = min(best, time.perf_counter() - t0)
        return best

    def test_param_expanded_total_independent_of_n(self, poisson_model):
        theta = np.array([1.05, 0.7])
        times = {}
        for n in (1000, 100_000):
            ds = simulate_poisson(n, (1.0, 0.75), seed=6)
            cache = build_param_expanded(poisson_model, ds, theta, order=2)
            times[n] = self._time_sum(cache, theta + 0.01)
        assert times[100_000] < 5.0 * times[1000]

    def test_data_expanded_total_scales_with_centroids_not_n(self, poisson_model):
        theta = np.array([1.05, 0.7])
        ds_small = simulate_poisson(1000, (1.0, 0.75), seed=7)
        ds_large = simulate_poisson(20_000, (1.0, 0.75), seed=8)
        t_small = self._time_sum(build_data_expanded(
            poisson_model, ds_small, kmeans_cluster(ds_small, 75, seed=0), order=2),
            theta, calls=100)
        t_large = self._time_sum(build_data_expanded(
            poisson_model, ds_large, kmeans_cluster(ds_large, 75, seed=0), order=2),
            theta, calls=100)
        assert t_large < 5.0 * t_small
        # tenfold centroid growth may cost at most ~linearly more (with slack)
        t_k15 = self._time_sum(build_data_expanded(
            poisson_model, ds_small, kmeans_cluster(ds_small, 15, seed=0), order=2),
            theta, calls=100)
        t_k150 = self._time_sum(build_data_expanded(
            poisson_model, ds_small, kmeans_cluster(ds_small, 150, seed=0), order=2),
            theta, calls=100)
        assert t_k150 < 40.0 * max(t_k15, 1e-9)
