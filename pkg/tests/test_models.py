import math

import numpy as np
import pytest

from submcmc import (
    CsvParseError,
    Dataset,
    DomainError,
    LogisticRegression,
    NormalMeanModel,
    PoissonRegression,
    load_dataset,
    save_dataset,
    simulate_poisson,
)

# ---------------------------------------------------------------------------
# finite-difference oracles
# ---------------------------------------------------------------------------


def fd_gradient(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(f, x, h=1e-5):
    """Rows: components of f; columns: partials."""
    f0 = np.asarray(f(x))
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        J[:, j] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return J


# ---------------------------------------------------------------------------
# Poisson regression
# ---------------------------------------------------------------------------


class TestPoissonLoglik:
    def test_all_zero_case(self):
        ds = Dataset(y=np.array([0.0]), X=np.array([[0.0]]))
        model = PoissonRegression()
        assert model.loglik([0.0, 0.0], ds, [0])[0] == pytest.approx(-1.0, abs=1e-15)

    def test_rate_one_any_covariate(self):
        ds = Dataset(y=np.array([1.0]), X=np.array([[3.7]]))
        model = PoissonRegression()
        # theta = 0 makes the rate 1 regardless of x: 1*0 - 1 - log(1!) = -1
        assert model.loglik([0.0, 0.0], ds, [0])[0] == pytest.approx(-1.0, abs=1e-15)

    def test_high_precision_value(self):
        # scalar-math oracle for theta=(1, 0.75), x=1, y=2
        expected = 2 * 1.75 - math.exp(1.75) - math.lgamma(3.0)
        assert expected == pytest.approx(-2.947749856565676, abs=1e-14)
        ds = Dataset(y=np.array([2.0]), X=np.array([[1.0]]))
        model = PoissonRegression()
        assert model.loglik([1.0, 0.75], ds, [0])[0] == pytest.approx(expected, abs=1e-13)

    def test_count_validation(self):
        model = PoissonRegression()
        with pytest.raises(DomainError):
            model.loglik([0.0, 0.0], Dataset(y=np.array([-1.0]), X=np.zeros((1, 1))), [0])
        with pytest.raises(DomainError):
            model.loglik([0.0, 0.0], Dataset(y=np.array([1.5]), X=np.zeros((1, 1))), [0])

    def test_sum_matches_compensated_sum_at_1e5(self):
        ds = simulate_poisson(100_000, (1.0, 0.75), seed=5)
        model = PoissonRegression()
        theta = np.array([0.9, 0.8])
        total = model.loglik_sum(theta, ds)
        oracle = math.fsum(model.loglik(theta, ds))
        assert total == pytest.approx(oracle, rel=1e-9)


class TestPoissonDerivatives:
    def test_zero_gradient_case(self):
        ds = Dataset(y=np.array([1.0]), X=np.array([[0.0]]))
        model = PoissonRegression()
        g = model.grad_theta([0.0, 0.0], ds, [0])[0]
        np.testing.assert_allclose(g, [0.0, 0.0], atol=1e-15)

    def test_hand_evaluated_gradient_hessian(self):
        ds = Dataset(y=np.array([3.0]), X=np.array([[1.0]]))
        model = PoissonRegression()
        g = model.grad_theta([0.0, 0.0], ds, [0])[0]
        H = model.hess_theta([0.0, 0.0], ds, [0])[0]
        np.testing.assert_allclose(g, [2.0, 2.0], atol=1e-15)
        np.testing.assert_allclose(H, [[-1.0, -1.0], [-1.0, -1.0]], atol=1e-15)

    def test_gradient_matches_finite_differences(self, poisson_model, poisson_example):
        rng = np.random.default_rng(11)
        for _ in range(100):
            i = int(rng.integers(poisson_example.n))
            theta = rng.normal(scale=0.8, size=2)
            g = poisson_model.grad_theta(theta, poisson_example, [i])[0]
            fd = fd_gradient(lambda t: poisson_model.loglik(t, poisson_example, [i])[0], theta)
            np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)

    def test_hessian_matches_gradient_differences(self, poisson_model, poisson_example):
        rng = np.random.default_rng(12)
        for _ in range(20):
            i = int(rng.integers(poisson_example.n))
            theta = rng.normal(scale=0.8, size=2)
            H = poisson_model.hess_theta(theta, poisson_example, [i])[0]
            fd = fd_jacobian(lambda t: poisson_model.grad_theta(t, poisson_example, [i])[0],
                             theta)
            np.testing.assert_allclose(H, fd, rtol=1e-5, atol=1e-7)


class TestPoissonDataDerivatives:
    def test_polygamma_identities_at_integer_counts(self):
        # for y = 0: psi0(1) = -gamma, psi1(1) = pi^2/6
        model = PoissonRegression()
        theta = np.array([0.3, -0.2])
        z = np.array([[0.0, 1.0]])
        g = model.grad_data(theta, z)[0]
        H = model.hess_data(theta, z)[0]
        mu = 0.3 - 0.2
        gamma = 0.5772156649015329
        assert g[0] == pytest.approx(mu + gamma, abs=1e-12)
        assert H[0, 0] == pytest.approx(-math.pi**2 / 6.0, abs=1e-12)
        # harmonic series oracle for larger counts
        for y in (1, 2, 7, 30):
            g = model.grad_data(theta, np.array([[float(y), 1.0]]))[0]
            psi0 = -gamma + math.fsum(1.0 / k for k in range(1, y + 1))
            assert g[0] == pytest.approx(mu - psi0, abs=1e-12)

    def test_zero_slope_kills_covariate_block(self):
        model = PoissonRegression()
        g = model.grad_data(np.array([0.7, 0.0]), np.array([[4.0, 2.5]]))[0]
        assert g[1] == 0.0

    def test_hessian_symmetric_at_random_points(self):
        model = PoissonRegression()
        rng = np.random.default_rng(3)
        for _ in range(25):
            theta = rng.normal(size=3)
            z = np.concatenate([[rng.integers(0, 10)], rng.normal(size=2)]).astype(float)
            H = model.hess_data(theta, z[None])[0]
            np.testing.assert_allclose(H, H.T, atol=0)

    def test_matches_finite_differences_in_data_space(self):
        model = PoissonRegression()
        rng = np.random.default_rng(4)
        for _ in range(25):
            theta = rng.normal(size=2)
            z = np.array([float(rng.integers(1, 8)), rng.normal()])
            g = model.grad_data(theta, z[None])[0]
            fd = fd_gradient(lambda zz: model.loglik_at(theta, zz[None])[0], z)
            np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-7)
            H = model.hess_data(theta, z[None])[0]
            fdH = fd_jacobian(lambda zz: model.grad_data(theta, zz[None])[0], z)
            np.testing.assert_allclose(H, fdH, rtol=1e-5, atol=1e-6)

    def test_domain_error_below_minus_one(self):
        model = PoissonRegression()
        with pytest.raises(DomainError):
            model.grad_data(np.array([0.0, 0.0]), np.array([[-1.0, 0.0]]))


# ---------------------------------------------------------------------------
# Logistic regression and normal-mean model
# ---------------------------------------------------------------------------


class TestLogistic:
    def test_zero_parameter_gives_log_half(self):
        ds = Dataset(y=np.array([0.0, 1.0, 1.0]), X=np.random.default_rng(0).normal(size=(3, 2)))
        model = LogisticRegression()
        np.testing.assert_allclose(model.loglik(np.zeros(3), ds), -math.log(2.0), rtol=1e-15)

    def test_response_validation(self):
        model = LogisticRegression()
        with pytest.raises(DomainError):
            model.loglik(np.zeros(2), Dataset(y=np.array([2.0]), X=np.zeros((1, 1))), [0])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        ds = Dataset(y=(rng.random(50) < 0.5).astype(float), X=rng.normal(size=(50, 2)))
        model = LogisticRegression()
        for _ in range(100):
            i = int(rng.integers(50))
            theta = rng.normal(size=3)
            g = model.grad_theta(theta, ds, [i])[0]
            fd = fd_gradient(lambda t: model.loglik(t, ds, [i])[0], theta)
            np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)

    def test_hessian_matches_gradient_differences(self):
        rng = np.random.default_rng(22)
        ds = Dataset(y=(rng.random(20) < 0.5).astype(float), X=rng.normal(size=(20, 1)))
        model = LogisticRegression()
        for _ in range(20):
            i = int(rng.integers(20))
            theta = rng.normal(size=2)
            H = model.hess_theta(theta, ds, [i])[0]
            fd = fd_jacobian(lambda t: model.grad_theta(t, ds, [i])[0], theta)
            np.testing.assert_allclose(H, fd, rtol=1e-5, atol=1e-7)

    def test_data_space_derivatives_match_finite_differences(self):
        model = LogisticRegression()
        rng = np.random.default_rng(23)
        for _ in range(20):
            theta = rng.normal(size=3)
            z = np.concatenate([[float(rng.integers(0, 2))], rng.normal(size=2)])
            g = model.grad_data(theta, z[None])[0]
            fd = fd_gradient(lambda zz: model.loglik_at(theta, zz[None])[0], z)
            np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-7)
            H = model.hess_data(theta, z[None])[0]
            fdH = fd_jacobian(lambda zz: model.grad_data(theta, zz[None])[0], z)
            np.testing.assert_allclose(H, fdH, rtol=1e-5, atol=1e-6)


class TestNormalMean:
    def test_exact_posterior_formula(self):
        rng = np.random.default_rng(9)
        y = rng.normal(0.4, 1.0, size=50)
        ds = Dataset(y=y, X=np.empty((50, 0)))
        model = NormalMeanModel(mu0=1.0, tau0=2.0)
        mean, var = model.exact_posterior(ds)
        prec = 1.0 / 4.0 + 50
        assert mean == pytest.approx((1.0 / 4.0 + y.sum()) / prec, rel=1e-14)
        assert var == pytest.approx(1.0 / prec, rel=1e-14)

    def test_exact_posterior_against_quadrature(self):
        # independent oracle: normalize prior x likelihood on a dense grid
        rng = np.random.default_rng(10)
        y = rng.normal(-0.2, 1.0, size=30)
        ds = Dataset(y=y, X=np.empty((30, 0)))
        model = NormalMeanModel(mu0=0.5, tau0=1.5)
        mean, var = model.exact_posterior(ds)
        grid = np.linspace(mean - 8 * math.sqrt(var), mean + 8 * math.sqrt(var), 20001)
        logpost = np.array([model.loglik_sum(np.array([t]), ds)
                            + model.log_prior(np.array([t])) for t in grid])
        w = np.exp(logpost - logpost.max())
        w /= np.trapezoid(w, grid)
        q_mean = np.trapezoid(w * grid, grid)
        q_var = np.trapezoid(w * (grid - q_mean) ** 2, grid)
        assert mean == pytest.approx(q_mean, abs=1e-8)
        assert var == pytest.approx(q_var, rel=1e-6)


# ---------------------------------------------------------------------------
# Dataset IO and simulation
# ---------------------------------------------------------------------------


class TestDatasetIO:
    def test_simulation_is_deterministic(self):
        a = simulate_poisson(1000, (1.0, 0.75), seed=123)
        b = simulate_poisson(1000, (1.0, 0.75), seed=123)
        assert np.array_equal(a.y, b.y) and np.array_equal(a.X, b.X)
        c = simulate_poisson(1000, (1.0, 0.75), seed=124)
        assert not np.array_equal(a.y, c.y)

    def test_csv_round_trip(self, tmp_path):
        ds = Dataset(y=np.array([0.0, 3.0, 1.0]),
                     X=np.array([[0.25, -1.0], [2.0, 0.125], [-0.5, 9.0]]))
        path = tmp_path / "round.csv"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert np.array_equal(ds.y, back.y) and np.array_equal(ds.X, back.X)

    def test_parse_error_names_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,x1\n1,0.5\noops,0.5\n")
        with pytest.raises(CsvParseError, match="row 3"):
            load_dataset(path)
        path.write_text("y,x1\n1,0.5\n2,0.5,9\n")
        with pytest.raises(CsvParseError, match="row 3"):
            load_dataset(path)

    def test_sample_mean_approaches_lognormal_moment(self):
        # E[exp(t0 + t1 X)] = exp(t0 + t1^2/2) for X ~ N(0,1)
        ds = simulate_poisson(100_000, (1.0, 0.75), seed=77)
        expected = math.exp(1.0 + 0.75**2 / 2.0)
        assert np.mean(ds.y) == pytest.approx(expected, rel=0.02)

    def test_dataset_invariants(self):
        with pytest.raises(DomainError):
            Dataset(y=np.array([1.0, 2.0]), X=np.zeros((3, 1)))
        with pytest.raises(DomainError):
            Dataset(y=np.array([]), X=np.zeros((0, 1)))
