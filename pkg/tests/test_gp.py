import numpy as np
import pytest

from amap.gp import (
    ObservedInput,
    Posterior,
    QueryGrid,
    TrainingSet,
    gp_predict,
    negative_log_marginal_likelihood,
    prior_mean,
    train_hyperparams,
)
from amap.kernels import Hyperparams, KernelFamily, KernelSpec, kernel_matrix
from amap.quadrature import gauss_hermite_rule


def make_spec(sf2=1.0, ls=1.0, sn2=0.01):
    return KernelSpec(KernelFamily.SQUARED_EXPONENTIAL, Hyperparams(sf2, ls, sn2))


def random_train(rng, n, box=2.0, cov=0.0):
    inputs = [
        ObservedInput(rng.uniform(0, box, size=3), cov * np.eye(3)) for _ in range(n)
    ]
    return TrainingSet(inputs, rng.normal(size=n))


def direct_oracle(train, grid, spec, prior=0.0):
    """Textbook conditioning equations via explicit inverse (test-only path)."""
    hp = spec.hyperparams

    def k(a, b):
        d = np.linalg.norm(np.asarray(a) - np.asarray(b))
        return hp.signal_variance * np.exp(-0.5 * (d / hp.length_scale) ** 2)

    n = len(train)
    xs = train.means
    qs = grid.points
    kxx = np.array([[k(xs[i], xs[j]) for j in range(n)] for i in range(n)])
    ksx = np.array([[k(q, x) for x in xs] for q in qs])
    kss = np.array([[k(a, b) for b in qs] for a in qs])
    inv = np.linalg.inv(kxx + hp.noise_variance * np.eye(n))
    mean = prior + ksx @ inv @ (train.targets - prior)
    cov = kss - ksx @ inv @ ksx.T
    return mean, cov


class TestGrid:
    def test_regular_grid_shape_and_order(self):
        g = QueryGrid.regular([0, 0, 0], [1, 1, 2], [0.5, 1.0, 1.0])
        assert g.shape == (3, 2, 3)
        assert len(g) == 18
        # z index varies fastest
        assert np.allclose(g.points[0], [0, 0, 0])
        assert np.allclose(g.points[1], [0, 0, 1])
        assert np.allclose(g.points[-1], [1, 1, 2])

    def test_points_inside_extent(self):
        g = QueryGrid.regular([1, 1, 1], [2, 2, 2], [0.25, 0.25, 0.25])
        assert np.all(g.points >= 1 - 1e-12)
        assert np.all(g.points <= 3 + 1e-12)


class TestPredict:
    def test_empty_training_set_returns_prior(self):
        grid = QueryGrid.regular([0, 0, 0], [1, 1, 0], [0.5, 0.5, 1])
        spec = make_spec(sf2=1.5)
        post = gp_predict(TrainingSet.empty(), grid, spec, prior=0.7)
        assert np.allclose(post.mean, 0.7)
        assert np.allclose(post.covariance, kernel_matrix(spec, grid.points, grid.points))

    def test_noiseless_interpolation_at_grid_point(self):
        grid = QueryGrid.regular([0, 0, 0], [1, 1, 1], [0.5, 0.5, 0.5])
        spec = make_spec(sn2=1e-12)
        target_pt = grid.points[13]
        train = TrainingSet([ObservedInput(target_pt, np.zeros((3, 3)))], [0.83])
        post = gp_predict(train, grid, spec)
        assert post.mean[13] == pytest.approx(0.83, abs=1e-6)
        assert post.covariance[13, 13] < 1e-6 * spec.hyperparams.signal_variance

    def test_matches_direct_formula_oracle(self):
        rng = np.random.default_rng(0)
        grid = QueryGrid.regular([0, 0, 0], [1, 1, 1], [0.5, 0.5, 0.5])
        spec = make_spec(ls=0.6)
        for _ in range(5):
            train = random_train(rng, 10)
            post = gp_predict(train, grid, spec)
            mean, cov = direct_oracle(train, grid, spec)
            assert np.max(np.abs(post.mean - mean)) < 1e-9
            assert np.max(np.abs(post.covariance - cov)) < 1e-9

    def test_variance_never_exceeds_prior(self):
        rng = np.random.default_rng(1)
        grid = QueryGrid.regular([0, 0, 0], [1, 1, 1], [0.5, 0.5, 0.5])
        spec = make_spec(sf2=1.3, ls=0.5)
        for n in (1, 5, 20):
            post = gp_predict(random_train(rng, n), grid, spec)
            assert np.max(np.diag(post.covariance)) <= 1.3 + 1e-9

    def test_information_monotonicity(self):
        rng = np.random.default_rng(2)
        grid = QueryGrid.regular([0, 0, 0], [1, 1, 1], [0.5, 0.5, 0.5])
        spec = make_spec(ls=0.7)
        train = random_train(rng, 8)
        before = gp_predict(train, grid, spec).trace
        bigger = train.extended(
            ObservedInput(rng.uniform(0, 2, size=3), np.zeros((3, 3))), 0.3
        )
        after = gp_predict(bigger, grid, spec).trace
        assert after <= before + 1e-9

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        grid = QueryGrid.regular([0, 0, 0], [1, 1, 1], [0.5, 0.5, 0.5])
        spec = make_spec(ls=0.6)
        train = random_train(rng, 7)
        perm = rng.permutation(7)
        shuffled = TrainingSet(
            [ObservedInput(train.means[i], train.covariances[i]) for i in perm],
            train.targets[perm],
        )
        a = gp_predict(train, grid, spec)
        b = gp_predict(shuffled, grid, spec)
        assert np.max(np.abs(a.mean - b.mean)) < 1e-9
        assert np.max(np.abs(a.covariance - b.covariance)) < 1e-9

    def test_posterior_symmetrized(self):
        rng = np.random.default_rng(4)
        grid = QueryGrid.regular([0, 0, 0], [1, 1, 1], [0.5, 0.5, 0.5])
        post = gp_predict(random_train(rng, 12), grid, make_spec())
        assert np.max(np.abs(post.covariance - post.covariance.T)) < 1e-12

    def test_expected_mode_with_uncertain_inputs(self):
        rng = np.random.default_rng(5)
        grid = QueryGrid.regular([0, 0, 0], [1, 1, 1], [0.5, 0.5, 0.5])
        spec = make_spec(ls=0.6)
        train = random_train(rng, 6, cov=0.02)
        rule = gauss_hermite_rule(5)
        post = gp_predict(train, grid, spec, kernel_mode="expected", rule=rule)
        assert post.trace >= 0
        assert np.max(np.abs(post.covariance - post.covariance.T)) < 1e-12
        # conservative relative to plain conditioning at the same inputs
        plain = gp_predict(train, grid, spec, kernel_mode="plain")
        assert post.trace >= plain.trace - 1e-6


class TestPriorMean:
    def test_zero(self):
        grid = QueryGrid.regular([0, 0, 0], [1, 1, 1], [1, 1, 1])
        assert np.allclose(prior_mean(grid, 0.0), 0.0)

    def test_constant_level(self):
        grid = QueryGrid.regular([0, 0, 0], [1, 1, 1], [1, 1, 1])
        v = prior_mean(grid, 23.64)
        assert np.allclose(v, 23.64)

    def test_single_point_grid(self):
        grid = QueryGrid.regular([0, 0, 0], [0, 0, 0], [1, 1, 1])
        assert prior_mean(grid, 1.0).shape == (1,)


class TestTraining:
    def test_recovers_length_scale_within_factor_two(self):
        rng = np.random.default_rng(10)
        xs = rng.uniform(0, 4, size=(150, 3))
        true = make_spec(sf2=1.0, ls=1.0, sn2=0.01)
        k = kernel_matrix(true, xs, xs) + 0.01 * np.eye(150)
        y = np.linalg.cholesky(k + 1e-10 * np.eye(150)) @ rng.normal(size=150)
        train = TrainingSet([ObservedInput(x, np.zeros((3, 3))) for x in xs], y)
        hp = train_hyperparams(train, make_spec(sf2=0.5, ls=0.3, sn2=0.05), restarts=4)
        assert 0.5 <= hp.length_scale <= 2.0

    def test_constant_targets_push_length_scale_to_bound(self):
        rng = np.random.default_rng(11)
        xs = rng.uniform(0, 2, size=(20, 3))
        train = TrainingSet(
            [ObservedInput(x, np.zeros((3, 3))) for x in xs], np.full(20, 3.0)
        )
        hp = train_hyperparams(
            train, make_spec(), restarts=4, fix_noise=1e-4
        )
        assert hp.length_scale >= 100.0

    def test_multi_restart_never_worse(self):
        rng = np.random.default_rng(12)
        train = random_train(rng, 25)
        spec0 = make_spec(sf2=0.7, ls=0.4, sn2=0.02)
        single = train_hyperparams(train, spec0, restarts=1, seed=0)
        multi = train_hyperparams(train, spec0, restarts=6, seed=0)
        nll_s = negative_log_marginal_likelihood(train, spec0.with_hyperparams(single))
        nll_m = negative_log_marginal_likelihood(train, spec0.with_hyperparams(multi))
        assert nll_m <= nll_s + 1e-9

    def test_requires_minimum_samples(self):
        rng = np.random.default_rng(13)
        with pytest.raises(ValueError):
            train_hyperparams(random_train(rng, 4), make_spec())
