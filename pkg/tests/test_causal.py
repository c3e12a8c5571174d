"""Feature encoding, the Laplace fit, and dependency graph assembly."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socrat.blackbox import BlackBoxKind, BlackBoxSpec, query_batch
from socrat.causal import (CausalConfig, DependencyGraph, RegressionPrior,
                           build_dependency_graph, build_feature_matrix,
                           encode_features, encode_labels, fit_token_model,
                           log_posterior, log_posterior_grad,
                           log_posterior_hessian)
from socrat.core import (ExamplePair, PerturbationSet, Side, TokenSequence,
                         tokenize)


def _pair(x_text, y_text):
    y = (TokenSequence.absent() if y_text is None
         else tokenize(y_text, side=Side.OUTPUT))
    return ExamplePair(tokenize(x_text), y)


class TestEncoding:
    def test_presence_by_occurrence_rank(self):
        x = tokenize("a b a")
        # 'a c' has one a: rank-1 a present, rank-2 a absent, b absent
        row = encode_features(x, tokenize("a c"))
        assert row.tolist() == [1.0, 0.0, 0.0]
        # two a's satisfy both ranks
        assert encode_features(x, tokenize("a a")).tolist() == [1.0, 0.0, 1.0]
        # self-encoding is all ones
        assert encode_features(x, x).tolist() == [1.0, 1.0, 1.0]

    def test_feature_matrix_has_all_ones_original_row(self):
        pset = PerturbationSet(_pair("a b", "X"),
                               (_pair("b", "X"), _pair("a", None)))
        X = build_feature_matrix(pset)
        assert X.shape == (3, 2)
        assert X[0].tolist() == [1.0, 1.0]
        assert X[1].tolist() == [0.0, 1.0]
        assert X[2].tolist() == [1.0, 0.0]

    def test_labels_absent_row_is_zero(self):
        y = tokenize("X Y X", side=Side.OUTPUT)
        outputs = [y, TokenSequence.absent(),
                   tokenize("X", side=Side.OUTPUT)]
        Y = encode_labels(y, outputs)
        assert Y.tolist() == [[1, 1, 1], [0, 0, 0], [1, 0, 0]]


class TestReferenceFormulas:
    def _case(self, rng, rows=20, feats=5):
        X = (rng.random((rows, feats)) < 0.5).astype(np.float64)
        X[0] = 1.0
        y = (rng.random(rows) < 0.5).astype(np.float64)
        theta = rng.normal(size=feats)
        return X, y, theta

    def test_grad_matches_finite_differences(self, rng):
        prior = RegressionPrior(alpha=0.3, beta=2.0)
        X, y, theta = self._case(rng)
        g = log_posterior_grad(theta, X, y, prior)
        eps = 1e-6
        for d in range(len(theta)):
            up = theta.copy(); up[d] += eps
            dn = theta.copy(); dn[d] -= eps
            fd = (log_posterior(up, X, y, prior)
                  - log_posterior(dn, X, y, prior)) / (2 * eps)
            assert abs(fd - g[d]) < 1e-5

    def test_hessian_matches_finite_differences(self, rng):
        prior = RegressionPrior(alpha=0.0, beta=1.5)
        X, y, theta = self._case(rng, rows=15, feats=4)
        H = log_posterior_hessian(theta, X, y, prior)
        eps = 1e-5
        for d in range(len(theta)):
            up = theta.copy(); up[d] += eps
            dn = theta.copy(); dn[d] -= eps
            fd_col = (log_posterior_grad(up, X, y, prior)
                      - log_posterior_grad(dn, X, y, prior)) / (2 * eps)
            # H is the NEGATIVE Hessian of the log posterior
            np.testing.assert_allclose(-fd_col, H[:, d], atol=1e-6)

    def test_hessian_positive_definite(self, rng):
        prior = RegressionPrior(beta=0.5)
        X, y, theta = self._case(rng)
        H = log_posterior_hessian(theta, X, y, prior)
        assert np.all(np.linalg.eigvalsh(H) > 0)


class TestFit:
    def test_map_gradient_vanishes(self, rng):
        prior = RegressionPrior(alpha=0.1, beta=1.0)
        for _ in range(5):
            rows, feats = int(rng.integers(5, 30)), int(rng.integers(1, 6))
            X = (rng.random((rows, feats)) < 0.5).astype(np.float64)
            X[0] = 1.0
            y = (rng.random(rows) < 0.5).astype(np.float64)
            fit = fit_token_model(X, y, prior)
            assert fit.converged
            g = log_posterior_grad(fit.mean, X, y, prior)
            assert np.max(np.abs(g)) < 1e-7

    def test_zero_design_returns_prior(self):
        X = np.zeros((4, 3))
        y = np.zeros(4)
        prior = RegressionPrior(alpha=0.7, beta=4.0)
        fit = fit_token_model(X, y, prior)
        np.testing.assert_allclose(fit.mean, 0.7, atol=1e-10)
        np.testing.assert_allclose(fit.stddev, 0.5, atol=1e-10)

    def test_laplace_covariance_is_inverse_hessian(self, rng):
        prior = RegressionPrior(beta=2.0)
        X = (rng.random((25, 4)) < 0.5).astype(np.float64)
        X[0] = 1.0
        y = (rng.random(25) < 0.5).astype(np.float64)
        fit = fit_token_model(X, y, prior)
        H = log_posterior_hessian(fit.mean, X, y, prior)
        np.testing.assert_allclose(fit.stddev,
                                   np.sqrt(np.diag(np.linalg.inv(H))),
                                   atol=1e-8)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            fit_token_model(np.zeros((0, 2)), np.zeros(0), RegressionPrior())
        with pytest.raises(ValueError):
            fit_token_model(np.zeros((3, 2)), np.zeros(4), RegressionPrior())

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_map_maximizes_posterior(self, seed):
        rng = np.random.default_rng(seed)
        prior = RegressionPrior(beta=1.0)
        X = (rng.random((12, 3)) < 0.5).astype(np.float64)
        y = (rng.random(12) < 0.5).astype(np.float64)
        fit = fit_token_model(X, y, prior)
        base = log_posterior(fit.mean, X, y, prior)
        for _ in range(5):
            other = fit.mean + rng.normal(scale=0.1, size=3)
            assert log_posterior(other, X, y, prior) <= base + 1e-9


class TestDependencyGraph:
    def test_validation(self):
        with pytest.raises(ValueError):
            DependencyGraph(
                x_nodes=tokenize("a").tokens,
                y_nodes=tokenize("X", side=Side.OUTPUT).tokens,
                theta=np.zeros((2, 1)), theta_hat=np.zeros((1, 1)),
                converged=(True,))
        with pytest.raises(ValueError):
            DependencyGraph(
                x_nodes=tokenize("a").tokens,
                y_nodes=tokenize("X", side=Side.OUTPUT).tokens,
                theta=np.array([[np.nan]]), theta_hat=np.zeros((1, 1)),
                converged=(True,))
        with pytest.raises(ValueError):
            DependencyGraph(
                x_nodes=tokenize("a").tokens,
                y_nodes=tokenize("X", side=Side.OUTPUT).tokens,
                theta=np.zeros((1, 1)), theta_hat=-np.ones((1, 1)),
                converged=(True,))

    def test_arrays_read_only(self):
        g = _tiny_graph()
        with pytest.raises(ValueError):
            g.theta[0, 0] = 5.0

    def test_json_roundtrip_drops_raw(self):
        g = _tiny_graph()
        back = DependencyGraph.from_json(g.to_json())
        assert back.x_nodes == g.x_nodes
        assert back.y_nodes == g.y_nodes
        np.testing.assert_array_equal(back.theta, g.theta)
        np.testing.assert_array_equal(back.theta_hat, g.theta_hat)
        assert back.converged == g.converged
        assert back.raw_theta is None
        doc = json.loads(g.to_json())
        assert doc["schema_version"] == 1
        assert "raw_theta" not in doc


def _tiny_graph() -> DependencyGraph:
    pset = PerturbationSet(
        _pair("a b", "X Y"),
        (_pair("a", "X"), _pair("b", "Y"), _pair("a b", "X Y")))
    return build_dependency_graph(pset, CausalConfig())


class TestBuildGraph:
    def test_identity_box_recovers_diagonal(self):
        spec = BlackBoxSpec(BlackBoxKind.SYNTHETIC_PERMUTER, {})
        from socrat.perturb import PerturberConfig, sample_token_perturbations
        x = tokenize("red green blue white")
        y = query_batch(spec, [x])[0]
        xs = sample_token_perturbations(x, PerturberConfig(n_samples=80,
                                                           seed=0))
        ys = query_batch(spec, xs)
        pset = PerturbationSet(ExamplePair(x, y),
                               tuple(ExamplePair(a, b)
                                     for a, b in zip(xs, ys)))
        g = build_dependency_graph(pset)
        # diagonal strictly dominates its row and column
        for i in range(4):
            row = g.theta[i].copy()
            assert row[i] == row.max()
            assert row[i] > 0.5
            off = np.delete(row, i)
            assert np.all(off < row[i])

    def test_normalization_and_clipping(self):
        g = _tiny_graph()
        assert float(g.theta.max()) == pytest.approx(1.0)
        assert np.all(g.theta >= 0.0)
        assert np.all(g.theta_hat >= 0.0)
        # theta is exactly the clipped, max-normalized raw matrix
        assert g.raw_theta is not None
        clipped = np.maximum(g.raw_theta, 0.0)
        divisor = clipped.max()
        expected = clipped / divisor if divisor > 0 else clipped
        np.testing.assert_allclose(g.theta, expected, atol=1e-15)

    def test_interval_scale_multiplies_hat(self):
        pset = PerturbationSet(
            _pair("a b", "X Y"),
            (_pair("a", "X"), _pair("b", "Y"), _pair("a b", "X Y")))
        g1 = build_dependency_graph(pset, CausalConfig(interval_scale=1.0))
        g2 = build_dependency_graph(pset, CausalConfig(interval_scale=2.5))
        np.testing.assert_allclose(g2.theta_hat, 2.5 * g1.theta_hat,
                                   atol=1e-12)
        np.testing.assert_array_equal(g1.theta, g2.theta)

    def test_workers_do_not_change_the_result(self):
        pset = PerturbationSet(
            _pair("a b c", "X Y Z"),
            tuple(_pair(x_t, y_t) for x_t, y_t in
                  (("a", "X"), ("b", "Y"), ("c", "Z"), ("a c", "X Z"),
                   ("a b c", "X Y Z"))))
        g1 = build_dependency_graph(pset, CausalConfig(workers=1))
        g4 = build_dependency_graph(pset, CausalConfig(workers=4))
        np.testing.assert_array_equal(g1.theta, g4.theta)
        np.testing.assert_array_equal(g1.theta_hat, g4.theta_hat)

    def test_prior_validation(self):
        with pytest.raises(ValueError):
            RegressionPrior(beta=0.0)
        with pytest.raises(ValueError):
            CausalConfig(workers=0)
        with pytest.raises(ValueError):
            CausalConfig(interval_scale=-1.0)
