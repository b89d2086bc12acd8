"""Logistic and multinomial fitting, robust covariance, Wald tests."""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import expit, logit
from scipy.stats import norm

from ecborrow import (
    NonConvergence,
    SeparationError,
    SingularError,
    fit_logistic,
    fit_multinomial,
    sandwich_covariance,
    wald_one_sided,
)


def random_design(n, rng, p_extra=1):
    X = np.column_stack([np.ones(n)] + [rng.standard_normal(n) for _ in range(p_extra)])
    beta = rng.normal(0, 0.8, size=p_extra + 1)
    y = (rng.random(n) < expit(X @ beta)).astype(float)
    return X, y


class TestFitLogistic:
    def test_intercept_only_closed_form(self):
        y = np.array([1, 1, 1, 0, 0, 1, 0, 1, 1, 0], dtype=float)
        X = np.ones((10, 1))
        fit = fit_logistic(X, y)
        phat = y.mean()
        assert fit.coef[0] == pytest.approx(logit(phat), abs=1e-10)
        assert fit.cov_model[0, 0] == pytest.approx(
            1.0 / (10 * phat * (1 - phat)), rel=1e-8
        )

    def test_score_equations_hold_at_optimum(self):
        rng = np.random.default_rng(7)
        X, y = random_design(80, rng, p_extra=2)
        fit = fit_logistic(X, y)
        score = X.T @ (y - fit.predict_proba(X))
        assert np.abs(score).max() < 1e-8
        assert fit.converged

    def test_matches_generic_optimizer(self):
        rng = np.random.default_rng(12)
        X, y = random_design(120, rng, p_extra=2)

        def neg_ll(b):
            eta = X @ b
            return -(y @ eta - np.logaddexp(0.0, eta).sum())

        def grad(b):
            return -(X.T @ (y - expit(X @ b)))

        ref = minimize(neg_ll, np.zeros(3), jac=grad, method="BFGS", tol=1e-12)
        fit = fit_logistic(X, y)
        assert np.allclose(fit.coef, ref.x, atol=1e-6)
        assert fit.loglik == pytest.approx(-ref.fun, abs=1e-9)

    def test_weights_equal_row_duplication(self):
        rng = np.random.default_rng(3)
        X, y = random_design(40, rng)
        w = rng.integers(1, 4, size=40).astype(float)
        reps = w.astype(int)
        Xd = np.repeat(X, reps, axis=0)
        yd = np.repeat(y, reps)
        fw = fit_logistic(X, y, weights=w)
        fd = fit_logistic(Xd, yd)
        assert np.allclose(fw.coef, fd.coef, atol=1e-9)
        assert fw.loglik == pytest.approx(fd.loglik, abs=1e-8)
        assert np.allclose(fw.cov_model, fd.cov_model, atol=1e-9)

    def test_zero_weight_rows_ignored(self):
        rng = np.random.default_rng(9)
        X, y = random_design(50, rng)
        Xa = np.vstack([X, [[1.0, 50.0]], [[1.0, -50.0]]])
        ya = np.concatenate([y, [1.0, 0.0]])
        w = np.concatenate([np.ones(50), [0.0, 0.0]])
        fa = fit_logistic(Xa, ya, weights=w)
        fb = fit_logistic(X, y)
        assert np.allclose(fa.coef, fb.coef, atol=1e-9)

    def test_separated_data_raises(self):
        x = np.concatenate([np.linspace(-2, -0.5, 10), np.linspace(0.5, 2, 10)])
        X = np.column_stack([np.ones(20), x])
        y = (x > 0).astype(float)
        with pytest.raises(SeparationError):
            fit_logistic(X, y)

    def test_constant_outcome_raises_separation(self):
        X = np.column_stack([np.ones(8), np.arange(8.0)])
        with pytest.raises(SeparationError):
            fit_logistic(X, np.ones(8))

    def test_duplicate_column_raises_singular(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(30)
        X = np.column_stack([np.ones(30), x, x])
        y = (rng.random(30) < 0.5).astype(float)
        with pytest.raises(SingularError):
            fit_logistic(X, y)

    def test_iteration_cap_raises_nonconvergence(self):
        rng = np.random.default_rng(15)
        X, y = random_design(60, rng, p_extra=2)
        with pytest.raises(NonConvergence):
            fit_logistic(X, y, max_iter=1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_convergence_invariant_random_designs(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(25, 90))
        X, y = random_design(n, rng, p_extra=int(rng.integers(1, 3)))
        assume(0 < y.sum() < n)
        try:
            fit = fit_logistic(X, y)
        except SeparationError:
            assume(False)
        score = X.T @ (y - fit.predict_proba(X))
        assert np.abs(score).max() < 1e-8
        null_ll = n * (
            y.mean() * np.log(max(y.mean(), 1e-12))
            + (1 - y.mean()) * np.log(max(1 - y.mean(), 1e-12))
        )
        assert fit.loglik >= null_ll - 1e-8


class TestSandwich:
    def test_intercept_only_unit_weights_equals_model(self):
        y = np.array([1, 0, 1, 1, 0, 1, 1, 0, 0, 1, 1, 1], dtype=float)
        X = np.ones((12, 1))
        fit = fit_logistic(X, y)
        robust = sandwich_covariance(X, y, np.ones(12), fit.coef)
        # with a saturated intercept-only fit, B = -A exactly
        assert robust[0, 0] == pytest.approx(fit.cov_model[0, 0], rel=1e-12)

    def test_manual_formula(self):
        rng = np.random.default_rng(21)
        X, y = random_design(35, rng)
        w = rng.uniform(0.5, 2.0, size=35)
        fit = fit_logistic(X, y, weights=w)
        mu = fit.predict_proba(X)
        A = X.T @ (X * (w * mu * (1 - mu))[:, None])
        g = w * (y - mu)
        B = (X * g[:, None]).T @ (X * g[:, None])
        expected = np.linalg.inv(A) @ B @ np.linalg.inv(A)
        got = sandwich_covariance(X, y, w, fit.coef)
        assert np.allclose(got, expected, atol=1e-12)
        assert np.allclose(got, got.T)

    def test_rank_deficient_raises(self):
        X = np.column_stack([np.ones(10), np.ones(10)])
        y = np.array([1, 0] * 5, dtype=float)
        with pytest.raises(SingularError):
            sandwich_covariance(X, y, np.ones(10), np.zeros(2))


class TestWald:
    def test_z_and_p(self):
        t = wald_one_sided(0.3, 0.04)
        assert t.z == pytest.approx(1.5)
        assert t.p_value == pytest.approx(norm.sf(1.5), rel=1e-12)
        assert not t.reject

    def test_rejection_boundary(self):
        zc = norm.isf(0.05)
        below = wald_one_sided(zc - 1e-6, 1.0)
        above = wald_one_sided(zc + 1e-6, 1.0)
        assert not below.reject and below.p_value > 0.05
        assert above.reject and above.p_value < 0.05
        for t in (below, above):
            assert t.reject == (t.p_value < t.alpha)

    def test_negative_estimate_large_p(self):
        t = wald_one_sided(-2.0, 1.0)
        assert t.p_value > 0.5
        assert not t.reject

    @pytest.mark.parametrize("var", [0.0, -1.0, np.nan, np.inf])
    def test_bad_variance_rejected(self, var):
        with pytest.raises(ValueError, match="variance"):
            wald_one_sided(0.5, var)

    def test_bad_alpha_rejected(self):
        with pytest.raises(ValueError, match="alpha"):
            wald_one_sided(0.5, 1.0, alpha=1.5)


class TestMultinomial:
    def test_two_categories_match_binary_fit(self):
        rng = np.random.default_rng(31)
        X, y = random_design(90, rng, p_extra=2)
        mfit = fit_multinomial(X, y.astype(int))
        bfit = fit_logistic(X, y)
        assert np.array_equal(mfit.categories, [0, 1])
        assert np.allclose(mfit.coef[0], bfit.coef, atol=1e-8)

    def test_smallest_label_is_reference(self):
        rng = np.random.default_rng(5)
        X = np.column_stack([np.ones(150), rng.standard_normal(150)])
        labels = rng.choice([2, 5, 9], size=150)
        fit = fit_multinomial(X, labels)
        assert np.array_equal(fit.categories, [2, 5, 9])
        P = fit.predict_proba(X)
        assert P.shape == (150, 3)
        assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)

    def test_score_equations_per_category(self):
        rng = np.random.default_rng(17)
        n = 200
        X = np.column_stack([np.ones(n), rng.integers(0, 2, n).astype(float)])
        labels = rng.choice([1, 2, 3], size=n, p=[0.5, 0.3, 0.2])
        fit = fit_multinomial(X, labels)
        P = fit.predict_proba(X)
        for k, cat in enumerate(fit.categories[1:], start=1):
            score = X.T @ ((labels == cat).astype(float) - P[:, k])
            assert np.abs(score).max() < 1e-8

    def test_matches_generic_optimizer(self):
        rng = np.random.default_rng(40)
        n = 120
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        labels = rng.choice([0, 1, 2], size=n)
        Y = np.column_stack([(labels == c).astype(float) for c in (0, 1, 2)])

        def neg_ll(flat):
            B = flat.reshape(2, 2)
            logits = np.column_stack([np.zeros(n), X @ B.T])
            lse = np.logaddexp.reduce(logits, axis=1)
            return -float((Y[:, 1:] * (X @ B.T)).sum() - lse.sum())

        ref = minimize(neg_ll, np.zeros(4), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 5000})
        fit = fit_multinomial(X, labels)
        assert fit.loglik == pytest.approx(-ref.fun, abs=1e-7)
        assert np.allclose(fit.coef.ravel(), ref.x, atol=1e-4)

    def test_single_category_raises(self):
        X = np.ones((10, 1))
        with pytest.raises((ValueError, SeparationError)):
            fit_multinomial(X, np.ones(10, dtype=int))
