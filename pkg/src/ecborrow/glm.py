"""Binary and multinomial logistic fitting with explicit failure modes.

Newton-Raphson with step halving.  The fitters raise rather than return
garbage: :class:`SeparationError` when coefficients run away (monotone
likelihood), :class:`SingularError` on rank-deficient information, and
:class:`NonConvergence` when the iteration budget is exhausted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .errors import NonConvergence, SeparationError, SingularError

__all__ = [
    "logistic",
    "GlmFit",
    "MultinomialFit",
    "WaldTest",
    "fit_logistic",
    "fit_multinomial",
    "sandwich_covariance",
    "wald_one_sided",
]

MAX_ITER = 100
TOL_LL = 1e-10
TOL_SCORE = 1e-8
SEPARATION_BOUND = 30.0
_COND_LIMIT = 1e12


def logistic(t):
    """Standard logistic function, numerically stable on both tails."""
    return expit(t)


def _bernoulli_loglik(eta: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    # y*eta - log(1 + exp(eta)), computed without overflow
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def _check_design(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> None:
    if X.ndim != 2:
        raise ValueError("design matrix must be 2-dimensional")
    n, p = X.shape
    if n < p:
        raise ValueError(f"need at least as many rows as columns ({n} < {p})")
    if not np.isfinite(X).all():
        raise ValueError("design matrix contains non-finite values")
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("response/weight length does not match design rows")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("response must be coded 0/1")
    if (w < 0).any() or not np.isfinite(w).all():
        raise ValueError("weights must be finite and non-negative")
    active = w > 0
    y_act = y[active]
    if y_act.size == 0 or y_act.min() == y_act.max():
        raise SeparationError(
            "all outcomes identical among positively weighted rows"
        )


def _solve_information(info: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if not np.isfinite(info).all() or np.linalg.cond(info) > _COND_LIMIT:
        raise SingularError("information matrix is rank deficient")
    try:
        return np.linalg.solve(info, rhs)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cond() guards first
        raise SingularError("information matrix is singular") from exc


@dataclass
class GlmFit:
    """Converged weighted logistic fit."""

    coef: np.ndarray
    cov_model: np.ndarray  # inverse observed information
    loglik: float
    iterations: int
    converged: bool = True

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return logistic(np.asarray(X, float) @ self.coef)


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
    tol_ll: float = TOL_LL,
    tol_score: float = TOL_SCORE,
    separation_bound: float = SEPARATION_BOUND,
) -> GlmFit:
    """Weighted logistic regression by Newton-Raphson with step halving.

    Convergence requires both a relative log-likelihood change below
    ``tol_ll`` and a score max-norm below ``tol_score``.  Any coefficient
    exceeding ``separation_bound`` in absolute value aborts with
    :class:`SeparationError`.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float).ravel()
    _check_design(X, y, w)

    p = X.shape[1]
    coef = np.zeros(p)
    eta = X @ coef
    ll = _bernoulli_loglik(eta, y, w)

    for it in range(1, max_iter + 1):
        mu = logistic(eta)
        score = X.T @ (w * (y - mu))
        wvar = w * mu * (1.0 - mu)
        info = X.T @ (X * wvar[:, None])
        step = _solve_information(info, score)

        new_coef = coef + step
        new_eta = X @ new_coef
        new_ll = _bernoulli_loglik(new_eta, y, w)
        # slack admits full Newton steps once ll sits at float resolution,
        # where the strict comparison would stall the quadratic phase
        slack = 1e-13 * (abs(ll) + 1.0)
        halvings = 0
        while new_ll < ll - slack and halvings < 30:
            step *= 0.5
            new_coef = coef + step
            new_eta = X @ new_coef
            new_ll = _bernoulli_loglik(new_eta, y, w)
            halvings += 1

        coef, eta = new_coef, new_eta
        if np.abs(coef).max() > separation_bound:
            raise SeparationError(
                f"coefficient magnitude exceeded {separation_bound} at iteration {it}"
            )

        mu = logistic(eta)
        score = X.T @ (w * (y - mu))
        rel_change = abs(new_ll - ll) / (abs(ll) + 1.0)
        ll = new_ll
        if rel_change < tol_ll and np.abs(score).max() < tol_score:
            wvar = w * mu * (1.0 - mu)
            info = X.T @ (X * wvar[:, None])
            if np.linalg.cond(info) > _COND_LIMIT:
                raise SingularError("information matrix is rank deficient at optimum")
            cov = np.linalg.inv(info)
            return GlmFit(coef=coef, cov_model=(cov + cov.T) / 2.0, loglik=ll, iterations=it)

    raise NonConvergence(f"logistic fit did not converge in {max_iter} iterations")


def sandwich_covariance(
    X: np.ndarray, y: np.ndarray, weights: np.ndarray, coef: np.ndarray
) -> np.ndarray:
    """Robust covariance (-A)^-1 B (-A)^-1 for a weighted logistic fit.

    A is the weighted Hessian; B sums the outer products of the weighted
    per-observation scores w_i (y_i - p_i) x_i.  The weight multiplies the
    whole score, so it enters B squared.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    mu = logistic(X @ np.asarray(coef, dtype=float))
    info = X.T @ (X * (w * mu * (1.0 - mu))[:, None])  # -A
    g = w * (y - mu)
    bread_rhs = X.T @ (X * (g * g)[:, None])  # B
    if np.linalg.cond(info) > _COND_LIMIT:
        raise SingularError("information matrix is rank deficient")
    ainv = np.linalg.inv(info)
    v = ainv @ bread_rhs @ ainv
    return (v + v.T) / 2.0


class WaldTest:
    """One-sided Wald test of H0: parameter <= 0 against > 0."""

    __slots__ = ("estimate", "se", "z", "p_value", "reject", "alpha")

    def __init__(self, estimate: float, variance: float, alpha: float):
        if not np.isfinite(variance) or variance <= 0.0:
            raise ValueError(f"variance must be positive and finite, got {variance}")
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {alpha}")
        self.estimate = float(estimate)
        self.alpha = float(alpha)
        self.se = float(np.sqrt(variance))
        self.z = self.estimate / self.se
        self.p_value = float(norm.sf(self.z))
        self.reject = bool(self.p_value < alpha)


def wald_one_sided(estimate: float, variance: float, alpha: float = 0.05) -> WaldTest:
    """z = estimate / sqrt(variance); p = 1 - Phi(z); reject iff p < alpha."""
    return WaldTest(estimate, variance, alpha)


@dataclass
class MultinomialFit:
    """Reference-category multinomial logit (first category is baseline)."""

    categories: np.ndarray  # sorted category labels, length K
    coef: np.ndarray  # (K-1, p) coefficients for categories[1:]
    loglik: float
    iterations: int
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Probabilities (n, K) aligned with ``categories``; rows sum to 1."""
        X = np.asarray(X, dtype=float)
        logits = np.zeros((X.shape[0], len(self.categories)))
        logits[:, 1:] = X @ self.coef.T
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)


def fit_multinomial(
    X: np.ndarray,
    labels: np.ndarray,
    max_iter: int = MAX_ITER,
    tol_ll: float = TOL_LL,
    tol_score: float = TOL_SCORE,
    separation_bound: float = SEPARATION_BOUND,
) -> MultinomialFit:
    """Multinomial logistic regression by full Newton iteration.

    ``labels`` may be any integer codes; the smallest becomes the reference
    category.  With two categories the path reduces to :func:`fit_logistic`
    for the indicator of the larger label.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels).ravel()
    cats = np.unique(labels)
    K = len(cats)
    if K < 2:
        raise ValueError("need at least two categories")
    n, p = X.shape
    if labels.shape[0] != n:
        raise ValueError("label length does not match design rows")
    if n < (K - 1) * p:
        raise ValueError("more parameters than observations")
    # one-hot for non-reference categories, (n, K-1)
    onehot = (labels[:, None] == cats[None, 1:]).astype(float)

    theta = np.zeros((K - 1, p))

    def log_probs(th: np.ndarray) -> np.ndarray:
        logits = np.zeros((n, K))
        logits[:, 1:] = X @ th.T
        logits -= logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(logits).sum(axis=1, keepdims=True))
        return logits - logz

    def loglik(th: np.ndarray) -> float:
        lp = log_probs(th)
        idx = np.searchsorted(cats, labels)
        return float(lp[np.arange(n), idx].sum())

    ll = loglik(theta)
    for it in range(1, max_iter + 1):
        probs = np.exp(log_probs(theta))[:, 1:]  # (n, K-1)
        resid = onehot - probs
        score = (X.T @ resid).T.ravel()  # (K-1)*p, category-major

        dim = (K - 1) * p
        H = np.empty((dim, dim))
        for a in range(K - 1):
            for b in range(a, K - 1):
                if a == b:
                    wab = probs[:, a] * (1.0 - probs[:, a])
                else:
                    wab = -probs[:, a] * probs[:, b]
                block = X.T @ (X * wab[:, None])
                H[a * p : (a + 1) * p, b * p : (b + 1) * p] = block
                H[b * p : (b + 1) * p, a * p : (a + 1) * p] = block.T
        step = _solve_information(H, score).reshape(K - 1, p)

        new_theta = theta + step
        new_ll = loglik(new_theta)
        slack = 1e-13 * (abs(ll) + 1.0)
        halvings = 0
        while new_ll < ll - slack and halvings < 30:
            step *= 0.5
            new_theta = theta + step
            new_ll = loglik(new_theta)
            halvings += 1

        theta = new_theta
        if np.abs(theta).max() > separation_bound:
            raise SeparationError(
                f"coefficient magnitude exceeded {separation_bound} at iteration {it}"
            )

        probs = np.exp(log_probs(theta))[:, 1:]
        score = (X.T @ (onehot - probs)).T.ravel()
        rel_change = abs(new_ll - ll) / (abs(ll) + 1.0)
        ll = new_ll
        if rel_change < tol_ll and np.abs(score).max() < tol_score:
            return MultinomialFit(categories=cats, coef=theta, loglik=ll, iterations=it)

    raise NonConvergence(f"multinomial fit did not converge in {max_iter} iterations")
