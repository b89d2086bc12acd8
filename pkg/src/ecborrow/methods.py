"""The eight analysis methods for a trial with external control datasets.

Every method maps (StudyCollection, MethodConfig, rng) to an
:class:`AnalysisResult` with a one-sided test of a positive treatment
effect.  Numerical failures never raise: they come back as failure results
(``tau_hat`` NaN, ``reject`` False) so that simulation batches always
complete; the failure reason rides in the diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .data import AnalysisResult, Dataset, StudyCollection, arm_summary, pool
from .errors import EstimationError, SingularError
from .glm import fit_logistic, sandwich_covariance, wald_one_sided
from .mixed import ReSpec, fit_re, tau_hat_re
from .propensity import (
    fit_generalized_ps,
    fit_pairwise_ps,
    fit_trial_membership_ps,
    gps_log_odds_features,
    odds_weights,
    select_stratified_subset,
    stratify_rct,
)

__all__ = [
    "MethodConfig",
    "METHOD_ORDER",
    "METHODS",
    "normalize_method_id",
    "zprop",
    "glm_rct_only",
    "ttp",
    "psw",
    "fixed_effects",
    "random_effects",
    "pss_re",
    "ps_re",
]


@dataclass(frozen=True)
class MethodConfig:
    """Shared knobs: test level, screening level, weighting and stratification."""

    alpha: float = 0.05
    ttp_screen_alpha: float = 0.2
    psw_c: float = 1.0
    strata: int = 5
    re_spec: ReSpec = ReSpec()

    def __post_init__(self) -> None:
        for name in ("alpha", "ttp_screen_alpha"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.psw_c < 0:
            raise ValueError("psw_c must be non-negative")
        if self.strata < 1:
            raise ValueError("strata must be positive")


DEFAULT_CONFIG = MethodConfig()


def _two_sample_z(y_treated: np.ndarray, y_control: np.ndarray) -> tuple[float, float, float]:
    """Difference in response rates with the pooled-variance z statistic.

    Returns (tau, se, z).  A degenerate pooled rate (all 0 or all 1) forces
    equal arm rates, reported as z = 0 with se = 0.
    """
    nt, nc = len(y_treated), len(y_control)
    if nt == 0 or nc == 0:
        raise ValueError("both arms must be non-empty")
    pt, pc = y_treated.mean(), y_control.mean()
    tau = float(pt - pc)
    pooled = (y_treated.sum() + y_control.sum()) / (nt + nc)
    var = pooled * (1.0 - pooled) * (1.0 / nt + 1.0 / nc)
    if var <= 0.0:
        return tau, 0.0, 0.0
    se = float(np.sqrt(var))
    return tau, se, tau / se


def _plugin_tau(beta0: float, beta: np.ndarray, gamma: float, d1: Dataset) -> float:
    lp = beta0 + d1.x @ beta
    return float(np.mean(expit(lp + gamma) - expit(lp)))


def _guard(method_id: str, body: Callable[[], AnalysisResult]) -> AnalysisResult:
    try:
        return body()
    except (EstimationError, np.linalg.LinAlgError) as exc:
        return AnalysisResult.failure(method_id, str(exc))


def zprop(
    c: StudyCollection, cfg: MethodConfig = DEFAULT_CONFIG, rng=None
) -> AnalysisResult:
    """Two-sample z-test for proportions on the RCT arms alone."""
    d1 = c.rct
    yt = d1.outcome[d1.treatment == 1]
    yc = d1.outcome[d1.treatment == 0]
    tau, se, z = _two_sample_z(yt, yc)
    p = float(norm.sf(z))
    return AnalysisResult(
        method_id="ZPROP",
        tau_hat=tau,
        gamma_hat=None,
        se_stat=se,
        z_value=z,
        p_value=p,
        reject=bool(p < cfg.alpha),
        diagnostics={
            "converged": True,
            "treated": arm_summary(d1, 1),
            "control": arm_summary(d1, 0),
        },
    )


def glm_rct_only(
    c: StudyCollection, cfg: MethodConfig = DEFAULT_CONFIG, rng=None
) -> AnalysisResult:
    """Covariate-adjusted logistic regression on the RCT alone."""

    def body() -> AnalysisResult:
        d1 = c.rct
        X = np.hstack([np.ones((d1.n, 1)), d1.x, d1.treatment[:, None].astype(float)])
        y = d1.outcome.astype(float)
        fit = fit_logistic(X, y)
        v = sandwich_covariance(X, y, np.ones(d1.n), fit.coef)
        gamma = float(fit.coef[-1])
        test = wald_one_sided(gamma, float(v[-1, -1]), cfg.alpha)
        tau = _plugin_tau(float(fit.coef[0]), fit.coef[1:-1], gamma, d1)
        return AnalysisResult(
            method_id="GLM",
            tau_hat=tau,
            gamma_hat=gamma,
            se_stat=test.se,
            z_value=test.z,
            p_value=test.p_value,
            reject=test.reject,
            diagnostics={"converged": True, "iterations": fit.iterations},
        )

    return _guard("GLM", body)


def ttp(
    c: StudyCollection, cfg: MethodConfig = DEFAULT_CONFIG, rng=None
) -> AnalysisResult:
    """Test-then-pool: screen each external dataset, pool survivors, z-test.

    Screening compares each external control rate with the RCT control arm
    by a two-sided test at ``ttp_screen_alpha``; datasets it rejects are
    left out.  The final one-sided test ignores the selection step.
    """
    d1 = c.rct
    yc1 = d1.outcome[d1.treatment == 0]
    included = [1]
    screen_p = {}
    for d in c.externals:
        _, _, z = _two_sample_z(d.outcome, yc1)
        p2 = float(2.0 * norm.sf(abs(z)))
        screen_p[d.study_index] = p2
        if p2 >= cfg.ttp_screen_alpha:
            included.append(d.study_index)
    pooled = pool(c, included)
    yt = pooled.outcome[pooled.treatment == 1]
    yc = pooled.outcome[pooled.treatment == 0]
    tau, se, z = _two_sample_z(yt, yc)
    p = float(norm.sf(z))
    return AnalysisResult(
        method_id="TTP",
        tau_hat=tau,
        gamma_hat=None,
        se_stat=se,
        z_value=z,
        p_value=p,
        reject=bool(p < cfg.alpha),
        diagnostics={
            "converged": True,
            "included_studies": included,
            "screen_p_values": screen_p,
        },
    )


def psw(
    c: StudyCollection, cfg: MethodConfig = DEFAULT_CONFIG, rng=None
) -> AnalysisResult:
    """Propensity-score weighting with a pooled logistic outcome model.

    External rows get weight c * e/(1-e) from the trial-membership score;
    inference on the treatment coefficient uses the sandwich covariance.
    """

    def body() -> AnalysisResult:
        scores = fit_trial_membership_ps(c)
        x, t, y, lab = c.stacked()
        w = odds_weights(scores, lab == 1, cfg.psw_c)
        X = np.hstack([np.ones((len(y), 1)), x, t[:, None].astype(float)])
        yf = y.astype(float)
        fit = fit_logistic(X, yf, weights=w)
        v = sandwich_covariance(X, yf, w, fit.coef)
        gamma = float(fit.coef[-1])
        test = wald_one_sided(gamma, float(v[-1, -1]), cfg.alpha)
        tau = _plugin_tau(float(fit.coef[0]), fit.coef[1:-1], gamma, c.rct)
        ext = lab != 1
        return AnalysisResult(
            method_id="PSW",
            tau_hat=tau,
            gamma_hat=gamma,
            se_stat=test.se,
            z_value=test.z,
            p_value=test.p_value,
            reject=test.reject,
            diagnostics={
                "converged": True,
                "external_weight_total": float(w[ext].sum()),
                "score_range": (float(scores.min()), float(scores.max())),
            },
        )

    return _guard("PSW", body)


def fixed_effects(
    c: StudyCollection, cfg: MethodConfig = DEFAULT_CONFIG, rng=None
) -> AnalysisResult:
    """Pooled logistic regression with one intercept per study.

    An external dataset whose outcomes are all equal drives its own
    intercept to infinity, so that case is reported as a non-converged
    result up front.
    """

    def body() -> AnalysisResult:
        for d in c.externals:
            if d.n and (d.outcome == d.outcome[0]).all():
                raise SingularError(
                    f"study {d.study_index} outcomes are all "
                    f"{int(d.outcome[0])}; its intercept is not estimable"
                )
        x, t, y, lab = c.stacked()
        studies = np.array([d.study_index for d in c.datasets])
        dummies = (lab[:, None] == studies[None, :]).astype(float)
        X = np.hstack([dummies, x, t[:, None].astype(float)])
        fit = fit_logistic(X, y.astype(float))
        gamma = float(fit.coef[-1])
        test = wald_one_sided(gamma, float(fit.cov_model[-1, -1]), cfg.alpha)
        k = len(studies)
        delta1 = float(fit.coef[0])
        beta = fit.coef[k:-1]
        tau = _plugin_tau(delta1, beta, gamma, c.rct)
        return AnalysisResult(
            method_id="FE",
            tau_hat=tau,
            gamma_hat=gamma,
            se_stat=test.se,
            z_value=test.z,
            p_value=test.p_value,
            reject=test.reject,
            diagnostics={
                "converged": True,
                "study_intercepts": fit.coef[:k].tolist(),
            },
        )

    return _guard("FE", body)


def _re_result(
    method_id: str,
    fit,
    d1: Dataset,
    cfg: MethodConfig,
    extra_d1: np.ndarray | None = None,
    extra_diag: dict | None = None,
) -> AnalysisResult:
    if not fit.converged:
        return AnalysisResult.failure(method_id, "marginal likelihood optimizer failed")
    if not np.isfinite(fit.var_gamma) or fit.var_gamma <= 0.0:
        return AnalysisResult.failure(
            method_id, fit.diagnostics.get("var_error", "variance unavailable")
        )
    test = wald_one_sided(fit.gamma, fit.var_gamma, cfg.alpha)
    tau = tau_hat_re(fit, d1, extra_features=extra_d1)
    diag = {
        "converged": True,
        "sigma_delta": fit.sigma_delta,
        "delta1": fit.delta1,
    }
    if extra_diag:
        diag.update(extra_diag)
    return AnalysisResult(
        method_id=method_id,
        tau_hat=tau,
        gamma_hat=float(fit.gamma),
        se_stat=test.se,
        z_value=test.z,
        p_value=test.p_value,
        reject=test.reject,
        diagnostics=diag,
    )


def random_effects(
    c: StudyCollection, cfg: MethodConfig = DEFAULT_CONFIG, rng=None
) -> AnalysisResult:
    """Random study intercepts with penalized marginal-likelihood estimation."""

    def body() -> AnalysisResult:
        fit = fit_re(c, cfg.re_spec)
        return _re_result("RE", fit, c.rct, cfg)

    return _guard("RE", body)


def pss_re(
    c: StudyCollection, cfg: MethodConfig = DEFAULT_CONFIG, rng=None
) -> AnalysisResult:
    """Stratified propensity selection of external patients, then the RE model.

    Each external dataset gets its own pairwise membership model against the
    RCT; RCT score quantiles define the strata and a balanced subsample is
    drawn from every stratum.  Selection consumes the supplied rng.
    """
    if rng is None:
        raise ValueError("PSS-RE needs an rng for the stratified subsampling")

    def body() -> AnalysisResult:
        d1 = c.rct
        subsets: list[Dataset] = []
        borrowed: dict[int, int] = {}
        for d in c.externals:
            s1, si = fit_pairwise_ps(d1, d)
            bounds = stratify_rct(s1, cfg.strata)
            sub = select_stratified_subset(d, si, bounds, rng)
            borrowed[d.study_index] = sub.n
            if sub.n:
                subsets.append(sub)
        datasets = [d1] + [
            Dataset(j + 2, s.x, s.treatment, s.outcome, is_rct=False)
            for j, s in enumerate(subsets)
        ]
        reduced = StudyCollection(tuple(datasets), c.covariate_names)
        fit = fit_re(reduced, cfg.re_spec)
        return _re_result(
            "PSS-RE", fit, d1, cfg, extra_diag={"borrowed_per_study": borrowed}
        )

    return _guard("PSS-RE", body)


def ps_re(
    c: StudyCollection, cfg: MethodConfig = DEFAULT_CONFIG, rng=None
) -> AnalysisResult:
    """RE model augmented with generalized propensity-score features.

    The multinomial study-membership model yields log-odds features for
    studies 2..I; they enter the RE model as fixed covariates and shift the
    plug-in effect through each RCT patient's fitted feature values.
    """

    def body() -> AnalysisResult:
        probs = fit_generalized_ps(c)
        feats = gps_log_odds_features(probs)
        fit = fit_re(c, cfg.re_spec, extra_features=feats)
        n1 = c.rct.n
        return _re_result(
            "PS-RE",
            fit,
            c.rct,
            cfg,
            extra_d1=feats[:n1],
            extra_diag={"kept_features": fit.diagnostics.get("kept_features", [])},
        )

    return _guard("PS-RE", body)


METHOD_ORDER: tuple[str, ...] = (
    "ZPROP",
    "GLM",
    "TTP",
    "PSW",
    "FE",
    "RE",
    "PSS-RE",
    "PS-RE",
)

METHODS: dict[str, Callable[..., AnalysisResult]] = {
    "ZPROP": zprop,
    "GLM": glm_rct_only,
    "TTP": ttp,
    "PSW": psw,
    "FE": fixed_effects,
    "RE": random_effects,
    "PSS-RE": pss_re,
    "PS-RE": ps_re,
}


def normalize_method_id(name: str) -> str:
    """Accept case/underscore variants of the method ids."""
    key = name.strip().upper().replace("_", "-")
    if key not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHOD_ORDER)}")
    return key
