"""Propensity machinery for borrowing from external control datasets.

Three flavors: a trial-membership score (RCT vs everything else) used for
weighting, pairwise membership scores (RCT vs one external dataset) used for
stratified patient selection, and a generalized score from a multinomial
model over all study labels, consumed as covariate features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, StudyCollection
from .glm import fit_logistic, fit_multinomial

__all__ = [
    "StrataBoundaries",
    "fit_trial_membership_ps",
    "odds_weights",
    "fit_pairwise_ps",
    "stratify_rct",
    "stratum_counts",
    "select_stratified_subset",
    "fit_generalized_ps",
    "gps_log_odds_features",
]


def _with_intercept(x: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((x.shape[0], 1)), x])


def fit_trial_membership_ps(c: StudyCollection) -> np.ndarray:
    """P(enrolled in the RCT | x) for every patient, in pooled row order."""
    x, _, _, lab = c.stacked()
    member = (lab == 1).astype(float)
    fit = fit_logistic(_with_intercept(x), member)
    return fit.predict_proba(_with_intercept(x))


def odds_weights(scores: np.ndarray, is_rct_row: np.ndarray, c: float = 1.0) -> np.ndarray:
    """Analysis weights: 1 for RCT rows, c * e/(1-e) for external rows."""
    if c < 0:
        raise ValueError("weight constant must be non-negative")
    scores = np.asarray(scores, float)
    if ((scores <= 0) | (scores >= 1)).any():
        raise ValueError("membership scores must lie strictly inside (0, 1)")
    odds = scores / (1.0 - scores)
    return np.where(np.asarray(is_rct_row, bool), 1.0, c * odds)


def fit_pairwise_ps(d1: Dataset, di: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Membership scores from a two-dataset model: RCT versus ``di``.

    Returns (scores for d1 rows, scores for di rows).
    """
    x = np.vstack([d1.x, di.x])
    member = np.concatenate([np.ones(d1.n), np.zeros(di.n)])
    fit = fit_logistic(_with_intercept(x), member)
    scores = fit.predict_proba(_with_intercept(x))
    return scores[: d1.n], scores[d1.n :]


@dataclass(frozen=True)
class StrataBoundaries:
    """Half-open strata (cuts[s-1], cuts[s]] covering (0, 1].

    ``cuts`` has length S+1 with cuts[0] = 0 and cuts[S] = 1.  ``active``
    marks the strata that hold at least one of the scores they were built
    from.  Tied quantiles leave zero-width strata, and scores concentrated
    on a few values (binary covariates) can leave an outer stratum empty;
    both kinds are inactive, and selection skips them rather than treating
    an unmatchable stratum as a shortage.
    """

    cuts: np.ndarray
    active: np.ndarray

    @property
    def n_strata(self) -> int:
        return len(self.cuts) - 1

    @property
    def degenerate(self) -> bool:
        return not bool(self.active.all())

    def assign(self, scores: np.ndarray) -> np.ndarray:
        """0-based stratum index per score; scores above cuts[-1] clip to the last."""
        idx = np.searchsorted(self.cuts, np.asarray(scores, float), side="left") - 1
        return np.clip(idx, 0, self.n_strata - 1)


def stratify_rct(rct_scores: np.ndarray, n_strata: int = 5) -> StrataBoundaries:
    """Boundaries at the type-1 (inverted-CDF) quantiles of the RCT scores."""
    if n_strata < 1:
        raise ValueError("need at least one stratum")
    scores = np.asarray(rct_scores, float)
    if scores.size == 0:
        raise ValueError("no scores to stratify")
    probs = np.arange(1, n_strata) / n_strata
    inner = np.quantile(scores, probs, method="inverted_cdf")
    cuts = np.concatenate([[0.0], np.atleast_1d(inner), [1.0]])
    b = StrataBoundaries(cuts=cuts, active=np.ones(n_strata, dtype=bool))
    occupied = np.bincount(b.assign(scores), minlength=n_strata) > 0
    return StrataBoundaries(cuts=cuts, active=occupied)


def stratum_counts(scores: np.ndarray, boundaries: StrataBoundaries) -> np.ndarray:
    """How many of ``scores`` fall in each stratum."""
    idx = boundaries.assign(scores)
    return np.bincount(idx, minlength=boundaries.n_strata)


def select_stratified_subset(
    di: Dataset,
    di_scores: np.ndarray,
    boundaries: StrataBoundaries,
    rng: np.random.Generator,
) -> Dataset:
    """Balanced subset of an external dataset across the active RCT strata.

    L = the minimum count of ``di`` over the active strata; exactly L
    patients are drawn uniformly without replacement from each of them, so
    the subset has L rows per active stratum (empty when any active stratum
    lacks patients).  Patients falling in inactive strata are never drawn.
    Row order of the original dataset is preserved.
    """
    di_scores = np.asarray(di_scores, float)
    if di_scores.shape[0] != di.n:
        raise ValueError("score vector does not match dataset size")
    assign = boundaries.assign(di_scores)
    counts = np.bincount(assign, minlength=boundaries.n_strata)
    strata = np.flatnonzero(boundaries.active)
    take = int(counts[strata].min()) if strata.size else 0
    chosen: list[np.ndarray] = []
    if take > 0:
        for s in strata:
            members = np.flatnonzero(assign == s)
            chosen.append(rng.choice(members, size=take, replace=False))
    idx = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
    return di.subset(idx)


def fit_generalized_ps(c: StudyCollection) -> np.ndarray:
    """Study-membership probabilities (n_total, I) from a multinomial model.

    Rows follow pooled collection order; columns follow study index 1..I.
    """
    x, _, _, lab = c.stacked()
    fit = fit_multinomial(_with_intercept(x), lab)
    return fit.predict_proba(_with_intercept(x))


def gps_log_odds_features(probs: np.ndarray) -> np.ndarray:
    """log(e_k / (1 - e_k)) for study components k = 2..I.

    The study-1 component is dropped: probabilities sum to one, so the full
    set is redundant alongside an intercept.
    """
    probs = np.asarray(probs, float)
    if probs.ndim != 2 or probs.shape[1] < 2:
        raise ValueError("need a (n, I) probability matrix with I >= 2")
    p = np.clip(probs[:, 1:], 1e-12, 1.0 - 1e-12)
    return np.log(p / (1.0 - p))
