"""Aggregation of replicate results into operating characteristics.

Rejection rates average over every replicate, counting failed fits as
non-rejections.  Bias and rmse of the effect estimate use only the
replicates that produced an estimate; the failure rate reports how many
did not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import AnalysisResult

__all__ = ["OcRow", "OcAccumulator", "sort_rows"]


@dataclass(frozen=True)
class OcRow:
    """One (setting, method, effect) cell of a summary table."""

    key: str
    method: str
    effect: str
    rejection_rate: float
    bias: float
    rmse: float
    reps: int
    mc_se: float
    failure_rate: float


class OcAccumulator:
    """Streaming collector for one cell; bias is mean(tau_hat - tau)."""

    def __init__(self) -> None:
        self._rejections = 0
        self._reps = 0
        self._errors: list[float] = []

    def add(self, result: AnalysisResult, true_tau: float) -> None:
        self._reps += 1
        if result.reject:
            self._rejections += 1
        if np.isfinite(result.tau_hat):
            self._errors.append(result.tau_hat - true_tau)

    @property
    def reps(self) -> int:
        return self._reps

    def row(self, key: str, method: str, effect: str) -> OcRow:
        if self._reps == 0:
            raise ValueError("no replicates accumulated")
        n = self._reps
        rate = self._rejections / n
        mc_se = math.sqrt(rate * (1.0 - rate) / n)
        if self._errors:
            errs = np.asarray(self._errors)
            bias = float(errs.mean())
            rmse = float(np.sqrt(np.mean(errs * errs)))
        else:
            bias = math.nan
            rmse = math.nan
        return OcRow(
            key=key,
            method=method,
            effect=effect,
            rejection_rate=rate,
            bias=bias,
            rmse=rmse,
            reps=n,
            mc_se=mc_se,
            failure_rate=(n - len(self._errors)) / n,
        )


def sort_rows(rows: list[OcRow], method_order: tuple[str, ...]) -> list[OcRow]:
    """Stable ordering: key, then the canonical method order, then effect."""
    pos = {m: i for i, m in enumerate(method_order)}
    return sorted(rows, key=lambda r: (r.key, pos.get(r.method, len(pos)), r.effect))
