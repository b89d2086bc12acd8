"""Core data model: patient-level datasets and multi-study collections.

A :class:`StudyCollection` holds one randomized trial (always first, index 1)
plus zero or more external control datasets.  Arrays are stored read-only;
every analysis routine treats them as immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "PatientRecord",
    "Dataset",
    "StudyCollection",
    "ArmSummary",
    "ValidationReport",
    "AnalysisResult",
    "validate_collection",
    "pool",
    "arm_summary",
]


class PatientRecord(NamedTuple):
    """One patient: covariate vector, binary treatment, binary outcome."""

    covariates: tuple[float, ...]
    treatment: int
    outcome: int


class ArmSummary(NamedTuple):
    """Counts for one arm; ``rate`` is None when the arm is empty."""

    n: int
    responders: int
    rate: float | None


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Patient-level data for one study.

    ``x`` is (n, q) float, ``treatment`` and ``outcome`` are (n,) integer
    arrays.  Construction checks shape coherence only; semantic rules
    (binary coding, all-control externals) are surfaced by
    :func:`validate_collection` so that malformed input can be reported
    rather than silently rejected.
    """

    study_index: int
    x: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    is_rct: bool = False

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        t = np.asarray(self.treatment, dtype=np.int64).ravel()
        y = np.asarray(self.outcome, dtype=np.int64).ravel()
        if x.ndim != 2:
            raise ValueError("covariate array must be 2-dimensional")
        if x.shape[0] != t.shape[0] or t.shape[0] != y.shape[0]:
            raise ValueError(
                f"length mismatch in study {self.study_index}: "
                f"x has {x.shape[0]} rows, treatment {t.shape[0]}, outcome {y.shape[0]}"
            )
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "treatment", _frozen(t))
        object.__setattr__(self, "outcome", _frozen(y))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def q(self) -> int:
        return self.x.shape[1]

    @property
    def records(self) -> list[PatientRecord]:
        return [
            PatientRecord(tuple(self.x[i]), int(self.treatment[i]), int(self.outcome[i]))
            for i in range(self.n)
        ]

    @classmethod
    def from_records(
        cls, study_index: int, records: Sequence[PatientRecord], is_rct: bool = False
    ) -> "Dataset":
        x = np.array([r.covariates for r in records], dtype=float)
        if x.size == 0:
            x = x.reshape(len(records), 0)
        t = np.array([r.treatment for r in records], dtype=np.int64)
        y = np.array([r.outcome for r in records], dtype=np.int64)
        return cls(study_index, x, t, y, is_rct)

    def subset(self, indices: np.ndarray) -> "Dataset":
        """New dataset keeping ``indices`` rows (original order preserved)."""
        idx = np.sort(np.asarray(indices, dtype=np.int64))
        return Dataset(
            self.study_index, self.x[idx], self.treatment[idx], self.outcome[idx], self.is_rct
        )


@dataclass(frozen=True)
class StudyCollection:
    """One RCT followed by its external control datasets."""

    datasets: tuple[Dataset, ...]
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        ds = tuple(self.datasets)
        if not ds:
            raise ValueError("a collection needs at least the RCT dataset")
        if not ds[0].is_rct:
            raise ValueError("the first dataset must be the RCT (is_rct=True)")
        if any(d.is_rct for d in ds[1:]):
            raise ValueError("only the first dataset may be flagged is_rct")
        names = tuple(self.covariate_names)
        if not names:
            names = tuple(f"x{i + 1}" for i in range(ds[0].q))
        object.__setattr__(self, "datasets", ds)
        object.__setattr__(self, "covariate_names", names)

    @property
    def rct(self) -> Dataset:
        return self.datasets[0]

    @property
    def externals(self) -> tuple[Dataset, ...]:
        return self.datasets[1:]

    @property
    def n_studies(self) -> int:
        return len(self.datasets)

    @property
    def q(self) -> int:
        return self.rct.q

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Pooled (x, treatment, outcome, study_label) arrays, D1 rows first."""
        x = np.vstack([d.x for d in self.datasets])
        t = np.concatenate([d.treatment for d in self.datasets])
        y = np.concatenate([d.outcome for d in self.datasets])
        lab = np.concatenate(
            [np.full(d.n, d.study_index, dtype=np.int64) for d in self.datasets]
        )
        return x, t, y, lab


@dataclass
class ValidationReport:
    """Outcome of :func:`validate_collection`: a list of violation strings."""

    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:  # truthiness == validity
        return self.ok


def validate_collection(c: StudyCollection) -> ValidationReport:
    """Check semantic invariants, returning every violation found.

    Reported conditions: covariate dimension mismatch against the declared
    names, non-binary outcome or treatment coding, treated patients inside
    an external dataset, empty datasets, and study indices that do not run
    1..I in order.
    """
    report = ValidationReport()
    q = len(c.covariate_names)
    for pos, d in enumerate(c.datasets, start=1):
        tag = f"study {d.study_index}"
        if d.study_index != pos:
            report.violations.append(
                f"{tag}: study_index out of order (expected {pos})"
            )
        if d.n == 0:
            report.violations.append(f"{tag}: empty dataset")
        if d.q != q:
            report.violations.append(
                f"{tag}: covariate dimension mismatch ({d.q} columns, schema has {q})"
            )
        if not np.isfinite(d.x).all():
            report.violations.append(f"{tag}: non-finite covariate values")
        if d.n and not np.isin(d.outcome, (0, 1)).all():
            report.violations.append(f"{tag}: non-binary outcome")
        if d.n and not np.isin(d.treatment, (0, 1)).all():
            report.violations.append(f"{tag}: non-binary treatment")
        if not d.is_rct and d.n and (d.treatment != 0).any():
            report.violations.append(f"{tag}: external dataset contains treated patients")
    return report


def pool(c: StudyCollection, selected: Iterable[int]) -> Dataset:
    """Concatenate the selected studies into one pseudo-dataset.

    ``selected`` must contain study 1; rows follow ascending study order,
    original order within each study.
    """
    chosen = sorted(set(int(s) for s in selected))
    if 1 not in chosen:
        raise ValueError("pooling always includes the RCT (study 1)")
    valid = {d.study_index for d in c.datasets}
    unknown = [s for s in chosen if s not in valid]
    if unknown:
        raise ValueError(f"unknown study indices: {unknown}")
    parts = [d for d in c.datasets if d.study_index in chosen]
    x = np.vstack([d.x for d in parts])
    t = np.concatenate([d.treatment for d in parts])
    y = np.concatenate([d.outcome for d in parts])
    return Dataset(1, x, t, y, is_rct=True)


def arm_summary(d: Dataset, arm: int) -> ArmSummary:
    """Size, responder count and response rate for one treatment arm."""
    if arm not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {arm}")
    mask = d.treatment == arm
    n = int(mask.sum())
    responders = int(d.outcome[mask].sum())
    rate = responders / n if n else None
    return ArmSummary(n, responders, rate)


@dataclass(frozen=True)
class AnalysisResult:
    """Output of one analysis method on one collection.

    ``tau_hat`` is NaN and ``reject`` False when the method failed to
    converge; ``diagnostics['converged']`` records which case applies.
    """

    method_id: str
    tau_hat: float
    gamma_hat: float | None
    se_stat: float
    z_value: float
    p_value: float
    reject: bool
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        p = self.p_value
        if np.isfinite(p) and not (0.0 <= p <= 1.0):
            raise ValueError(f"p_value outside [0, 1]: {p}")
        t = self.tau_hat
        if np.isfinite(t) and not (-1.0 <= t <= 1.0):
            raise ValueError(f"tau_hat outside [-1, 1]: {t}")

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", True))

    @classmethod
    def failure(cls, method_id: str, reason: str) -> "AnalysisResult":
        """Marker result for a replicate where the fit did not converge."""
        nan = float("nan")
        return cls(
            method_id=method_id,
            tau_hat=nan,
            gamma_hat=None,
            se_stat=nan,
            z_value=nan,
            p_value=nan,
            reject=False,
            diagnostics={"converged": False, "reason": reason},
        )
