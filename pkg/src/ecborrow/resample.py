"""Model-free evaluation by resampling a real control-arm collection.

One study's control arm seeds an in-silico RCT: sample n1 patients
without replacement, randomize them r:1 to arms, and optionally spike a
treatment effect by converting treated non-responders with probability p.
The remaining studies stay fixed as external data.  Operating
characteristics aggregate over a grid of trial sizes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset, StudyCollection, arm_summary
from .methods import DEFAULT_CONFIG, METHOD_ORDER, METHODS, MethodConfig
from .oc import OcAccumulator, OcRow
from .streams import substream

__all__ = [
    "ManifestStudy",
    "DataCollectionManifest",
    "ResampleConfig",
    "swap_source",
    "subsample_trial",
    "spike_effect",
    "true_tau_resample",
    "run_resampling_study",
]

ROLE_SOURCE = "source-candidate"
ROLE_EXTERNAL = "external"


@dataclass(frozen=True)
class ManifestStudy:
    """One study's entry: where its CSV lives and how it is used."""

    label: str
    path: str
    size: int
    role: str

    def __post_init__(self) -> None:
        if self.role not in (ROLE_SOURCE, ROLE_EXTERNAL):
            raise ValueError(
                f"role must be {ROLE_SOURCE!r} or {ROLE_EXTERNAL!r}, got {self.role!r}"
            )
        if self.size < 1:
            raise ValueError(f"study {self.label!r} has non-positive size")


@dataclass(frozen=True)
class DataCollectionManifest:
    studies: tuple[ManifestStudy, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "studies", tuple(self.studies))
        labels = [s.label for s in self.studies]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate study labels in manifest")
        n_src = sum(s.role == ROLE_SOURCE for s in self.studies)
        if n_src != 1:
            raise ValueError(f"manifest needs exactly one {ROLE_SOURCE} study, found {n_src}")

    @property
    def source(self) -> ManifestStudy:
        return next(s for s in self.studies if s.role == ROLE_SOURCE)

    @property
    def externals(self) -> tuple[ManifestStudy, ...]:
        return tuple(s for s in self.studies if s.role == ROLE_EXTERNAL)


def swap_source(manifest: DataCollectionManifest, new_source: str) -> DataCollectionManifest:
    """Exchange roles so ``new_source`` seeds the in-silico trials."""
    if new_source not in {s.label for s in manifest.studies}:
        raise ValueError(f"unknown study label {new_source!r}")
    studies = tuple(
        ManifestStudy(
            s.label, s.path, s.size, ROLE_SOURCE if s.label == new_source else ROLE_EXTERNAL
        )
        for s in manifest.studies
    )
    return DataCollectionManifest(studies)


@dataclass(frozen=True)
class ResampleConfig:
    """Grid, randomization ratio, spike probability, and replication."""

    n1_grid: tuple[int, ...] = tuple(range(75, 180, 5))
    ratio_r: int = 2
    spike_prob: float = 0.2
    reps: int = 10_000
    seed: int = 0

    def __post_init__(self) -> None:
        grid = tuple(int(v) for v in self.n1_grid)
        object.__setattr__(self, "n1_grid", grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 2:
            raise ValueError("n1_grid must be ascending trial sizes of at least 2")
        if self.ratio_r < 1:
            raise ValueError("ratio_r must be at least 1")
        if not 0.0 <= self.spike_prob <= 1.0:
            raise ValueError("spike_prob must be in [0, 1]")
        if self.reps < 1:
            raise ValueError("reps must be positive")


def subsample_trial(source: Dataset, n1: int, r: int, rng: np.random.Generator) -> Dataset:
    """Draw an in-silico RCT from a control pool; outcomes are untouched.

    Exactly floor(n1*r/(r+1)) patients land in the treated arm via a
    random permutation, so both arms share the source's joint
    outcome/covariate law.
    """
    if n1 > source.n:
        raise ValueError(f"n1={n1} exceeds the source size {source.n}")
    rows = source.subset(rng.choice(source.n, size=n1, replace=False))
    t = np.zeros(n1, dtype=np.int64)
    t[rng.permutation(n1)[: n1 * r // (r + 1)]] = 1
    return Dataset(1, rows.x, t, rows.outcome, is_rct=True)


def spike_effect(d1: Dataset, p: float, rng: np.random.Generator) -> Dataset:
    """Convert treated non-responders to responders with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    convertible = (d1.treatment == 1) & (d1.outcome == 0)
    y = d1.outcome.copy()
    y[convertible] = (rng.random(int(convertible.sum())) < p).astype(np.int64)
    return Dataset(d1.study_index, d1.x, d1.treatment, y, is_rct=d1.is_rct)


def true_tau_resample(source: Dataset, p: float) -> float:
    """Implied average effect of the spike: p times the non-response rate.

    Uses the full source control arm, so the target is one number across
    the whole n1 grid.
    """
    rate0 = arm_summary(source, 0).rate
    if rate0 is None:
        raise ValueError("source has no control-arm records")
    return p * (1.0 - rate0)


def _resample_rep(args) -> list[tuple[str, bool, float]]:
    (source, externals, names, n1, r, p, effect, seed, rep, methods, cfg) = args
    ec = 0 if effect == "null" else 1
    rng = substream(seed, "resample", n1, ec, rep)
    trial = subsample_trial(source, n1, r, rng)
    if effect == "positive":
        trial = spike_effect(trial, p, rng)
    c = StudyCollection((trial,) + externals, names)
    out = []
    for m in methods:
        m_rng = substream(seed, "resample", n1, ec, rep, 1000 + METHOD_ORDER.index(m))
        res = METHODS[m](c, cfg, m_rng)
        out.append((m, res.reject, res.tau_hat))
    return out


class _RepView:
    __slots__ = ("reject", "tau_hat")

    def __init__(self, reject: bool, tau_hat: float):
        self.reject = reject
        self.tau_hat = tau_hat


def run_resampling_study(
    source: Dataset,
    externals: tuple[Dataset, ...],
    covariate_names: tuple[str, ...],
    cfg: ResampleConfig,
    methods: tuple[str, ...] = METHOD_ORDER,
    method_cfg: MethodConfig = DEFAULT_CONFIG,
    jobs: int = 1,
) -> list[OcRow]:
    """Operating characteristics over the n1 grid, null plus spiked runs.

    The external datasets are fixed across replicates.  A null pass always
    runs; a positive pass runs when spike_prob > 0, with bias and rmse
    measured against true_tau_resample.
    """
    if cfg.n1_grid[-1] > source.n:
        raise ValueError(
            f"largest n1 {cfg.n1_grid[-1]} exceeds the source size {source.n}"
        )
    ext = tuple(
        Dataset(j + 2, e.x, e.treatment, e.outcome, is_rct=False)
        for j, e in enumerate(externals)
    )
    effects = ["null"] + (["positive"] if cfg.spike_prob > 0 else [])
    truth = {"null": 0.0, "positive": true_tau_resample(source, cfg.spike_prob)}
    rows: list[OcRow] = []
    for n1 in cfg.n1_grid:
        for effect in effects:
            args = [
                (
                    source,
                    ext,
                    covariate_names,
                    n1,
                    cfg.ratio_r,
                    cfg.spike_prob,
                    effect,
                    cfg.seed,
                    rep,
                    tuple(methods),
                    method_cfg,
                )
                for rep in range(cfg.reps)
            ]
            if jobs > 1:
                chunk = max(1, cfg.reps // (jobs * 8))
                with ProcessPoolExecutor(max_workers=jobs) as pool:
                    per_rep = list(pool.map(_resample_rep, args, chunksize=chunk))
            else:
                per_rep = [_resample_rep(a) for a in args]
            acc = {m: OcAccumulator() for m in methods}
            for rep_results in per_rep:
                for m, reject, tau_hat in rep_results:
                    acc[m].add(_RepView(reject, tau_hat), truth[effect])
            rows.extend(acc[m].row(str(n1), m, effect) for m in methods)
    return rows
