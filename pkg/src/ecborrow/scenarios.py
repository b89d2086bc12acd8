"""Parametric data generation for the twelve benchmark scenarios.

Each scenario draws an RCT plus all-control external datasets from a
logistic outcome model with three independent Bernoulli covariates, the
third of which is generated but hidden from the analysis methods.
Scenario 12 swaps the logistic law for an explicit probability table with
a covariate interaction.  The treatment log-odds gamma is calibrated so
the treated marginal response hits the scenario's target rate.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import Dataset, StudyCollection
from .methods import DEFAULT_CONFIG, METHOD_ORDER, METHODS, MethodConfig
from .oc import OcAccumulator, OcRow
from .streams import substream

__all__ = [
    "SCENARIO_IDS",
    "ScenarioSpec",
    "ScenarioDraw",
    "scenario_spec",
    "calibrate_gamma",
    "generate_collection",
    "true_tau",
    "run_scenario",
]

SCENARIO_IDS = tuple(range(1, 13))

_F_SHARED = (0.4, 0.5, 0.5)
_F_HETERO = (
    (0.4, 0.5, 0.5),
    (0.3, 0.8, 0.2),
    (0.3, 0.7, 0.9),
    (0.1, 0.7, 0.8),
)

# scenario id -> overrides of the shared layout (n1=100, n_ext=25, I=4, r=2,
# shared covariate law, common intercept -0.4, beta fixed at mu_beta)
_VARIANTS: dict[int, dict] = {
    1: {},
    2: {"n1": 120, "n_ext": 30, "n_studies": 2},
    3: {"n1": 80, "n_ext": 20, "n_studies": 8},
    4: {"ratio_r": 1},
    5: {"hetero_f": True},
    6: {"delta": (-0.4, -0.9, -0.2, -0.6)},
    7: {"hetero_f": True, "delta": (-0.4, -0.9, -0.2, -0.6)},
    8: {"hidden_active": True, "target": 0.45},
    9: {"hetero_f": True, "hidden_active": True, "target": 0.45},
    10: {"random_betas": True},
    11: {"delta": (0.7, 0.5, 0.5, -0.5), "target": 0.85},
    12: {"table_model": True},
}

# treated response probabilities by (x1, x2, t) for the misspecified scenario
_TABLE12 = np.array(
    [
        [[0.45, 0.71], [0.25, 0.51]],
        [[0.60, 0.86], [0.35, 0.61]],
    ]
)


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """Complete generating configuration for one scenario and effect."""

    scenario_id: int
    effect: str
    n1: int
    n_ext: int
    n_studies: int
    ratio_r: int
    covariate_probs: np.ndarray
    delta: np.ndarray | None
    mu_beta: np.ndarray
    sigma_beta: np.ndarray
    random_betas: bool
    gamma: float
    outcome_model: str
    target_treated_rate: float

    @property
    def n_treated(self) -> int:
        return self.n1 * self.ratio_r // (self.ratio_r + 1)


@dataclass(frozen=True)
class ScenarioDraw:
    """One generated collection plus the hidden state the truth depends on."""

    collection: StudyCollection
    x_rct_full: np.ndarray
    beta_rct: np.ndarray


_GAMMA_CACHE: dict[int, float] = {}


def _cell_mixture(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All 2^3 covariate cells with their probabilities under independence."""
    cells = np.array(list(itertools.product((0.0, 1.0), repeat=3)))
    w = np.prod(np.where(cells == 1.0, probs, 1.0 - probs), axis=1)
    return cells, w


def _treated_marginal(spec: ScenarioSpec, gamma: float) -> float:
    cells, w = _cell_mixture(spec.covariate_probs[0])
    eta = spec.delta[0] + cells @ spec.mu_beta + gamma
    return float(w @ expit(eta))


def calibrate_gamma(spec: ScenarioSpec, target_treated_rate: float) -> float:
    """Solve the treated marginal for gamma by bisection on [0, 5].

    The marginal is an exact finite mixture over the covariate cells, so
    the solve is deterministic; tolerance 1e-8 on the rate.
    """
    if spec.outcome_model != "logistic":
        raise ValueError("gamma calibration applies to the logistic model only")
    lo, hi = 0.0, 5.0
    f_lo = _treated_marginal(spec, lo) - target_treated_rate
    f_hi = _treated_marginal(spec, hi) - target_treated_rate
    if f_lo > 1e-8 or f_hi < -1e-8:
        raise ValueError(
            f"target rate {target_treated_rate} outside the reachable range "
            f"[{f_lo + target_treated_rate:.4f}, {f_hi + target_treated_rate:.4f}]"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = _treated_marginal(spec, mid) - target_treated_rate
        if abs(f_mid) <= 1e-8 and hi - lo < 1e-12:
            break
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def scenario_spec(scenario_id: int, effect: str) -> ScenarioSpec:
    """The exact parameterization of one benchmark scenario."""
    if scenario_id not in _VARIANTS:
        raise ValueError(f"scenario_id must be in 1..12, got {scenario_id}")
    if effect not in ("null", "positive"):
        raise ValueError(f"effect must be 'null' or 'positive', got {effect!r}")
    v = _VARIANTS[scenario_id]
    n_studies = v.get("n_studies", 4)
    if v.get("hetero_f"):
        probs = np.array(_F_HETERO)
    else:
        probs = np.tile(np.array(_F_SHARED), (n_studies, 1))
    table = bool(v.get("table_model"))
    delta = None if table else np.array(v.get("delta", (-0.4,) * n_studies))
    hidden = bool(v.get("hidden_active"))
    mu_beta = np.array([0.5, -0.5, -1.8 if hidden else 0.0])
    if v.get("random_betas"):
        sigma_beta = np.array([0.8, 0.8, 0.8 if hidden else 0.0])
    else:
        sigma_beta = np.zeros(3)
    for a in (probs, delta, mu_beta, sigma_beta):
        if a is not None:
            a.flags.writeable = False
    spec = ScenarioSpec(
        scenario_id=scenario_id,
        effect=effect,
        n1=v.get("n1", 100),
        n_ext=v.get("n_ext", 25),
        n_studies=n_studies,
        ratio_r=v.get("ratio_r", 2),
        covariate_probs=probs,
        delta=delta,
        mu_beta=mu_beta,
        sigma_beta=sigma_beta,
        random_betas=bool(v.get("random_betas")),
        gamma=0.0,
        outcome_model="table" if table else "logistic",
        target_treated_rate=v.get("target", 0.66),
    )
    if effect == "positive" and not table:
        if scenario_id not in _GAMMA_CACHE:
            _GAMMA_CACHE[scenario_id] = calibrate_gamma(spec, spec.target_treated_rate)
        object.__setattr__(spec, "gamma", _GAMMA_CACHE[scenario_id])
    return spec


def _logistic_response_probs(eta: np.ndarray) -> np.ndarray:
    return expit(eta)


def _table_response_probs(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    x1 = x[:, 0].astype(np.intp)
    x2 = x[:, 1].astype(np.intp)
    return _TABLE12[x1, x2, t.astype(np.intp)]


def generate_collection(spec: ScenarioSpec, rng: np.random.Generator) -> ScenarioDraw:
    """Draw one full collection; per-study order is betas, X, T, then Y."""
    datasets = []
    x1_full = None
    beta1 = None
    for i in range(spec.n_studies):
        n = spec.n1 if i == 0 else spec.n_ext
        if spec.random_betas:
            beta = spec.mu_beta + spec.sigma_beta * rng.standard_normal(3)
        else:
            beta = spec.mu_beta
        x = (rng.random((n, 3)) < spec.covariate_probs[i]).astype(np.float64)
        t = np.zeros(n, dtype=np.int64)
        if i == 0:
            treated = rng.permutation(n)[: spec.n_treated]
            t[treated] = 1
            x1_full = x
            beta1 = beta
        if spec.outcome_model == "table":
            t_eff = t if spec.effect == "positive" else np.zeros_like(t)
            p = _table_response_probs(x, t_eff)
        else:
            eta = spec.delta[i] + x @ beta + spec.gamma * t
            p = _logistic_response_probs(eta)
        y = (rng.random(n) < p).astype(np.int64)
        datasets.append(Dataset(i + 1, x[:, :2], t, y, is_rct=(i == 0)))
    collection = StudyCollection(tuple(datasets), ("x1", "x2"))
    return ScenarioDraw(collection=collection, x_rct_full=x1_full, beta_rct=beta1)


def true_tau(spec: ScenarioSpec, draw: ScenarioDraw) -> float:
    """Average conditional risk difference over the realized RCT rows.

    Conditions on the realized covariates and, for the random-coefficient
    scenario, the realized RCT beta draw.
    """
    x = draw.x_rct_full
    if spec.outcome_model == "table":
        if spec.effect != "positive":
            return 0.0
        diff = _table_response_probs(x, np.ones(len(x), dtype=np.int64)) - (
            _table_response_probs(x, np.zeros(len(x), dtype=np.int64))
        )
        return float(diff.mean())
    if spec.gamma == 0.0:
        return 0.0
    eta0 = spec.delta[0] + x @ draw.beta_rct
    return float(np.mean(expit(eta0 + spec.gamma) - expit(eta0)))


_EFFECT_CODE = {"null": 0, "positive": 1}
_METHOD_CODE = {m: i for i, m in enumerate(METHOD_ORDER)}


def _replicate(
    spec: ScenarioSpec,
    seed: int,
    rep: int,
    methods: tuple[str, ...],
    cfg: MethodConfig,
) -> list[tuple[str, bool, float, float]]:
    ec = _EFFECT_CODE[spec.effect]
    gen_rng = substream(seed, "scenario", spec.scenario_id, ec, rep)
    draw = generate_collection(spec, gen_rng)
    tau = true_tau(spec, draw)
    out = []
    for m in methods:
        m_rng = substream(seed, "scenario", spec.scenario_id, ec, rep, 1000 + _METHOD_CODE[m])
        res = METHODS[m](draw.collection, cfg, m_rng)
        out.append((m, res.reject, res.tau_hat, tau))
    return out


def _replicate_star(args) -> list[tuple[str, bool, float, float]]:
    return _replicate(*args)


class _RepView:
    """Adapter so OcAccumulator can consume the light per-rep tuples."""

    __slots__ = ("reject", "tau_hat")

    def __init__(self, reject: bool, tau_hat: float):
        self.reject = reject
        self.tau_hat = tau_hat


def run_scenario(
    spec: ScenarioSpec,
    methods: tuple[str, ...] = METHOD_ORDER,
    reps: int = 10_000,
    seed: int = 0,
    cfg: MethodConfig = DEFAULT_CONFIG,
    jobs: int = 1,
) -> list[OcRow]:
    """Monte Carlo operating characteristics for one scenario and effect.

    Replicates use hierarchical seed substreams, so the output is
    byte-identical for any jobs value.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    args = [(spec, seed, rep, tuple(methods), cfg) for rep in range(reps)]
    if jobs > 1:
        chunk = max(1, reps // (jobs * 8))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_rep = list(pool.map(_replicate_star, args, chunksize=chunk))
    else:
        per_rep = [_replicate_star(a) for a in args]
    acc = {m: OcAccumulator() for m in methods}
    for rep_results in per_rep:
        for m, reject, tau_hat, tau in rep_results:
            acc[m].add(_RepView(reject, tau_hat), tau)
    key = f"S{spec.scenario_id}"
    return [acc[m].row(key, m, spec.effect) for m in methods]
