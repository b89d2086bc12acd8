"""Benchmark scenario parameterization, calibration, and data generation."""

import itertools

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import expit

import ecborrow.scenarios as scen
from ecborrow import (
    SCENARIO_IDS,
    calibrate_gamma,
    generate_collection,
    run_scenario,
    scenario_spec,
    true_tau,
    validate_collection,
)

SHARED_F = (0.4, 0.5, 0.5)
HETERO_F = (
    (0.4, 0.5, 0.5),
    (0.3, 0.8, 0.2),
    (0.3, 0.7, 0.9),
    (0.1, 0.7, 0.8),
)


def mixture_marginal(probs, mu_beta, delta, gamma):
    """Exact treated marginal over the 8 covariate cells, built independently."""
    cells = np.array(list(itertools.product((0.0, 1.0), repeat=3)))
    w = np.prod(np.where(cells == 1.0, probs, 1.0 - np.asarray(probs)), axis=1)
    return float(w @ expit(delta + cells @ np.asarray(mu_beta) + gamma))


class TestParameterization:
    def test_scenario_ids(self):
        assert SCENARIO_IDS == tuple(range(1, 13))

    @pytest.mark.parametrize(
        "sid,n1,n_ext,n_studies,r",
        [
            (1, 100, 25, 4, 2),
            (2, 120, 30, 2, 2),
            (3, 80, 20, 8, 2),
            (4, 100, 25, 4, 1),
            (5, 100, 25, 4, 2),
            (12, 100, 25, 4, 2),
        ],
    )
    def test_sizes(self, sid, n1, n_ext, n_studies, r):
        s = scenario_spec(sid, "null")
        assert (s.n1, s.n_ext, s.n_studies, s.ratio_r) == (n1, n_ext, n_studies, r)

    @pytest.mark.parametrize("sid,treated", [(1, 66), (2, 80), (3, 53), (4, 50)])
    def test_exact_treated_count(self, sid, treated):
        s = scenario_spec(sid, "positive")
        assert s.n_treated == treated
        assert s.n_treated == s.n1 * s.ratio_r // (s.ratio_r + 1)

    @pytest.mark.parametrize("sid", [1, 2, 3, 4, 6, 8, 10, 11, 12])
    def test_shared_covariate_law(self, sid):
        s = scenario_spec(sid, "null")
        assert s.covariate_probs.shape == (s.n_studies, 3)
        assert np.allclose(s.covariate_probs, SHARED_F)

    @pytest.mark.parametrize("sid", [5, 7, 9])
    def test_heterogeneous_covariate_law(self, sid):
        s = scenario_spec(sid, "null")
        assert np.allclose(s.covariate_probs, HETERO_F)

    @pytest.mark.parametrize(
        "sid,delta",
        [
            (1, (-0.4,) * 4),
            (2, (-0.4,) * 2),
            (3, (-0.4,) * 8),
            (6, (-0.4, -0.9, -0.2, -0.6)),
            (7, (-0.4, -0.9, -0.2, -0.6)),
            (11, (0.7, 0.5, 0.5, -0.5)),
        ],
    )
    def test_study_intercepts(self, sid, delta):
        s = scenario_spec(sid, "null")
        assert np.allclose(s.delta, delta)

    def test_hidden_covariate_activation(self):
        base = scenario_spec(1, "null")
        assert np.allclose(base.mu_beta, [0.5, -0.5, 0.0])
        hidden = scenario_spec(8, "null")
        assert np.allclose(hidden.mu_beta, [0.5, -0.5, -1.8])
        assert np.allclose(scenario_spec(9, "null").mu_beta, [0.5, -0.5, -1.8])

    def test_random_coefficient_scenario(self):
        s = scenario_spec(10, "null")
        assert s.random_betas
        assert np.allclose(s.sigma_beta, [0.8, 0.8, 0.0])
        assert not scenario_spec(1, "null").random_betas
        assert np.allclose(scenario_spec(1, "null").sigma_beta, 0.0)

    def test_table_scenario(self):
        s = scenario_spec(12, "positive")
        assert s.outcome_model == "table"
        assert s.delta is None
        assert s.gamma == 0.0

    @pytest.mark.parametrize(
        "sid,target", [(1, 0.66), (7, 0.66), (8, 0.45), (9, 0.45), (10, 0.66), (11, 0.85)]
    )
    def test_treated_targets(self, sid, target):
        assert scenario_spec(sid, "positive").target_treated_rate == target

    def test_bad_inputs(self):
        with pytest.raises(ValueError, match="scenario_id"):
            scenario_spec(0, "null")
        with pytest.raises(ValueError, match="scenario_id"):
            scenario_spec(13, "null")
        with pytest.raises(ValueError, match="effect"):
            scenario_spec(1, "both")

    def test_arrays_read_only(self):
        s = scenario_spec(1, "null")
        with pytest.raises(ValueError):
            s.covariate_probs[0, 0] = 0.9


class TestCalibration:
    def test_null_specs_have_zero_gamma(self):
        for sid in SCENARIO_IDS:
            assert scenario_spec(sid, "null").gamma == 0.0

    @pytest.mark.parametrize(
        "sid,frozen",
        [
            (1, 1.1330153776478649),
            (6, 1.1330153776478649),
            (8, 1.1027799104486413),
            (9, 1.1027799104486413),
            (11, 1.1268177710028422),
        ],
    )
    def test_gamma_against_independent_solver(self, sid, frozen):
        s = scenario_spec(sid, "positive")
        got = mixture_marginal(
            s.covariate_probs[0], s.mu_beta, s.delta[0], s.gamma
        )
        assert abs(got - s.target_treated_rate) <= 1e-8
        ref = brentq(
            lambda g: mixture_marginal(
                s.covariate_probs[0], s.mu_beta, s.delta[0], g
            )
            - s.target_treated_rate,
            0.0,
            5.0,
            xtol=1e-13,
        )
        assert s.gamma == pytest.approx(ref, abs=1e-9)
        assert s.gamma == pytest.approx(frozen, abs=1e-9)

    def test_random_beta_calibration_uses_means(self):
        # scenario 10 shares scenario 1's mixture, so gamma matches
        assert scenario_spec(10, "positive").gamma == pytest.approx(
            scenario_spec(1, "positive").gamma, abs=1e-12
        )

    @pytest.mark.parametrize(
        "sid,frozen", [(1, 0.39236715665206073), (8, 0.2460137305228546)]
    )
    def test_control_marginal(self, sid, frozen):
        s = scenario_spec(sid, "null")
        got = mixture_marginal(s.covariate_probs[0], s.mu_beta, s.delta[0], 0.0)
        assert got == pytest.approx(frozen, abs=1e-12)

    def test_target_at_control_marginal_gives_zero_gamma(self):
        s = scenario_spec(1, "null")
        control = mixture_marginal(s.covariate_probs[0], s.mu_beta, s.delta[0], 0.0)
        assert calibrate_gamma(s, control) == pytest.approx(0.0, abs=1e-7)

    def test_unreachable_target(self):
        s = scenario_spec(1, "null")
        with pytest.raises(ValueError, match="reachable"):
            calibrate_gamma(s, 0.999)
        with pytest.raises(ValueError, match="reachable"):
            calibrate_gamma(s, 0.10)

    def test_table_model_not_calibratable(self):
        s = scenario_spec(12, "null")
        with pytest.raises(ValueError, match="logistic"):
            calibrate_gamma(s, 0.66)


class TestGeneration:
    def test_shapes_and_arm_structure(self):
        s = scenario_spec(1, "positive")
        draw = generate_collection(s, np.random.default_rng(0))
        c = draw.collection
        assert c.n_studies == 4
        assert [d.n for d in c.datasets] == [100, 25, 25, 25]
        assert c.rct.treatment.sum() == 66
        for d in c.externals:
            assert (d.treatment == 0).all()
        assert c.q == 2
        assert draw.x_rct_full.shape == (100, 3)
        assert np.array_equal(c.rct.x, draw.x_rct_full[:, :2])
        assert validate_collection(c).ok

    @pytest.mark.parametrize("sid,sizes", [(2, [120, 30]), (3, [80] + [20] * 7)])
    def test_variant_sizes(self, sid, sizes):
        s = scenario_spec(sid, "null")
        draw = generate_collection(s, np.random.default_rng(1))
        assert [d.n for d in draw.collection.datasets] == sizes

    def test_fixed_betas_equal_means(self):
        s = scenario_spec(1, "positive")
        draw = generate_collection(s, np.random.default_rng(2))
        assert np.array_equal(draw.beta_rct, s.mu_beta)

    def test_random_betas_vary_with_inactive_component_pinned(self):
        s = scenario_spec(10, "null")
        a = generate_collection(s, np.random.default_rng(3))
        b = generate_collection(s, np.random.default_rng(4))
        assert not np.array_equal(a.beta_rct, b.beta_rct)
        assert a.beta_rct[2] == 0.0  # sigma is zero for the hidden slot
        assert b.beta_rct[2] == 0.0

    def test_generation_deterministic_in_rng(self):
        s = scenario_spec(5, "positive")
        a = generate_collection(s, np.random.default_rng(7))
        b = generate_collection(s, np.random.default_rng(7))
        assert np.array_equal(a.collection.rct.outcome, b.collection.rct.outcome)
        assert np.array_equal(a.collection.externals[2].x, b.collection.externals[2].x)

    def test_empirical_control_rate_near_mixture_value(self):
        s = scenario_spec(1, "null")
        total, count = 0, 0
        for rep in range(200):
            draw = generate_collection(s, np.random.default_rng(1000 + rep))
            for d in draw.collection.datasets:
                y = d.outcome[d.treatment == 0]
                total += int(y.sum())
                count += len(y)
        rate = total / count
        # 200 reps x 175 control rows: se ~ 0.0026
        assert rate == pytest.approx(0.39236715665206073, abs=0.011)

    def test_table_scenario_null_keeps_assignment_but_feeds_control_law(self):
        s = scenario_spec(12, "null")
        seen = []
        original = scen._table_response_probs

        def spy(x, t):
            seen.append(t.copy())
            return original(x, t)

        scen._table_response_probs = spy
        try:
            draw = generate_collection(s, np.random.default_rng(11))
        finally:
            scen._table_response_probs = original
        assert draw.collection.rct.treatment.sum() == 66
        assert all((t == 0).all() for t in seen)

    def test_table_scenario_positive_feeds_assignment(self):
        s = scenario_spec(12, "positive")
        seen = []
        original = scen._table_response_probs

        def spy(x, t):
            seen.append(t.copy())
            return original(x, t)

        scen._table_response_probs = spy
        try:
            generate_collection(s, np.random.default_rng(11))
        finally:
            scen._table_response_probs = original
        assert seen[0].sum() == 66  # RCT call sees the real assignment
        assert all((t == 0).all() for t in seen[1:])


class TestTrueTau:
    def test_logistic_manual_recompute(self):
        s = scenario_spec(1, "positive")
        draw = generate_collection(s, np.random.default_rng(21))
        eta0 = s.delta[0] + draw.x_rct_full @ draw.beta_rct
        want = float(np.mean(expit(eta0 + s.gamma) - expit(eta0)))
        assert true_tau(s, draw) == want

    def test_random_betas_condition_on_draw(self):
        s = scenario_spec(10, "positive")
        a = generate_collection(s, np.random.default_rng(22))
        b = generate_collection(s, np.random.default_rng(23))
        assert true_tau(s, a) != true_tau(s, b)

    def test_null_is_zero(self):
        for sid in (1, 10, 12):
            s = scenario_spec(sid, "null")
            draw = generate_collection(s, np.random.default_rng(4))
            assert true_tau(s, draw) == 0.0

    def test_table_effect_constant(self):
        s = scenario_spec(12, "positive")
        draw = generate_collection(s, np.random.default_rng(25))
        assert true_tau(s, draw) == pytest.approx(0.26, abs=1e-12)


class TestRunScenario:
    def test_row_layout(self):
        s = scenario_spec(2, "null")
        rows = run_scenario(s, methods=("ZPROP", "GLM"), reps=5, seed=3)
        assert [r.method for r in rows] == ["ZPROP", "GLM"]
        assert all(r.key == "S2" and r.effect == "null" and r.reps == 5 for r in rows)

    def test_seed_determinism(self):
        s = scenario_spec(1, "null")
        a = run_scenario(s, methods=("ZPROP", "TTP"), reps=6, seed=9)
        b = run_scenario(s, methods=("ZPROP", "TTP"), reps=6, seed=9)
        assert a == b

    def test_parallel_matches_serial(self):
        s = scenario_spec(1, "null")
        a = run_scenario(s, methods=("ZPROP",), reps=6, seed=9, jobs=1)
        b = run_scenario(s, methods=("ZPROP",), reps=6, seed=9, jobs=2)
        assert a == b

    def test_method_streams_isolated(self):
        # dropping a method from the list must not change the others' rows
        s = scenario_spec(1, "null")
        both = run_scenario(s, methods=("ZPROP", "PSS-RE"), reps=4, seed=2)
        alone = run_scenario(s, methods=("ZPROP",), reps=4, seed=2)
        assert both[0] == alone[0]

    def test_reps_validated(self):
        with pytest.raises(ValueError, match="reps"):
            run_scenario(scenario_spec(1, "null"), reps=0)
