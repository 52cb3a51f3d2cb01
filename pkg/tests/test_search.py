import math

import numpy as np
import pytest

from lbpforge.bgs import BgsParams
from lbpforge.expr import apply_assignment, operator_assignment, parse, render
from lbpforge.lbp import NeighborhoodSpec
from lbpforge.metrics import fitness
from lbpforge.search import (
    Candidate,
    CmaState,
    EmptyInputError,
    SceneEvaluation,
    SearchConfig,
    cma_ask,
    cma_tell,
    discover,
    fit_a,
    gamma_succ,
    minimize,
    resolve_workers,
)
from lbpforge.synth import SyntheticSceneSpec, synthetic_scene

NEAREST = NeighborhoodSpec(p=8, r=1.0, sampling="nearest")
FAST_PARAMS = BgsParams(k=2, t_p=0.5, t_b=0.8, alpha_b=0.05, alpha_w=0.05,
                        initial_weight=0.01, region_radius=1)


class _FixedRng:
    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)

    def standard_normal(self, n):
        return self.values[:n]


def small_scene(seed=0, **kwargs):
    spec = SyntheticSceneSpec(height=24, width=24, n_frames=10, square=8,
                              speed=2, seed=seed, **kwargs)
    frames, gts = synthetic_scene(spec)
    return SceneEvaluation(frames, gts, bgs_params=FAST_PARAMS,
                           neighborhood=NEAREST, burn_in=3)


class TestGammaSucc:
    def test_improvement(self):
        assert gamma_succ(0.3, 0.5) == 1

    def test_tie_counts_as_success(self):
        assert gamma_succ(0.5, 0.5) == 1

    def test_worse(self):
        assert gamma_succ(0.6, 0.5) == 0


class TestCmaAsk:
    def test_sigma_zero_limit(self):
        state = CmaState.initial([1.0, -2.0], sigma0=1e-12)
        off, _ = cma_ask(state, np.random.default_rng(0))
        np.testing.assert_allclose(off, [1.0, -2.0], atol=1e-10)

    def test_direct_formula_n1(self):
        state = CmaState.initial([3.0], sigma0=1.0)
        off, z = cma_ask(state, _FixedRng([0.5]))
        assert off[0] == 3.5 and z[0] == 0.5

    def test_offspring_covariance_matches(self):
        chol = np.array([[1.0, 0.0], [0.6, 1.3]])
        sigma = 0.7
        state = CmaState.initial([0.0, 0.0], sigma0=sigma, chol=chol)
        rng = np.random.default_rng(42)
        draws = np.array([cma_ask(state, rng)[0] for _ in range(100_000)])
        sample_cov = np.cov(draws.T)
        target = sigma**2 * chol @ chol.T
        rel = np.linalg.norm(sample_cov - target) / np.linalg.norm(target)
        assert rel < 0.05


class TestCmaTell:
    def test_repeated_success_grows_sigma(self):
        state = CmaState.initial([0.0], sigma0=1.0)
        for _ in range(20):
            off, z = cma_ask(state, np.random.default_rng(1))
            new = cma_tell(state, off, 1, z)
            assert new.p_succ > state.p_target or new.sigma >= state.sigma
            if state.p_succ >= state.p_target:
                assert new.sigma >= state.sigma
            state = new
        assert state.sigma > 1.0

    def test_repeated_failure_shrinks_sigma_and_keeps_parent(self):
        state = CmaState.initial([2.0, 3.0], sigma0=1.0)
        sigmas = [state.sigma]
        for _ in range(10):
            off, z = cma_ask(state, np.random.default_rng(2))
            state = cma_tell(state, off, 0, z)
            np.testing.assert_array_equal(state.parent, [2.0, 3.0])
            sigmas.append(state.sigma)
        assert all(b < a for a, b in zip(sigmas, sigmas[1:]))

    def test_sigma_rule_direction_property(self):
        from dataclasses import replace

        rng = np.random.default_rng(3)
        for _ in range(10_000):
            n = int(rng.integers(1, 6))
            state = CmaState.initial(rng.standard_normal(n),
                                     sigma0=float(10 ** rng.uniform(-3, 2)))
            p = float(rng.uniform(0, 1))
            state = replace(state, p_succ=p)
            off, z = cma_ask(state, rng)
            if p >= state.p_target:
                up = cma_tell(state, off, 1, z)
                assert up.sigma >= state.sigma
            if p <= state.p_target:
                down = cma_tell(state, off, 0, z)
                assert down.sigma <= state.sigma

    def test_cholesky_update_oracle(self):
        # independent check: the triangular update must realize
        # (1-c_cov) A A^T + c_cov (Az)(Az)^T
        rng = np.random.default_rng(4)
        state = CmaState.initial(np.zeros(4), sigma0=0.5)
        for _ in range(50):
            off, z = cma_ask(state, rng)
            old = state
            state = cma_tell(state, off, 1, z)
            if state.p_succ < old.p_thresh:
                v = old.chol @ z
                expected = (1 - old.c_cov) * old.chol @ old.chol.T \
                    + old.c_cov * np.outer(v, v)
                np.testing.assert_allclose(state.chol @ state.chol.T, expected,
                                           atol=1e-12)
            assert (np.diag(state.chol) > 0).all()
            assert np.allclose(state.chol, np.tril(state.chol))

    def test_sphere_convergence(self):
        target = np.array([0.3, -0.7, 1.1, 0.0, -0.2])

        def sphere(x):
            return float(np.sum((x - target) ** 2))

        for seed in range(10):
            rng = np.random.default_rng(seed)
            best_x, best_f = minimize(sphere, np.zeros(5), sigma0=0.5,
                                      budget=2000, rng=rng)
            assert np.linalg.norm(best_x - target) < 1e-3

    def test_minimize_returns_running_minimum(self):
        history = []

        def noisy(x):
            v = float(np.sum(x**2)) + math.sin(100 * float(x[0]))
            history.append(v)
            return v

        _, best_f = minimize(noisy, np.array([2.0]), sigma0=0.7, budget=200,
                             rng=np.random.default_rng(5))
        assert best_f == min(history)
        assert len(history) == 200


class TestFitA:
    def test_constant_landscape_returns_initial(self):
        scene = small_scene()
        e = parse("g_p - g_c")  # no `a` leaf: fitness independent of a
        a, s = fit_a(e, scene, budget=4, rng=np.random.default_rng(0))
        assert a == pytest.approx(1.0)  # log-midpoint of [1e-2, 1e2]
        assert s == scene.evaluate_expression(e, 1.0)

    def test_budget_one_single_evaluation(self):
        scene = small_scene()
        calls = []
        original = scene.evaluate_expression

        def counting(e, a):
            calls.append(a)
            return original(e, a)

        scene.evaluate_expression = counting
        fit_a(parse("(g_p - g_c) + a"), scene, budget=1,
              rng=np.random.default_rng(0))
        assert len(calls) == 1

    def test_offset_helps_on_flat_noisy_scene(self):
        spec = SyntheticSceneSpec(height=32, width=32, n_frames=16, square=10,
                                  speed=2, seed=6, flat_level=128.0, noise=2.0)
        frames, gts = synthetic_scene(spec)
        scene = SceneEvaluation(frames, gts, bgs_params=FAST_PARAMS,
                                neighborhood=NEAREST, burn_in=4)
        e = parse("(g_p - g_c) + a")
        near_noise = scene.evaluate_expression(e, 4.0)
        near_zero = scene.evaluate_expression(e, 0.01)
        assert near_noise.fscore > near_zero.fscore
        a, s = fit_a(e, scene, budget=8, rng=np.random.default_rng(1))
        assert s.fscore >= near_zero.fscore
        assert a > 0.1


class TestDiscover:
    def test_single_leafless_equation_runs_a_fit_only(self):
        scene = small_scene()
        cfg = SearchConfig(a_budget=2, seed=1, inject_baselines=False)
        res = discover(["g_p - g_c"], scene, cfg)
        assert len(res.ranked) == 4  # one operator slot
        assert {c.source for c in res.ranked} == {"(g_p - g_c)"}

    def test_eta_zero_equation_unchanged(self):
        scene = small_scene()
        cfg = SearchConfig(a_budget=2, seed=1, inject_baselines=False)
        res = discover(["g_p"], scene, cfg)
        assert len(res.ranked) == 1
        assert res.best.equation == "g_p"

    def test_empty_input_rejected(self):
        with pytest.raises(EmptyInputError):
            discover([], small_scene(), SearchConfig())

    def test_candidate_rows_reproduce_independently(self):
        scene = small_scene(seed=3)
        cfg = SearchConfig(a_budget=2, seed=7, mutation_cap=8, inject_baselines=False)
        res = discover(["(g_p * g_c) - (g_c + a)"], scene, cfg)
        assert len(res.ranked) == 8
        for c in res.ranked[:4]:
            s = scene.evaluate_expression(parse(c.equation), c.a)
            assert fitness(s) == pytest.approx(c.fitness)
        assert res.best.fitness == min(c.fitness for c in res.ranked)

    def test_nonregression_vs_injected_baseline(self):
        scene = small_scene(seed=4)
        cfg = SearchConfig(a_budget=2, seed=2, mutation_cap=4)
        res = discover(["(g_p / g_c) - g_p + a"], scene, cfg)
        baseline = scene.evaluate_expression(parse("g_p - g_c"), 1.0)
        assert res.best.score.fscore >= baseline.fscore

    def test_deterministic_across_runs_and_workers(self):
        scene = small_scene(seed=5)
        rows = []
        for workers in (1, 2):
            cfg = SearchConfig(a_budget=2, seed=9, mutation_cap=4, workers=workers)
            res = discover(["(g_p - g_c) * (g_c + a)"], scene, cfg)
            rows.append([c.to_row() for c in res.ranked])
        assert rows[0] == rows[1]

    def test_budget_accounting(self):
        scene = small_scene(seed=6)
        cfg = SearchConfig(a_budget=3, seed=0, mutation_cap=16,
                           candidate_budget=12, inject_baselines=False)
        res = discover(["(g_p - g_c) + a"], scene, cfg)
        assert res.bgs_passes <= 12
        assert len(res.ranked) == 4  # 12 passes / 3 per candidate

    def test_early_stop_after_source_equation(self):
        scene = small_scene(seed=7)
        cfg = SearchConfig(a_budget=1, seed=0, mutation_cap=4,
                           baseline_fitness=2.0)  # any candidate beats this
        res = discover(["(g_p - g_c) * (g_c - a)"], scene, cfg)
        assert res.stopped_early
        assert {c.source for c in res.ranked} == {"(g_p - g_c)"}

    def test_cmaes_mode(self):
        scene = small_scene(seed=8)
        cfg = SearchConfig(mode="cmaes", a_budget=6, seed=3, inject_baselines=False)
        res = discover(["((g_p / g_c) - g_p) + a"], scene, cfg)
        assert len(res.ranked) == 1
        c = res.best
        assert len(c.assignment) == 3
        assert all(code in (0, 1, 2, 3) for code in c.assignment)
        mutated = apply_assignment(parse("((g_p / g_c) - g_p) + a"), c.assignment)
        assert render(mutated) == c.equation
        s = scene.evaluate_expression(mutated, c.a)
        assert fitness(s) == pytest.approx(c.fitness)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SearchConfig(mode="annealing")
        with pytest.raises(ValueError):
            SearchConfig(a_bounds=(0.0, 1.0))
        with pytest.raises(ValueError):
            SearchConfig(a_budget=0)


class TestResolveWorkers:
    def test_env_cap(self, monkeypatch):
        monkeypatch.setenv("LBPFORGE_WORKERS", "2")
        assert resolve_workers(8) == 2
        monkeypatch.delenv("LBPFORGE_WORKERS")
        assert resolve_workers(8) == 8
        assert resolve_workers(None) == 1
