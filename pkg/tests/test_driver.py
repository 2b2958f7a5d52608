import numpy as np
import pytest

from nnqp import DriverConfig, NnqProblem, default_tau, next_active_set, select_candidates, solve
from nnqp.diagnostics import check_policy, full_oracle
from nnqp.driver import REBUILD, SHRINK, IterationCapError
from nnqp.geometry import build_zhlg, generate_cloud, init_zhlg

from conftest import meb_01


class TestSelectCandidates:
    def test_sign_filter_and_sort(self):
        np.testing.assert_array_equal(select_candidates([-3.0, -1.0, 2.0], [0, 1, 2], 1e-9), [0, 1])

    def test_empty_when_nonnegative(self):
        assert select_candidates([0.0, 1.0, 2.0], [0, 1, 2], 1e-9).size == 0

    def test_index_tie_break(self):
        np.testing.assert_array_equal(select_candidates([-2.0, -2.0, -5.0], [0, 1, 2], 1e-9), [2, 0, 1])

    def test_only_active_indices(self):
        np.testing.assert_array_equal(select_candidates([-1.0, -9.0, -3.0], [0, 2], 1e-9), [2, 0])

    def test_tolerance(self):
        assert select_candidates([-1e-10], [0], 1e-9).size == 0


class TestNextActiveSet:
    @pytest.fixture
    def state(self):
        return dict(active=[0, 1, 2], support=[3, 4], candidates=[0, 1, 2], nu=6, tau=2, beta1=15)

    def test_few_candidates_shrink(self, state):
        new, branch, freed = next_active_set(r=1, beta0=5, **state)
        assert branch == SHRINK
        assert new.size == 0
        np.testing.assert_array_equal(freed, [0, 1, 2])

    def test_rebuild_refixes_zero_free_variables(self, state):
        new, branch, freed = next_active_set(r=1, beta0=2, **state)
        assert branch == REBUILD
        np.testing.assert_array_equal(freed, [0, 1])
        np.testing.assert_array_equal(new, [2, 5])

    def test_beta1_forces_shrink(self, state):
        new, branch, _ = next_active_set(r=16, beta0=2, **state)
        assert branch == SHRINK
        assert new.size == 0

    def test_r_equal_beta1_still_rebuilds(self, state):
        assert next_active_set(r=15, beta0=2, **state)[1] == REBUILD


class TestConfig:
    @pytest.mark.parametrize("nu, tau", [(1, 1), (2, 2), (10, 22), (1000, 191)])
    def test_default_tau(self, nu, tau):
        assert default_tau(nu) == tau

    def test_resolved_defaults(self):
        cfg = DriverConfig().resolved(1000)
        assert (cfg.tau, cfg.beta0, cfg.beta1) == (191, 573, 15)

    @pytest.mark.parametrize("kw", [dict(tau=0), dict(tau=3, beta0=3), dict(beta1=0), dict(hard_iteration_cap=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DriverConfig(**kw).resolved(10)


class TestSolve:
    def test_immediate_optimality(self):
        prob = NnqProblem(gram=np.eye(3), linear=[-2.0, 1.0, 1.0])
        res = solve(prob, [1, 2])
        assert res.iterations == 1
        assert res.status == "converged"
        np.testing.assert_allclose(res.primal, [1.0, 0.0, 0.0], atol=1e-12)

    def test_meb_01(self):
        res = solve(meb_01(), [])
        np.testing.assert_allclose(res.primal, [0.5, 0.5], atol=1e-10)
        assert res.objective == pytest.approx(-0.25, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_small_nnls_against_full_problem(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((8, 12))
        b = rng.standard_normal(8)
        prob = NnqProblem(gram=a.T @ a, linear=-2 * a.T @ b, label="nnls", constant=b @ b)
        cfg = DriverConfig(tau=2, beta0=3).resolved(12)
        free = rng.choice(12, cfg.beta0, replace=False)
        res = solve(prob, np.setdiff1d(np.arange(12), free), cfg)
        ref = full_oracle(prob)
        assert res.objective == pytest.approx(ref.objective, rel=1e-7, abs=1e-12)
        assert res.status in ("converged", "beta1-fallback-converged")

    def test_hard_cap(self):
        prob = NnqProblem(gram=np.eye(4), linear=-np.ones(4))
        with pytest.raises(IterationCapError):
            solve(prob, [1, 2, 3], DriverConfig(tau=1, beta0=2, hard_iteration_cap=1))

    def test_deterministic(self):
        prob = build_zhlg(generate_cloud("unit-cube", 16, 3, seed=2))
        init = init_zhlg(16, 10, seed=2)
        cfg = DriverConfig(tau=3, beta0=4, beta1=4)
        r1, r2 = solve(prob, init, cfg), solve(prob, init, cfg)
        assert r1.iterations == r2.iterations
        np.testing.assert_array_equal(r1.primal, r2.primal)
        np.testing.assert_array_equal(r1.trace.objectives(), r2.trace.objectives())


@pytest.mark.parametrize("seed", range(6))
def test_beta1_regime_shrinks_and_terminates(seed):
    """After ``r > beta1`` the active set shrinks every step, at most ``|supp(x*)|`` more times."""
    cloud = generate_cloud("unit-cube", 14, 2, seed=seed)
    prob = build_zhlg(cloud)
    cfg = DriverConfig(tau=2, beta0=3, beta1=2)
    res = solve(prob, init_zhlg(14, 3, seed=seed), cfg)
    recs = res.trace.records
    late = [rec for rec in recs if rec.r > cfg.beta1]
    for rec in late[:-1]:
        assert rec.branch is not None
        assert rec.next_active.size < rec.active.size
    ref = full_oracle(prob)
    assert len(late) <= max(ref.support.size, 1)
    assert check_policy(prob, res.trace).ok
