import math

import numpy as np
import pytest

from cte.agents import ConstantReward, GroundTruthReward, HeuristicPolicy, rollout
from cte.env import Action, Emergency, GridConfig
from cte.generators import (
    END,
    DacConfig,
    MctoConfig,
    RandomConfig,
    TreeNode,
    _Mcto,
    generate_dac,
    generate_mcto,
    generate_random,
    make_generator,
    select_starts,
)
from cte.quality import CandidateScorer, CteHistory, NormalizationBounds, ScoringContext, calibrate_bounds, CALIBRATED_WEIGHTS
from cte.trajectory import EmptyTrajectoryError, Trajectory

from oracles import exhaustive_best_rho


def check_cte(c, tau, env):
    n = c.start_index
    assert c.t_cf.first == tau.states[n] == c.t_org.first
    assert len(c.t_org) == len(c.t_cf) >= 1
    assert n + len(c.t_cf) <= len(tau)
    for (s, a), nxt in zip(c.t_cf.steps, c.t_cf.states[1:]):
        assert env.step(s, a)[0] == nxt
    assert c.rho is not None and c.criteria is not None


@pytest.mark.parametrize("name", ["mcto", "dac", "random"])
def test_generators_emit_valid_ctes(name, env, ctx, taus):
    gen = make_generator(name)
    rng = np.random.default_rng(0)
    for tau in taus[:3]:
        c = gen(tau, ctx, rng)
        check_cte(c, tau, env)
        assert c.generator == name
        assert c.meta["config"] == gen.config.__dict__


@pytest.mark.parametrize("name", ["mcto", "dac", "random"])
def test_generators_deterministic(name, ctx, taus):
    gen = make_generator(name)
    a = gen(taus[1], ctx, np.random.default_rng(5))
    b = gen(taus[1], ctx, np.random.default_rng(5))
    assert a == b


def test_empty_original_rejected(env, ctx):
    s = env.init_random(np.random.default_rng(0))
    with pytest.raises(EmptyTrajectoryError):
        generate_mcto(Trajectory((s,), (), ()), ctx)


def test_configs_validate():
    with pytest.raises(ValueError):
        MctoConfig(p_end=0)
    with pytest.raises(ValueError):
        MctoConfig(n_iterations=0)
    with pytest.raises(ValueError):
        MctoConfig(expansion_mode="greedy")
    with pytest.raises(ValueError):
        DacConfig(n_deviations=0)
    with pytest.raises(ValueError):
        RandomConfig(p_end=1.5)


def test_backpropagate_running_mean():
    root = TreeNode((), (), False)
    child = TreeNode((), (), False, root)
    leaf = TreeNode((), (), True, child)
    leaf.backpropagate(1.0)
    leaf.backpropagate(0.0)
    assert leaf.N == child.N == root.N == 2
    assert leaf.Q == child.Q == root.Q == 0.5
    leaf.backpropagate(3.0, gamma=0.5, stop=child)
    assert leaf.Q == pytest.approx(4 / 3)
    assert child.Q == pytest.approx((1 + 0 + 1.5) / 3)
    assert root.N == 2


def test_end_action_needs_a_step(env, ctx, taus):
    scorer = CandidateScorer(taus[0], ctx)
    m = _Mcto(scorer, MctoConfig(), np.random.default_rng(0))
    root = TreeNode((taus[0].states[0],), (), False)
    assert END not in m.branches(root)
    child = m.child(root, int(Action.STAND))
    assert END in m.branches(child)


def test_pruning_threshold(env, ctx, taus):
    scorer = CandidateScorer(taus[0], ctx)
    m = _Mcto(scorer, MctoConfig(threshold_a=0.05), np.random.default_rng(0))
    for s in taus[0].states[:20]:
        node = TreeNode((s,), (Action.STAND,), False)
        p = ctx.policy(s)
        allowed = [a for a in m.branches(node) if a != END]
        if np.all(p <= 0.05):
            assert allowed == [int(np.argmax(p))]
        else:
            assert all(p[a] > 0.05 for a in allowed)
            assert len(allowed) == int(np.sum(p > 0.05))


def test_committed_actions_respect_pruning(env, ctx, taus):
    cfg = MctoConfig(threshold_a=0.05)
    for tau in taus[:3]:
        c = generate_mcto(tau, ctx, cfg, np.random.default_rng(1))
        for s, a in c.t_cf.steps:
            p = ctx.policy(s)
            assert p[a] > 0.05 or (np.all(p <= 0.05) and a == int(np.argmax(p)))


def test_select_starts_by_importance(ctx, taus):
    sc = CandidateScorer(taus[0], ctx)
    all_ = select_starts(sc, None)
    assert all_ == list(range(75))
    top = select_starts(sc, 5)
    assert len(top) == 5
    rest = [i for i in all_ if i not in top]
    assert min(sc.importance(i) for i in top) >= max(sc.importance(i) for i in rest)


def test_on_candidate_called_per_start(ctx, taus):
    seen = []
    generate_dac(taus[0], ctx, DacConfig(), np.random.default_rng(0), lambda n, raw, rho: seen.append((n, rho)))
    assert [n for n, _ in seen] == list(range(75))
    seen.clear()
    c = generate_mcto(taus[0], ctx, MctoConfig(n_starts=4), np.random.default_rng(0), lambda n, raw, rho: seen.append((n, rho)))
    assert len(seen) == 4 and c.rho == pytest.approx(max(r for _, r in seen))


def test_dac_deviates_in_first_step(env, ctx, taus):
    for tau in taus[:3]:
        c = generate_dac(tau, ctx, DacConfig(), np.random.default_rng(0))
        n = c.start_index
        if not all(tau.states[n].same_configuration(env.step(tau.states[n], a)[0]) for a in Action):
            assert not c.t_cf.states[1].same_configuration(tau.states[n + 1])


def test_random_length_distribution(ctx, taus):
    rng = np.random.default_rng(0)
    lengths = [generate_random(taus[0], ctx, RandomConfig(p_end=0.5), rng).t_cf.__len__() for _ in range(400)]
    assert min(lengths) >= 1
    assert np.mean(lengths) == pytest.approx(2.0, abs=0.25)


def mini_world(seed):
    env = Emergency(GridConfig(size=3, n_humans=2, n_obstacles=1, horizon=4))
    pol = HeuristicPolicy(env)
    return env, pol, GroundTruthReward(env)


def test_mcto_improves_with_iterations():
    env, pol, gt = mini_world(0)
    bounds = NormalizationBounds(lo=[0, 0, 0, -2.2, -10, 0], hi=[10, 6, 10, 0, 10, 8])
    few, many = [], []
    for seed in range(30):
        rng = np.random.default_rng(seed)
        tau = rollout(env, pol, rng)
        ctx = ScoringContext(env, gt, pol, bounds, rng.uniform(0, 1, 6))
        few.append(generate_mcto(tau, ctx, MctoConfig(n_iterations=5, threshold_a=0), np.random.default_rng(seed)).rho)
        many.append(generate_mcto(tau, ctx, MctoConfig(n_iterations=200, threshold_a=0), np.random.default_rng(seed)).rho)
    assert np.mean(many) >= np.mean(few)


def test_exhaustive_oracle_upper_bounds_mcto():
    env, pol, gt = mini_world(0)
    bounds = NormalizationBounds(lo=[0, 0, 0, -2.2, -10, 0], hi=[10, 6, 10, 0, 10, 8])
    rng = np.random.default_rng(3)
    for _ in range(3):
        tau = rollout(env, pol, rng)
        ctx = ScoringContext(env, gt, pol, bounds, rng.uniform(0, 1, 6))
        best = exhaustive_best_rho(tau, CandidateScorer(tau, ctx), env)
        found = generate_mcto(tau, ctx, MctoConfig(n_iterations=50, threshold_a=0), np.random.default_rng(0)).rho
        assert found <= best + 1e-12
