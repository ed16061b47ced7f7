import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from cte.agents import GroundTruthReward, HeuristicPolicy, rollout  # noqa: E402
from cte.env import Emergency, GridConfig  # noqa: E402
from cte.quality import NormalizationBounds, ScoringContext, CALIBRATED_WEIGHTS  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# hand-picked bounds that cover the ground-truth reward on the default grid
FIXED_BOUNDS = dict(lo=[0, 0, 0, -2.2, -10, 2], hi=[10, 15, 100, 0, 10, 150])


@pytest.fixture(scope="session")
def env():
    return Emergency(GridConfig())


@pytest.fixture(scope="session")
def policy(env):
    return HeuristicPolicy(env)


@pytest.fixture(scope="session")
def gt(env):
    return GroundTruthReward(env)


@pytest.fixture(scope="session")
def taus(env, policy):
    rng = np.random.default_rng(1234)
    return [rollout(env, policy, rng) for _ in range(12)]


@pytest.fixture
def ctx(env, gt, policy):
    return ScoringContext(env, gt, policy, NormalizationBounds(**FIXED_BOUNDS), np.array(CALIBRATED_WEIGHTS))


def tiny_plan(**kw):
    """A plan small enough for structural tests: ground-truth reward, few CTEs, a short MCTO search."""
    from cte.experiments import ExperimentPlan
    from cte.generators import MctoConfig
    from cte.proxy import TrainConfig

    base = dict(
        scale="custom", master_seed=7, n_generate=12, n_train=8, n_test=4, n_quality=6, n_weight_sets=3,
        n_seeds=2, n_analysis_runs=4, n_ablation=4, reward="ground_truth",
        train=TrainConfig(epochs=5, hidden=(8,)), mcto=MctoConfig(n_iterations=3, n_starts=4),
        calibration_rounds=1, calibration_per_round=2, calibration_trajectories=2,
    )
    base.update(kw)
    return ExperimentPlan(**base)


@pytest.fixture(scope="session")
def plan():
    return tiny_plan()


@pytest.fixture(scope="session")
def world(plan):
    from cte.experiments import build_world

    return build_world(plan, bounds=NormalizationBounds(**FIXED_BOUNDS))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for ac in sorted(results, key=lambda k: int(k[2:])):
        ok, detail = results[ac]
        terminalreporter.write_line(f"{ac} {'PASS' if ok else 'FAIL'}: {detail}")
