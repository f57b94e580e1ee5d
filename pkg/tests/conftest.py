"""Shared fixtures: random-instance helpers and session-scoped trained models.

The heavyweight fixtures (datasets plus trained score networks for all three
scenario families) are session-scoped and lazy, so unit-test runs that do not
touch the acceptance suite never pay for them.
"""

import numpy as np
import pytest

from mapfdiff import (
    ConstraintSpec,
    ExpertConfig,
    FamilyKind,
    Obstacle,
    Scenario,
    ScenarioFamily,
    ScoreNetwork,
    TrainConfig,
    TrajectorySet,
    build_dataset,
    load_dataset,
    make_schedule,
    straight_line_init,
    train,
)

# Training/evaluation settings shared by every trained-model fixture.  The
# schedule is deliberately smaller than the library defaults (T=50, M=10) to
# keep the acceptance suite inside its runtime budget.
EVAL_SCHEDULE = dict(beta_min=0.01, beta_max=1.0, n_levels=30, inner_steps=5)
TRAIN_EPOCHS = 400
PER_FAMILY = 120
DATA_MASTER_SEED = 1000


def make_clear_points(rng, count, agent_radius, obstacles=(), lo=0.1, hi=0.9,
                      margin=0.01):
    """Rejection-sample points pairwise >= 2r + margin apart, obstacle-clear."""
    pts = []
    while len(pts) < count:
        cand = rng.uniform(lo, hi, size=2)
        if pts:
            d = np.linalg.norm(np.asarray(pts) - cand, axis=1)
            if d.min() < 2.0 * agent_radius + margin:
                continue
        if any(np.linalg.norm(cand - ob.center) < ob.radius + agent_radius + margin
               for ob in obstacles):
            continue
        pts.append(cand)
    return np.asarray(pts)


def random_scenario(rng, n_agents=2, n_obstacles=0, agent_radius=0.05,
                    v_max=0.3):
    """A small valid instance with endpoints clear of everything."""
    obstacles = []
    while len(obstacles) < n_obstacles:
        c = rng.uniform(0.3, 0.7, size=2)
        r = float(rng.uniform(0.03, 0.08))
        if all(np.linalg.norm(c - ob.center) > r + ob.radius + 2 * agent_radius + 0.02
               for ob in obstacles):
            obstacles.append(Obstacle(c, r))
    obstacles = tuple(obstacles)
    starts = make_clear_points(rng, n_agents, agent_radius, obstacles)
    goals = make_clear_points(rng, n_agents, agent_radius, obstacles)
    return Scenario(starts=starts, goals=goals, obstacles=obstacles,
                    agent_radius=agent_radius, v_max=v_max)


def random_trajectory(rng, scenario, horizon, noise=0.2, pin_endpoints=False):
    """Straight lines plus Gaussian noise; optionally keeps endpoints exact."""
    p = straight_line_init(scenario, horizon)
    jit = rng.normal(0.0, noise, size=p.shape)
    if pin_endpoints:
        jit[:, 0] = 0.0
        jit[:, -1] = 0.0
    return TrajectorySet(p + jit)


@pytest.fixture(scope="session")
def eval_schedule():
    return make_schedule(**EVAL_SCHEDULE)


def _train_family(kind, family_seed, out_dir, schedule):
    family = ScenarioFamily(kind, seed=family_seed)
    manifest_path = build_dataset([family], PER_FAMILY, ExpertConfig(),
                                  out_dir, master_seed=DATA_MASTER_SEED)
    manifest, pairs = load_dataset(manifest_path)
    dataset = [(traj, scen) for scen, traj in pairs]
    n_agents, horizon = dataset[0][0].n_agents, dataset[0][0].horizon
    net = ScoreNetwork.create(n_agents, horizon, seed=7)
    net, history = train(net, dataset, schedule, TrainConfig(epochs=TRAIN_EPOCHS),
                         np.random.default_rng(7))
    return {
        "family": family,
        "net": net,
        "history": history,
        "manifest": manifest,
        "data_dir": out_dir,
        "pairs": pairs,
    }


@pytest.fixture(scope="session")
def nc_stack(tmp_path_factory, eval_schedule):
    out = tmp_path_factory.mktemp("data-nc")
    return _train_family(FamilyKind.NARROW_CORRIDOR, 1000, out, eval_schedule)


@pytest.fixture(scope="session")
def od_stack(tmp_path_factory, eval_schedule):
    out = tmp_path_factory.mktemp("data-od")
    return _train_family(FamilyKind.OBSTACLE_DENSE, 2000, out, eval_schedule)


@pytest.fixture(scope="session")
def ad_stack(tmp_path_factory, eval_schedule):
    out = tmp_path_factory.mktemp("data-ad")
    return _train_family(FamilyKind.AGENT_DENSE, 3000, out, eval_schedule)


@pytest.fixture(scope="session")
def tiny_net():
    """Small untrained network; adequate wherever score quality is irrelevant."""
    return ScoreNetwork.create(2, 8, hidden=(16,), seed=0)


def spec_for(scenario, tolerance=1e-4):
    return ConstraintSpec.from_scenario(scenario, tolerance=tolerance)
