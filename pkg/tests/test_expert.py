"""Expert trajectory synthesis and dataset plumbing."""

import json

import numpy as np
import pytest

from mapfdiff import (
    ConstraintSpec,
    ContractError,
    ExpertConfig,
    FamilyKind,
    FormatError,
    GenerationError,
    InfeasibleReport,
    Obstacle,
    Scenario,
    ScenarioFamily,
    TrajectorySet,
    build_dataset,
    is_feasible,
    load_dataset,
    path_cost,
    save_trajectories,
    solve_expert,
    straight_line_init,
)


def lanes_scenario(n_agents=2):
    """Agents on parallel horizontal lanes; straight lines are feasible."""
    ys = np.linspace(0.2, 0.8, n_agents)
    starts = np.stack([np.full(n_agents, 0.2), ys], axis=1)
    goals = np.stack([np.full(n_agents, 0.8), ys], axis=1)
    return Scenario(starts=starts, goals=goals, obstacles=(),
                    agent_radius=0.05, v_max=0.1)


def crossing_scenario():
    return Scenario(
        starts=np.array([[0.2, 0.2], [0.8, 0.2]]),
        goals=np.array([[0.8, 0.8], [0.2, 0.8]]),
        obstacles=(), agent_radius=0.05, v_max=0.1)


class TestSolveExpert:
    def test_single_agent_gets_uniform_straight_line(self):
        scen = Scenario(starts=np.array([[0.2, 0.3]]),
                        goals=np.array([[0.8, 0.7]]),
                        obstacles=(), agent_radius=0.05, v_max=0.1)
        spec = ConstraintSpec.from_scenario(scen)
        out = solve_expert(scen, spec, ExpertConfig(), horizon=32)
        assert isinstance(out, TrajectorySet)
        line = straight_line_init(scen, 32)
        assert np.abs(out.positions - line).max() <= 1e-5
        span2 = float(np.sum((scen.goals[0] - scen.starts[0]) ** 2))
        lower = span2 / 31.0  # uniform steps minimize summed squared lengths
        assert path_cost(out) >= lower - 1e-12
        assert path_cost(out) <= lower * (1.0 + 1e-6)
        assert is_feasible(out, scen, spec)

    def test_crossing_agents_separated(self):
        scen = crossing_scenario()
        spec = ConstraintSpec.from_scenario(scen)
        out = solve_expert(scen, spec, ExpertConfig(), horizon=32)
        assert isinstance(out, TrajectorySet)
        # independent pairwise-distance check
        d = np.linalg.norm(out.positions[0] - out.positions[1], axis=1)
        assert d.min() >= spec.r_agent - spec.tolerance
        assert is_feasible(out, scen, spec)

    def test_wall_slit_narrower_than_agent_is_infeasible(self):
        # slit clear width 0.06 < agent diameter 0.1, and the detour around
        # the wall exceeds the (H-1)*v_max*dt step budget
        r_wall = 0.06
        obstacles = tuple(
            Obstacle(np.array([0.5, y]), r_wall)
            for y in np.arange(-2.0, 3.0, 0.03)
            if abs(y - 0.5) > 0.085)
        scen = Scenario(
            starts=np.array([[0.2, 0.5]]), goals=np.array([[0.8, 0.5]]),
            obstacles=obstacles, agent_radius=0.05, v_max=0.1)
        spec = ConstraintSpec.from_scenario(scen)
        report = solve_expert(scen, spec, ExpertConfig(restarts=2), horizon=32)
        assert isinstance(report, InfeasibleReport)
        assert report.restarts == 2
        assert report.max_residual > 1e-6
        assert report.collision_residual > 0.0

    def test_unreachable_endpoints_report_without_restarts(self):
        scen = Scenario(starts=np.array([[0.1, 0.5]]),
                        goals=np.array([[0.9, 0.5]]),
                        obstacles=(), agent_radius=0.05, v_max=0.1)
        spec = ConstraintSpec.from_scenario(scen)
        report = solve_expert(scen, spec, ExpertConfig(), horizon=3)
        assert isinstance(report, InfeasibleReport)
        assert report.restarts == 0
        assert report.endpoint_residual == 0.0  # init pins endpoints
        assert report.velocity_residual > 0.0

    def test_never_degrades_feasible_init(self):
        for n_agents in (2, 3, 4):
            scen = lanes_scenario(n_agents)
            spec = ConstraintSpec.from_scenario(scen)
            init = TrajectorySet(straight_line_init(scen, 32))
            assert is_feasible(init, scen, spec)
            out = solve_expert(scen, spec, ExpertConfig(), horizon=32)
            assert isinstance(out, TrajectorySet)
            assert path_cost(out) <= path_cost(init) + 1e-9

    def test_deterministic(self):
        scen = crossing_scenario()
        spec = ConstraintSpec.from_scenario(scen)
        a = solve_expert(scen, spec, ExpertConfig(), horizon=16)
        b = solve_expert(scen, spec, ExpertConfig(), horizon=16)
        np.testing.assert_array_equal(a.positions, b.positions)


class TestHelpers:
    def test_straight_line_init_shape_and_endpoints(self):
        scen = lanes_scenario(3)
        line = straight_line_init(scen, 12)
        assert line.shape == (3, 12, 2)
        np.testing.assert_array_equal(line[:, 0], scen.starts)
        np.testing.assert_array_equal(line[:, -1], scen.goals)

    def test_path_cost_examples(self):
        p = np.zeros((1, 5, 2))
        p[0, :, 0] = np.linspace(0.0, 1.0, 5)
        assert path_cost(TrajectorySet(p)) == pytest.approx(
            4 * 0.25**2, abs=1e-15)
        assert path_cost(TrajectorySet(np.zeros((2, 4, 2)) + 0.3)) == 0.0


class TestBuildDataset:
    FAMS = (ScenarioFamily(FamilyKind.NARROW_CORRIDOR, seed=5),
            ScenarioFamily(FamilyKind.OBSTACLE_DENSE, seed=6))

    def test_build_and_reload(self, tmp_path):
        mpath = build_dataset(self.FAMS, 3, ExpertConfig(), tmp_path / "d",
                              master_seed=9)
        manifest, pairs = load_dataset(mpath)
        assert manifest["version"] == 1
        assert manifest["master_seed"] == 9
        assert manifest["horizon"] == 32
        counts = manifest["counts"]
        assert counts["kept"] == len(pairs)
        assert counts["kept"] + counts["skipped"] == 6
        assert 2 * counts["kept"] >= 6
        for rec in manifest["instances"]:
            assert rec["scenario"].endswith(".scenario.json")
            assert rec["trajectory"].endswith(".traj.bin")
            assert 0 <= rec["seed"] < 2**64
        for scen, traj in pairs:
            assert traj.horizon == 32
            assert is_feasible(traj, scen, ConstraintSpec.from_scenario(scen))

    def test_byte_identical_rebuild(self, tmp_path):
        m1 = build_dataset(self.FAMS, 2, ExpertConfig(), tmp_path / "a",
                           master_seed=3)
        m2 = build_dataset(self.FAMS, 2, ExpertConfig(), tmp_path / "b",
                           master_seed=3)
        assert m1.read_bytes() == m2.read_bytes()
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_contract_errors(self, tmp_path):
        with pytest.raises(ContractError):
            build_dataset(self.FAMS, 0, ExpertConfig(), tmp_path / "x")
        with pytest.raises(ContractError):
            build_dataset([], 2, ExpertConfig(), tmp_path / "x")
        with pytest.raises(ContractError):
            build_dataset(["NarrowCorridor"], 2, ExpertConfig(),
                          tmp_path / "x")

    def test_mostly_infeasible_aborts_before_writing(self, tmp_path):
        # v_max so small the endpoints are unreachable in the horizon
        fam = ScenarioFamily(FamilyKind.NARROW_CORRIDOR, seed=5,
                             params={"v_max": 0.01})
        out = tmp_path / "never"
        with pytest.raises(GenerationError, match="draws solved feasibly"):
            build_dataset([fam], 3, ExpertConfig(), out, master_seed=1)
        assert not out.exists()

    def test_load_rejects_tampered_trajectory(self, tmp_path):
        mpath = build_dataset(self.FAMS[:1], 2, ExpertConfig(),
                              tmp_path / "d", master_seed=4)
        manifest = json.loads(mpath.read_text())
        rec = manifest["instances"][0]
        horizon = manifest["horizon"]
        scen_na = 2  # corridor family is two agents
        bad = TrajectorySet(np.full((scen_na, horizon, 2), 0.5))
        save_trajectories(bad, mpath.parent / rec["trajectory"])
        with pytest.raises(FormatError, match="feasibility"):
            load_dataset(mpath)

    def test_load_rejects_shape_drift_and_bad_manifest(self, tmp_path):
        mpath = build_dataset(self.FAMS[:1], 1, ExpertConfig(),
                              tmp_path / "d", master_seed=4, horizon=16)
        manifest = json.loads(mpath.read_text())
        rec = manifest["instances"][0]
        wrong = TrajectorySet(np.full((2, 8, 2), 0.5))
        save_trajectories(wrong, mpath.parent / rec["trajectory"])
        with pytest.raises(FormatError, match="shape"):
            load_dataset(mpath)
        with pytest.raises(FormatError, match="manifest"):
            load_dataset(tmp_path / "missing")
        manifest["version"] = 99
        mpath.write_text(json.dumps(manifest))
        with pytest.raises(FormatError, match="version"):
            load_dataset(mpath)

    def test_horizon_override(self, tmp_path):
        mpath = build_dataset(self.FAMS[:1], 1, ExpertConfig(),
                              tmp_path / "d", master_seed=2, horizon=16)
        manifest, pairs = load_dataset(mpath)
        assert manifest["horizon"] == 16
        assert all(t.horizon == 16 for _, t in pairs)
