"""End-to-end acceptance checks for the planning engine.

Each test prints one summary line (visible with ``-s`` or ``-rA``).  The
per-family evaluation reports are session fixtures so the projected-sampler
feasibility and method-ordering checks share one expensive sampling pass.
"""

import time

import numpy as np
import pytest

from mapfdiff import (
    Box,
    ConstraintSpec,
    ExperimentConfig,
    FamilyKind,
    Method,
    Obstacle,
    OracleFailure,
    ProjectionConfig,
    SamplerConfig,
    Scenario,
    ScenarioFamily,
    ScoreNetwork,
    TrainConfig,
    TrajectorySet,
    agent_pairs,
    alm_project,
    collision_residuals,
    convex_residuals,
    generate,
    make_schedule,
    max_violation,
    oracle_project,
    path_length,
    project_convex,
    run_experiment,
    sample,
    save_network,
    straight_line_init,
)
from mapfdiff.cli import main as cli_main
from mapfdiff.harness import _eval_seed
from mapfdiff.samplers import run_chain
from mapfdiff.score_model import draw_batch, loss_and_grad_from_draws

from conftest import random_scenario, random_trajectory, spec_for
from test_projection import scipy_convex_reference

MASTER_SEED = 42


@pytest.fixture(scope="session")
def nc_eval_report(nc_stack, eval_schedule):
    t0 = time.perf_counter()
    report = run_experiment(
        [Method.PDM, Method.DM, Method.GDM], [nc_stack["family"]], 20,
        nc_stack["net"], ExperimentConfig(schedule=eval_schedule,
                                          master_seed=MASTER_SEED))
    return {"report": report, "wall": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def od_eval_report(od_stack, eval_schedule):
    t0 = time.perf_counter()
    report = run_experiment(
        [Method.PDM, Method.DM, Method.GDM], [od_stack["family"]], 20,
        od_stack["net"], ExperimentConfig(schedule=eval_schedule,
                                          master_seed=MASTER_SEED))
    return {"report": report, "wall": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def ad_eval_report(ad_stack, eval_schedule):
    # the 12-agent instances leave harder nonconvex subproblems, so the
    # projector gets a larger outer-iteration budget
    t0 = time.perf_counter()
    report = run_experiment(
        [Method.PDM, Method.DM, Method.GDM], [ad_stack["family"]], 10,
        ad_stack["net"], ExperimentConfig(
            schedule=eval_schedule, master_seed=MASTER_SEED,
            projection=ProjectionConfig(max_outer=80)))
    return {"report": report, "wall": time.perf_counter() - t0}


def test_c1_projected_sampling_feasibility(nc_eval_report, od_eval_report,
                                           nc_stack):
    # the experiment derives constraint constants per scenario; pin the
    # tolerance those records were judged against
    fam = nc_stack["family"]
    probe = generate(ScenarioFamily(fam.kind, _eval_seed(MASTER_SEED, fam, 0),
                                    dict(fam.params)))
    assert ConstraintSpec.from_scenario(probe).tolerance == 1e-4

    for name, bundle in (("NarrowCorridor", nc_eval_report),
                         ("ObstacleDense", od_eval_report)):
        records = [r for r in bundle["report"].records if r.method == "pdm"]
        assert len(records) == 20
        zero = sum(1 for r in records if r.violation_rate == 0.0)
        assert zero >= 19, f"{name}: only {zero}/20 zero-violation instances"
        flagged = [r for r in records if r.feasible]
        # every sample the sampler flags feasible must pass the residual
        # checker, which is computed independently of that flag
        assert all(r.max_residual <= 1e-4 for r in flagged)
        print(f"C1 {name}: {zero}/20 zero-violation, "
              f"{len(flagged)} flagged feasible (all pass checker)")

    total_wall = nc_eval_report["wall"] + od_eval_report["wall"]
    assert total_wall <= 900.0, f"evaluation took {total_wall:.0f}s"
    print(f"C1 runtime: {total_wall:.0f}s <= 900s for both families "
          "(including the unprojected baselines)")


def _assert_ordering(report, family_value, dm_strictly_violating):
    summary = report.summary()
    viol = {m: summary[(m, family_value)]["violation_rate_mean"]
            for m in ("pdm", "gdm", "dm")}
    plen = {m: summary[(m, family_value)]["path_length_mean"]
            for m in ("pdm", "gdm", "dm")}
    count = summary[("pdm", family_value)]["count"]
    assert count >= 10
    assert viol["pdm"] <= viol["gdm"] < viol["dm"], viol
    assert plen["pdm"] < plen["gdm"] < plen["dm"], plen
    if dm_strictly_violating:
        assert viol["dm"] > 0.0
    print(f"C2 {family_value} (n={count}): violation "
          f"pdm {viol['pdm']:.3f} <= gdm {viol['gdm']:.3f} < dm {viol['dm']:.3f}; "
          f"path pdm {plen['pdm']:.2f} < gdm {plen['gdm']:.2f} "
          f"< dm {plen['dm']:.2f}")


def test_c2_method_ordering_narrow_corridor(nc_eval_report):
    _assert_ordering(nc_eval_report["report"], "NarrowCorridor",
                     dm_strictly_violating=True)


def test_c2_method_ordering_obstacle_dense(od_eval_report):
    _assert_ordering(od_eval_report["report"], "ObstacleDense",
                     dm_strictly_violating=False)


def test_c2_method_ordering_agent_dense(ad_eval_report):
    _assert_ordering(ad_eval_report["report"], "AgentDense",
                     dm_strictly_violating=False)


def test_c3_projection_distance_and_convex_reference():
    rng = np.random.default_rng(1234)
    worst_ratio = 0.0
    for _ in range(20):
        scen = random_scenario(rng, n_agents=2)
        spec = spec_for(scen)
        traj = random_trajectory(rng, scen, horizon=8, noise=0.25)
        out, diag = alm_project(traj, scen, spec)
        assert diag.converged
        assert max_violation(out, scen, spec) <= 1e-6 + 1e-9
        d_alm = float(np.linalg.norm(out.flat() - traj.flat()))
        ref = oracle_project(traj, scen, spec)
        d_oracle = float(np.linalg.norm(ref.flat() - traj.flat()))
        assert d_alm <= 1.05 * d_oracle + 1e-12
        worst_ratio = max(worst_ratio, d_alm / max(d_oracle, 1e-12))

    worst_gap = 0.0
    for _ in range(10):
        scen = random_scenario(rng, n_agents=1)
        spec = spec_for(scen)
        traj = random_trajectory(rng, scen, horizon=8, noise=0.3)
        ours = project_convex(traj, scen, spec)
        obj_ours = float(np.sum((ours.positions - traj.positions) ** 2))
        _, obj_ref = scipy_convex_reference(traj, scen, spec)
        assert abs(obj_ours - obj_ref) <= 1e-6
        worst_gap = max(worst_gap, abs(obj_ours - obj_ref))
    print(f"C3: distance within {worst_ratio:.4f}x of the multi-restart "
          f"reference (20 instances); convex objective gap <= {worst_gap:.2e} "
          "vs SLSQP (10 instances)")


def test_c4_alm_beats_restart_continuation_on_dense_instances():
    fam = ScenarioFamily(FamilyKind.AGENT_DENSE, seed=3000)
    rng = np.random.default_rng(99)
    alm_walls, oracle_walls, dropped = [], [], 0
    for i in range(11):
        scen = generate(ScenarioFamily(fam.kind, _eval_seed(7, fam, i)))
        spec = spec_for(scen)
        init = TrajectorySet(straight_line_init(scen, 32)
                             + rng.normal(0.0, 0.25, size=(12, 32, 2)))
        t0 = time.perf_counter()
        out_a, _ = alm_project(init, scen, spec, ProjectionConfig(max_outer=80))
        wall_a = time.perf_counter() - t0
        res_a = max_violation(out_a, scen, spec)
        try:
            t0 = time.perf_counter()
            out_o = oracle_project(init, scen, spec, restarts=1)
            wall_o = time.perf_counter() - t0
            res_o = max_violation(out_o, scen, spec)
        except OracleFailure:
            dropped += 1
            continue
        # the speed comparison is only meaningful at equal final quality
        if res_a <= 1e-6 and res_o <= 1e-6:
            alm_walls.append(wall_a)
            oracle_walls.append(wall_o)
        else:
            dropped += 1
    assert len(alm_walls) >= 8
    ratio = float(np.median(alm_walls) / np.median(oracle_walls))
    assert ratio <= 0.5, f"median ratio {ratio:.2f}"
    print(f"C4: median wall {1e3 * np.median(alm_walls):.0f}ms (multiplier "
          f"scheme) vs {1e3 * np.median(oracle_walls):.0f}ms "
          f"(restart continuation), ratio {ratio:.2f} over "
          f"{len(alm_walls)} dense 12-agent instances; "
          f"{dropped} dropped where the baseline missed 1e-6. Note: the "
          "timing baseline is reconstructed, not an original implementation.")


def test_c5_score_model_integrity(nc_stack, eval_schedule):
    dataset = [(traj, scen) for scen, traj in nc_stack["pairs"][:16]]
    net = ScoreNetwork.create(2, 16, hidden=(32, 32), seed=21)
    draws = draw_batch(dataset, eval_schedule, TrainConfig(),
                       np.random.default_rng(77))
    theta = net.params_flat()
    _, (gw, gb) = loss_and_grad_from_draws(net, draws)
    analytic = np.concatenate(
        [a.ravel() for i in range(len(gw)) for a in (gw[i], gb[i])])

    def loss_at(vec):
        net.set_params_flat(vec)
        value, _ = loss_and_grad_from_draws(net, draws)
        return value

    coords = np.random.default_rng(78).choice(theta.size, size=120,
                                              replace=False)
    step = 1e-5
    worst = 0.0
    for j in coords:
        bumped = theta.copy()
        bumped[j] += step
        hi = loss_at(bumped)
        bumped[j] -= 2 * step
        lo = loss_at(bumped)
        fd = (hi - lo) / (2 * step)
        rel = abs(fd - analytic[j]) / max(abs(fd), abs(analytic[j]), 1e-8)
        worst = max(worst, rel)
        assert rel <= 1e-4, f"coordinate {j}: fd={fd} analytic={analytic[j]}"

    history = np.asarray(nc_stack["history"])
    smoothed = np.convolve(history, np.ones(20) / 20.0, mode="valid")
    assert smoothed[-1] <= 0.5 * smoothed[0], (
        f"smoothed loss {smoothed[0]:.2f} -> {smoothed[-1]:.2f}")
    print(f"C5: max FD relative error {worst:.2e} over 120 coordinates; "
          f"smoothed training loss {smoothed[0]:.1f} -> {smoothed[-1]:.1f} "
          f"({100 * (1 - smoothed[-1] / smoothed[0]):.0f}% drop)")


def test_c6_analytic_gaussian_mean_recovery(eval_schedule):
    mu = np.array([0.4, -0.3, 0.25, -0.15])
    sigma = 1.0

    def score_fn(x, t):
        return (mu[None, :] - x) / sigma**2

    rng = np.random.default_rng(606)
    out = run_chain(score_fn, eval_schedule, 10_000, 4, np.zeros(4), rng)
    err = np.abs(out.mean(axis=0) - mu)
    assert np.all(err <= 0.05 * sigma), err
    print(f"C6: max mean error {err.max():.4f} <= {0.05 * sigma:.2f} "
          "over 10000 chains")


def test_c7_eval_reproduces_csv_bytes(nc_stack, eval_schedule, tmp_path):
    model = tmp_path / "nc.ckpt"
    save_network(nc_stack["net"], eval_schedule, model)
    args = ["eval", "--model", str(model), "--families", "NarrowCorridor",
            "--per-family", "2", "--methods", "pdm,dm,gdm",
            "--master-seed", "11", "--family-seed", "1000"]
    first = tmp_path / "a.csv"
    second = tmp_path / "b.csv"
    assert cli_main(args + ["--out-csv", str(first)]) == 0
    assert cli_main(args + ["--out-csv", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    print("C7: repeated eval runs emit byte-identical CSV "
          f"({len(first.read_bytes())} bytes)")


def test_c8_residual_property_suite():
    rng = np.random.default_rng(8001)
    big = Box(lo=np.array([-200.0, -200.0]), hi=np.array([200.0, 200.0]))
    for case in range(1000):
        n_obstacles = case % 3
        base = random_scenario(rng, n_agents=3, n_obstacles=n_obstacles)
        scen = Scenario(starts=base.starts, goals=base.goals,
                        obstacles=base.obstacles,
                        agent_radius=base.agent_radius, v_max=base.v_max,
                        world_bounds=big)
        spec = spec_for(scen)
        traj = random_trajectory(rng, scen, horizon=4, noise=0.3)
        agent_res, obstacle_res = collision_residuals(traj, scen, spec)
        endpoint_err, velocity_excess = convex_residuals(traj, scen, spec)
        assert (agent_res >= 0.0).all() and (obstacle_res >= 0.0).all()
        assert (endpoint_err >= 0.0).all() and (velocity_excess >= 0.0).all()
        parts_max = max(
            (arr.max() if arr.size else 0.0)
            for arr in (agent_res, obstacle_res, endpoint_err, velocity_excess))
        assert max_violation(traj, scen, spec) == parts_max

        # relabeling agents permutes pair residuals without changing values
        perm = rng.permutation(3)
        scen_p = Scenario(starts=scen.starts[perm], goals=scen.goals[perm],
                          obstacles=scen.obstacles,
                          agent_radius=scen.agent_radius, v_max=scen.v_max,
                          world_bounds=big)
        traj_p = TrajectorySet(traj.positions[perm])
        agent_res_p, _ = collision_residuals(traj_p, scen_p, spec)
        ii, jj = agent_pairs(3)
        by_pair = {frozenset((int(ii[k]), int(jj[k]))): agent_res[k]
                   for k in range(len(ii))}
        for k in range(len(ii)):
            orig = by_pair[frozenset((int(perm[ii[k]]), int(perm[jj[k]])))]
            assert np.allclose(agent_res_p[k], orig, rtol=0, atol=1e-12)

        # rigid translation of the whole scene leaves residuals unchanged
        shift = rng.uniform(-50.0, 50.0, size=2)
        scen_t = Scenario(
            starts=scen.starts + shift, goals=scen.goals + shift,
            obstacles=tuple(Obstacle(ob.center + shift, ob.radius)
                            for ob in scen.obstacles),
            agent_radius=scen.agent_radius, v_max=scen.v_max, world_bounds=big)
        traj_t = TrajectorySet(traj.positions + shift)
        agent_res_t, obstacle_res_t = collision_residuals(traj_t, scen_t, spec)
        endpoint_t, velocity_t = convex_residuals(traj_t, scen_t, spec)
        assert np.allclose(agent_res_t, agent_res, rtol=0, atol=1e-9)
        assert np.allclose(obstacle_res_t, obstacle_res, rtol=0, atol=1e-9)
        assert np.allclose(endpoint_t, endpoint_err, rtol=0, atol=1e-9)
        assert np.allclose(velocity_t, velocity_excess, rtol=0, atol=1e-9)
    print("C8a: residual nonnegativity/symmetry/translation held on 1000 cases")


def test_c8_convex_projector_non_expansive():
    rng = np.random.default_rng(8002)
    for case in range(1000):
        if case % 10 == 0:
            scen = random_scenario(rng, n_agents=2, v_max=0.25)
            spec = spec_for(scen)
        x = random_trajectory(rng, scen, horizon=6, noise=0.3)
        y = random_trajectory(rng, scen, horizon=6, noise=0.3)
        px = project_convex(x, scen, spec)
        py = project_convex(y, scen, spec)
        lhs = np.linalg.norm(px.positions - py.positions)
        rhs = np.linalg.norm(x.positions - y.positions)
        assert lhs <= rhs + 1e-9
    print("C8b: convex projector non-expansive on 1000 random pairs")


def test_c8_projected_sampler_feasible_by_construction():
    net = ScoreNetwork.create(2, 6, hidden=(8,), seed=0)
    net.set_params_flat(np.zeros(net.params_flat().size))
    sched = make_schedule(0.1, 1.0, 4, 2)
    rng = np.random.default_rng(8003)
    feasible_count = 0
    for case in range(1000):
        if case % 4 == 0:
            scen = random_scenario(rng, n_agents=2)
            spec = spec_for(scen)
        cfg = SamplerConfig(method=Method.PDM, schedule=sched, seed=case,
                            project_every=2)
        result = sample(net, scen, spec, cfg)
        assert result.trajectory is not None
        if result.feasible:
            feasible_count += 1
            assert max_violation(result.trajectory, scen, spec) <= (
                cfg.projection.outer_tol + 1e-9)
    assert feasible_count >= 990
    print(f"C8c: {feasible_count}/1000 projected samples feasible; every "
          "feasible flag confirmed by the independent checker")


def test_c8_path_length_lower_bound():
    rng = np.random.default_rng(8004)
    for _ in range(1000):
        na = int(rng.integers(1, 5))
        horizon = int(rng.integers(2, 11))
        p = rng.normal(0.0, 1.0, size=(na, horizon, 2))
        traj = TrajectorySet(p)
        displacement = float(
            np.linalg.norm(p[:, -1, :] - p[:, 0, :], axis=1).sum())
        assert path_length(traj) >= displacement - 1e-9
    print("C8d: path length >= endpoint displacement on 1000 trajectories")
