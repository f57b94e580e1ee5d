"""Feasible-trajectory synthesis for training data.

The expert minimizes ``cost_weight * sum of squared segment lengths`` over
the same feasible set the projection module targets, using the same
multiplier machinery, from straight start-to-goal lines (Gaussian-jittered
on retries).  It is deliberately plain: the learning stage only needs
feasible, reasonably smooth trajectories, not optimal ones.

``build_dataset`` draws scenarios from families, solves each draw, and
writes the feasible ones as (scenario JSON, trajectory binary) pairs next
to a manifest that records every generator seed and the solver settings.
"""

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .core import (
    ConstraintSpec,
    ContractError,
    InfeasibleError,
    Scenario,
    TrajectorySet,
    collision_residuals,
    convex_residuals,
    is_feasible,
)
from .projection import (
    AlmState,
    ProjectionConfig,
    _constraint_arrays,
    _endpoint_reach_check,
    _signed_gaps,
    _step_size,
    project_convex,
)
from .scenario import (
    FormatError,
    GenerationError,
    ScenarioFamily,
    generate,
    load_scenario,
    load_trajectories,
    save_scenario,
    save_trajectories,
    scenario_to_json,
)

DATASET_VERSION = 1
DEFAULT_HORIZON = 32


@dataclass(frozen=True)
class ExpertConfig:
    """Knobs for the expert solver."""

    max_iters: int = 60        # multiplier updates per restart
    step_size: float = 1.0     # scale on the curvature-derived gradient step
    cost_weight: float = 1.0   # weight on the squared-segment-length cost
    restarts: int = 4
    jitter_scale: float = 0.05

    def __post_init__(self):
        if self.max_iters < 1 or self.restarts < 1:
            raise ContractError("max_iters and restarts must be >= 1")
        if not self.step_size > 0.0:
            raise ContractError("step_size must be positive")
        if not self.cost_weight > 0.0:
            raise ContractError("cost_weight must be positive")
        if self.jitter_scale < 0.0:
            raise ContractError("jitter_scale must be >= 0")


@dataclass(frozen=True)
class InfeasibleReport:
    """Best residuals achieved when no restart reached feasibility.

    Collision residuals are in squared-distance units, endpoint and
    velocity residuals in distance units, matching the public checkers.
    """

    max_residual: float
    collision_residual: float
    endpoint_residual: float
    velocity_residual: float
    restarts: int


def path_cost(traj: TrajectorySet) -> float:
    """Summed squared segment length over all agents."""
    d = np.diff(traj.positions, axis=1)
    return float(np.einsum("ahk,ahk->", d, d))


def straight_line_init(scenario: Scenario, horizon: int) -> np.ndarray:
    """Uniform straight start-to-goal lines, shape (n_agents, horizon, 2)."""
    if horizon < 2:
        raise ContractError("horizon must be >= 2")
    w = np.linspace(0.0, 1.0, horizon)[None, :, None]
    return (1.0 - w) * scenario.starts[:, None, :] + w * scenario.goals[:, None, :]


def _residual_parts(traj: TrajectorySet, scenario: Scenario, spec: ConstraintSpec):
    """(collision, endpoint, velocity, overall max) via the public checkers."""
    agent_res, obstacle_res = collision_residuals(traj, scenario, spec)
    endpoint_err, velocity_excess = convex_residuals(traj, scenario, spec)
    collision = float(max(agent_res.max(initial=0.0), obstacle_res.max(initial=0.0)))
    endpoint = float(endpoint_err.max(initial=0.0))
    velocity = float(velocity_excess.max(initial=0.0))
    return collision, endpoint, velocity, max(collision, endpoint, velocity)


def _jitter_seed(scenario: Scenario) -> int:
    # Tied to scenario content so a solve is a pure function of its inputs;
    # salted so expert jitter never correlates with sampling noise.
    payload = b"expert-jitter" + scenario_to_json(scenario).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def _solve_restart(init, scenario, spec, cfg, tol, pcfg):
    """One multiplier run.  Returns (feasible p or None, cost, residual parts)."""
    p = np.ascontiguousarray(
        project_convex(TrajectorySet(init), scenario, spec, pcfg).positions).copy()
    na, H = p.shape[0], p.shape[1]
    state = AlmState.fresh(na, scenario.n_obstacles, H, pcfg.rho_init)
    centers, r2o = _constraint_arrays(scenario, spec)
    starts = np.ascontiguousarray(scenario.starts)
    goals = np.ascontiguousarray(scenario.goals)
    # The cost Hessian is 2*cost_weight times a path-graph Laplacian whose
    # spectrum is bounded by 4, so its curvature contribution is below 8w.
    obj_curv = 8.0 * cfg.cost_weight

    best_p, best_cost = None, np.inf
    parts = _residual_parts(TrajectorySet(p), scenario, spec)
    best_parts = parts
    if parts[3] <= tol:
        best_p, best_cost = p.copy(), path_cost(TrajectorySet(p))
    prev_res = parts[3]

    for _ in range(cfg.max_iters):
        step = cfg.step_size * _step_size(scenario, spec, state, obj_curv)
        prev_p = p.copy()
        _kernels.expert_inner(
            p, cfg.cost_weight, starts, goals, spec.r_agent**2,
            state.nu_agent, state.rho_agent, centers, r2o,
            state.nu_obstacle, state.rho_obstacle,
            spec.v_max_step, step, pcfg.max_inner, pcfg.inner_tol,
            pcfg.dykstra_iters, 1e-13)

        parts = _residual_parts(TrajectorySet(p), scenario, spec)
        if parts[3] < best_parts[3]:
            best_parts = parts
        moved = float(np.max(np.abs(p - prev_p)))
        if parts[3] <= tol:
            cost = path_cost(TrajectorySet(p))
            if cost < best_cost:
                best_p, best_cost = p.copy(), cost
            if moved < 1e-8:
                break

        gap_a, gap_o = _signed_gaps(p, scenario, spec)
        state.nu_agent = np.maximum(0.0, state.nu_agent
                                    + 2.0 * state.rho_agent * gap_a)
        state.nu_obstacle = np.maximum(0.0, state.nu_obstacle
                                       + 2.0 * state.rho_obstacle * gap_o)
        if parts[3] > tol and parts[3] > 0.25 * prev_res:
            state.rho_agent = min(pcfg.rho_max, pcfg.rho_growth * state.rho_agent)
            state.rho_obstacle = min(pcfg.rho_max, pcfg.rho_growth * state.rho_obstacle)
        prev_res = parts[3]
    return best_p, best_cost, best_parts


def solve_expert(scenario: Scenario, spec: ConstraintSpec,
                 cfg: ExpertConfig | None = None,
                 horizon: int = DEFAULT_HORIZON):
    """Lowest-cost feasible trajectory over multi-start solves.

    Returns a TrajectorySet on success; an InfeasibleReport with the best
    residuals seen when every restart fails.  A restart's initialization
    counts as a candidate when it is itself feasible, so the result never
    costs more than the best feasible init.  Ties across restarts resolve
    to the earliest one; jitter derives from the scenario content, so the
    solve is deterministic.
    """
    cfg = cfg or ExpertConfig()
    if spec.r_obstacle.shape[0] != scenario.n_obstacles:
        raise ContractError(
            f"spec lists {spec.r_obstacle.shape[0]} obstacle radii but the "
            f"scenario has {scenario.n_obstacles} obstacles")
    tol = min(1e-6, spec.tolerance)
    base = straight_line_init(scenario, horizon)
    try:
        _endpoint_reach_check(scenario, spec, horizon)
    except InfeasibleError:
        parts = _residual_parts(TrajectorySet(base), scenario, spec)
        return InfeasibleReport(parts[3], parts[0], parts[1], parts[2], 0)

    pcfg = ProjectionConfig()
    rng = np.random.Generator(np.random.PCG64(_jitter_seed(scenario)))
    best_p, best_cost = None, np.inf
    best_parts = (np.inf, np.inf, np.inf, np.inf)
    for k in range(cfg.restarts):
        if k == 0:
            init = base.copy()
        else:
            jit = rng.normal(0.0, cfg.jitter_scale, size=base.shape)
            jit[:, 0] = 0.0
            jit[:, -1] = 0.0
            init = base + jit
        init_traj = TrajectorySet(init)
        if is_feasible(init_traj, scenario, spec, tol):
            cost = path_cost(init_traj)
            if cost < best_cost:
                best_p, best_cost = init.copy(), cost
        p, cost, parts = _solve_restart(init, scenario, spec, cfg, tol, pcfg)
        if parts[3] < best_parts[3]:
            best_parts = parts
        if p is not None and cost < best_cost:
            best_p, best_cost = p, cost

    if best_p is None:
        return InfeasibleReport(best_parts[3], best_parts[0], best_parts[1],
                                best_parts[2], cfg.restarts)
    return TrajectorySet(best_p)


# ---------------------------------------------------------------------------
# Dataset plumbing: a directory of pairs plus a manifest.


def _instance_seed(master_seed: int, family: ScenarioFamily, index: int) -> int:
    payload = (int(master_seed).to_bytes(8, "little")
               + family.kind.value.encode()
               + int(family.seed).to_bytes(8, "little")
               + int(index).to_bytes(4, "little"))
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def build_dataset(families, per_family: int, cfg: ExpertConfig | None,
                  out_dir, master_seed: int = 0,
                  horizon: int = DEFAULT_HORIZON) -> Path:
    """Draw scenarios per family, solve each, store verified-feasible pairs.

    Writes ``<stem>.scenario.json`` / ``<stem>.traj.bin`` pairs plus
    ``manifest.json`` into ``out_dir``; returns the manifest path.
    Infeasible draws are skipped and listed in the manifest.  If fewer than
    half of all draws solve, nothing is written and a GenerationError
    explains the failure rate (generator and solver parameters are then
    likely inconsistent).
    """
    if per_family < 1:
        raise ContractError("per_family must be >= 1")
    if not families:
        raise ContractError("families must be non-empty")
    for fam in families:
        if not isinstance(fam, ScenarioFamily):
            raise ContractError(f"not a ScenarioFamily: {fam!r}")
    cfg = cfg or ExpertConfig()

    kept = []
    skipped = []
    for fi, fam in enumerate(families):
        for i in range(per_family):
            seed = _instance_seed(master_seed, fam, i)
            draw = ScenarioFamily(fam.kind, seed, dict(fam.params))
            record = {"family": fam.kind.value, "family_index": fi,
                      "index": i, "seed": seed}
            try:
                scen = generate(draw)
            except GenerationError as exc:
                skipped.append({**record, "reason": f"generation failed: {exc}"})
                continue
            spec = ConstraintSpec.from_scenario(scen)
            result = solve_expert(scen, spec, cfg, horizon=horizon)
            if isinstance(result, TrajectorySet):
                kept.append((record, scen, result))
            else:
                skipped.append({**record, "reason": "infeasible",
                                "max_residual": result.max_residual})

    total = len(kept) + len(skipped)
    if 2 * len(kept) < total:
        raise GenerationError(
            f"only {len(kept)} of {total} draws solved feasibly; generator "
            "and solver parameters are likely inconsistent")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    instances = []
    for record, scen, traj in kept:
        stem = f"f{record['family_index']}-{record['family']}-{record['index']:04d}"
        sname, tname = stem + ".scenario.json", stem + ".traj.bin"
        save_scenario(scen, out / sname)
        save_trajectories(traj, out / tname)
        instances.append({**record, "scenario": sname, "trajectory": tname,
                          "cost": path_cost(traj)})
    manifest = {
        "version": DATASET_VERSION,
        "master_seed": int(master_seed),
        "horizon": int(horizon),
        "solver": asdict(cfg),
        "families": [{"kind": f.kind.value, "seed": f.seed, "params": f.params}
                     for f in families],
        "counts": {"kept": len(kept), "skipped": len(skipped)},
        "instances": instances,
        "skipped": skipped,
    }
    mpath = out / "manifest.json"
    with open(mpath, "w") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return mpath


def load_dataset(path):
    """Read a dataset directory back, re-verifying every stored pair.

    ``path`` may be the directory or its manifest file.  Returns
    ``(manifest, pairs)`` with pairs as (Scenario, TrajectorySet) in
    manifest order.  Raises FormatError on missing files, shape drift, or
    any pair that no longer passes the independent feasibility check.
    """
    root = Path(path)
    mpath = root / "manifest.json" if root.is_dir() else root
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"no dataset manifest at {mpath}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from None
    for key in ("version", "horizon", "instances"):
        if key not in manifest:
            raise FormatError(f"manifest missing required field '{key}'")
    if manifest["version"] != DATASET_VERSION:
        raise FormatError(
            f"unsupported dataset version {manifest['version']!r} "
            f"(expected {DATASET_VERSION})")

    base = mpath.parent
    horizon = manifest["horizon"]
    pairs = []
    for rec in manifest["instances"]:
        scen = load_scenario(base / rec["scenario"])
        traj = load_trajectories(base / rec["trajectory"])
        if traj.horizon != horizon or traj.n_agents != scen.n_agents:
            raise FormatError(
                f"pair {rec['scenario']!r} has shape ({traj.n_agents}, "
                f"{traj.horizon}), expected ({scen.n_agents}, {horizon})")
        spec = ConstraintSpec.from_scenario(scen)
        if not is_feasible(traj, scen, spec):
            raise FormatError(
                f"stored trajectory {rec['trajectory']!r} fails the "
                "feasibility check")
        pairs.append((scen, traj))
    return manifest, pairs
