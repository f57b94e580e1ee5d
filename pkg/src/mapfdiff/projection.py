"""Euclidean projection onto the trajectory feasible set.

Three routes with different cost/quality trade-offs:

* ``project_convex`` -- exact projection onto the convex set (endpoint
  equalities intersected with per-step velocity balls) via endpoint
  substitution and Dykstra's alternating projections.
* ``alm_project`` -- projection onto the full set including the nonconvex
  separation constraints, by the method of multipliers: the augmented
  objective is minimized over the convex set by projected gradient steps,
  then multipliers and penalty weights are updated from the residuals.
* ``oracle_project`` -- multi-start quadratic-penalty continuation.  Slow
  and simple; serves as the reference answer in tests and as the baseline
  in timing comparisons.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import (
    ConstraintSpec,
    ContractError,
    InfeasibleError,
    Scenario,
    TrajectorySet,
    collision_residuals,
)


class OracleFailure(RuntimeError):
    """No restart of the reference projector reached a feasible point."""


@dataclass(frozen=True)
class ProjectionConfig:
    """Tolerances and loop limits shared by the projection routines."""

    outer_tol: float = 1e-6       # max hinge residual accepted as feasible
    max_outer: int = 40
    inner_tol: float = 1e-9       # movement cutoff for the inner minimizer
    max_inner: int = 60
    rho_init: float = 1.0
    rho_growth: float = 2.0
    rho_max: float = 1e6
    dykstra_iters: int = 20_000

    def __post_init__(self):
        for name in ("outer_tol", "inner_tol", "rho_init", "rho_max"):
            if not getattr(self, name) > 0.0:
                raise ContractError(f"{name} must be positive")
        if not self.rho_growth > 1.0:
            raise ContractError("rho_growth must exceed 1")
        if self.max_outer < 1 or self.max_inner < 1 or self.dykstra_iters < 1:
            raise ContractError("iteration limits must be >= 1")


@dataclass
class AlmState:
    """Multipliers and penalty weights, one multiplier per constraint row."""

    nu_agent: np.ndarray       # (n_pairs, H)
    nu_obstacle: np.ndarray    # (n_agents, n_obstacles, H)
    rho_agent: float
    rho_obstacle: float

    @classmethod
    def fresh(cls, n_agents: int, n_obstacles: int, horizon: int, rho: float) -> "AlmState":
        n_pairs = n_agents * (n_agents - 1) // 2
        return cls(
            nu_agent=np.zeros((n_pairs, horizon)),
            nu_obstacle=np.zeros((n_agents, n_obstacles, horizon)),
            rho_agent=float(rho),
            rho_obstacle=float(rho),
        )

    def check(self, n_agents: int, n_obstacles: int, horizon: int, rho_max: float):
        n_pairs = n_agents * (n_agents - 1) // 2
        if self.nu_agent.shape != (n_pairs, horizon):
            raise ContractError(
                f"nu_agent shape {self.nu_agent.shape} does not match "
                f"({n_pairs}, {horizon})"
            )
        if self.nu_obstacle.shape != (n_agents, n_obstacles, horizon):
            raise ContractError(
                f"nu_obstacle shape {self.nu_obstacle.shape} does not match "
                f"({n_agents}, {n_obstacles}, {horizon})"
            )
        if not (0.0 < self.rho_agent <= rho_max and 0.0 < self.rho_obstacle <= rho_max):
            raise ContractError("penalty weights must lie in (0, rho_max]")


@dataclass(frozen=True)
class AlmDiagnostics:
    converged: bool
    outer_iters: int
    inner_iters: int
    max_residual: float
    distance: float
    wall_ms: float
    residual_trace: tuple
    rho_trace: tuple
    state: AlmState = field(repr=False, default=None)


def _endpoint_reach_check(scenario: Scenario, spec: ConstraintSpec, horizon: int):
    # A straight line at top speed must be able to cover each start-goal gap.
    budget = (horizon - 1) * spec.v_max_step
    span = np.linalg.norm(scenario.goals - scenario.starts, axis=1)
    slack = 1e-12 * max(1.0, budget)
    if np.any(span > budget + slack):
        i = int(np.argmax(span - budget))
        raise InfeasibleError(
            f"agent {i} must cover {span[i]:.6g} but {horizon - 1} steps at "
            f"v_max*dt = {spec.v_max_step:.6g} reach only {budget:.6g}"
        )


def project_convex(traj: TrajectorySet, scenario: Scenario, spec: ConstraintSpec,
                   cfg: ProjectionConfig | None = None) -> TrajectorySet:
    """Exact projection onto the endpoint + velocity constraint set."""
    cfg = cfg or ProjectionConfig()
    _endpoint_reach_check(scenario, spec, traj.horizon)
    p = np.ascontiguousarray(traj.positions, dtype=np.float64).copy()
    p[:, 0, :] = scenario.starts
    p[:, -1, :] = scenario.goals
    _kernels.dykstra_velocity(p, spec.v_max_step, cfg.dykstra_iters, 1e-13)
    return TrajectorySet(p)


def _constraint_arrays(scenario: Scenario, spec: ConstraintSpec):
    centers = np.ascontiguousarray(scenario.obstacle_centers(), dtype=np.float64)
    r2o = np.ascontiguousarray(spec.r_obstacle.astype(np.float64) ** 2)
    return centers, r2o


def _step_size(scenario: Scenario, spec: ConstraintSpec, state: AlmState,
               obj_curv: float = 2.0) -> float:
    # Stability bound for the projected gradient step: the smooth objective
    # contributes curvature obj_curv (2 for the proximity term); each active
    # hinge contributes up to 8*rho*R^2 + 2*nu per incident point.  L_hat
    # estimates the squared Jacobian row norms per point.
    na = scenario.n_agents
    l_hat = 2.0 * (spec.r_agent**2 * max(na - 1, 0)
                   + float(np.sum(spec.r_obstacle**2)))
    nu_curv = 0.0
    if state.nu_agent.size:
        nu_curv += 4.0 * float(state.nu_agent.max()) * max(na - 1, 0)
    if state.nu_obstacle.size:
        nu_curv += 4.0 * float(state.nu_obstacle.max()) * scenario.n_obstacles
    rho = max(state.rho_agent, state.rho_obstacle)
    return 1.0 / (obj_curv + 4.0 * rho * l_hat + nu_curv)


def _max_hinge(traj_p: np.ndarray, traj: TrajectorySet, scenario: Scenario,
               spec: ConstraintSpec):
    agent_res, obstacle_res = collision_residuals(
        TrajectorySet(traj_p), scenario, spec)
    return agent_res, obstacle_res, float(max(agent_res.max(initial=0.0),
                                              obstacle_res.max(initial=0.0)))


def _signed_gaps(p: np.ndarray, scenario: Scenario, spec: ConstraintSpec):
    """Signed constraint gaps R^2 - d^2 (negative when strictly separated)."""
    na, H = p.shape[0], p.shape[1]
    ii, jj = np.triu_indices(na, k=1)
    if ii.size:
        diff = p[ii] - p[jj]
        gap_a = spec.r_agent**2 - np.einsum("phk,phk->ph", diff, diff)
    else:
        gap_a = np.zeros((0, H))
    if scenario.n_obstacles:
        d = p[:, None, :, :] - scenario.obstacle_centers()[None, :, None, :]
        gap_o = spec.r_obstacle[None, :, None] ** 2 - np.einsum(
            "aohk,aohk->aoh", d, d)
    else:
        gap_o = np.zeros((na, 0, H))
    return gap_a, gap_o


def alm_project(traj: TrajectorySet, scenario: Scenario, spec: ConstraintSpec,
                cfg: ProjectionConfig | None = None,
                state: AlmState | None = None):
    """Project onto the full feasible set by the method of multipliers.

    Returns ``(trajectory, diagnostics)``.  When ``max_outer`` is exhausted
    the best iterate is returned with ``diagnostics.converged = False``;
    callers decide whether that is fatal.  Passing ``state`` warm-starts the
    multipliers (and returns the final ones in the diagnostics).
    """
    cfg = cfg or ProjectionConfig()
    t0 = time.perf_counter()
    x_in = np.ascontiguousarray(traj.positions, dtype=np.float64)
    projected = project_convex(traj, scenario, spec, cfg)
    p = np.ascontiguousarray(projected.positions).copy()

    na, H = traj.n_agents, traj.horizon
    no = scenario.n_obstacles
    if state is None:
        state = AlmState.fresh(na, no, H, cfg.rho_init)
    else:
        state.check(na, no, H, cfg.rho_max)
        state = AlmState(state.nu_agent.copy(), state.nu_obstacle.copy(),
                         state.rho_agent, state.rho_obstacle)

    centers, r2o = _constraint_arrays(scenario, spec)
    _, _, max_res = _max_hinge(p, traj, scenario, spec)
    if max_res <= cfg.outer_tol:
        wall = (time.perf_counter() - t0) * 1e3
        dist = float(np.linalg.norm(p - x_in))
        diag = AlmDiagnostics(True, 0, 0, max_res, dist, wall,
                              (max_res,), (state.rho_agent,), state)
        return TrajectorySet(p), diag

    starts = np.ascontiguousarray(scenario.starts)
    goals = np.ascontiguousarray(scenario.goals)
    residual_trace = [max_res]
    rho_trace = [state.rho_agent]
    inner_total = 0
    best_p, best_res = p.copy(), max_res
    prev_res = max_res
    converged = False

    for _ in range(cfg.max_outer):
        step = _step_size(scenario, spec, state)
        inner_total += _kernels.penalized_inner(
            p, x_in, starts, goals, spec.r_agent**2,
            state.nu_agent, state.rho_agent, centers, r2o,
            state.nu_obstacle, state.rho_obstacle,
            spec.v_max_step, step, cfg.max_inner, cfg.inner_tol,
            cfg.dykstra_iters, 1e-13)

        agent_res, obstacle_res, max_res = _max_hinge(p, traj, scenario, spec)
        residual_trace.append(max_res)
        if max_res < best_res:
            best_p, best_res = p.copy(), max_res
        if max_res <= cfg.outer_tol:
            converged = True
            break

        # Dual ascent on the signed gaps; the clamp at zero is what lets an
        # overshot multiplier relax once its constraint goes slack.
        gap_a, gap_o = _signed_gaps(p, scenario, spec)
        state.nu_agent = np.maximum(0.0, state.nu_agent
                                    + 2.0 * state.rho_agent * gap_a)
        state.nu_obstacle = np.maximum(0.0, state.nu_obstacle
                                       + 2.0 * state.rho_obstacle * gap_o)
        if max_res > 0.25 * prev_res:
            state.rho_agent = min(cfg.rho_max, cfg.rho_growth * state.rho_agent)
            state.rho_obstacle = min(cfg.rho_max, cfg.rho_growth * state.rho_obstacle)
        rho_trace.append(state.rho_agent)
        prev_res = max_res

    out = p if converged else best_p
    wall = (time.perf_counter() - t0) * 1e3
    dist = float(np.linalg.norm(out - x_in))
    diag = AlmDiagnostics(converged, len(residual_trace) - 1, inner_total,
                          min(max_res, best_res), dist, wall,
                          tuple(residual_trace), tuple(rho_trace), state)
    return TrajectorySet(out), diag


def oracle_project(traj: TrajectorySet, scenario: Scenario, spec: ConstraintSpec,
                   restarts: int = 8) -> TrajectorySet:
    """Reference projection: jittered multi-start penalty continuation.

    Minimizes ``|p - input|^2 + rho*|H|^2`` over the convex set while rho
    doubles from 1 to 1e8, from ``restarts`` seeded initializations, and
    returns the feasible result closest to the input.  Exhaustive rather
    than clever; intended for small instances and baseline timing.
    """
    if restarts < 1:
        raise ContractError("restarts must be >= 1")
    cfg = ProjectionConfig()
    x_in = np.ascontiguousarray(traj.positions, dtype=np.float64)
    na, H = traj.n_agents, traj.horizon
    centers, r2o = _constraint_arrays(scenario, spec)
    starts = np.ascontiguousarray(scenario.starts)
    goals = np.ascontiguousarray(scenario.goals)
    zero_nu_a = np.zeros((na * (na - 1) // 2, H))
    zero_nu_o = np.zeros((na, scenario.n_obstacles, H))
    state = AlmState.fresh(na, scenario.n_obstacles, H, 1.0)

    best = None
    best_dist = np.inf
    best_res = np.inf
    for k in range(restarts):
        rng = np.random.Generator(np.random.PCG64(0x0D15EA5E + k))
        jitter = 0.0 if k == 0 else rng.normal(0.0, 0.05, size=x_in.shape)
        start_traj = TrajectorySet(x_in + jitter)
        p = np.ascontiguousarray(
            project_convex(start_traj, scenario, spec, cfg).positions).copy()

        rho = 1.0
        while rho <= 1e8:
            state.rho_agent = state.rho_obstacle = rho
            step = _step_size(scenario, spec, state)
            _kernels.penalized_inner(
                p, x_in, starts, goals, spec.r_agent**2,
                zero_nu_a, rho, centers, r2o, zero_nu_o, rho,
                spec.v_max_step, step, 200, cfg.inner_tol,
                cfg.dykstra_iters, 1e-13)
            if _kernels.max_hinge(p, spec.r_agent**2, centers, r2o) <= 1e-8:
                break
            rho *= 2.0

        # The step size shrinks like 1/rho, so the last ladder rungs can be
        # movement-starved; keep polishing at the final rho until the target
        # residual is met or the extra budget runs out.
        rho = min(rho, 1e8)
        for _ in range(64):
            if _kernels.max_hinge(p, spec.r_agent**2, centers, r2o) <= 0.5 * cfg.outer_tol:
                break
            state.rho_agent = state.rho_obstacle = rho
            step = _step_size(scenario, spec, state)
            _kernels.penalized_inner(
                p, x_in, starts, goals, spec.r_agent**2,
                zero_nu_a, rho, centers, r2o, zero_nu_o, rho,
                spec.v_max_step, step, 250, cfg.inner_tol,
                cfg.dykstra_iters, 1e-13)

        _, _, max_res = _max_hinge(p, traj, scenario, spec)
        best_res = min(best_res, max_res)
        if max_res <= cfg.outer_tol:
            dist = float(np.linalg.norm(p - x_in))
            if dist < best_dist:
                best, best_dist = p.copy(), dist

    if best is None:
        raise OracleFailure(
            f"no feasible point in {restarts} restarts; best hinge residual "
            f"{best_res:.3e} exceeds {cfg.outer_tol:.1e}"
        )
    return TrajectorySet(best)


def guidance_gradient(traj: TrajectorySet, scenario: Scenario,
                      spec: ConstraintSpec, weight: float) -> np.ndarray:
    """Descent direction ``-weight * grad(sum of squared constraint residuals)``.

    Residuals are the collision hinges of both families plus the per-step
    velocity excess.  Returned flat, matching ``TrajectorySet.flat()``.
    """
    if weight < 0.0:
        raise ContractError("guidance weight must be >= 0")
    p = np.ascontiguousarray(traj.positions, dtype=np.float64)
    na, H = traj.n_agents, traj.horizon
    centers, r2o = _constraint_arrays(scenario, spec)
    grad = np.zeros_like(p)
    zero_nu_a = np.zeros((na * (na - 1) // 2, H))
    zero_nu_o = np.zeros((na, scenario.n_obstacles, H))
    _kernels.add_pair_hinge_grad(p, spec.r_agent**2, zero_nu_a, 1.0, grad)
    _kernels.add_obstacle_hinge_grad(p, centers, r2o, zero_nu_o, 1.0, grad)
    _kernels.add_velocity_excess_grad(p, spec.v_max_step, grad)
    return (-weight * grad).reshape(-1)
