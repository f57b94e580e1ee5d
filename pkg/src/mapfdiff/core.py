"""Domain types and constraint-residual arithmetic shared by every module.

The joint decision variable is a set of 2-D trajectories, one per agent,
discretized over a fixed horizon.  Constraints come in two families:

* convex  -- endpoint equalities and per-step velocity limits,
* nonconvex -- minimum-separation constraints between agents and between
  agents and circular obstacles, kept in squared-distance hinge form
  ``max(0, R^2 - dist^2)`` so a residual of zero is exactly feasibility.

All types are immutable value objects; the residual operations are pure
functions of their inputs.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ContractError(ValueError):
    """A caller violated a documented precondition or type invariant."""


class InfeasibleError(RuntimeError):
    """The problem instance admits no feasible point (detected a priori)."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle; the default world is the unit square."""

    lo: np.ndarray = field(default_factory=lambda: _readonly([0.0, 0.0]))
    hi: np.ndarray = field(default_factory=lambda: _readonly([1.0, 1.0]))

    def __post_init__(self):
        object.__setattr__(self, "lo", _readonly(self.lo))
        object.__setattr__(self, "hi", _readonly(self.hi))
        if self.lo.shape != (2,) or self.hi.shape != (2,):
            raise ContractError("world bounds must be 2-D points")
        if not np.all(self.hi > self.lo):
            raise ContractError("world bounds must have positive extent")

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.lo) & (p <= self.hi), axis=-1)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class Obstacle:
    """Static circular obstacle."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _readonly(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if self.center.shape != (2,):
            raise ContractError("obstacle center must be a 2-D point")
        if not np.isfinite(self.center).all():
            raise ContractError("obstacle center must be finite")
        if not (self.radius > 0.0 and np.isfinite(self.radius)):
            raise ContractError("obstacle radius must be positive")


@dataclass(frozen=True)
class TrajectorySet:
    """Joint trajectories for all agents, shape (n_agents, horizon, 2)."""

    positions: np.ndarray

    def __post_init__(self):
        p = _readonly(self.positions)
        if p.ndim != 3 or p.shape[2] != 2:
            raise ContractError(
                f"positions must have shape (n_agents, horizon, 2), got {p.shape}"
            )
        if p.shape[0] < 1 or p.shape[1] < 2:
            raise ContractError("need at least one agent and a horizon of 2")
        if not np.isfinite(p).all():
            raise ContractError("trajectory positions must be finite")
        object.__setattr__(self, "positions", p)

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def horizon(self) -> int:
        return self.positions.shape[1]

    def flat(self) -> np.ndarray:
        """Row-major flattening (agent, then timestep, then x/y)."""
        return self.positions.reshape(-1).copy()

    @classmethod
    def from_flat(cls, vec: np.ndarray, n_agents: int, horizon: int) -> "TrajectorySet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != n_agents * horizon * 2:
            raise ContractError(
                f"flat vector of length {vec.size} does not match "
                f"({n_agents}, {horizon}, 2)"
            )
        return cls(vec.reshape(n_agents, horizon, 2))


@dataclass(frozen=True)
class Scenario:
    """A problem instance: endpoints, obstacles, radii and kinematic limits."""

    starts: np.ndarray
    goals: np.ndarray
    obstacles: tuple
    agent_radius: float
    v_max: float
    dt: float = 1.0
    world_bounds: Box = field(default_factory=Box)

    def __post_init__(self):
        starts = _readonly(self.starts)
        goals = _readonly(self.goals)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "goals", goals)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "agent_radius", float(self.agent_radius))
        object.__setattr__(self, "v_max", float(self.v_max))
        object.__setattr__(self, "dt", float(self.dt))

        if starts.ndim != 2 or starts.shape[1] != 2:
            raise ContractError(f"starts must have shape (n_agents, 2), got {starts.shape}")
        if goals.shape != starts.shape:
            raise ContractError(
                f"goals shape {goals.shape} does not match starts shape {starts.shape}"
            )
        if not (np.isfinite(starts).all() and np.isfinite(goals).all()):
            raise ContractError("starts and goals must be finite")
        for name, val in (("agent_radius", self.agent_radius),
                          ("v_max", self.v_max), ("dt", self.dt)):
            if not (val > 0.0 and np.isfinite(val)):
                raise ContractError(f"{name} must be positive")
        for ob in self.obstacles:
            if not isinstance(ob, Obstacle):
                raise ContractError("obstacles must be Obstacle instances")

        if not self.world_bounds.contains(starts).all():
            raise ContractError("all starts must lie inside world_bounds")
        if not self.world_bounds.contains(goals).all():
            raise ContractError("all goals must lie inside world_bounds")

        # Endpoint sanity: the instance must not be infeasible before it begins.
        n = starts.shape[0]
        if n > 1:
            ii, jj = agent_pairs(n)
            min_sep = 2.0 * self.agent_radius - 1e-12
            for pts, label in ((starts, "starts"), (goals, "goals")):
                d = np.linalg.norm(pts[ii] - pts[jj], axis=1)
                if np.any(d < min_sep):
                    k = int(np.argmin(d))
                    raise ContractError(
                        f"{label} of agents {ii[k]} and {jj[k]} are {d[k]:.6g} apart, "
                        f"closer than 2*agent_radius = {2 * self.agent_radius:.6g}"
                    )
        for j, ob in enumerate(self.obstacles):
            clear = ob.radius + self.agent_radius - 1e-12
            for pts, label in ((starts, "start"), (goals, "goal")):
                d = np.linalg.norm(pts - ob.center, axis=1)
                if np.any(d < clear):
                    i = int(np.argmin(d))
                    raise ContractError(
                        f"{label} of agent {i} lies inside obstacle {j} "
                        f"inflated by agent_radius"
                    )

    @property
    def n_agents(self) -> int:
        return self.starts.shape[0]

    @property
    def n_obstacles(self) -> int:
        return len(self.obstacles)

    def obstacle_centers(self) -> np.ndarray:
        if not self.obstacles:
            return np.zeros((0, 2))
        return np.array([ob.center for ob in self.obstacles])

    def obstacle_radii(self) -> np.ndarray:
        return np.array([ob.radius for ob in self.obstacles])


@dataclass(frozen=True)
class ConstraintSpec:
    """Constraint constants derived from a scenario.

    ``r_agent`` is the minimum distance between agent centers, ``r_obstacle``
    the per-obstacle minimum distance between an agent center and the obstacle
    center, and ``v_max_step`` the maximum displacement per timestep.
    ``tolerance`` is the slack used when verifying feasibility.
    """

    r_agent: float
    r_obstacle: np.ndarray
    v_max_step: float
    tolerance: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "r_obstacle", _readonly(self.r_obstacle))
        for name, val in (("r_agent", self.r_agent),
                          ("v_max_step", self.v_max_step),
                          ("tolerance", self.tolerance)):
            if not (float(val) > 0.0):
                raise ContractError(f"{name} must be positive")
        if self.r_obstacle.ndim != 1 or np.any(self.r_obstacle <= 0.0):
            raise ContractError("r_obstacle must be a vector of positive radii")

    @classmethod
    def from_scenario(cls, scenario: Scenario, tolerance: float = 1e-4) -> "ConstraintSpec":
        radii = scenario.agent_radius + scenario.obstacle_radii()
        return cls(
            r_agent=2.0 * scenario.agent_radius,
            r_obstacle=radii,
            v_max_step=scenario.v_max * scenario.dt,
            tolerance=tolerance,
        )


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule for the diffusion process plus sampler loop counts.

    ``betas`` must be strictly increasing with ``betas[-1] <= 1``.  The
    per-level Langevin step size is ``gamma_t = beta_t / (2 * beta_T)``, so the
    top level always steps with gamma = 1/2.
    """

    betas: np.ndarray
    inner_steps: int

    def __post_init__(self):
        b = _readonly(self.betas)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "inner_steps", int(self.inner_steps))
        if b.ndim != 1 or b.size < 1:
            raise ContractError("betas must be a non-empty vector")
        if not (b[0] > 0.0 and b[-1] <= 1.0):
            raise ContractError("betas must satisfy 0 < beta_1 and beta_T <= 1")
        if b.size > 1 and not np.all(np.diff(b) > 0.0):
            raise ContractError("betas must be strictly increasing")
        if self.inner_steps < 1:
            raise ContractError("inner_steps must be >= 1")

    @property
    def n_levels(self) -> int:
        return self.betas.size

    @property
    def gammas(self) -> np.ndarray:
        return self.betas / (2.0 * self.betas[-1])


def make_schedule(beta_min: float, beta_max: float, n_levels: int, inner_steps: int) -> NoiseSchedule:
    """Geometric variance schedule between ``beta_min`` and ``beta_max``."""
    if not (0.0 < beta_min < beta_max <= 1.0):
        raise ContractError("need 0 < beta_min < beta_max <= 1")
    if n_levels < 2:
        raise ContractError("need at least two noise levels")
    if inner_steps < 1:
        raise ContractError("inner_steps must be >= 1")
    betas = np.geomspace(beta_min, beta_max, n_levels)
    # geomspace can miss the endpoints in the last ulp; pin them exactly
    betas[0], betas[-1] = beta_min, beta_max
    return NoiseSchedule(betas=betas, inner_steps=inner_steps)


def agent_pairs(n_agents: int):
    """Index arrays (i, j) for all unordered agent pairs i < j, row-major."""
    return np.triu_indices(n_agents, k=1)


def _check_shapes(traj: TrajectorySet, scenario: Scenario, spec: ConstraintSpec):
    if traj.n_agents != scenario.n_agents:
        raise ContractError(
            f"trajectory has {traj.n_agents} agents but scenario has {scenario.n_agents}"
        )
    if spec.r_obstacle.size != scenario.n_obstacles:
        raise ContractError(
            f"spec carries {spec.r_obstacle.size} obstacle radii but scenario "
            f"has {scenario.n_obstacles} obstacles"
        )


def collision_residuals(traj: TrajectorySet, scenario: Scenario, spec: ConstraintSpec):
    """Hinge residuals of the nonconvex separation constraints.

    Returns ``(agent_residuals, obstacle_residuals)`` with shapes
    ``(n_pairs, H)`` and ``(n_agents, n_obstacles, H)``.  An entry is
    ``max(0, R^2 - dist^2)``: exactly zero iff the constraint instance holds,
    and equal to the equality violation after optimal slack elimination
    otherwise.
    """
    _check_shapes(traj, scenario, spec)
    p = traj.positions
    na, H = traj.n_agents, traj.horizon

    ii, jj = agent_pairs(na)
    if ii.size:
        diff = p[ii] - p[jj]                       # (pairs, H, 2)
        dist2 = np.einsum("phk,phk->ph", diff, diff)
        agent_res = np.maximum(spec.r_agent**2 - dist2, 0.0)
    else:
        agent_res = np.zeros((0, H))

    no = scenario.n_obstacles
    if no:
        centers = scenario.obstacle_centers()      # (no, 2)
        d = p[:, None, :, :] - centers[None, :, None, :]   # (na, no, H, 2)
        dist2 = np.einsum("aohk,aohk->aoh", d, d)
        obstacle_res = np.maximum(spec.r_obstacle[None, :, None] ** 2 - dist2, 0.0)
    else:
        obstacle_res = np.zeros((na, 0, H))

    return agent_res, obstacle_res


def convex_residuals(traj: TrajectorySet, scenario: Scenario, spec: ConstraintSpec):
    """Violations of the convex constraints.

    Returns ``(endpoint_err, velocity_excess)``: ``endpoint_err[i] =
    (|pi_i^1 - b_i|, |pi_i^H - e_i|)`` and ``velocity_excess[i, h] =
    max(0, |pi_i^{h+1} - pi_i^h| - v_max*dt)``.
    """
    _check_shapes(traj, scenario, spec)
    p = traj.positions
    start_err = np.linalg.norm(p[:, 0, :] - scenario.starts, axis=1)
    goal_err = np.linalg.norm(p[:, -1, :] - scenario.goals, axis=1)
    endpoint_err = np.stack([start_err, goal_err], axis=1)

    steps = np.linalg.norm(np.diff(p, axis=1), axis=2)     # (na, H-1)
    velocity_excess = np.maximum(steps - spec.v_max_step, 0.0)
    return endpoint_err, velocity_excess


def max_violation(traj: TrajectorySet, scenario: Scenario, spec: ConstraintSpec) -> float:
    """Largest residual across all four constraint families.

    Collision families are in squared-distance units, endpoint and velocity
    in distance units; each family is compared against the same tolerance
    when checking feasibility, so the max is taken over the raw residuals.
    """
    agent_res, obstacle_res = collision_residuals(traj, scenario, spec)
    endpoint_err, velocity_excess = convex_residuals(traj, scenario, spec)
    parts = [endpoint_err.max(initial=0.0), velocity_excess.max(initial=0.0),
             agent_res.max(initial=0.0), obstacle_res.max(initial=0.0)]
    return float(max(parts))


def is_feasible(traj: TrajectorySet, scenario: Scenario, spec: ConstraintSpec,
                tol: float | None = None) -> bool:
    """True iff every constraint instance holds within ``tol``.

    This is the independent verification route used on solver outputs;
    it shares no code with the projection solver's internal residuals.
    """
    tol = spec.tolerance if tol is None else tol
    return max_violation(traj, scenario, spec) <= tol
