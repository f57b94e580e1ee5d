"""Annealed Langevin samplers over trajectory space.

One chain core serves three generators: the unconstrained sampler (DM), the
penalty-guided sampler (GDM, score plus a weighted constraint-violation
descent direction), and the projected sampler (PDM, which re-projects the
iterate onto the feasible set after inner steps).  Noise levels anneal from
beta_T down to beta_1 with per-level step size gamma_t = beta_t / (2 beta_T)
and M Langevin steps per level.
"""

import hashlib
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import (
    ConstraintSpec,
    ContractError,
    InfeasibleError,
    NoiseSchedule,
    Scenario,
    TrajectorySet,
    is_feasible,
)
from .projection import AlmState, ProjectionConfig, alm_project, guidance_gradient
from .scenario import scenario_to_json
from .score_model import ScoreNetwork, embed_scenario, noise_features


class Method(Enum):
    PDM = "pdm"
    DM = "dm"
    GDM = "gdm"


@dataclass(frozen=True)
class SamplerConfig:
    method: Method
    schedule: NoiseSchedule
    guidance_weight: float = 0.0
    guidance_clip: float = 10.0     # per-coordinate RMS cap on the guidance term
    seed: int = 0
    final_snap: bool = False        # diagnostic projection of DM/GDM output
    project_every: int = 1          # PDM: project after every k-th inner step
    carry_multipliers: bool = False
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)

    def __post_init__(self):
        if not isinstance(self.method, Method):
            raise ContractError(f"method must be a Method, got {self.method!r}")
        if self.guidance_weight < 0.0:
            raise ContractError("guidance weight must be >= 0")
        if self.method is not Method.GDM and self.guidance_weight != 0.0:
            raise ContractError("guidance weight applies to the guided sampler only")
        if not self.guidance_clip > 0.0:
            raise ContractError("guidance clip must be positive (inf disables)")
        if self.project_every < 1:
            raise ContractError("project_every must be >= 1")


@dataclass
class SampleResult:
    trajectory: TrajectorySet | None
    feasible: bool
    method: Method
    seed: int
    wall_ms: float
    proj_wall_ms: float = 0.0
    proj_outer_total: int = 0
    gamma_trace: tuple = ()
    snapped: TrajectorySet | None = None
    snapped_feasible: bool | None = None
    error: str | None = None


def run_chain(score_fn, schedule: NoiseSchedule, n_chains: int, dim: int,
              center: np.ndarray, rng, drift_extra=None, step_hook=None):
    """Annealed Langevin dynamics shared by every sampler.

    ``score_fn(x, t) -> (B, dim)`` evaluates the score for a batch at level
    t; ``drift_extra`` adds a second drift term (guidance); ``step_hook(x,
    t, i)`` may replace the iterate after a step (projection).  Noise is
    drawn before the score so two runs with the same rng consume identical
    noise streams regardless of the drift terms.
    """
    x = center[None, :] + np.sqrt(schedule.betas[-1]) * rng.standard_normal(
        (n_chains, dim))
    for t in range(schedule.n_levels, 0, -1):
        gamma = schedule.gammas[t - 1]
        noise_scale = np.sqrt(2.0 * gamma)
        for i in range(1, schedule.inner_steps + 1):
            z = rng.standard_normal((n_chains, dim))
            g = score_fn(x, t)
            if drift_extra is not None:
                g = g + drift_extra(x, t)
            x = x + gamma * g + noise_scale * z
            if step_hook is not None:
                x = step_hook(x, t, i)
    return x


def _net_score_fn(net: ScoreNetwork, scenario: Scenario, schedule: NoiseSchedule):
    cond = embed_scenario(scenario, net.k_obstacles)

    def fn(x: np.ndarray, t: int) -> np.ndarray:
        b = x.shape[0]
        feats = noise_features(schedule, t)
        rows = np.concatenate(
            [x, np.tile(cond, (b, 1)), np.tile(feats, (b, 1))], axis=1)
        return net.forward_batch(rows)

    return fn


def sample(net: ScoreNetwork, scenario: Scenario, spec: ConstraintSpec,
           cfg: SamplerConfig) -> SampleResult:
    """Generate one trajectory set for the scenario with the configured method."""
    if net.n_agents != scenario.n_agents:
        raise ContractError(
            f"network built for {net.n_agents} agents, scenario has "
            f"{scenario.n_agents}")
    na, H = net.n_agents, net.horizon
    dim = na * H * 2
    sched = cfg.schedule
    t_start = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    center = np.tile(scenario.world_bounds.center, na * H)
    score_fn = _net_score_fn(net, scenario, sched)

    drift_extra = None
    if cfg.method is Method.GDM and cfg.guidance_weight > 0.0:
        # The velocity-excess part of the penalty gradient grows linearly
        # with the iterate, and early iterates are noise-dominated; an
        # uncapped guidance term then feeds back through the step and
        # diverges.  Capping its RMS keeps the drift comparable to the
        # score while leaving late, nearly feasible iterates untouched.
        cap = cfg.guidance_clip * np.sqrt(dim)

        def drift_extra(x, t):
            out = np.empty_like(x)
            for r in range(x.shape[0]):
                g = guidance_gradient(
                    TrajectorySet(x[r].reshape(na, H, 2)), scenario, spec,
                    cfg.guidance_weight)
                norm = float(np.linalg.norm(g))
                if norm > cap:
                    g = g * (cap / norm)
                out[r] = g
            return out

    proj_stats = {"wall": 0.0, "outers": 0, "converged": True,
                  "state": None}
    step_hook = None
    if cfg.method is Method.PDM:
        def step_hook(x, t, i):
            # project at the configured cadence and always on the very last
            # inner step, whose result is the returned trajectory
            last = t == 1 and i == sched.inner_steps
            if not (last or i % cfg.project_every == 0):
                return x
            out = np.empty_like(x)
            for r in range(x.shape[0]):
                traj, diag = alm_project(
                    TrajectorySet(x[r].reshape(na, H, 2)), scenario, spec,
                    cfg.projection,
                    state=proj_stats["state"] if cfg.carry_multipliers else None)
                out[r] = traj.positions.reshape(-1)
                proj_stats["wall"] += diag.wall_ms
                proj_stats["outers"] += diag.outer_iters
                if cfg.carry_multipliers:
                    proj_stats["state"] = diag.state
                if last:
                    proj_stats["converged"] = diag.converged
            return out

    try:
        x = run_chain(score_fn, sched, 1, dim, center, rng,
                      drift_extra=drift_extra, step_hook=step_hook)
        traj = TrajectorySet(x[0].reshape(na, H, 2))
    except (InfeasibleError, ContractError) as e:
        return SampleResult(trajectory=None, feasible=False, method=cfg.method,
                            seed=cfg.seed,
                            wall_ms=(time.perf_counter() - t_start) * 1e3,
                            error=str(e))

    if cfg.method is Method.PDM:
        feasible = proj_stats["converged"] and is_feasible(
            traj, scenario, spec, cfg.projection.outer_tol + 1e-9)
    else:
        feasible = is_feasible(traj, scenario, spec)

    snapped = None
    snapped_feasible = None
    if cfg.final_snap and cfg.method is not Method.PDM:
        snapped, sdiag = alm_project(traj, scenario, spec, cfg.projection)
        snapped_feasible = sdiag.converged

    return SampleResult(
        trajectory=traj, feasible=feasible, method=cfg.method, seed=cfg.seed,
        wall_ms=(time.perf_counter() - t_start) * 1e3,
        proj_wall_ms=proj_stats["wall"], proj_outer_total=proj_stats["outers"],
        gamma_trace=tuple(sched.gammas), snapped=snapped,
        snapped_feasible=snapped_feasible)


def derive_seed(master_seed: int, scenario: Scenario) -> int:
    """Per-element seed tied to scenario content, not list position.

    Reordering a batch therefore reorders the outputs without changing any
    of them.
    """
    payload = master_seed.to_bytes(8, "little", signed=False) + scenario_to_json(
        scenario).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def sample_batch(net: ScoreNetwork, scenarios, spec: ConstraintSpec | None,
                 cfg: SamplerConfig) -> list:
    """Run ``sample`` per scenario with content-derived seeds.

    ``spec=None`` derives the constraint constants per scenario (needed when
    obstacle counts vary across the batch).  Per-element failures are
    captured in the corresponding SampleResult; the rest of the batch still
    runs.
    """
    shapes = {s.n_agents for s in scenarios}
    if len(shapes) > 1:
        raise ContractError(f"batch mixes agent counts: {sorted(shapes)}")
    results = []
    for s in scenarios:
        seed = derive_seed(cfg.seed, s)
        element_cfg = SamplerConfig(
            method=cfg.method, schedule=cfg.schedule,
            guidance_weight=cfg.guidance_weight,
            guidance_clip=cfg.guidance_clip, seed=seed,
            final_snap=cfg.final_snap, project_every=cfg.project_every,
            carry_multipliers=cfg.carry_multipliers, projection=cfg.projection)
        element_spec = ConstraintSpec.from_scenario(s) if spec is None else spec
        try:
            results.append(sample(net, s, element_spec, element_cfg))
        except ContractError as e:
            results.append(SampleResult(
                trajectory=None, feasible=False, method=cfg.method,
                seed=seed, wall_ms=0.0, error=str(e)))
    return results
