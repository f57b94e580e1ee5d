"""Metrics, experiment orchestration, and result emission.

The two headline metrics are the percentage of violated constraint
instances and the total path length.  ``run_experiment`` draws held-out
scenarios per family, samples each with every requested method, and
collects per-instance records into an EvalReport that serializes to CSV
with byte-stable formatting.  ``plot`` renders a trajectory set to a
self-contained SVG with fixed numeric formatting, so identical inputs give
identical bytes.
"""

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    ConstraintSpec,
    ContractError,
    NoiseSchedule,
    Scenario,
    TrajectorySet,
    collision_residuals,
    convex_residuals,
    max_violation,
)
from .projection import ProjectionConfig
from .samplers import Method, SamplerConfig, derive_seed, sample
from .scenario import ScenarioFamily, generate
from .score_model import ScoreNetwork

# Constraint instances enumerated by the violation rate, echoed in the CSV
# header so reported percentages are self-describing.
ENUMERATION_NOTE = (
    "constraint instances per trajectory = agent_pairs*H collision"
    " + agents*obstacles*H clearance + agents*(H-1) velocity steps"
    " + 2*agents endpoints; violated means residual > tolerance"
)

CSV_COLUMNS = ("method", "family", "seed", "violation_rate",
               "path_length_sum", "path_length_mean", "feasible",
               "max_residual", "proj_wall_ms")


def constraint_instance_count(scenario: Scenario, horizon: int) -> int:
    """Number of discrete constraint instances the violation rate counts."""
    na, no = scenario.n_agents, scenario.n_obstacles
    pairs = na * (na - 1) // 2
    return pairs * horizon + na * no * horizon + na * (horizon - 1) + 2 * na


def violation_rate(traj: TrajectorySet, scenario: Scenario,
                   spec: ConstraintSpec) -> float:
    """Percentage of constraint instances with residual above tolerance."""
    agent_res, obstacle_res = collision_residuals(traj, scenario, spec)
    endpoint_err, velocity_excess = convex_residuals(traj, scenario, spec)
    tol = spec.tolerance
    violated = (int((agent_res > tol).sum()) + int((obstacle_res > tol).sum())
                + int((velocity_excess > tol).sum())
                + int((endpoint_err > tol).sum()))
    total = (agent_res.size + obstacle_res.size + velocity_excess.size
             + endpoint_err.size)
    return 100.0 * violated / total


def path_length(traj: TrajectorySet) -> float:
    """Total distance traveled: sum of segment lengths over all agents."""
    steps = np.linalg.norm(np.diff(traj.positions, axis=1), axis=2)
    return float(steps.sum())


@dataclass(frozen=True)
class InstanceRecord:
    """One sampled trajectory's metrics; mirrors one CSV row."""

    method: str
    family: str
    seed: int
    violation_rate: float
    path_length_sum: float
    path_length_mean: float
    feasible: bool
    max_residual: float
    proj_wall_ms: float

    def __post_init__(self):
        if not 0.0 <= self.violation_rate <= 100.0:
            raise ContractError(
                f"violation_rate must lie in [0, 100], got {self.violation_rate}")


@dataclass(frozen=True)
class EvalReport:
    """Per-instance records plus the experiment's provenance."""

    records: tuple
    master_seed: int
    instances_per_family: int

    def summary(self) -> dict:
        """Per (method, family): means, standard deviations, feasible share."""
        out = {}
        for key in sorted({(r.method, r.family) for r in self.records}):
            rows = [r for r in self.records if (r.method, r.family) == key]
            viol = np.array([r.violation_rate for r in rows])
            plen = np.array([r.path_length_sum for r in rows])
            out[key] = {
                "count": len(rows),
                "violation_rate_mean": float(viol.mean()),
                "violation_rate_std": float(viol.std()),
                "path_length_mean": float(plen.mean()),
                "path_length_std": float(plen.std()),
                "feasible_fraction": sum(r.feasible for r in rows) / len(rows),
            }
        return out

    def to_csv(self) -> str:
        lines = ["# " + ENUMERATION_NOTE, ",".join(CSV_COLUMNS)]
        for r in self.records:
            lines.append(",".join([
                r.method, r.family, str(r.seed), repr(r.violation_rate),
                repr(r.path_length_sum), repr(r.path_length_mean),
                str(r.feasible), repr(r.max_residual), repr(r.proj_wall_ms),
            ]))
        return "\n".join(lines) + "\n"


def write_csv(report: EvalReport, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(report.to_csv())
    return path


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings shared by every sample an experiment draws."""

    schedule: NoiseSchedule
    master_seed: int = 0
    guidance_weight: float = 50.0   # applied to the guided method only
    guidance_clip: float = 10.0
    project_every: int = 1
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    timing: bool = False            # real proj_wall_ms readings break byte determinism

    def __post_init__(self):
        if self.guidance_weight < 0.0:
            raise ContractError("guidance weight must be >= 0")


def _eval_seed(master_seed: int, family: ScenarioFamily, index: int) -> int:
    # Domain-separated from the dataset builder's seed derivation, so
    # evaluation scenarios never replay training draws.
    payload = (b"eval-instance" + int(master_seed).to_bytes(8, "little")
               + family.kind.value.encode()
               + int(family.seed).to_bytes(8, "little")
               + int(index).to_bytes(4, "little"))
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def run_experiment(methods, families, instances_per_family: int,
                   net: ScoreNetwork, config: ExperimentConfig) -> EvalReport:
    """Sample every (method, family, instance) cell and collect metrics.

    Scenario seeds derive from a hash domain disjoint from the dataset
    builder's, so evaluation instances are held out from training by
    construction.  All methods sample the same instance with the same seed,
    making method comparisons paired.  A sample that fails outright (no
    trajectory) is recorded as fully violated rather than dropped.
    """
    if instances_per_family < 1:
        raise ContractError("instances_per_family must be >= 1")
    if not methods:
        raise ContractError("methods must be non-empty")
    methods = [m if isinstance(m, Method) else Method(m) for m in methods]
    if not families:
        raise ContractError("families must be non-empty")
    for fam in families:
        if not isinstance(fam, ScenarioFamily):
            raise ContractError(f"not a ScenarioFamily: {fam!r}")
        if fam.params["n_agents"] != net.n_agents:
            raise ContractError(
                f"network built for {net.n_agents} agents but family "
                f"{fam.kind.value} draws {fam.params['n_agents']}")

    records = []
    for fam in families:
        for i in range(instances_per_family):
            scen = generate(ScenarioFamily(
                fam.kind, _eval_seed(config.master_seed, fam, i),
                dict(fam.params)))
            spec = ConstraintSpec.from_scenario(scen)
            seed = derive_seed(config.master_seed, scen)
            for m in methods:
                cfg = SamplerConfig(
                    method=m, schedule=config.schedule,
                    guidance_weight=(config.guidance_weight
                                     if m is Method.GDM else 0.0),
                    guidance_clip=config.guidance_clip,
                    seed=seed, project_every=config.project_every,
                    projection=config.projection)
                result = sample(net, scen, spec, cfg)
                if result.trajectory is None:
                    records.append(InstanceRecord(
                        m.value, fam.kind.value, seed, 100.0, 0.0, 0.0,
                        False, float("inf"), 0.0))
                    continue
                traj = result.trajectory
                plen = path_length(traj)
                records.append(InstanceRecord(
                    m.value, fam.kind.value, seed,
                    violation_rate(traj, scen, spec),
                    plen, plen / scen.n_agents,
                    result.feasible,
                    max_violation(traj, scen, spec),
                    result.proj_wall_ms if config.timing else 0.0))
    return EvalReport(tuple(records), config.master_seed, instances_per_family)


# ---------------------------------------------------------------------------
# SVG rendering.  Hand-rolled on purpose: a fixed header, fixed numeric
# formatting, and no external state make the byte output reproducible.

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78",
            "#98df8a", "#ff9896", "#c5b0d5", "#c49c94")

_SVG_SIZE = 720.0


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def plot(traj: TrajectorySet, scenario: Scenario, path) -> Path:
    """Write an SVG of the scene: obstacles filled gray, starts as dashed
    outlines, goals as solid disks, one colored polyline per agent."""
    if traj.n_agents != scenario.n_agents:
        raise ContractError(
            f"trajectory has {traj.n_agents} agents, scenario has "
            f"{scenario.n_agents}")
    p = traj.positions
    lo = scenario.world_bounds.lo.astype(float).copy()
    hi = scenario.world_bounds.hi.astype(float).copy()
    for ob in scenario.obstacles:
        lo = np.minimum(lo, ob.center - ob.radius)
        hi = np.maximum(hi, ob.center + ob.radius)
    lo = np.minimum(lo, p.reshape(-1, 2).min(axis=0))
    hi = np.maximum(hi, p.reshape(-1, 2).max(axis=0))
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    pad = 0.05 * span
    lo -= pad
    span += 2.0 * pad
    scale = _SVG_SIZE / span

    def X(x):
        return (x - lo[0]) * scale

    def Y(y):
        # world y grows upward, SVG y grows downward
        return _SVG_SIZE - (y - lo[1]) * scale

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(_SVG_SIZE)}" '
        f'height="{_fmt(_SVG_SIZE)}" viewBox="0 0 {_fmt(_SVG_SIZE)} '
        f'{_fmt(_SVG_SIZE)}">',
        f'<rect x="0" y="0" width="{_fmt(_SVG_SIZE)}" '
        f'height="{_fmt(_SVG_SIZE)}" fill="#ffffff"/>',
        f'<rect x="{_fmt(X(scenario.world_bounds.lo[0]))}" '
        f'y="{_fmt(Y(scenario.world_bounds.hi[1]))}" '
        f'width="{_fmt((scenario.world_bounds.hi[0] - scenario.world_bounds.lo[0]) * scale)}" '
        f'height="{_fmt((scenario.world_bounds.hi[1] - scenario.world_bounds.lo[1]) * scale)}" '
        'fill="none" stroke="#cccccc" stroke-width="1.0"/>',
    ]
    for ob in scenario.obstacles:
        out.append(
            f'<circle cx="{_fmt(X(ob.center[0]))}" cy="{_fmt(Y(ob.center[1]))}" '
            f'r="{_fmt(ob.radius * scale)}" fill="#9aa0a6"/>')
    r_px = scenario.agent_radius * scale
    for a in range(traj.n_agents):
        color = _PALETTE[a % len(_PALETTE)]
        pts = " ".join(f"{_fmt(X(x))},{_fmt(Y(y))}" for x, y in p[a])
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   'stroke-width="2.0"/>')
        sx, sy = scenario.starts[a]
        gx, gy = scenario.goals[a]
        out.append(
            f'<circle cx="{_fmt(X(sx))}" cy="{_fmt(Y(sy))}" r="{_fmt(r_px)}" '
            f'fill="none" stroke="{color}" stroke-width="1.5" '
            'stroke-dasharray="4 3"/>')
        out.append(
            f'<circle cx="{_fmt(X(gx))}" cy="{_fmt(Y(gy))}" r="{_fmt(r_px)}" '
            f'fill="{color}"/>')
    out.append("</svg>")
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
    return path
