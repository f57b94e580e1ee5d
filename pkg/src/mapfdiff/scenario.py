"""Procedural scenario families and bit-exact persistence.

Three generators cover the experimental regimes: a narrow corridor that two
(or more) agents must pass through in opposite directions, an obstacle-dense
field, and an open field crowded with agents.  Generation is a pure function
of (kind, params, seed); serialization is byte-stable so identical inputs
yield identical files.
"""

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import Box, ContractError, Obstacle, Scenario, TrajectorySet, agent_pairs


class GenerationError(RuntimeError):
    """Rejection sampling exhausted its retry budget."""


class FormatError(ValueError):
    """A persisted file is malformed, truncated, or has the wrong version."""


class FamilyKind(Enum):
    NARROW_CORRIDOR = "NarrowCorridor"
    OBSTACLE_DENSE = "ObstacleDense"
    AGENT_DENSE = "AgentDense"


# Family-specific parameter defaults.  Values merge under user overrides in
# ScenarioFamily; unknown keys are rejected to catch typos.
_DEFAULTS = {
    FamilyKind.NARROW_CORRIDOR: {
        "n_agents": 2,
        "agent_radius": 0.05,
        "v_max": 0.1,
        "dt": 1.0,
        "corridor_width": 0.16,
        "must_coordinate": True,
        "wall_x": 0.5,
        "wall_radius": 0.06,
        "wall_overhang": 0.4,     # how far the walls extend past the world box
        "endpoint_margin": 0.02,
    },
    FamilyKind.OBSTACLE_DENSE: {
        "n_agents": 4,
        "n_obstacles": 20,
        "agent_radius": 0.05,
        "v_max": 0.1,
        "dt": 1.0,
        "obstacle_radius_range": (0.02, 0.045),
        "endpoint_margin": 0.02,
    },
    FamilyKind.AGENT_DENSE: {
        "n_agents": 12,
        "n_obstacles": 0,
        "agent_radius": 0.05,
        "v_max": 0.1,
        "dt": 1.0,
        "obstacle_radius_range": (0.03, 0.06),
        "endpoint_margin": 0.02,
    },
}

RETRY_BUDGET = 10_000


@dataclass(frozen=True)
class ScenarioFamily:
    """A family kind plus parameter overrides and a generation seed."""

    kind: FamilyKind
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.kind, FamilyKind):
            raise ContractError(f"kind must be a FamilyKind, got {self.kind!r}")
        seed = int(self.seed)
        if not (0 <= seed < 2**64):
            raise ContractError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "seed", seed)
        defaults = _DEFAULTS[self.kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ContractError(f"unknown params for {self.kind.value}: {sorted(unknown)}")
        merged = {**defaults, **self.params}
        object.__setattr__(self, "params", merged)
        _validate_params(self.kind, merged)


def _validate_params(kind: FamilyKind, p: dict):
    if p["n_agents"] < 1:
        raise ContractError("n_agents must be >= 1")
    for key in ("agent_radius", "v_max", "dt"):
        if not p[key] > 0.0:
            raise ContractError(f"{key} must be positive")
    if kind is FamilyKind.NARROW_CORRIDOR:
        r = p["agent_radius"]
        w = p["corridor_width"]
        if w < 2.0 * r:
            raise ContractError(
                f"corridor_width {w} is narrower than an agent diameter {2 * r}"
            )
        if p["must_coordinate"] and not w < 4.0 * r:
            raise ContractError(
                "must_coordinate requires corridor_width < 4*agent_radius "
                "(side-by-side passage would fit otherwise)"
            )
        if p["n_agents"] % 2 != 0:
            raise ContractError("corridor scenarios need an even agent count")
        if p["wall_radius"] <= 0.0 or p["wall_overhang"] < 0.0:
            raise ContractError("wall_radius must be positive, wall_overhang >= 0")
    if kind is FamilyKind.AGENT_DENSE and not 8 <= p["n_agents"] <= 16:
        raise ContractError("AgentDense uses between 8 and 16 agents")
    if kind in (FamilyKind.OBSTACLE_DENSE, FamilyKind.AGENT_DENSE):
        lo, hi = p["obstacle_radius_range"]
        if not (0.0 < lo <= hi):
            raise ContractError("obstacle_radius_range must be 0 < lo <= hi")
        if p["n_obstacles"] < 0:
            raise ContractError("n_obstacles must be >= 0")


def _sample_clear_points(rng, count, agent_radius, obstacles, margin, bounds, what):
    """Rejection-sample `count` points pairwise >= 2r apart and obstacle-clear."""
    lo = bounds.lo + agent_radius + margin
    hi = bounds.hi - agent_radius - margin
    centers = np.array([ob.center for ob in obstacles]) if obstacles else None
    radii = np.array([ob.radius for ob in obstacles]) if obstacles else None
    points = []
    for i in range(count):
        for _ in range(RETRY_BUDGET):
            cand = rng.uniform(lo, hi)
            if points:
                d = np.linalg.norm(np.array(points) - cand, axis=1)
                if d.min() < 2.0 * agent_radius + margin:
                    continue
            if centers is not None:
                d = np.linalg.norm(centers - cand, axis=1)
                if np.any(d < radii + agent_radius + margin):
                    continue
            points.append(cand)
            break
        else:
            raise GenerationError(
                f"could not place {what} {i} after {RETRY_BUDGET} attempts"
            )
    return np.array(points)


def _generate_corridor(p: dict, rng) -> Scenario:
    r_wall = p["wall_radius"]
    half_gap = 0.5 * p["corridor_width"] + r_wall
    gap_y = rng.uniform(0.3, 0.7)

    # Walls are rows of overlapping circles along x = wall_x, extending past
    # the world box so the gap is the only sensible crossing.
    centers = []
    y = gap_y - half_gap
    while y > -p["wall_overhang"]:
        centers.append((p["wall_x"], y))
        y -= r_wall
    y = gap_y + half_gap
    while y < 1.0 + p["wall_overhang"]:
        centers.append((p["wall_x"], y))
        y += r_wall
    obstacles = tuple(Obstacle(np.array(c), r_wall) for c in centers)

    # Half the agents start on each side; goals are the swapped starts, so
    # every straight-line pairing crosses the wall.
    n = p["n_agents"]
    half = n // 2
    r = p["agent_radius"]
    margin = p["endpoint_margin"]
    clear = p["wall_x"] - r_wall - r - margin
    left = Box(lo=np.array([0.0, 0.0]), hi=np.array([min(clear, 0.35), 1.0]))
    right = Box(lo=np.array([max(1.0 - clear, 0.65), 0.0]), hi=np.array([1.0, 1.0]))
    left_pts = _sample_clear_points(rng, half, r, (), margin, left, "left endpoint")
    right_pts = _sample_clear_points(rng, half, r, (), margin, right, "right endpoint")

    starts = np.concatenate([left_pts, right_pts])
    goals = np.concatenate([right_pts, left_pts])
    return Scenario(starts=starts, goals=goals, obstacles=obstacles,
                    agent_radius=r, v_max=p["v_max"], dt=p["dt"])


def _place_obstacles(p: dict, rng):
    """Dart-throw obstacle layouts until one fits.

    Every pair of obstacle rims keeps a channel of width >= 2*agent_radius,
    so the inflated obstacles are pairwise disjoint and the free space for an
    agent center stays connected: no endpoint can be sealed off.  Large radii
    are placed first; if a layout jams, the whole layout is resampled.
    """
    n = p["n_obstacles"]
    if n == 0:
        return ()
    r = p["agent_radius"]
    lo_r, hi_r = p["obstacle_radius_range"]
    bounds = Box()
    channel = 2.0 * r + 0.01

    for _ in range(50):
        radii = np.sort(rng.uniform(lo_r, hi_r, size=n))[::-1]
        centers = np.zeros((n, 2))
        placed = 0
        stuck = False
        for j in range(n):
            for _ in range(RETRY_BUDGET):
                cand = rng.uniform(bounds.lo + radii[j], bounds.hi - radii[j])
                d = np.linalg.norm(centers[:placed] - cand, axis=1)
                if np.all(d >= radii[:placed] + radii[j] + channel):
                    centers[placed] = cand
                    placed += 1
                    break
            else:
                stuck = True
                break
        if not stuck:
            return tuple(Obstacle(c, rad) for c, rad in zip(centers, radii))
    raise GenerationError(
        f"could not place obstacle {placed} after {RETRY_BUDGET} attempts "
        f"in any of 50 layouts"
    )


def _generate_field(p: dict, rng) -> Scenario:
    r = p["agent_radius"]
    margin = p["endpoint_margin"]
    bounds = Box()
    obstacles = _place_obstacles(p, rng)

    starts = _sample_clear_points(rng, p["n_agents"], r, obstacles, margin, bounds, "start")
    goals = _sample_clear_points(rng, p["n_agents"], r, obstacles, margin, bounds, "goal")
    return Scenario(starts=starts, goals=goals, obstacles=obstacles,
                    agent_radius=r, v_max=p["v_max"], dt=p["dt"])


def generate(family: ScenarioFamily) -> Scenario:
    """Generate the Scenario determined by (kind, params, seed)."""
    rng = np.random.Generator(np.random.PCG64(family.seed))
    if family.kind is FamilyKind.NARROW_CORRIDOR:
        return _generate_corridor(family.params, rng)
    return _generate_field(family.params, rng)


# ---------------------------------------------------------------------------
# Persistence.  Scenarios go to JSON (schema version 1); trajectories go to a
# flat binary with an eight-byte magic and a shape header.

SCENARIO_VERSION = 1
TRAJECTORY_MAGIC = b"MAPFTRAJ"
TRAJECTORY_VERSION = 1

_SCENARIO_DEFAULTS = {
    "agent_radius": 0.05,
    "v_max": 0.1,
    "dt": 1.0,
    "world_bounds": {"lo": [0.0, 0.0], "hi": [1.0, 1.0]},
    "obstacles": [],
}


def scenario_to_json(s: Scenario) -> str:
    doc = {
        "version": SCENARIO_VERSION,
        "agent_radius": s.agent_radius,
        "v_max": s.v_max,
        "dt": s.dt,
        "world_bounds": {"lo": s.world_bounds.lo.tolist(),
                         "hi": s.world_bounds.hi.tolist()},
        "starts": s.starts.tolist(),
        "goals": s.goals.tolist(),
        "obstacles": [{"center": ob.center.tolist(), "radius": ob.radius}
                      for ob in s.obstacles],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def save_scenario(s: Scenario, path):
    with open(path, "w") as fh:
        fh.write(scenario_to_json(s))


def _require(doc, key, offset_hint):
    if key not in doc:
        raise FormatError(f"missing required field '{key}'{offset_hint}")
    return doc[key]


def scenario_from_json(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON at byte offset {e.pos}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise FormatError("top-level JSON value must be an object")

    version = doc.get("version", SCENARIO_VERSION)
    if version != SCENARIO_VERSION:
        raise FormatError(
            f"unsupported scenario version {version!r}, expected {SCENARIO_VERSION}"
        )

    merged = {**_SCENARIO_DEFAULTS, **doc}
    starts = _require(merged, "starts", "")
    goals = _require(merged, "goals", "")

    obstacles = []
    for j, ob in enumerate(merged["obstacles"]):
        if not isinstance(ob, dict) or "center" not in ob or "radius" not in ob:
            raise FormatError(f"field 'obstacles[{j}]' must have center and radius")
        if not (isinstance(ob["radius"], (int, float)) and ob["radius"] > 0):
            raise FormatError(f"field 'obstacles[{j}].radius' must be positive")
        obstacles.append(Obstacle(np.array(ob["center"], dtype=float), ob["radius"]))

    wb = merged["world_bounds"]
    try:
        bounds = Box(lo=np.array(wb["lo"], dtype=float),
                     hi=np.array(wb["hi"], dtype=float))
        return Scenario(
            starts=np.array(starts, dtype=float),
            goals=np.array(goals, dtype=float),
            obstacles=tuple(obstacles),
            agent_radius=merged["agent_radius"],
            v_max=merged["v_max"],
            dt=merged["dt"],
            world_bounds=bounds,
        )
    except (ContractError, TypeError, KeyError, ValueError) as e:
        raise FormatError(f"scenario fields failed validation: {e}") from e


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_json(fh.read())


def save_trajectories(t: TrajectorySet, path):
    header = struct.pack("<8sIII", TRAJECTORY_MAGIC, TRAJECTORY_VERSION,
                         t.n_agents, t.horizon)
    body = np.ascontiguousarray(t.positions, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + body)


def load_trajectories(path) -> TrajectorySet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20:
        raise FormatError(f"file too short for header: {len(blob)} bytes, need 20")
    magic, version, n_agents, horizon = struct.unpack_from("<8sIII", blob)
    if magic != TRAJECTORY_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {TRAJECTORY_MAGIC!r}")
    if version != TRAJECTORY_VERSION:
        raise FormatError(
            f"unsupported trajectory version {version}, expected {TRAJECTORY_VERSION}"
        )
    expected = 20 + n_agents * horizon * 2 * 8
    if len(blob) != expected:
        raise FormatError(
            f"expected {expected} bytes for shape ({n_agents}, {horizon}, 2), "
            f"got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f8", offset=20).reshape(n_agents, horizon, 2)
    if not np.isfinite(data).all():
        raise FormatError("trajectory payload contains non-finite values")
    return TrajectorySet(data.astype(np.float64))
