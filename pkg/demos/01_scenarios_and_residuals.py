"""
Scenario families and constraint residuals
==========================================

Generates one instance from each built-in family, then shows how the
residual checker scores a trajectory: agent-agent clearance, obstacle
clearance, endpoint pinning, and per-step speed.
"""

import numpy as np

from mapfdiff import (
    ConstraintSpec,
    FamilyKind,
    ScenarioFamily,
    TrajectorySet,
    collision_residuals,
    convex_residuals,
    generate,
    max_violation,
    straight_line_init,
)

############################################################
# One instance per family

for kind in (FamilyKind.NARROW_CORRIDOR, FamilyKind.OBSTACLE_DENSE,
             FamilyKind.AGENT_DENSE):
    scen = generate(ScenarioFamily(kind, seed=7))
    print(f"{kind.value}: {scen.starts.shape[0]} agents, "
          f"{len(scen.obstacles)} obstacles, radius {scen.agent_radius}, "
          f"v_max {scen.v_max}")

############################################################
# Residuals of a straight-line guess on the corridor instance
#
# Straight lines march both agents through the same gap at the same
# time, so the agent-agent channel lights up while the convex channels
# stay quiet.

scen = generate(ScenarioFamily(FamilyKind.NARROW_CORRIDOR, seed=7))
spec = ConstraintSpec.from_scenario(scen)
traj = TrajectorySet(straight_line_init(scen, horizon=16))

agent_res, obstacle_res = collision_residuals(traj, scen, spec)
endpoint_err, velocity_excess = convex_residuals(traj, scen, spec)

print()
print(f"agent-agent residual max   {agent_res.max():.4f}")
print(f"obstacle residual max      {obstacle_res.max():.4f}")
print(f"endpoint error max         {endpoint_err.max():.2e}")
print(f"velocity excess max        {velocity_excess.max():.2e}")
print(f"overall max violation      {max_violation(traj, scen, spec):.4f}")
print(f"feasible at tolerance {spec.tolerance}: "
      f"{max_violation(traj, scen, spec) <= spec.tolerance}")
