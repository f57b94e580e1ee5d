"""
Training the score network
==========================

Fits a small network to predict the noising direction on expert
trajectories (denoising score matching across the noise ladder), then
spot-checks the analytic gradient against finite differences.
"""

from pathlib import Path
import tempfile

import numpy as np

from mapfdiff import (
    ExpertConfig,
    FamilyKind,
    ScenarioFamily,
    ScoreNetwork,
    TrainConfig,
    build_dataset,
    load_dataset,
    make_schedule,
    train,
)
from mapfdiff.score_model import draw_batch, loss_and_grad_from_draws

out_dir = Path(tempfile.mkdtemp(prefix="train-demo-"))
family = ScenarioFamily(FamilyKind.NARROW_CORRIDOR, seed=5)
manifest_path = build_dataset([family], 16, ExpertConfig(restarts=4),
                              out_dir, master_seed=123, horizon=16)
_, pairs = load_dataset(manifest_path)
dataset = [(traj, scen) for scen, traj in pairs]

schedule = make_schedule(beta_min=0.01, beta_max=1.0, n_levels=20,
                         inner_steps=3)

############################################################
# Train for a short burst

net = ScoreNetwork.create(n_agents=2, horizon=16, seed=0)
net, history = train(net, dataset, schedule,
                     TrainConfig(epochs=200, batch_size=16),
                     np.random.default_rng(0))
# per-epoch loss is noisy (fresh noise-level draws every epoch), so
# compare 20-epoch averages
early = float(np.mean(history[:20]))
late = float(np.mean(history[-20:]))
print(f"loss: first 20 epochs {early:.3f}, last 20 epochs {late:.3f} "
      f"({100 * (1 - late / early):.0f}% lower)")

############################################################
# Finite-difference check on a handful of coordinates

draws = draw_batch(dataset, schedule, TrainConfig(), np.random.default_rng(1))
theta = net.params_flat()
_, (gw, gb) = loss_and_grad_from_draws(net, draws)
analytic = np.concatenate(
    [a.ravel() for i in range(len(gw)) for a in (gw[i], gb[i])])

step = 1e-5
worst = 0.0
for j in np.random.default_rng(2).choice(theta.size, size=10, replace=False):
    bumped = theta.copy()
    bumped[j] += step
    net.set_params_flat(bumped)
    hi, _ = loss_and_grad_from_draws(net, draws)
    bumped[j] -= 2 * step
    net.set_params_flat(bumped)
    lo, _ = loss_and_grad_from_draws(net, draws)
    fd = (hi - lo) / (2 * step)
    worst = max(worst, abs(fd - analytic[j]) / max(abs(fd), 1e-8))
net.set_params_flat(theta)
print(f"max relative gradient error over 10 coordinates: {worst:.2e}")
