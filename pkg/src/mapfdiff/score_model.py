"""Score network: forward pass, exact backprop, and denoising training.

A fully connected tanh network estimates the score (gradient of the log
perturbed density in trajectory space).  Inputs are the flattened noisy
trajectory, a fixed-size scenario embedding, and two scalar noise features.
Everything is plain numpy; gradients are hand-derived reverse mode, which
keeps the whole training path dependency-free and finite-difference
checkable.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ContractError, NoiseSchedule, Scenario, TrajectorySet

# Scenario embedding: starts and goals, then the (cx, cy, r) triples of the
# EMBED_OBSTACLES obstacles nearest the world center, zero-padded.
EMBED_OBSTACLES = 25
NOISE_FEATURES = 2

CHECKPOINT_MAGIC = b"MAPFSMDL"
CHECKPOINT_VERSION = 1


def embed_scenario(scenario: Scenario, k: int = EMBED_OBSTACLES) -> np.ndarray:
    parts = [scenario.starts.ravel(), scenario.goals.ravel()]
    triples = np.zeros((k, 3))
    if scenario.n_obstacles:
        centers = scenario.obstacle_centers()
        radii = scenario.obstacle_radii()
        order = np.argsort(
            np.linalg.norm(centers - scenario.world_bounds.center, axis=1),
            kind="stable")[:k]
        triples[: order.size, :2] = centers[order]
        triples[: order.size, 2] = radii[order]
    parts.append(triples.ravel())
    return np.concatenate(parts)


def embedding_dim(n_agents: int, k: int = EMBED_OBSTACLES) -> int:
    return 4 * n_agents + 3 * k


def noise_features(schedule: NoiseSchedule, t: int) -> np.ndarray:
    if not 1 <= t <= schedule.n_levels:
        raise ContractError(f"level index {t} outside 1..{schedule.n_levels}")
    beta = schedule.betas[t - 1]
    return np.array([np.sqrt(beta), np.log(beta)])


def schedule_hash(schedule: NoiseSchedule) -> str:
    payload = schedule.betas.astype("<f8").tobytes() + struct.pack(
        "<I", schedule.inner_steps)
    return hashlib.sha256(payload).hexdigest()


@dataclass
class ScoreNetwork:
    """MLP parameters plus the input layout they were built for."""

    n_agents: int
    horizon: int
    weights: list
    biases: list
    activation: str = "tanh"
    k_obstacles: int = EMBED_OBSTACLES

    @property
    def out_dim(self) -> int:
        return self.n_agents * self.horizon * 2

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def widths(self) -> tuple:
        return tuple([self.in_dim] + [w.shape[1] for w in self.weights])

    def layout_hash(self) -> str:
        doc = {"widths": list(self.widths), "activation": self.activation,
               "n_agents": self.n_agents, "horizon": self.horizon,
               "k_obstacles": self.k_obstacles}
        return hashlib.sha256(
            json.dumps(doc, sort_keys=True).encode()).hexdigest()

    @classmethod
    def create(cls, n_agents: int, horizon: int, hidden: Sequence[int] = (256, 256, 256),
               seed: int = 0, k_obstacles: int = EMBED_OBSTACLES) -> "ScoreNetwork":
        out_dim = n_agents * horizon * 2
        in_dim = out_dim + embedding_dim(n_agents, k_obstacles) + NOISE_FEATURES
        widths = [in_dim] + list(hidden) + [out_dim]
        rng = np.random.Generator(np.random.PCG64(seed))
        weights, biases = [], []
        for i in range(len(widths) - 1):
            scale = 1.0 / np.sqrt(widths[i])
            if i == len(widths) - 2:
                scale *= 0.01   # near-zero initial score keeps early sampling tame
            weights.append(rng.normal(0.0, scale, size=(widths[i], widths[i + 1])))
            biases.append(np.zeros(widths[i + 1]))
        return cls(n_agents=n_agents, horizon=horizon,
                   weights=weights, biases=biases, k_obstacles=k_obstacles)

    def params_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases)
                               for a in pair])

    def set_params_flat(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64)
        total = sum(w.size for w in self.weights) + sum(b.size for b in self.biases)
        if vec.size != total:
            raise ContractError(
                f"parameter vector length {vec.size}, expected {total}")
        i = 0
        for k in range(len(self.weights)):
            for arr in (self.weights[k], self.biases[k]):
                n = arr.size
                arr[...] = vec[i:i + n].reshape(arr.shape)
                i += n

    def forward_batch(self, x: np.ndarray, keep: bool = False):
        """Batched forward pass; optionally keeps activations for backprop.

        The raw network output is divided by sqrt(beta_t) (available as the
        second-to-last input feature), so the head learns a unit-scale noise
        estimate while the returned value has proper score magnitude, which
        grows like 1/sqrt(beta) as the noise level falls.
        """
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ContractError(
                f"input shape {x.shape} does not match in_dim {self.in_dim}")
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == last else np.tanh(z)
            if keep:
                acts.append(a)
        out = a / x[:, -NOISE_FEATURES][:, None]
        return (out, acts) if keep else out

    def backward_batch(self, x: np.ndarray, acts: list, dout: np.ndarray):
        """Gradients of a scalar loss wrt parameters, given d(loss)/d(output)."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = dout / x[:, -NOISE_FEATURES][:, None]
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                # tanh'(z) = 1 - tanh(z)^2 and acts[i] stores tanh(z)
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return grads_w, grads_b


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_fn: str = "one"    # per-level loss weight eta(t): "one" or "beta"

    def __post_init__(self):
        if not self.learning_rate > 0.0:
            raise ContractError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ContractError("batch size and epochs must be >= 1")
        if self.weight_fn not in ("one", "beta"):
            raise ContractError("weight_fn must be 'one' or 'beta'")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ContractError("moment coefficients must lie in [0, 1)")


def perturb(x0: TrajectorySet, t: int, schedule: NoiseSchedule, rng):
    """One forward-kernel draw: x_t = sqrt(1-beta_t) x0 + sqrt(beta_t) z.

    Returns the flattened noisy trajectory and the matching score target
    -(x_t - sqrt(1-beta_t) x0)/beta_t = -z/sqrt(beta_t).
    """
    if not 1 <= t <= schedule.n_levels:
        raise ContractError(f"level index {t} outside 1..{schedule.n_levels}")
    beta = schedule.betas[t - 1]
    flat = x0.flat()
    z = rng.standard_normal(flat.size)
    x_t = np.sqrt(1.0 - beta) * flat + np.sqrt(beta) * z
    score_target = -z / np.sqrt(beta)
    return x_t, score_target


def forward(net: ScoreNetwork, x_t: np.ndarray, t: int, cond: np.ndarray,
            schedule: NoiseSchedule) -> np.ndarray:
    """Score estimate for one flattened trajectory."""
    x_t = np.asarray(x_t, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    if x_t.size != net.out_dim:
        raise ContractError(
            f"trajectory vector has {x_t.size} entries, expected {net.out_dim}")
    if cond.size != embedding_dim(net.n_agents, net.k_obstacles):
        raise ContractError(
            f"embedding has {cond.size} entries, expected "
            f"{embedding_dim(net.n_agents, net.k_obstacles)}")
    row = np.concatenate([x_t, cond, noise_features(schedule, t)])
    return net.forward_batch(row[None, :])[0]


@dataclass(frozen=True)
class DsmDraws:
    """Frozen minibatch draws so the loss is a pure function of parameters."""

    inputs: np.ndarray       # (B, in_dim)
    targets: np.ndarray      # (B, out_dim)
    weights: np.ndarray      # (B,) per-element eta(t) * beta_t


def draw_batch(batch, schedule: NoiseSchedule, cfg: TrainConfig, rng) -> DsmDraws:
    if len(batch) == 0:
        raise ContractError("batch must be nonempty")
    rows, targets, weights = [], [], []
    for x0, scenario in batch:
        t = int(rng.integers(1, schedule.n_levels + 1))
        beta = schedule.betas[t - 1]
        x_t, target = perturb(x0, t, schedule, rng)
        cond = embed_scenario(scenario)
        rows.append(np.concatenate([x_t, cond, noise_features(schedule, t)]))
        targets.append(target)
        eta = 1.0 if cfg.weight_fn == "one" else beta
        weights.append(eta * beta)
    return DsmDraws(np.array(rows), np.array(targets), np.array(weights))


def loss_and_grad_from_draws(net: ScoreNetwork, draws: DsmDraws):
    """Mean weighted squared score error and its exact parameter gradient."""
    out, acts = net.forward_batch(draws.inputs, keep=True)
    err = out - draws.targets
    per_elem = (err**2).sum(axis=1) * draws.weights
    loss = float(per_elem.mean())
    dout = (2.0 / err.shape[0]) * err * draws.weights[:, None]
    grads_w, grads_b = net.backward_batch(draws.inputs, acts, dout)
    return loss, (grads_w, grads_b)


def dsm_loss_and_grad(net: ScoreNetwork, batch, schedule: NoiseSchedule,
                      cfg: TrainConfig, rng):
    """Denoising score-matching loss over a batch of (trajectory, scenario)."""
    draws = draw_batch(batch, schedule, cfg, rng)
    return loss_and_grad_from_draws(net, draws)


class _Adam:
    def __init__(self, net: ScoreNetwork, cfg: TrainConfig):
        self.cfg = cfg
        self.m_w = [np.zeros_like(w) for w in net.weights]
        self.v_w = [np.zeros_like(w) for w in net.weights]
        self.m_b = [np.zeros_like(b) for b in net.biases]
        self.v_b = [np.zeros_like(b) for b in net.biases]
        self.steps = 0

    def update(self, net: ScoreNetwork, grads_w, grads_b):
        c = self.cfg
        self.steps += 1
        corr1 = 1.0 - c.beta1**self.steps
        corr2 = 1.0 - c.beta2**self.steps
        for i in range(len(net.weights)):
            for p, g, m, v in ((net.weights[i], grads_w[i], self.m_w[i], self.v_w[i]),
                               (net.biases[i], grads_b[i], self.m_b[i], self.v_b[i])):
                m *= c.beta1
                m += (1.0 - c.beta1) * g
                v *= c.beta2
                v += (1.0 - c.beta2) * g**2
                p -= c.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + c.adam_eps)


def train(net: ScoreNetwork, dataset, schedule: NoiseSchedule, cfg: TrainConfig,
          rng):
    """Minibatch Adam on the denoising objective.

    Returns ``(net, history)`` with one mean loss per epoch.  If a step
    produces a non-finite loss or parameter, training stops and the last
    finite parameters are restored.
    """
    if len(dataset) == 0:
        raise ContractError("dataset must be nonempty")
    shapes = {(x0.n_agents, x0.horizon) for x0, _ in dataset}
    if len(shapes) != 1:
        raise ContractError(f"dataset mixes trajectory shapes: {sorted(shapes)}")
    if next(iter(shapes)) != (net.n_agents, net.horizon):
        raise ContractError(
            f"dataset shape {next(iter(shapes))} does not match network "
            f"({net.n_agents}, {net.horizon})")

    opt = _Adam(net, cfg)
    history = []
    checkpoint = net.params_flat()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for lo in range(0, len(dataset), cfg.batch_size):
            batch = [dataset[i] for i in order[lo:lo + cfg.batch_size]]
            loss, (gw, gb) = dsm_loss_and_grad(net, batch, schedule, cfg, rng)
            if not np.isfinite(loss):
                net.set_params_flat(checkpoint)
                return net, history
            opt.update(net, gw, gb)
            epoch_losses.append(loss)
        if not all(np.isfinite(w).all() for w in net.weights):
            net.set_params_flat(checkpoint)
            return net, history
        checkpoint = net.params_flat()
        history.append(float(np.mean(epoch_losses)))
    return net, history


def save_network(net: ScoreNetwork, schedule: NoiseSchedule, path,
                 train_config: TrainConfig | None = None):
    header = {
        "version": CHECKPOINT_VERSION,
        "widths": list(net.widths),
        "activation": net.activation,
        "n_agents": net.n_agents,
        "horizon": net.horizon,
        "k_obstacles": net.k_obstacles,
        "layout_sha256": net.layout_hash(),
        "schedule": {
            "betas": schedule.betas.tolist(),
            "inner_steps": schedule.inner_steps,
            "sha256": schedule_hash(schedule),
        },
        "train_config": None if train_config is None else {
            "learning_rate": train_config.learning_rate,
            "batch_size": train_config.batch_size,
            "epochs": train_config.epochs,
            "weight_fn": train_config.weight_fn,
        },
    }
    blob = json.dumps(header, sort_keys=True).encode()
    params = net.params_flat().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<I", len(blob)) + blob + params)


def load_network(path):
    """Load a checkpoint; returns (net, schedule)."""
    from .scenario import FormatError   # local import avoids a cycle

    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"not a score-network checkpoint: {path}")
    (hlen,) = struct.unpack_from("<I", blob, 8)
    if len(blob) < 12 + hlen:
        raise FormatError("checkpoint header truncated")
    header = json.loads(blob[12:12 + hlen])
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(
            f"unsupported checkpoint version {header.get('version')!r}")
    widths = header["widths"]
    net = ScoreNetwork(
        n_agents=header["n_agents"], horizon=header["horizon"],
        weights=[np.zeros((widths[i], widths[i + 1])) for i in range(len(widths) - 1)],
        biases=[np.zeros(widths[i + 1]) for i in range(len(widths) - 1)],
        activation=header["activation"], k_obstacles=header["k_obstacles"])
    if net.layout_hash() != header["layout_sha256"]:
        raise FormatError("checkpoint layout hash does not match its own header")
    expected = sum(w.size for w in net.weights) + sum(b.size for b in net.biases)
    params = np.frombuffer(blob, dtype="<f8", offset=12 + hlen)
    if params.size != expected:
        raise FormatError(
            f"checkpoint carries {params.size} parameters, layout needs {expected}")
    net.set_params_flat(params)
    schedule = NoiseSchedule(
        betas=np.array(header["schedule"]["betas"]),
        inner_steps=header["schedule"]["inner_steps"])
    if schedule_hash(schedule) != header["schedule"]["sha256"]:
        raise FormatError("schedule hash mismatch in checkpoint header")
    return net, schedule
