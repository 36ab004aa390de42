"""Trainer for the value function of the limiting control problem.

A value net H approximates V(0, .) and one gradient subnet per time step
approximates the spatial gradient of V.  Training minimizes the squared
residual of the pathwise identity that the true solution satisfies along
reference paths, plus a penalty discouraging negative outputs.  The
positive-part factor inside the generator is relaxed early in training
and annealed away.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .diffusion import (PathBatch, ReferencePolicy, relaxed_positive_part,
                        sample_paths, terminal_cost, uniform_box_sampler)
from .model import LimitInstance, instance_to_json, validate_instance
from .nn import AdamState, LrSchedule, Mlp, adam_state_arrays, adam_step, \
    load_adam_state_arrays

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    iterations: int
    schedule: LrSchedule
    reference: ReferencePolicy
    batch_size: int = 256
    kappa: float = 1.0
    penalty_weight: float = 0.0
    decay_c0: float = 1.0
    decay_c1: float = 3000.0
    seed: int = 0
    fixed_x0: bool = False
    x0_low: float = -10.0
    x0_high: float = 10.0
    validation_every: int = 100
    validation_fraction: float = 0.05
    hidden: tuple[int, ...] = (100, 100, 100, 100)

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.penalty_weight < 0:
            raise ValueError("penalty weight must be nonnegative")
        if self.kappa < 1.0:
            raise ValueError("noise amplification must be at least 1")

    def decay_at(self, m: int) -> float:
        return max(self.decay_c0 - m / self.decay_c1, 0.0)


class NetworkStack:
    """Value net plus one gradient subnet per training time step."""

    def __init__(self, num_classes: int, interval_count: int,
                 hidden: tuple[int, ...] = (100, 100, 100, 100),
                 seed: int = 0):
        self.num_classes = num_classes
        self.interval_count = interval_count
        self.value_net = Mlp(num_classes, 1, hidden=hidden, seed=seed)
        self.grad_nets = [Mlp(num_classes, num_classes, hidden=hidden,
                              seed=seed + 1 + n)
                          for n in range(interval_count)]
        self.iteration = 0

    @property
    def params(self) -> list[np.ndarray]:
        out = list(self.value_net.params)
        for net in self.grad_nets:
            out.extend(net.params)
        return out

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.value_net.forward(x, mode="infer")

    def gradient_at_step(self, n: int, x: np.ndarray) -> np.ndarray:
        return self.grad_nets[n].forward(x, mode="infer")

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for key, arr in self.value_net.state_arrays().items():
            out[f"H_{key}"] = arr
        for n, net in enumerate(self.grad_nets):
            for key, arr in net.state_arrays().items():
                out[f"G{n}_{key}"] = arr
        out["iteration"] = np.array(self.iteration)
        return out

    def load_state_arrays(self, arrays) -> None:
        self.value_net.load_state_arrays(
            {k[2:]: arrays[k] for k in arrays if k.startswith("H_")})
        for n, net in enumerate(self.grad_nets):
            prefix = f"G{n}_"
            net.load_state_arrays(
                {k[len(prefix):]: arrays[k] for k in arrays
                 if k.startswith(prefix)})
        self.iteration = int(arrays["iteration"])


def value_and_gradient(stack: NetworkStack, grid, t: float,
                       x: np.ndarray) -> tuple[float | None, np.ndarray]:
    """Inference-mode (H(x) at t=0, gradient subnet output) at time t."""
    if not 0.0 <= t < grid.horizon:
        raise ValueError(f"time {t} outside [0, horizon)")
    n = grid.interval_of(t)
    grad = stack.gradient_at_step(n, x)[0]
    value = float(stack.value(x)[0, 0]) if t == 0.0 else None
    return value, grad


def _instance_vectors(inst: LimitInstance):
    mu = np.array([c.service_rate for c in inst.classes])
    theta = np.array([c.abandon_rate for c in inst.classes])
    cost = np.array([c.total_cost for c in inst.classes])
    return mu, theta, cost


def empirical_loss(stack: NetworkStack, batch: PathBatch,
                   inst: LimitInstance, cfg: TrainConfig, *,
                   decay: float | None = None, mode: str = "train",
                   compute_grads: bool = False):
    """Loss over a path batch; optionally its parameter gradients.

    Returns (loss, breakdown dict) or (loss, breakdown, grads) where the
    gradient list is aligned with ``stack.params``.  ``mode`` picks the
    batch-norm behavior.
    """
    N = stack.interval_count
    if batch.num_steps != N:
        raise ValueError("path batch grid does not match the network stack")
    if batch.allocations is None:
        raise ValueError("path batch lacks reference allocations")
    if decay is None:
        decay = cfg.decay_at(stack.iteration)
    mu, theta, cost = _instance_vectors(inst)
    coeff = mu - theta
    sigma = inst.diffusion_coeff
    dt = batch.dt
    S = batch.states.shape[0]
    lam = cfg.penalty_weight

    gbar = terminal_cost(batch.states[:, N], inst.overtime_rate)
    H = stack.value_net.forward(batch.states[:, 0], mode=mode)  # (S, 1)

    G = np.empty((S, N, stack.num_classes))
    mart = np.zeros(S)      # martingale correction term
    integral = np.zeros(S)  # generator time integral
    dF_dG = np.empty_like(G)
    for n in range(N):
        x = batch.states[:, n]
        g = stack.grad_nets[n].forward(x, mode=mode)
        G[:, n] = g
        noise = sigma[:, n] * batch.increments[:, n]
        mart += (g * noise).sum(axis=1)
        u = batch.allocations[:, n]
        phi = cost + coeff * g  # (S, K)
        kmin = np.argmin(phi, axis=1)
        relax = relaxed_positive_part(x.sum(axis=1), decay)
        bracket = (g * coeff * u).sum(axis=1) - phi[np.arange(S), kmin]
        integral += relax * bracket * dt
        dF = coeff * u.astype(np.float64)
        dF = np.broadcast_to(dF, (S, stack.num_classes)).copy()
        dF[np.arange(S), kmin] -= coeff[kmin]
        dF_dG[:, n] = relax[:, None] * dF

    resid = gbar - H[:, 0] - mart - integral
    p1 = np.minimum(H[:, 0], 0.0)
    p2 = np.minimum(G, 0.0)
    penalty = (p1 ** 2).sum() / S + (p2 ** 2).sum() / S
    residual_term = float((resid ** 2).mean())
    loss = residual_term + lam * penalty
    breakdown = {"residual": residual_term, "penalty": float(penalty),
                 "decay": float(decay)}
    if not compute_grads:
        return loss, breakdown

    # reverse pass: residual appears with weight -1 on H, mart and integral
    dresid = 2.0 * resid / S  # (S,)
    upstream_H = (-dresid + lam * 2.0 * p1 / S)[:, None]
    grads, _ = stack.value_net.backward(upstream_H)
    all_grads = list(grads)
    for n in range(N):
        noise = sigma[:, n] * batch.increments[:, n]
        upstream_G = (-dresid[:, None] * (noise + dF_dG[:, n] * dt)
                      + lam * 2.0 * p2[:, n] / S)
        # each subnet still holds its forward cache from the loss pass
        g_grads, _ = stack.grad_nets[n].backward(upstream_G)
        all_grads.extend(g_grads)
    return loss, breakdown, all_grads


@dataclass
class TrainHistory:
    iterations: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    decay: list[float] = field(default_factory=list)
    validation: list[tuple[int, float]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"iterations": self.iterations,
                           "train_loss": self.train_loss,
                           "decay": self.decay,
                           "validation": self.validation})


def instance_hash(inst: LimitInstance) -> str:
    doc = json.dumps(instance_to_json(inst), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _batch_for_iteration(inst, cfg, m, *, size=None, fixed_x0_value=None):
    sampler = uniform_box_sampler(cfg.x0_low, cfg.x0_high)
    if fixed_x0_value is not None:
        sampler = lambda rng, s, k: np.broadcast_to(  # noqa: E731
            fixed_x0_value, (s, k)).copy()
    rng = np.random.Generator(np.random.Philox(key=(cfg.seed, m)))
    return sample_paths(inst, cfg.reference, cfg.kappa,
                        size or cfg.batch_size, x0_sampler=sampler, rng=rng)


def train(inst: LimitInstance, cfg: TrainConfig, *,
          stack: NetworkStack | None = None,
          adam: AdamState | None = None,
          checkpoint_dir: str | Path | None = None,
          checkpoint_every: int = 0,
          log_every: int = 0) -> tuple[NetworkStack, TrainHistory]:
    """Run the training loop; resumable via a preloaded stack and state."""
    problems = validate_instance(inst)
    if problems:
        raise ValueError("invalid instance: " + "; ".join(problems))
    K = inst.num_classes
    N = inst.grid.interval_count
    if stack is None:
        stack = NetworkStack(K, N, hidden=cfg.hidden, seed=cfg.seed)
    if adam is None:
        adam = AdamState(schedule=cfg.schedule)
    history = TrainHistory()

    fixed_x0_value = None
    if cfg.fixed_x0:
        rng0 = np.random.Generator(np.random.Philox(key=(cfg.seed, 1 << 40)))
        fixed_x0_value = rng0.uniform(cfg.x0_low, cfg.x0_high, size=K)

    val_size = max(1, round(cfg.validation_fraction * cfg.batch_size))
    val_batch = None
    start = time.time()
    while stack.iteration < cfg.iterations:
        m = stack.iteration
        batch = _batch_for_iteration(inst, cfg, m,
                                     fixed_x0_value=fixed_x0_value)
        loss, breakdown, grads = empirical_loss(
            stack, batch, inst, cfg, compute_grads=True)
        adam_step(adam, stack.params, grads)
        stack.iteration += 1
        history.iterations.append(m)
        history.train_loss.append(loss)
        history.decay.append(breakdown["decay"])
        if cfg.validation_every and m % cfg.validation_every == 0:
            val_batch = _batch_for_iteration(
                inst, cfg, (1 << 41) + m, size=val_size,
                fixed_x0_value=fixed_x0_value)
            vloss, _ = empirical_loss(stack, val_batch, inst, cfg,
                                      mode="infer")
            history.validation.append((m, vloss))
        if log_every and m % log_every == 0:
            print(f"iter {m}  loss {loss:.4f}  "
                  f"decay {breakdown['decay']:.3f}  "
                  f"elapsed {time.time() - start:.0f}s", flush=True)
        if checkpoint_dir and checkpoint_every and \
                stack.iteration % checkpoint_every == 0:
            save_checkpoint(checkpoint_dir, stack, adam, cfg, inst, loss)
    if checkpoint_dir:
        save_checkpoint(checkpoint_dir, stack, adam, cfg, inst,
                        history.train_loss[-1] if history.train_loss else None)
    return stack, history


# ---------------------------------------------------------------- storage

def config_digest(cfg: TrainConfig) -> str:
    payload = {
        "iterations": cfg.iterations,
        "schedule": cfg.schedule.pieces,
        "reference": [cfg.reference.kind,
                      None if cfg.reference.weights is None
                      else cfg.reference.weights.tolist()],
        "batch_size": cfg.batch_size, "kappa": cfg.kappa,
        "penalty_weight": cfg.penalty_weight,
        "decay": [cfg.decay_c0, cfg.decay_c1], "seed": cfg.seed,
        "fixed_x0": cfg.fixed_x0, "x0": [cfg.x0_low, cfg.x0_high],
        "hidden": cfg.hidden,
    }
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(directory: str | Path, stack: NetworkStack,
                    adam: AdamState, cfg: TrainConfig,
                    inst: LimitInstance, loss: float | None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = stack.state_arrays()
    arrays.update(adam_state_arrays(adam))
    np.savez(directory / "weights.npz", **arrays)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "iteration": stack.iteration,
        "loss": loss,
        "num_classes": stack.num_classes,
        "interval_count": stack.interval_count,
        "hidden": list(cfg.hidden),
        "config_digest": config_digest(cfg),
        "instance_hash": instance_hash(inst),
        "schedule": [list(p) for p in cfg.schedule.pieces],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_checkpoint(directory: str | Path,
                    ) -> tuple[NetworkStack, AdamState, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version")
    stack = NetworkStack(manifest["num_classes"], manifest["interval_count"],
                         hidden=tuple(manifest["hidden"]))
    with np.load(directory / "weights.npz") as arrays:
        data = {k: arrays[k] for k in arrays.files}
    stack.load_state_arrays(data)
    schedule = LrSchedule(tuple(tuple(p) for p in manifest["schedule"]))
    adam = AdamState(schedule=schedule)
    load_adam_state_arrays(adam, data)
    return stack, adam, manifest
