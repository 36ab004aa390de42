"""The limiting controlled diffusion.

Drift, running/terminal cost, the generator functional used by the
training loss, reference backlog-allocation policies, Euler path
sampling, and the coordinate transform between headcount space and
diffusion space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import ClassParams, LimitInstance, PrelimitInstance


@dataclass(frozen=True)
class ReferencePolicy:
    """Fixed backlog-allocation rule used to generate training paths.

    ``kind`` is one of evenly_split, weighted_split, minimal,
    random_split, static_priority.  Evaluation returns the allocation
    fractions u(t, x) >= 0; every kind except ``minimal`` (identically
    zero) and ``random_split`` (a fresh Dirichlet draw per call) is
    state-independent and sums to one.
    """

    kind: str
    num_classes: int
    weights: np.ndarray | None = None  # precomputed, for the fixed kinds

    def __post_init__(self):
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def name(self) -> str:
        return self.kind

    def evaluate(self, t: float, x: np.ndarray,
                 rng: np.random.Generator | None = None) -> np.ndarray:
        """Allocation fractions at (t, x); shape (K,) or (batch, K).

        For ``random_split`` a generator must be supplied and one
        Dirichlet(1,...,1) vector is drawn per row of ``x``.
        """
        x = np.asarray(x)
        batch_shape = x.shape[:-1]
        if self.kind == "random_split":
            if rng is None:
                raise ValueError("random_split needs a generator")
            return rng.dirichlet(np.ones(self.num_classes),
                                 size=batch_shape or None)
        u = self.weights
        if batch_shape:
            u = np.broadcast_to(u, batch_shape + (self.num_classes,))
        return u


def evenly_split(num_classes: int) -> ReferencePolicy:
    w = np.full(num_classes, 1.0 / num_classes)
    return ReferencePolicy("evenly_split", num_classes, w)


def minimal(num_classes: int) -> ReferencePolicy:
    return ReferencePolicy("minimal", num_classes, np.zeros(num_classes))


def random_split(num_classes: int) -> ReferencePolicy:
    return ReferencePolicy("random_split", num_classes, None)


def static_priority(num_classes: int, k_star: int) -> ReferencePolicy:
    if not 0 <= k_star < num_classes:
        raise ValueError("priority class out of range")
    w = np.zeros(num_classes)
    w[k_star] = 1.0
    return ReferencePolicy("static_priority", num_classes, w)


def weighted_split(num_classes: int, members: Sequence[int],
                   w1: float, w2: float, alpha: float = 1.0) -> ReferencePolicy:
    """Member classes get w1, the rest w2, blended with the even split.

    The allocation is alpha * (w1, w2 pattern) + (1 - alpha) * even and is
    renormalized onto the simplex (the raw pattern may miss 1 by rounding
    of the calibrated weights).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    base = np.full(num_classes, w2, dtype=np.float64)
    base[list(members)] = w1
    w = alpha * base + (1.0 - alpha) * np.full(num_classes, 1.0 / num_classes)
    return ReferencePolicy("weighted_split", num_classes, w / w.sum())


def _rates(classes: Sequence[ClassParams]):
    mu = np.array([c.service_rate for c in classes])
    theta = np.array([c.abandon_rate for c in classes])
    cost = np.array([c.total_cost for c in classes])
    return mu, theta, cost


def drift(t: float, x: np.ndarray, u: np.ndarray,
          inst: LimitInstance) -> np.ndarray:
    """Drift of the limiting diffusion; x and u may be batched (..., K)."""
    mu, theta, _ = _rates(inst.classes)
    n = inst.grid.interval_of(t)
    zeta = inst.second_order[:, n]
    x = np.asarray(x, dtype=np.float64)
    total = x.sum(axis=-1, keepdims=True)
    backlog = np.maximum(total, 0.0)
    return zeta - mu * x + backlog * (mu - theta) * np.asarray(u)


def running_cost(t: float, x: np.ndarray, u: np.ndarray,
                 classes: Sequence[ClassParams]) -> np.ndarray | float:
    """Instantaneous cost rate (e.x)^+ sum_k c_k u_k."""
    _, _, cost = _rates(classes)
    x = np.asarray(x, dtype=np.float64)
    backlog = np.maximum(x.sum(axis=-1), 0.0)
    out = backlog * (np.asarray(u) * cost).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def terminal_cost(x: np.ndarray, overtime_rate: float) -> np.ndarray | float:
    """Overtime charge on positive terminal backlog."""
    x = np.asarray(x, dtype=np.float64)
    out = overtime_rate * np.maximum(x.sum(axis=-1), 0.0)
    return float(out) if out.ndim == 0 else out


def relaxed_positive_part(s: np.ndarray, a: float) -> np.ndarray:
    """max(s, 0) with an exponential tail of slope ``a`` below zero.

    Continuous everywhere; one-sided derivatives at 0 are (1, a); a=0
    recovers the exact positive part.
    """
    s = np.asarray(s, dtype=np.float64)
    return np.maximum(s, 0.0) + a * (np.exp(np.minimum(s, 0.0)) - 1.0)


def generator_F(t: float, x: np.ndarray, v: np.ndarray, u_ref: np.ndarray,
                classes: Sequence[ClassParams], a: float = 0.0) -> np.ndarray | float:
    """Nonlinear generator term of the pathwise value identity.

    v is the candidate value gradient; u_ref the reference allocation.
    ``a`` relaxes the positive-part factor during early training.
    """
    mu, theta, cost = _rates(classes)
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    coeff = mu - theta
    bracket = ((v * coeff * np.asarray(u_ref)).sum(axis=-1)
               - (cost + coeff * v).min(axis=-1))
    out = relaxed_positive_part(x.sum(axis=-1), a) * bracket
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PathBatch:
    """Euler paths of the reference process with their driving noise.

    states has layout [path][step][class] with step 0..N; increments
    [path][step][class] with step 0..N-1 holding the Gaussian increments
    actually used (mean 0, covariance dt * I before the kappa factor).
    """

    states: np.ndarray
    increments: np.ndarray
    kappa: float
    dt: float
    allocations: np.ndarray | None = None  # reference u actually applied

    def __post_init__(self):
        S, n_plus_1, K = self.states.shape
        if self.increments.shape != (S, n_plus_1 - 1, K):
            raise ValueError("states/increments shapes disagree")
        self.states.setflags(write=False)
        self.increments.setflags(write=False)
        if self.allocations is not None:
            if self.allocations.shape != self.increments.shape:
                raise ValueError("allocations shape disagrees")
            self.allocations.setflags(write=False)

    @property
    def num_steps(self) -> int:
        return self.increments.shape[1]

    def save(self, path: str | Path) -> None:
        payload = dict(states=self.states, increments=self.increments,
                       kappa=self.kappa, dt=self.dt)
        if self.allocations is not None:
            payload["allocations"] = self.allocations
        np.savez_compressed(path, **payload)

    @classmethod
    def load(cls, path: str | Path) -> "PathBatch":
        with np.load(path) as d:
            alloc = d["allocations"].copy() if "allocations" in d.files else None
            return cls(states=d["states"].copy(),
                       increments=d["increments"].copy(),
                       allocations=alloc,
                       kappa=float(d["kappa"]), dt=float(d["dt"]))


def uniform_box_sampler(low: float = -10.0, high: float = 10.0) -> Callable:
    def sample(rng: np.random.Generator, size, num_classes):
        return rng.uniform(low, high, size=(size, num_classes))
    return sample


def sample_paths(inst: LimitInstance, ref: ReferencePolicy, kappa: float,
                 batch: int, seed: int = 0, *,
                 x0_sampler: Callable | None = None,
                 rng: np.random.Generator | None = None) -> PathBatch:
    """Euler-Maruyama sample of the reference process on the instance grid."""
    if kappa < 1.0:
        raise ValueError("noise amplification must be at least 1")
    if batch < 1:
        raise ValueError("need at least one path")
    if rng is None:
        rng = np.random.Generator(np.random.Philox(key=(seed, 0)))
    if x0_sampler is None:
        x0_sampler = uniform_box_sampler()
    K = inst.num_classes
    grid = inst.grid
    N = grid.interval_count
    dt = grid.dt
    sigma = inst.diffusion_coeff  # (K, N)

    states = np.empty((batch, N + 1, K))
    allocations = np.empty((batch, N, K))
    increments = rng.normal(0.0, math.sqrt(dt), size=(batch, N, K))
    states[:, 0] = x0_sampler(rng, batch, K)
    for n in range(N):
        x = states[:, n]
        u = ref.evaluate(grid.boundaries[n], x, rng)
        allocations[:, n] = u
        b = drift(grid.boundaries[n], x, u, inst)
        states[:, n + 1] = x + b * dt + kappa * sigma[:, n] * increments[:, n]
    return PathBatch(states=states, increments=increments, kappa=kappa, dt=dt,
                     allocations=allocations)


def center_state(t: float, headcount: np.ndarray, pre: PrelimitInstance,
                 lim: LimitInstance) -> np.ndarray:
    """Map pre-limit headcounts into diffusion coordinates."""
    n = lim.grid.interval_of(t)
    r = lim.scale
    nominal = lim.nominal_in_service[:, n]
    return (np.asarray(headcount, dtype=np.float64) - r * nominal) / math.sqrt(r)


def uncenter_state(t: float, x: np.ndarray, pre: PrelimitInstance,
                   lim: LimitInstance) -> np.ndarray:
    """Inverse of :func:`center_state` (exact up to float rounding)."""
    n = lim.grid.interval_of(t)
    r = lim.scale
    nominal = lim.nominal_in_service[:, n]
    return np.asarray(x, dtype=np.float64) * math.sqrt(r) + r * nominal
