"""Minimal feed-forward network machinery.

Fully connected layers with leaky-ReLU activations, an optional input
batch-normalization layer, exact reverse-mode gradients for the fixed
composition, and Adam with global-norm gradient clipping.  Everything is
64-bit and deterministic given a seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BN_EPS = 1e-6
BN_MOMENTUM = 0.99
LEAKY_SLOPE = 0.2


def leaky_relu(z: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(z >= 0, z, slope * z)


def leaky_relu_grad(z: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(z >= 0, 1.0, slope)


class Mlp:
    """Multilayer perceptron with optional input batch normalization.

    Parameters are exposed as the flat list ``params`` (shared, mutated in
    place by the optimizer): [gamma, beta]? + [W, b] per linear layer.
    Batch-norm running statistics are buffers, not parameters.
    """

    def __init__(self, in_width: int, out_width: int,
                 hidden: tuple[int, ...] = (100, 100, 100, 100),
                 slope: float = LEAKY_SLOPE, batch_norm: bool = True,
                 seed: int = 0, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.Generator(np.random.Philox(key=(seed, 0)))
        self.in_width = in_width
        self.out_width = out_width
        self.hidden = tuple(hidden)
        self.slope = slope
        self.batch_norm = batch_norm

        self.params: list[np.ndarray] = []
        if batch_norm:
            self.params.append(np.ones(in_width))   # gamma
            self.params.append(np.zeros(in_width))  # beta
            self.running_mean = np.zeros(in_width)
            self.running_var = np.ones(in_width)
        widths = (in_width,) + self.hidden + (out_width,)
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = math.sqrt(6.0 / fan_in)
            self.params.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))
        self._cache = None

    @property
    def num_linear(self) -> int:
        return len(self.hidden) + 1

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def _split(self):
        if self.batch_norm:
            return self.params[0], self.params[1], self.params[2:]
        return None, None, self.params

    def forward(self, x: np.ndarray, mode: str = "infer") -> np.ndarray:
        """Evaluate the network on a batch (rows are samples)."""
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.in_width:
            raise ValueError(
                f"input width {x.shape[1]} != expected {self.in_width}")
        gamma, beta, linear = self._split()
        cache = {"mode": mode, "x": x}
        a = x
        if self.batch_norm:
            if mode == "train":
                mu = x.mean(axis=0)
                var = x.var(axis=0)
                self.running_mean *= BN_MOMENTUM
                self.running_mean += (1.0 - BN_MOMENTUM) * mu
                self.running_var *= BN_MOMENTUM
                self.running_var += (1.0 - BN_MOMENTUM) * var
            else:
                mu, var = self.running_mean, self.running_var
            std = np.sqrt(var + BN_EPS)
            xhat = (x - mu) / std
            a = gamma * xhat + beta
            cache.update(bn_xhat=xhat, bn_std=std)
        acts = [a]
        zs = []
        n_lin = self.num_linear
        for i in range(n_lin):
            W, b = linear[2 * i], linear[2 * i + 1]
            z = a @ W + b
            zs.append(z)
            a = leaky_relu(z, self.slope) if i < n_lin - 1 else z
            acts.append(a)
        cache.update(acts=acts, zs=zs)
        self._cache = cache
        return a

    def backward(self, upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of sum(upstream * output) w.r.t. params and input.

        Must follow a forward pass; uses its cached activations.  The
        returned list is aligned with ``params``.
        """
        cache = self._cache
        if cache is None:
            raise RuntimeError("backward before forward")
        gamma, beta, linear = self._split()
        acts, zs = cache["acts"], cache["zs"]
        n_lin = self.num_linear
        grads_lin: list[np.ndarray] = [None] * (2 * n_lin)
        delta = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        for i in range(n_lin - 1, -1, -1):
            if i < n_lin - 1:
                delta = delta * leaky_relu_grad(zs[i], self.slope)
            W = linear[2 * i]
            grads_lin[2 * i] = acts[i].T @ delta
            grads_lin[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ W.T
        if not self.batch_norm:
            return grads_lin, delta
        xhat, std = cache["bn_xhat"], cache["bn_std"]
        dgamma = (delta * xhat).sum(axis=0)
        dbeta = delta.sum(axis=0)
        dxhat = delta * gamma
        if cache["mode"] == "train":
            B = xhat.shape[0]
            dx = (dxhat - dxhat.mean(axis=0)
                  - xhat * (dxhat * xhat).mean(axis=0)) / std
            if B == 1:
                dx = np.zeros_like(dxhat)  # batch stats are degenerate
        else:
            dx = dxhat / std
        return [dgamma, dbeta] + grads_lin, dx

    # -- persistence ----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"p{i}": p for i, p in enumerate(self.params)}
        if self.batch_norm:
            out["running_mean"] = self.running_mean
            out["running_var"] = self.running_var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for i, p in enumerate(self.params):
            new = np.asarray(arrays[f"p{i}"], dtype=np.float64)
            if new.shape != p.shape:
                raise ValueError(f"shape mismatch for parameter {i}")
            p[...] = new
        if self.batch_norm:
            self.running_mean[...] = arrays["running_mean"]
            self.running_var[...] = arrays["running_var"]


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-constant learning rate by iteration range."""

    pieces: tuple[tuple[int, int, float], ...]  # (start, end, rate)

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("empty schedule")
        for start, end, rate in self.pieces:
            if end <= start or rate <= 0:
                raise ValueError("malformed schedule piece")

    def rate_at(self, step: int) -> float:
        for start, end, rate in self.pieces:
            if start <= step < end:
                return rate
        # off the end of the schedule: hold the last rate
        return self.pieces[-1][2]


@dataclass
class AdamState:
    """Adam moments plus the clipping and schedule configuration."""

    schedule: LrSchedule
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 15.0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def ensure_shapes(self, params: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]


def clip_by_global_norm(grads: list[np.ndarray],
                        max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale the whole gradient list so its joint l2 norm is <= max_norm."""
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


def adam_step(state: AdamState, params: list[np.ndarray],
              grads: list[np.ndarray]) -> list[np.ndarray]:
    """One clipped Adam update, mutating ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    state.ensure_shapes(params)
    grads, _ = clip_by_global_norm(grads, state.clip_norm)
    lr = state.schedule.rate_at(state.step)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def adam_state_arrays(state: AdamState) -> dict[str, np.ndarray]:
    out = {"adam_step": np.array(state.step)}
    for i, (m, v) in enumerate(zip(state.m, state.v)):
        out[f"adam_m{i}"] = m
        out[f"adam_v{i}"] = v
    return out


def load_adam_state_arrays(state: AdamState, arrays) -> None:
    state.step = int(arrays["adam_step"])
    i = 0
    m, v = [], []
    while f"adam_m{i}" in arrays:
        m.append(np.asarray(arrays[f"adam_m{i}"], dtype=np.float64))
        v.append(np.asarray(arrays[f"adam_v{i}"], dtype=np.float64))
        i += 1
    state.m, state.v = m, v
