"""Simulation-driven dynamic index benchmark policies.

Three benchmarks that approximate the value-function gradient without
solving the control problem: paired-simulation gradient estimates feed
(1) one regression net per time step, (2) one pooled net over (t, x),
and (3) a brute-force grid search over grouped linear gradients.  All
three turn their gradient model into the same effective-holding-cost
ranking used elsewhere.
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import ClassParams, PrelimitInstance
from .nn import AdamState, LrSchedule, Mlp, adam_step
from .sim import RankingPolicy, make_rng, simulate_day

# stream-role offset separating path generation from gradient replications
ROLE_PATHS = 1 << 19


@dataclass(frozen=True)
class GradientSample:
    """Estimated value gradient at one visited (time step, state) point."""

    time_index: int
    path_index: int
    state: np.ndarray  # (K,) headcounts
    estimate: np.ndarray  # (K,) paired-difference gradient estimate
    replications: int

    def __post_init__(self):
        if self.state.shape != self.estimate.shape:
            raise ValueError("state/estimate shape mismatch")


def sample_state_paths(inst: PrelimitInstance, policy: RankingPolicy,
                       num_paths: int, interval_count: int,
                       seed: int) -> np.ndarray:
    """States X(t_n; l) on a uniform time grid under the given policy.

    Returns an int64 array of shape (num_paths, interval_count, K) holding
    the state at the *start* of each of the ``interval_count`` steps.
    """
    T = inst.grid.horizon
    dt = T / interval_count
    K = inst.num_classes
    out = np.zeros((num_paths, interval_count, K), dtype=np.int64)
    for l in range(num_paths):
        rng = make_rng(seed, l, ROLE_PATHS)
        x = np.zeros(K, dtype=np.int64)
        for n in range(interval_count):
            out[l, n] = x
            day = simulate_day(inst, policy, seed, x0=x, t0=n * dt,
                               t_end=(n + 1) * dt, rng=rng)
            x = day.final_state
    return out


def paired_cost_difference(inst: PrelimitInstance, policy: RankingPolicy,
                           t0: float, x0: np.ndarray, delta: np.ndarray,
                           pair_index: int, replication: int, seed: int,
                           decision_freq: float | None = None) -> float:
    """Cost of one run from x0+delta minus one from x0, same random stream.

    The two runs consume identically keyed streams, so a zero ``delta``
    gives exactly zero.
    """
    base_rng = make_rng(seed, pair_index, replication)
    pert_rng = make_rng(seed, pair_index, replication)
    base = simulate_day(inst, policy, seed, decision_freq, x0=x0, t0=t0,
                        rng=base_rng)
    pert = simulate_day(inst, policy, seed, decision_freq,
                        x0=np.asarray(x0) + np.asarray(delta), t0=t0,
                        rng=pert_rng)
    return pert.total_cost - base.total_cost


def estimate_gradients(inst: PrelimitInstance, base_policy: RankingPolicy,
                       num_paths: int, replications: int,
                       interval_count: int, seed: int, *,
                       decision_freq: float | None = None,
                       ) -> list[GradientSample]:
    """Paired-simulation estimates of the value gradient along sample paths.

    For every visited (t_n, x^l) and class k, the estimate is the mean over
    paired replications of the cost difference between runs started from
    x^l + e_k and x^l, both simulated to the end of the day under
    ``base_policy`` with common random numbers.
    """
    states = sample_state_paths(inst, base_policy, num_paths,
                                interval_count, seed)
    T = inst.grid.horizon
    dt = T / interval_count
    K = inst.num_classes
    samples = []
    for n in range(interval_count):
        for l in range(num_paths):
            x = states[l, n]
            est = np.zeros(K)
            for k in range(K):
                delta = np.zeros(K, dtype=np.int64)
                delta[k] = 1
                diffs = [paired_cost_difference(
                             inst, base_policy, n * dt, x, delta,
                             pair_index=n * num_paths + l, replication=m,
                             seed=seed, decision_freq=decision_freq)
                         for m in range(replications)]
                est[k] = float(np.mean(diffs))
            samples.append(GradientSample(time_index=n, path_index=l,
                                          state=x.copy(), estimate=est,
                                          replications=replications))
    return samples


def save_samples(path: str | Path, samples: Sequence[GradientSample]) -> None:
    """One CSV row per (sample, class): n, l, k, the state vector, estimate."""
    if not samples:
        raise ValueError("nothing to save")
    K = len(samples[0].state)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "l", "k"] + [f"x_{j}" for j in range(K)]
                        + ["estimate", "replications"])
        for s in samples:
            for k in range(K):
                writer.writerow([s.time_index, s.path_index, k]
                                + [int(v) for v in s.state]
                                + [repr(float(s.estimate[k])),
                                   s.replications])


def load_samples(path: str | Path) -> list[GradientSample]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        K = sum(1 for h in header if h.startswith("x_"))
        for row in reader:
            rows.append((int(row[0]), int(row[1]), int(row[2]),
                         np.array(row[3:3 + K], dtype=np.int64),
                         float(row[3 + K]), int(row[4 + K])))
    grouped: dict[tuple[int, int], list] = {}
    for n, l, k, x, est, reps in rows:
        grouped.setdefault((n, l), []).append((k, x, est, reps))
    samples = []
    for (n, l), parts in sorted(grouped.items()):
        parts.sort()
        K = len(parts)
        est = np.array([p[2] for p in parts])
        samples.append(GradientSample(time_index=n, path_index=l,
                                      state=parts[0][1], estimate=est,
                                      replications=parts[0][3]))
    return samples


# ------------------------------------------------------ regression fitting

@dataclass(frozen=True)
class RegressionConfig:
    """Hyperparameters for the gradient regression nets."""

    iterations: int
    schedule: LrSchedule
    penalty_weight: float = 0.5
    hidden: tuple[int, ...] = (100, 100)
    seed: int = 0
    train_fraction: float = 0.95
    validation_every: int = 1

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train fraction must be in (0, 1]")
        if self.penalty_weight < 0:
            raise ValueError("penalty weight must be nonnegative")


def _regression_loss(out: np.ndarray, targets: np.ndarray,
                     penalty_weight: float) -> float:
    mse = float(((targets - out) ** 2).mean())
    hinge = float(np.maximum(-out, 0.0).sum())
    return mse + penalty_weight * hinge


def fit_gradient_net(features: np.ndarray, targets: np.ndarray,
                     cfg: RegressionConfig, *, net_seed: int | None = None,
                     ) -> tuple[Mlp, dict]:
    """Full-batch regression with a hinge penalty on negative outputs.

    The observations are shuffled once and split train/validation by
    ``cfg.train_fraction``; the returned history holds both loss curves.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if features.shape[0] != targets.shape[0]:
        raise ValueError("feature/target row mismatch")
    n_obs = features.shape[0]
    split_rng = np.random.default_rng(cfg.seed)
    perm = split_rng.permutation(n_obs)
    n_train = max(1, int(round(cfg.train_fraction * n_obs)))
    train_idx, val_idx = perm[:n_train], perm[n_train:]
    f_train, y_train = features[train_idx], targets[train_idx]
    f_val, y_val = features[val_idx], targets[val_idx]

    net = Mlp(features.shape[1], targets.shape[1], hidden=cfg.hidden,
              seed=cfg.seed if net_seed is None else net_seed)
    adam = AdamState(schedule=cfg.schedule)
    history: dict = {"train_loss": [], "validation": []}
    for m in range(cfg.iterations):
        out = net.forward(f_train, mode="train")
        resid = out - y_train
        loss = _regression_loss(out, y_train, cfg.penalty_weight)
        upstream = (2.0 * resid / resid.size
                    - cfg.penalty_weight * (out < 0.0))
        grads, _ = net.backward(upstream)
        adam_step(adam, net.params, grads)
        history["train_loss"].append(loss)
        if len(val_idx) and m % cfg.validation_every == 0:
            v_out = net.forward(f_val, mode="infer")
            history["validation"].append(
                (m, _regression_loss(v_out, y_val, cfg.penalty_weight)))
    return net, history


def select_penalty_weight(features: np.ndarray, targets: np.ndarray,
                          cfg: RegressionConfig,
                          grid: Sequence[float] = (0.0, 0.5, 1.0, 1.5, 2.0),
                          ) -> float:
    """Pick the hinge weight with the lowest final training loss."""
    best, best_loss = None, np.inf
    for lam in grid:
        trial = RegressionConfig(
            iterations=cfg.iterations, schedule=cfg.schedule,
            penalty_weight=lam, hidden=cfg.hidden, seed=cfg.seed,
            train_fraction=cfg.train_fraction,
            validation_every=cfg.validation_every)
        _, history = fit_gradient_net(features, targets, trial)
        final = history["train_loss"][-1] if history["train_loss"] else 0.0
        if final < best_loss:
            best, best_loss = lam, final
    return float(best)


@dataclass
class PerStepGradientModel:
    """One regression net per time step; empty steps fall back to zero."""

    nets: list  # Mlp | None per step
    interval_count: int
    horizon: float
    fallback_steps: tuple[int, ...] = ()

    def step_of(self, t: float) -> int:
        frac = min(max(t / self.horizon, 0.0), 1.0)
        return min(int(frac * self.interval_count), self.interval_count - 1)

    def gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        net = self.nets[self.step_of(t)]
        if net is None:
            return np.zeros(len(x))
        return net.forward(np.asarray(x, dtype=np.float64)[None],
                           mode="infer")[0]


@dataclass
class PooledGradientModel:
    """A single regression net over (t, x)."""

    net: Mlp
    horizon: float

    def gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        feats = np.concatenate(([t], np.asarray(x, dtype=np.float64)))
        return self.net.forward(feats[None], mode="infer")[0]


def fit_heuristic1(samples: Sequence[GradientSample], interval_count: int,
                   horizon: float, cfg: RegressionConfig,
                   ) -> tuple[PerStepGradientModel, list]:
    """Per-step gradient nets trained on each step's visited states."""
    buckets: dict[int, list[GradientSample]] = {}
    for s in samples:
        buckets.setdefault(s.time_index, []).append(s)
    nets: list = []
    histories: list = []
    fallback = []
    for n in range(interval_count):
        bucket = buckets.get(n, [])
        if not bucket:
            nets.append(None)
            histories.append(None)
            fallback.append(n)
            continue
        features = np.stack([s.state for s in bucket]).astype(np.float64)
        targets = np.stack([s.estimate for s in bucket])
        net, history = fit_gradient_net(features, targets, cfg,
                                        net_seed=cfg.seed + n)
        nets.append(net)
        histories.append(history)
    return PerStepGradientModel(nets=nets, interval_count=interval_count,
                                horizon=horizon,
                                fallback_steps=tuple(fallback)), histories


def fit_heuristic2(samples: Sequence[GradientSample], interval_count: int,
                   horizon: float, cfg: RegressionConfig,
                   ) -> tuple[PooledGradientModel, dict]:
    """One gradient net over pooled (t, x) observations."""
    if not samples:
        raise ValueError("no samples to fit")
    dt = horizon / interval_count
    features = np.stack([
        np.concatenate(([s.time_index * dt], s.state.astype(np.float64)))
        for s in samples])
    targets = np.stack([s.estimate for s in samples])
    net, history = fit_gradient_net(features, targets, cfg)
    return PooledGradientModel(net=net, horizon=horizon), history


@dataclass
class HeuristicIndexPolicy:
    """Ranks classes by c_k + (mu_k - theta_k) G_k(t, x), descending."""

    classes: tuple[ClassParams, ...]
    gradient: Callable[[float, np.ndarray], np.ndarray]
    name: str = "heuristic"

    def rank(self, t: float, X: np.ndarray) -> np.ndarray:
        c = np.array([cp.total_cost for cp in self.classes])
        coeff = np.array([cp.service_rate - cp.abandon_rate
                          for cp in self.classes])
        phi = c + coeff * self.gradient(t, np.asarray(X, dtype=np.float64))
        return np.argsort(-phi, kind="stable")


def heuristic_policy(model, inst: PrelimitInstance,
                     name: str = "heuristic") -> HeuristicIndexPolicy:
    return HeuristicIndexPolicy(classes=inst.classes,
                                gradient=model.gradient, name=name)


# --------------------------------------------- grouped linear grid search

@dataclass(frozen=True)
class GroupLinearModel:
    """Linear gradient slope per class group: dV/dx_k ~ a_i x_k, k in D_i."""

    groups: tuple[tuple[int, ...], ...]
    coefficients: tuple[float, ...]
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not (len(self.groups) == len(self.coefficients)
                == len(self.bounds)):
            raise ValueError("groups/coefficients/bounds length mismatch")
        for a, (lo, hi) in zip(self.coefficients, self.bounds):
            if a < 0:
                raise ValueError("coefficients must be nonnegative")
            # the search grid floors candidates at zero, so negative
            # bounds admit exactly the zero coefficient
            if not max(lo, 0.0) - 1e-12 <= a <= max(hi, 0.0) + 1e-12:
                raise ValueError("coefficient outside its search bounds")


def ratio_bounds(samples: Sequence[GradientSample],
                 groups: Sequence[Sequence[int]],
                 ) -> tuple[tuple[float, float], ...]:
    """10th/90th percentiles of estimate-to-headcount ratios per group."""
    out = []
    for i, members in enumerate(groups):
        ratios = []
        for s in samples:
            for k in members:
                if s.state[k] != 0:
                    ratios.append(s.estimate[k] / s.state[k])
        if not ratios:
            raise ValueError(
                f"group {i} never visited a nonzero headcount")
        lo, hi = np.percentile(ratios, [10.0, 90.0])
        out.append((float(lo), float(hi)))
    return tuple(out)


def candidate_grid(bounds: Sequence[tuple[float, float]],
                   points: int = 5) -> list[tuple[float, ...]]:
    """Cartesian grid of equidistant points per axis (floored at zero).

    Degenerate bounds collapse their axis to a single candidate.
    """
    axes = []
    for lo, hi in bounds:
        if hi <= lo:
            axes.append(np.array([max(lo, 0.0)]))
        else:
            axes.append(np.maximum(np.linspace(lo, hi, points), 0.0))
    return [tuple(float(v) for v in combo)
            for combo in itertools.product(*axes)]


def _group_stats(inst: PrelimitInstance, groups: Sequence[Sequence[int]]):
    """Arrival-volume-weighted (mu, theta, c) per group.

    Groups without arrivals weight their members uniformly.
    """
    mu = np.array([c.service_rate for c in inst.classes])
    theta = np.array([c.abandon_rate for c in inst.classes])
    cost = np.array([c.total_cost for c in inst.classes])
    volume = inst.arrival_rate.sum(axis=1)
    stats = []
    for members in groups:
        members = list(members)
        w = volume[members]
        w = w / w.sum() if w.sum() > 0 else np.full(len(members),
                                                    1.0 / len(members))
        stats.append((float(w @ mu[members]), float(w @ theta[members]),
                      float(w @ cost[members])))
    return stats


@dataclass
class GroupLinearPolicy:
    """Two-tier ranking from a grouped linear gradient model.

    Groups are ordered by their aggregate effective holding cost
    c_i + (mu_i - theta_i) a_i x_i evaluated at the group headcount;
    classes inside each group keep a fixed c*mu/theta order.
    """

    model: GroupLinearModel
    group_stats: list  # (mu_i, theta_i, c_i) per group
    group_orders: tuple[tuple[int, ...], ...]
    name: str = "group-linear"

    def rank(self, t: float, X: np.ndarray) -> np.ndarray:
        scores = []
        for (mu_i, theta_i, c_i), members, a in zip(
                self.group_stats, self.model.groups,
                self.model.coefficients):
            x_i = float(sum(X[k] for k in members))
            scores.append(c_i + (mu_i - theta_i) * a * x_i)
        order = []
        for i in np.argsort(-np.asarray(scores), kind="stable"):
            order.extend(self.group_orders[i])
        return np.array(order)


def _within_group_order(classes, members) -> tuple[int, ...]:
    mu = np.array([c.service_rate for c in classes])
    theta = np.array([c.abandon_rate for c in classes])
    cost = np.array([c.total_cost for c in classes])
    if np.any(theta[list(members)] == 0):
        raise ValueError("within-group ordering needs abandonment rates")
    index = cost * mu / theta
    return tuple(sorted(members, key=lambda k: (-index[k], k)))


def group_linear_policy(model: GroupLinearModel, inst: PrelimitInstance,
                        name: str = "group-linear") -> GroupLinearPolicy:
    flat = sorted(k for g in model.groups for k in g)
    if flat != list(range(inst.num_classes)):
        raise ValueError("groups must partition the class set exactly")
    return GroupLinearPolicy(
        model=model, group_stats=_group_stats(inst, model.groups),
        group_orders=tuple(_within_group_order(inst.classes, g)
                           for g in model.groups),
        name=name)


def _net_hidden(net: Mlp) -> tuple[int, ...]:
    weights = [p for p in net.params if p.ndim == 2]
    return tuple(w.shape[1] for w in weights[:-1])


def save_gradient_model(path: str | Path, model) -> None:
    """Persist a fitted per-step or pooled gradient model (.npz + .json)."""
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    if isinstance(model, PerStepGradientModel):
        meta = {"kind": "per_step", "interval_count": model.interval_count,
                "horizon": model.horizon,
                "fallback_steps": list(model.fallback_steps)}
        hidden = None
        for n, net in enumerate(model.nets):
            if net is None:
                continue
            hidden = list(_net_hidden(net))
            for key, arr in net.state_arrays().items():
                arrays[f"step{n}_{key}"] = arr
        if hidden is None:
            raise ValueError("cannot persist a model with no fitted nets")
        meta["hidden"] = hidden
        sample_net = next(n for n in model.nets if n is not None)
        weights = [p for p in sample_net.params if p.ndim == 2]
        meta["in_width"] = int(weights[0].shape[0])
        meta["out_width"] = int(weights[-1].shape[1])
    elif isinstance(model, PooledGradientModel):
        meta = {"kind": "pooled", "horizon": model.horizon,
                "hidden": list(_net_hidden(model.net))}
        weights = [p for p in model.net.params if p.ndim == 2]
        meta["in_width"] = int(weights[0].shape[0])
        meta["out_width"] = int(weights[-1].shape[1])
        for key, arr in model.net.state_arrays().items():
            arrays[f"net_{key}"] = arr
    else:
        raise ValueError("unknown gradient model type")
    np.savez_compressed(path.with_suffix(".npz"), **arrays)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def load_gradient_model(path: str | Path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    with np.load(path.with_suffix(".npz")) as data:
        arrays = {k: data[k].copy() for k in data.files}
    hidden = tuple(meta["hidden"])
    if meta["kind"] == "per_step":
        nets = []
        for n in range(meta["interval_count"]):
            prefix = f"step{n}_"
            sub = {k[len(prefix):]: v for k, v in arrays.items()
                   if k.startswith(prefix)}
            if not sub:
                nets.append(None)
                continue
            net = Mlp(meta["in_width"], meta["out_width"], hidden=hidden)
            net.load_state_arrays(sub)
            nets.append(net)
        return PerStepGradientModel(
            nets=nets, interval_count=meta["interval_count"],
            horizon=meta["horizon"],
            fallback_steps=tuple(meta["fallback_steps"]))
    if meta["kind"] == "pooled":
        net = Mlp(meta["in_width"], meta["out_width"], hidden=hidden)
        net.load_state_arrays({k[len("net_"):]: v
                               for k, v in arrays.items()})
        return PooledGradientModel(net=net, horizon=meta["horizon"])
    raise ValueError(f"unknown gradient model kind {meta['kind']!r}")


def save_group_model(path: str | Path, model: GroupLinearModel) -> None:
    doc = {"groups": [list(g) for g in model.groups],
           "coefficients": list(model.coefficients),
           "bounds": [list(b) for b in model.bounds]}
    Path(path).write_text(json.dumps(doc, indent=2))


def load_group_model(path: str | Path) -> GroupLinearModel:
    doc = json.loads(Path(path).read_text())
    return GroupLinearModel(
        groups=tuple(tuple(g) for g in doc["groups"]),
        coefficients=tuple(doc["coefficients"]),
        bounds=tuple(tuple(b) for b in doc["bounds"]))


def fit_heuristic3(samples: Sequence[GradientSample],
                   groups: Sequence[Sequence[int]], inst: PrelimitInstance,
                   *, replications: int = 100, seed: int = 0,
                   decision_freq: float | None = None, points: int = 5,
                   bounds: Sequence[tuple[float, float]] | None = None,
                   ) -> tuple[GroupLinearModel, GroupLinearPolicy, list]:
    """Brute-force simulation search over the grouped linear coefficients.

    Every candidate on the grid is simulated with common random numbers;
    the returned trace holds one (coefficients, mean cost) entry per
    candidate and the model with the lowest mean cost wins.
    """
    groups = tuple(tuple(g) for g in groups)
    if bounds is None:
        bounds = ratio_bounds(samples, groups)
    bounds = tuple(bounds)
    trace = []
    best = None
    for coeffs in candidate_grid(bounds, points):
        model = GroupLinearModel(groups=groups, coefficients=coeffs,
                                 bounds=bounds)
        policy = group_linear_policy(model, inst)
        costs = [simulate_day(inst, policy, seed, decision_freq,
                              replication=i).total_cost
                 for i in range(replications)]
        mean_cost = float(np.mean(costs))
        trace.append((coeffs, mean_cost))
        if best is None or mean_cost < best[1]:
            best = (model, mean_cost)
    model = best[0]
    return model, group_linear_policy(model, inst), trace
