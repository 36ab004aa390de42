"""Exact finite-horizon dynamic programming on a truncated lattice.

Solves the scheduling problem as a continuous-time Markov decision
process by explicit backward Euler on the Bellman ODE.  The state space
is a box lattice with arrival rates zeroed on its upper faces, the
minimization over backlog allocations reduces to a greedy fill of the
classes with the cheapest effective holding cost, and the resulting
backward differences drive a ranking policy for the simulator.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ClassParams, PrelimitInstance, TimeGrid
from .sim import StaticRanking

SECONDS = 1.0 / 3600.0  # hours per second
TABLE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Truncation:
    """Box truncation of the lattice with upper bounds per class."""

    bounds: tuple[int, ...]

    def __post_init__(self):
        if not self.bounds or any(b < 1 for b in self.bounds):
            raise ValueError("truncation bounds must be positive")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(b + 1 for b in self.bounds)

    def clamp(self, x: np.ndarray) -> tuple[int, ...]:
        out = np.clip(np.asarray(x), 0, np.array(self.bounds))
        return tuple(int(v) for v in out)


@dataclass
class ValueTable:
    """Backward differences of the value function at saved time slices.

    ``diffs[s, k]`` holds V(t_s, x) - V(t_s, x - e_k) over the lattice
    (zero on the x_k = 0 face); ``save_times`` is ascending and includes
    t = 0.  ``v0`` is the full value slice at time zero.
    """

    bounds: tuple[int, ...]
    horizon: float
    dt: float
    save_times: np.ndarray
    diffs: np.ndarray
    v0: np.ndarray
    monotone_violations: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.bounds)

    def slice_index(self, t: float) -> int:
        """Latest saved slice at or before t (left-closed lookup)."""
        i = int(np.searchsorted(self.save_times, t, side="right")) - 1
        return max(i, 0)

    def diff_at(self, t: float, x: Sequence[int]) -> np.ndarray:
        s = self.slice_index(t)
        idx = (s, slice(None)) + tuple(x)
        return self.diffs[idx]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        np.savez_compressed(path.with_suffix(".npz"),
                            save_times=self.save_times, diffs=self.diffs,
                            v0=self.v0)
        header = {"format_version": TABLE_FORMAT_VERSION,
                  "bounds": list(self.bounds), "horizon": self.horizon,
                  "dt": self.dt,
                  "monotone_violations": self.monotone_violations}
        path.with_suffix(".json").write_text(json.dumps(header, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "ValueTable":
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        if header.get("format_version") != TABLE_FORMAT_VERSION:
            raise ValueError("unsupported value-table format")
        with np.load(path.with_suffix(".npz")) as d:
            return cls(bounds=tuple(header["bounds"]),
                       horizon=header["horizon"], dt=header["dt"],
                       save_times=d["save_times"].copy(),
                       diffs=d["diffs"].copy(), v0=d["v0"].copy(),
                       monotone_violations=header["monotone_violations"])


def _class_vectors(classes: Sequence[ClassParams]):
    mu = np.array([c.service_rate for c in classes])
    theta = np.array([c.abandon_rate for c in classes])
    cost = np.array([c.total_cost for c in classes])
    return mu, theta, cost


def _backward_diffs(V: np.ndarray) -> np.ndarray:
    """D[k] = V(x) - V(x - e_k), zero on the x_k = 0 face."""
    K = V.ndim
    D = np.zeros((K,) + V.shape)
    for k in range(K):
        lo = [slice(None)] * K
        hi = [slice(None)] * K
        lo[k] = slice(1, None)
        hi[k] = slice(None, -1)
        D[(k, *lo)] = V[tuple(lo)] - V[tuple(hi)]
    return D


def _greedy_min_term(phi: np.ndarray, coords: np.ndarray,
                     backlog: np.ndarray) -> np.ndarray:
    """min over feasible backlog splits of sum_k phi_k q_k, elementwise.

    phi and coords have shape (K, *lattice); the split is greedy from the
    cheapest phi upward, capped by the per-class headcount.
    """
    order = np.argsort(phi, axis=0, kind="stable")
    remaining = backlog.astype(np.float64).copy()
    total = np.zeros_like(remaining)
    K = phi.shape[0]
    for r in range(K):
        sel = order[r][None]
        xk = np.take_along_axis(coords, sel, axis=0)[0]
        pk = np.take_along_axis(phi, sel, axis=0)[0]
        q = np.minimum(xk, remaining)
        total += pk * q
        remaining -= q
    return total


def bellman_sweep(inst: PrelimitInstance, trunc: Truncation, dt: float, *,
                  save_every: float = 60.0 * SECONDS,
                  monotone_sample: int = 64,
                  seed: int = 0) -> ValueTable:
    """Backward Euler solve of the Bellman ODE on the truncated lattice.

    ``dt`` and ``save_every`` are in hours; ``save_every`` must be an
    integer multiple of ``dt`` and divide the horizon.  Returns the saved
    backward-difference slices, time-ascending.
    """
    K = inst.num_classes
    if len(trunc.bounds) != K:
        raise ValueError("truncation dimensionality mismatch")
    grid = inst.grid
    T = grid.horizon
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("dt must divide the horizon")
    stride = int(round(save_every / dt))
    if stride < 1 or abs(stride * dt - save_every) > 1e-12:
        raise ValueError("save interval must be a multiple of dt")

    mu, theta, cost = _class_vectors(inst.classes)
    bounds = np.array(trunc.bounds)
    # worst-case total outflow rate must keep residence probabilities valid
    peak_rate = float(inst.arrival_rate.sum(axis=0).max()
                      + (np.maximum(mu, theta) * bounds).sum())
    if peak_rate * dt > 1.0:
        raise ValueError(
            f"dt too large: peak total rate {peak_rate:.3g}/h gives "
            f"residence probability {1.0 - peak_rate * dt:.3g} < 0")

    shape = trunc.shape
    coords = np.indices(shape, dtype=np.float64)  # (K, *shape)
    total_head = coords.sum(axis=0)
    on_face = np.stack([coords[k] >= bounds[k] for k in range(K)])

    terminal_cap = inst.staffing[grid.interval_of(T)]
    V = inst.overtime_rate * np.maximum(total_head - terminal_cap, 0.0)

    saved: dict[int, np.ndarray] = {}
    rng = np.random.default_rng(seed)
    violations = 0

    def record(n: int, Vc: np.ndarray) -> None:
        nonlocal violations
        saved[n] = _backward_diffs(Vc)
        # monotonicity spot-check: more work in the system never costs less
        for _ in range(monotone_sample):
            x = tuple(rng.integers(0, b) for b in bounds)  # all below faces
            k = int(rng.integers(K))
            up = list(x)
            up[k] += 1
            if Vc[tuple(up)] < Vc[x] - 1e-9:
                violations += 1

    if steps % stride == 0:
        record(steps, V)
    coeff = (mu - theta).reshape((K,) + (1,) * K)
    mu_b = mu.reshape((K,) + (1,) * K)
    cost_b = cost.reshape((K,) + (1,) * K)
    for n in range(steps, 0, -1):
        t_n = n * dt
        interval = grid.interval_of(min(t_n, T))
        lam = inst.arrival_rate[:, interval].reshape((K,) + (1,) * K)
        lam_field = np.where(on_face, 0.0, lam)
        cap = float(inst.staffing[interval])
        D = _backward_diffs(V)
        # arrivals see the difference one step up: V(x + e_k) - V(x)
        up_diff = np.zeros_like(D)
        for k in range(K):
            src = [slice(None)] * K
            dst = [slice(None)] * K
            src[k] = slice(1, None)
            dst[k] = slice(None, -1)
            up_diff[(k, *dst)] = D[(k, *src)]
        arr_term = (lam_field * up_diff).sum(axis=0)
        svc_term = -(mu_b * coords * D).sum(axis=0)
        backlog = np.maximum(total_head - cap, 0.0)
        phi = cost_b + coeff * D
        min_term = _greedy_min_term(phi, coords, backlog)
        V = V + dt * (arr_term + svc_term + min_term)
        if (n - 1) % stride == 0:
            record(n - 1, V)

    order = sorted(saved)
    return ValueTable(bounds=trunc.bounds, horizon=T, dt=dt,
                      save_times=np.array([n * dt for n in order]),
                      diffs=np.stack([saved[n] for n in order]),
                      v0=V,
                      monotone_violations=violations)


@dataclass
class MdpRankingPolicy:
    """Ranks classes by effective holding cost from a solved value table."""

    table: ValueTable
    classes: tuple[ClassParams, ...]
    name: str = "mdp"
    clamped_states: int = 0

    def rank(self, t: float, X: np.ndarray) -> np.ndarray:
        trunc = Truncation(self.table.bounds)
        x = trunc.clamp(X)
        if tuple(int(v) for v in X) != x:
            self.clamped_states += 1
        t = min(max(t, 0.0), self.table.horizon)
        D = self.table.diff_at(t, x)
        mu, theta, cost = _class_vectors(self.classes)
        phi = cost + (mu - theta) * D
        return np.argsort(-phi, kind="stable")


def mdp_policy(table: ValueTable, inst: PrelimitInstance,
               name: str = "mdp") -> MdpRankingPolicy:
    if table.num_classes != inst.num_classes:
        raise ValueError("value table dimensionality mismatch")
    return MdpRankingPolicy(table=table, classes=inst.classes, name=name)


# ------------------------------------------------------- auxiliary MDP

def _cmu_theta_order(classes, members) -> list[int]:
    mu, theta, cost = _class_vectors(classes)
    if np.any(theta[list(members)] == 0):
        raise ValueError("cmu/theta ordering needs positive abandonment rates")
    index = cost * mu / theta
    return sorted(members, key=lambda k: (-index[k], k))


def aggregate_low_groups(inst: PrelimitInstance, groups: Sequence[Sequence[int]]):
    """Arrival-volume-weighted (mu, theta, c) and summed arrival curves."""
    classes = []
    lam_rows = []
    mu, theta, cost = _class_vectors(inst.classes)
    volume = inst.arrival_rate.sum(axis=1)
    for i, members in enumerate(groups):
        members = list(members)
        w = volume[members]
        if w.sum() <= 0:
            raise ValueError(f"group {i} has no arrivals")
        w = w / w.sum()
        c_i = float(w @ cost[members])
        classes.append(ClassParams(
            service_rate=float(w @ mu[members]),
            abandon_rate=float(w @ theta[members]),
            holding_cost=c_i, abandon_penalty=0.0, total_cost=c_i,
            name=f"group {i + 1}"))
        lam_rows.append(inst.arrival_rate[members].sum(axis=0))
    return tuple(classes), np.array(lam_rows)


def low_priority_capacity(inst: PrelimitInstance,
                          high: Sequence[int]) -> np.ndarray:
    """(N - N_H)^+ per interval, with N_H the ceiled high-priority load."""
    mu = np.array([c.service_rate for c in inst.classes])
    high = list(high)
    offered = (inst.arrival_rate[high] / mu[high, None]).sum(axis=0)
    n_high = np.ceil(offered - 1e-12).astype(np.int64)
    return np.maximum(inst.staffing - n_high, 0)


@dataclass
class AuxiliaryMdpPolicy:
    """Two-tier ranking: fixed high-priority block, MDP-ordered low groups."""

    inst: PrelimitInstance
    table: ValueTable
    group_classes: tuple[ClassParams, ...]
    high_order: tuple[int, ...]
    group_orders: tuple[tuple[int, ...], ...]  # within-group class order
    capacity_exhausted: bool  # true if N_L was 0 on some interval
    name: str = "aux-mdp"

    def rank(self, t: float, X: np.ndarray) -> np.ndarray:
        trunc = Truncation(self.table.bounds)
        agg = [int(sum(X[k] for k in members))
               for members in self.group_orders]
        x = trunc.clamp(np.array(agg))
        t = min(max(t, 0.0), self.table.horizon)
        D = self.table.diff_at(t, x)
        mu, theta, cost = _class_vectors(self.group_classes)
        phi = cost + (mu - theta) * D
        group_rank = np.argsort(-phi, kind="stable")
        order = list(self.high_order)
        for i in group_rank:
            order.extend(self.group_orders[i])
        return np.array(order)


def auxiliary_mdp_policy(inst: PrelimitInstance, high: Sequence[int],
                         low_groups: Sequence[Sequence[int]],
                         trunc: Truncation, dt: float, *,
                         save_every: float = 60.0 * SECONDS,
                         seed: int = 0) -> AuxiliaryMdpPolicy:
    """Solve the group-aggregated MDP and build the two-tier policy.

    ``high`` holds the always-first class indices; ``low_groups``
    partitions the remaining classes into the MDP dimensions.
    """
    all_members = sorted(list(high) + [k for g in low_groups for k in g])
    if all_members != list(range(inst.num_classes)):
        raise ValueError("groups must partition the class set exactly")
    group_classes, lam = aggregate_low_groups(inst, low_groups)
    capacity = low_priority_capacity(inst, high)
    aux = PrelimitInstance(classes=group_classes, grid=inst.grid,
                           arrival_rate=lam, staffing=capacity,
                           overtime_rate=inst.overtime_rate)
    table = bellman_sweep(aux, trunc, dt, save_every=save_every, seed=seed)
    return AuxiliaryMdpPolicy(
        inst=inst, table=table, group_classes=group_classes,
        high_order=tuple(_cmu_theta_order(inst.classes, high)),
        group_orders=tuple(tuple(_cmu_theta_order(inst.classes, g))
                           for g in low_groups),
        capacity_exhausted=bool((capacity == 0).any()))
