"""Event-driven simulator of the finite-horizon multiclass queue.

The state process is a continuous-time Markov chain: Poisson arrivals with
piecewise-constant rates, exponential services for jobs at an agent, and
exponential patience for jobs in queue.  A ranking policy decides which
classes keep their jobs in service; allocation is greedy down the ranking
and preemptive (allowed because exponential services are memoryless).

Exponential clocks are resampled at interval and decision boundaries,
which is exact in law for piecewise-constant rates.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .model import PrelimitInstance


class RankingPolicy(Protocol):
    """Maps (time, headcount vector) to a service-priority permutation."""

    name: str

    def rank(self, t: float, X: np.ndarray) -> np.ndarray:
        """Return class indices ordered highest service priority first."""
        ...


@dataclass(frozen=True)
class StaticRanking:
    """A fixed priority permutation, highest priority first."""

    order: tuple[int, ...]
    name: str = "static"

    def rank(self, t, X) -> np.ndarray:
        return np.asarray(self.order)


@dataclass
class DayStats:
    """Outcome of one simulated day."""

    total_cost: float
    arrivals: np.ndarray  # per class
    abandonments: np.ndarray  # per class
    queue_time_avg: np.ndarray  # per-class time-average queue length
    final_state: np.ndarray | None = None  # headcounts when the run stopped

    @property
    def abandonment_fraction(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(self.arrivals > 0,
                            self.abandonments / np.maximum(self.arrivals, 1), 0.0)
        return frac


@dataclass
class RunStats:
    """Replication summary for one policy under common random numbers."""

    policy_name: str
    costs: np.ndarray  # per replication
    queue_time_avg: np.ndarray  # (replications, K)
    abandonment_fraction: np.ndarray  # (replications, K)

    @property
    def mean_cost(self) -> float:
        return float(self.costs.mean())

    @property
    def half_width(self) -> float:
        n = len(self.costs)
        return 1.96 * float(self.costs.std(ddof=1)) / np.sqrt(n)


@dataclass
class PairedGap:
    """CRN-paired cost difference of a policy against the baseline."""

    policy_name: str
    baseline_name: str
    mean_diff: float
    diff_half_width: float
    relative_gap_pct: float
    relative_half_width_pct: float


def make_rng(seed: int, replication: int, role: int = 0) -> np.random.Generator:
    """Counter-based stream keyed so CRN pairing is exact across policies."""
    # Philox keys are two 64-bit words; pack (replication, role) into one.
    return np.random.Generator(
        np.random.Philox(key=(seed, (replication << 20) + role)))


def allocate(X: np.ndarray, capacity: int, ranking: np.ndarray) -> np.ndarray:
    """Greedy server assignment down the ranking.

    The highest-ranked class puts as many of its jobs into service as
    capacity allows, then the next class fills what remains, and so on.
    """
    psi = np.zeros_like(X)
    free = capacity
    for k in ranking:
        take = min(int(X[k]), free)
        psi[k] = take
        free -= take
        if free == 0:
            break
    return psi


def _check_invariants(X, psi, capacity):
    assert np.all(psi <= X), "in-service exceeds headcount"
    assert np.all(psi >= 0)
    total = int(X.sum())
    assert int(psi.sum()) == min(total, capacity), "work conservation violated"
    queue = total - int(psi.sum())
    idle = capacity - int(psi.sum())
    assert min(queue, idle) == 0, "servers idle while jobs queue"


def simulate_day(inst: PrelimitInstance, policy: RankingPolicy, seed: int,
                 decision_freq: float | None = None, *, replication: int = 0,
                 cost_mode: str = "cY", x0: np.ndarray | None = None,
                 t0: float = 0.0, t_end: float | None = None,
                 debug: bool = False,
                 rng: np.random.Generator | None = None) -> DayStats:
    """Simulate one operating day and return the exact accumulated cost.

    ``decision_freq`` (hours) sets how often the policy is re-ranked;
    ``None`` re-ranks only at interval boundaries.  ``cost_mode`` picks the
    accounting convention: "cY" accrues the combined cost rate on the
    queue, "hY_plus_p" accrues holding cost and charges the abandonment
    penalty per abandonment event.  Both agree in expectation.

    ``t_end`` stops the run early (the overtime charge applies only when
    the run reaches the full horizon).
    """
    if cost_mode not in ("cY", "hY_plus_p"):
        raise ValueError(f"unknown cost mode {cost_mode!r}")
    grid = inst.grid
    if grid.interval_count < 1:
        raise ValueError("empty grid")
    K = inst.num_classes
    T = grid.horizon
    dt_grid = grid.dt
    if decision_freq is not None and decision_freq <= 0:
        raise ValueError("decision frequency must be positive")

    mu = np.array([c.service_rate for c in inst.classes])
    theta = np.array([c.abandon_rate for c in inst.classes])
    h = np.array([c.holding_cost for c in inst.classes])
    p = np.array([c.abandon_penalty for c in inst.classes])
    c = np.array([c.total_cost for c in inst.classes])
    cost_rate_vec = c if cost_mode == "cY" else h

    if rng is None:
        rng = make_rng(seed, replication)

    end = T if t_end is None else float(t_end)
    if not t0 < end <= T:
        raise ValueError("need t0 < t_end <= horizon")

    X = np.zeros(K, dtype=np.int64) if x0 is None else np.array(x0, dtype=np.int64)
    t = float(t0)
    horizon_span = end - t
    ranking = np.asarray(policy.rank(t, X))
    n = grid.interval_of(t) if t < T else grid.interval_count - 1
    capacity = int(inst.staffing[n])
    psi = allocate(X, capacity, ranking)

    lam = inst.arrival_rate
    lam_cum = np.cumsum(lam, axis=0)  # (K, N) cumulative by class

    cost = 0.0
    arrivals = np.zeros(K)
    abandons = np.zeros(K)
    queue_integral = np.zeros(K)

    if decision_freq is None:
        next_decision = np.inf
    else:
        steps = int(np.floor((t - t0) / decision_freq)) + 1
        next_decision = t0 + steps * decision_freq

    while t < end:
        interval_end = (n + 1) * dt_grid
        boundary = min(interval_end, next_decision, end)
        lam_n = lam[:, n]
        lam_cum_n = lam_cum[:, n]
        total_arr = lam_cum_n[-1]
        while t < boundary:
            Y = X - psi
            svc = mu * psi
            ab = theta * Y
            total_svc = float(svc.sum())
            total_ab = float(ab.sum())
            R = total_arr + total_svc + total_ab
            if R <= 0:
                dt_left = boundary - t
                queue_integral += Y * dt_left
                cost += float(cost_rate_vec @ Y) * dt_left
                t = boundary
                break
            wait = rng.exponential(1.0) / R
            step = min(wait, boundary - t)
            queue_integral += Y * step
            cost += float(cost_rate_vec @ Y) * step
            t += step
            if t >= boundary:
                # clock crossed the boundary: resample (memoryless)
                t = boundary
                break
            u = rng.random() * R
            if u < total_arr:
                k = int(np.searchsorted(lam_cum_n, u, side="right"))
                X[k] += 1
                arrivals[k] += 1
            elif u < total_arr + total_svc:
                k = int(np.searchsorted(np.cumsum(svc), u - total_arr, side="right"))
                X[k] -= 1
            else:
                k = int(np.searchsorted(np.cumsum(ab), u - total_arr - total_svc,
                                        side="right"))
                X[k] -= 1
                abandons[k] += 1
                if cost_mode == "hY_plus_p":
                    cost += p[k]
            psi = allocate(X, capacity, ranking)
            if debug:
                _check_invariants(X, psi, capacity)
        # boundary housekeeping
        if t >= end:
            break
        if decision_freq is not None and t >= next_decision - 1e-15:
            ranking = np.asarray(policy.rank(t, X))
            next_decision += decision_freq
        # advance the interval index directly: re-deriving it from t can
        # round back into the old interval when dt is not exactly
        # representable, which would stall the loop
        if t >= interval_end and n < grid.interval_count - 1:
            n += 1
            capacity = int(inst.staffing[n])
        psi = allocate(X, capacity, ranking)
        if debug:
            _check_invariants(X, psi, capacity)

    # overtime: leftover jobs beyond the final staffing level
    if end >= T:
        final_capacity = int(inst.staffing[-1])
        cost += inst.overtime_rate * max(int(X.sum()) - final_capacity, 0)

    return DayStats(total_cost=cost, arrivals=arrivals, abandonments=abandons,
                    queue_time_avg=queue_integral / horizon_span,
                    final_state=X.copy())


def compare_policies(inst: PrelimitInstance, policies: Sequence[RankingPolicy],
                     replications: int, seed: int,
                     decision_freq: float | None = None, *,
                     cost_mode: str = "cY",
                     ) -> tuple[list[RunStats], list[PairedGap]]:
    """Run every policy on identically seeded streams and report paired gaps.

    Replication i of every policy uses the same random stream, so the
    paired differences remove most between-day variance.
    """
    if replications < 2:
        raise ValueError("need at least 2 replications for confidence intervals")
    K = inst.num_classes
    all_stats: list[RunStats] = []
    for policy in policies:
        costs = np.empty(replications)
        queues = np.empty((replications, K))
        fracs = np.empty((replications, K))
        for i in range(replications):
            day = simulate_day(inst, policy, seed, decision_freq,
                               replication=i, cost_mode=cost_mode)
            costs[i] = day.total_cost
            queues[i] = day.queue_time_avg
            fracs[i] = day.abandonment_fraction
        all_stats.append(RunStats(policy_name=getattr(policy, "name", "policy"),
                                  costs=costs, queue_time_avg=queues,
                                  abandonment_fraction=fracs))
    gaps: list[PairedGap] = []
    base = all_stats[0]
    for st in all_stats:
        diff = st.costs - base.costs
        hw = 1.96 * float(diff.std(ddof=1)) / np.sqrt(replications)
        denom = base.mean_cost if base.mean_cost != 0 else 1.0
        gaps.append(PairedGap(
            policy_name=st.policy_name, baseline_name=base.policy_name,
            mean_diff=float(diff.mean()), diff_half_width=hw,
            relative_gap_pct=100.0 * float(diff.mean()) / denom,
            relative_half_width_pct=100.0 * hw / abs(denom)))
    return all_stats, gaps


def write_run_csv(path: str | Path, stats: RunStats) -> None:
    """Per-replication results: cost, mean queue lengths, abandonment fractions."""
    K = stats.queue_time_avg.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replication", "total_cost"]
                        + [f"queue_mean_{k}" for k in range(K)]
                        + [f"abandon_frac_{k}" for k in range(K)])
        for i in range(len(stats.costs)):
            writer.writerow(
                [i, repr(float(stats.costs[i]))]
                + [repr(float(v)) for v in stats.queue_time_avg[i]]
                + [repr(float(v)) for v in stats.abandonment_fraction[i]])
