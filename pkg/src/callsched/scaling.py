"""Heavy-traffic calibration and generation of the built-in test problems.

Builds the limiting diffusion-control problem from a pre-limit instance and
synthesizes the seven test problems (2, 3, 3-variant, 17, 30, 50 and 100
classes) from the embedded parameter tables plus synthetic day-shape
arrival curves.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tables
from .model import (ClassParams, LimitInstance, PrelimitInstance, TimeGrid,
                    build_class)

LOW_DIM_GROUPS = {
    "dim2": tables.DIM2_GROUPS,
    "dim3": tables.DIM3_GROUPS,
    "dim3_variant": tables.DIM3_GROUPS,
}

TEST_PROBLEMS = ("dim2", "dim3", "dim3_variant", "main17",
                 "dim30", "dim50", "dim100")


@dataclass(frozen=True)
class DayShape:
    """Normalized per-interval arrival weights over the operating day."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if np.any(w < 0):
            raise ValueError("day-shape weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("day-shape weights must sum to 1")


def synth_day_shape(kind: str, interval_count: int, horizon: float = tables.HORIZON_HOURS,
                    peak_time: float = 7.0, peak_width: float = 3.5,
                    baseline: float = 0.25) -> DayShape:
    """Build a normalized arrival-weight curve.

    ``flat`` gives uniform weights; ``unimodal_peak`` a Gaussian bump on a
    constant baseline, peaking mid-day.
    """
    if kind == "flat":
        w = np.full(interval_count, 1.0 / interval_count)
        return DayShape(weights=w)
    if kind == "unimodal_peak":
        if peak_width <= 0:
            raise ValueError("peak width must be positive")
        dt = horizon / interval_count
        mid = (np.arange(interval_count) + 0.5) * dt
        # nudge the peak off exact interval boundaries so the heaviest
        # interval is the one containing the peak (left-closed intervals)
        w = baseline + np.exp(-0.5 * ((mid - (peak_time + 1e-9 * dt)) / peak_width) ** 2)
        w = w / w.sum()
        # renormalize exactly against accumulated rounding
        w = w / w.sum()
        return DayShape(weights=w)
    raise ValueError(f"unknown day-shape kind {kind!r}")


def load_factor(inst: PrelimitInstance) -> float:
    """System utilization: offered work divided by total agent-hours."""
    staffing_total = float(inst.staffing.sum())
    if staffing_total <= 0:
        raise ValueError("total staffing must be positive")
    m = np.array([1.0 / c.service_rate for c in inst.classes])
    offered = float(m @ inst.arrival_rate.sum(axis=1))
    return offered / staffing_total


def to_limit(inst: PrelimitInstance, r: float, q: np.ndarray) -> LimitInstance:
    """Derive the limiting diffusion-control problem at scale r.

    The limiting arrival rates are split across classes by the fractions q
    so the heavy-traffic identity holds by construction; the second-order
    terms absorb the residual between the actual and limiting arrivals.
    """
    if r <= 0:
        raise ValueError("scale parameter must be positive")
    q = np.asarray(q, dtype=np.float64)
    if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("class fractions must be nonnegative and sum to 1")
    mu = np.array([c.service_rate for c in inst.classes])
    denom = float((q / mu).sum())
    if denom == 0:
        raise ValueError("sum of q/mu must be positive")
    staffing = inst.staffing.astype(np.float64) / r
    lam = q[:, None] * staffing[None, :] / denom
    zeta = (inst.arrival_rate - r * lam) / math.sqrt(r)
    return LimitInstance(
        classes=inst.classes,
        grid=inst.grid,
        arrival_rate=lam,
        second_order=zeta,
        staffing=staffing,
        scale=r,
        overtime_rate=inst.overtime_rate,
    )


def _main17_classes() -> tuple[ClassParams, ...]:
    return tuple(
        build_class(mu, theta, h, p, name=name)
        for name, _, mu, theta, p, h in tables.MAIN17_ROWS
    )


def _main17_fractions() -> np.ndarray:
    q = np.array([row[1] for row in tables.MAIN17_ROWS])
    return q / q.sum()


def _synth_prelimit(classes, q, shape: DayShape, grid: TimeGrid,
                    rho: float, avg_agents: float, scale: float = 1.0):
    """Arrival curves and staffing for a synthetic operating day.

    Total daily volume is calibrated so the average staffing at utilization
    ``rho`` is ``avg_agents * scale``; per-interval staffing is the offered
    load divided by rho, rounded up.
    """
    m = np.array([1.0 / c.service_rate for c in classes])
    volume = avg_agents * scale * rho * grid.horizon / float(q @ m)
    lam = volume * q[:, None] * shape.weights[None, :] / grid.dt
    offered = m @ lam
    staffing = np.ceil(offered / rho).astype(np.int64)
    return lam, staffing


def _aggregate(groups) -> tuple[tuple[ClassParams, ...], np.ndarray, list[list[int]]]:
    """Arrival-weighted merge of the seventeen base classes into groups."""
    rows = tables.MAIN17_ROWS
    classes = []
    q_groups = []
    members = []
    for gi, names in enumerate(groups):
        idx = [tables.class_index(n) for n in names]
        q = np.array([rows[i][1] for i in idx])
        w = q / q.sum()
        mu = float(w @ [rows[i][2] for i in idx])
        theta = float(w @ [rows[i][3] for i in idx])
        p = float(w @ [rows[i][4] for i in idx])
        h = float(w @ [rows[i][5] for i in idx])
        classes.append(build_class(mu, theta, h, p, name=f"group {gi + 1}"))
        q_groups.append(q.sum())
        members.append(idx)
    q_arr = np.array(q_groups)
    return tuple(classes), q_arr / q_arr.sum(), members


def make_test_problem(which: str, seed: int = 0, r: float = tables.BASE_SCALE_R,
                      rho: float = tables.TARGET_LOAD,
                      avg_agents: float = tables.AVG_AGENTS,
                      interval_count: int = tables.INTERVAL_COUNT,
                      ) -> tuple[PrelimitInstance, LimitInstance]:
    """Build one of the embedded test problems at system scale r.

    The arrival curves are synthetic (unimodal mid-day peak); all class
    parameters come verbatim from the embedded tables.
    """
    if which not in TEST_PROBLEMS:
        raise ValueError(f"unknown test problem {which!r}")
    grid = TimeGrid(horizon=tables.HORIZON_HOURS, interval_count=interval_count)
    shape = synth_day_shape("unimodal_peak", interval_count)
    base_classes = _main17_classes()
    base_q = _main17_fractions()
    base_lam, base_staffing = _synth_prelimit(
        base_classes, base_q, shape, grid, rho, avg_agents, scale=r / tables.BASE_SCALE_R)

    if which == "main17":
        pre = PrelimitInstance(classes=base_classes, grid=grid,
                               arrival_rate=base_lam, staffing=base_staffing,
                               overtime_rate=tables.OVERTIME_RATE)
        return pre, to_limit(pre, r, base_q)

    if which in LOW_DIM_GROUPS:
        classes, q, members = _aggregate(LOW_DIM_GROUPS[which])
        if which == "dim3_variant":
            k = tables.DIM3_VARIANT_HALVED_CLASS
            c = classes[k]
            halved = build_class(c.service_rate, c.abandon_rate,
                                 c.holding_cost / 2, c.abandon_penalty / 2,
                                 name=c.name)
            classes = classes[:k] + (halved,) + classes[k + 1:]
        lam = np.stack([base_lam[idx].sum(axis=0) for idx in members])
        pre = PrelimitInstance(classes=classes, grid=grid, arrival_rate=lam,
                               staffing=base_staffing,
                               overtime_rate=tables.OVERTIME_RATE)
        return pre, to_limit(pre, r, q)

    # high-dimensional problems: common rates, per-class holding costs,
    # arrival curves copied from a source base class
    rows, common, _mesh = tables.HIGHDIM_SPECS[which]
    J, K = len(rows), len(base_classes)
    r_big = math.ceil(r * J / K)
    rho_big = 1.0 - (1.0 - rho) / math.sqrt(J / K)
    classes = tuple(
        build_class(common["mu"], common["theta"], h, common["p"],
                    name=f"class {j + 1}")
        for j, (_, _, h) in enumerate(rows)
    )
    lam = np.stack([base_lam[tables.class_index(src)] for src, _, _ in rows])
    q = np.array([row[1] for row in rows])
    q = q / q.sum()
    m = 1.0 / common["mu"]
    # staffing follows the base day's profile, scaled to carry the new
    # offered load at the economies-of-scale utilization
    profile = base_staffing / base_staffing.sum()
    staffing = np.ceil(profile * (m * lam.sum()) / rho_big).astype(np.int64)
    pre = PrelimitInstance(classes=classes, grid=grid, arrival_rate=lam,
                           staffing=staffing,
                           overtime_rate=tables.OVERTIME_RATE)
    return pre, to_limit(pre, r_big, q)


def provenance(which: str, seed: int, r: float) -> dict:
    """Sidecar metadata recorded next to generated instance files."""
    info = {"which": which, "seed": seed, "base_scale": r, "tables_version": 1}
    if which in tables.HIGHDIM_SPECS:
        rows, common, mesh = tables.HIGHDIM_SPECS[which]
        J, K = len(rows), len(tables.MAIN17_ROWS)
        info["scale"] = math.ceil(r * J / K)
        info["holding_grid_mesh"] = mesh
        info["common_rates"] = common
        info["source_classes"] = [row[0] for row in rows]
    else:
        info["scale"] = r
    return info


def write_provenance(path: str | Path, which: str, seed: int, r: float) -> None:
    Path(path).write_text(json.dumps(provenance(which, seed, r), indent=2))
