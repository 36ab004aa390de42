"""Core problem-instance types shared by every other module.

Units are fixed across the package: rates per hour, time in hours,
costs in dollars.  All arithmetic is 64-bit floating point.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

HEAVY_TRAFFIC_RTOL = 1e-9


@dataclass(frozen=True)
class ClassParams:
    """Per-class rates and cost parameters.

    ``total_cost`` is the queueing cost rate c = h + theta * p, the
    combined holding and abandonment cost per job-hour in queue.
    """

    service_rate: float
    abandon_rate: float
    holding_cost: float
    abandon_penalty: float
    total_cost: float
    name: str = ""


def build_class(mu: float, theta: float, h: float, p: float, name: str = "") -> ClassParams:
    """Construct a ClassParams, deriving the total cost rate c = h + theta*p."""
    if mu <= 0:
        raise ValueError(f"service rate must be positive, got {mu}")
    if theta < 0:
        raise ValueError(f"abandonment rate must be nonnegative, got {theta}")
    if h < 0 or p < 0:
        raise ValueError(f"cost parameters must be nonnegative, got h={h}, p={p}")
    c = h + theta * p
    if c <= 0:
        raise ValueError(f"total cost rate must be positive, got {c}")
    return ClassParams(
        service_rate=float(mu),
        abandon_rate=float(theta),
        holding_cost=float(h),
        abandon_penalty=float(p),
        total_cost=float(c),
        name=name,
    )


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of the operating day [0, T] into N intervals."""

    horizon: float
    interval_count: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.interval_count < 1:
            raise ValueError(f"interval count must be >= 1, got {self.interval_count}")

    @property
    def dt(self) -> float:
        return self.horizon / self.interval_count

    @property
    def boundaries(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.interval_count + 1)

    def interval_of(self, t: float) -> int:
        """Index n with t in [t_n, t_{n+1}); the last interval is right-closed."""
        if t < 0 or t > self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        n = int(t / self.dt)
        return min(n, self.interval_count - 1)


@dataclass(frozen=True)
class PrelimitInstance:
    """The pre-limit call-center scheduling problem.

    ``arrival_rate`` is a (K, N) array of per-hour rates, piecewise
    constant per interval; ``staffing`` is a length-N integer array.
    """

    classes: tuple[ClassParams, ...]
    grid: TimeGrid
    arrival_rate: np.ndarray
    staffing: np.ndarray
    overtime_rate: float

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        arr = np.asarray(self.arrival_rate, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "arrival_rate", arr)
        staff = np.asarray(self.staffing, dtype=np.int64)
        staff.setflags(write=False)
        object.__setattr__(self, "staffing", staff)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def staffing_at(self, t: float) -> int:
        return int(self.staffing[self.grid.interval_of(t)])


@dataclass(frozen=True)
class LimitInstance:
    """The diffusion-control problem obtained in the many-server limit."""

    classes: tuple[ClassParams, ...]
    grid: TimeGrid
    arrival_rate: np.ndarray  # (K, N) limiting rates lambda_k
    second_order: np.ndarray  # (K, N) signed drift terms zeta_k
    staffing: np.ndarray  # (N,) real-valued limiting staffing
    scale: float  # system size parameter r
    overtime_rate: float = 0.0  # terminal cost slope on leftover backlog

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        for name in ("arrival_rate", "second_order", "staffing"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def diffusion_coeff(self) -> np.ndarray:
        """sigma_k[n] = sqrt(2 * lambda_k[n])."""
        return np.sqrt(2.0 * self.arrival_rate)

    @property
    def nominal_in_service(self) -> np.ndarray:
        """psi*_k[n] = lambda_k[n] / mu_k, the fluid-scale service split."""
        mu = np.array([c.service_rate for c in self.classes])
        return self.arrival_rate / mu[:, None]


def _validate_class(k: int, cp: ClassParams, out: list[str]) -> None:
    if cp.service_rate <= 0:
        out.append(f"class {k} ({cp.name}): service_rate must be positive")
    if cp.abandon_rate < 0:
        out.append(f"class {k} ({cp.name}): abandon_rate must be nonnegative")
    if cp.holding_cost < 0:
        out.append(f"class {k} ({cp.name}): holding_cost must be nonnegative")
    if cp.abandon_penalty < 0:
        out.append(f"class {k} ({cp.name}): abandon_penalty must be nonnegative")
    expected_c = cp.holding_cost + cp.abandon_rate * cp.abandon_penalty
    if cp.total_cost != expected_c:
        out.append(f"class {k} ({cp.name}): total_cost {cp.total_cost} != h + theta*p = {expected_c}")
    if cp.total_cost <= 0:
        out.append(f"class {k} ({cp.name}): total_cost must be positive")


def validate_instance(inst: PrelimitInstance | LimitInstance) -> list[str]:
    """Check all type invariants; returns a list of human-readable violations.

    Validation never raises: an empty list means the instance is well formed.
    """
    out: list[str] = []
    K = inst.num_classes
    N = inst.grid.interval_count
    for k, cp in enumerate(inst.classes):
        _validate_class(k, cp, out)
    if inst.arrival_rate.shape != (K, N):
        out.append(f"arrival_rate shape {inst.arrival_rate.shape} != ({K}, {N})")
        return out

    if isinstance(inst, PrelimitInstance):
        if inst.staffing.shape != (N,):
            out.append(f"staffing shape {inst.staffing.shape} != ({N},)")
            return out
        for k in range(K):
            for n in np.nonzero(inst.arrival_rate[k] < 0)[0]:
                out.append(f"arrival_rate: class {k} interval {int(n)} is negative")
        for n in np.nonzero(inst.staffing < 0)[0]:
            out.append(f"staffing: interval {int(n)} is negative")
    else:
        if inst.second_order.shape != (K, N):
            out.append(f"second_order shape {inst.second_order.shape} != ({K}, {N})")
            return out
        if inst.staffing.shape != (N,):
            out.append(f"staffing shape {inst.staffing.shape} != ({N},)")
            return out
        if inst.scale <= 0:
            out.append(f"scale must be positive, got {inst.scale}")
        for k in range(K):
            for n in np.nonzero(inst.arrival_rate[k] < 0)[0]:
                out.append(f"arrival_rate: class {k} interval {int(n)} is negative")
        mu = np.array([c.service_rate for c in inst.classes])
        offered = (inst.arrival_rate / mu[:, None]).sum(axis=0)
        bad = ~np.isclose(offered, inst.staffing, rtol=HEAVY_TRAFFIC_RTOL, atol=0.0)
        for n in np.nonzero(bad)[0]:
            out.append(
                f"heavy-traffic identity violated at interval {int(n)}: "
                f"sum(lambda/mu)={offered[n]!r} != N={inst.staffing[n]!r}"
            )
    return out


# ---------------------------------------------------------------------------
# JSON instance files


def _classes_to_json(classes) -> list[dict]:
    return [
        {
            "name": c.name,
            "service_rate": c.service_rate,
            "abandon_rate": c.abandon_rate,
            "holding_cost": c.holding_cost,
            "abandon_penalty": c.abandon_penalty,
            "total_cost": c.total_cost,
        }
        for c in classes
    ]


def _classes_from_json(items) -> tuple[ClassParams, ...]:
    return tuple(
        ClassParams(
            service_rate=d["service_rate"],
            abandon_rate=d["abandon_rate"],
            holding_cost=d["holding_cost"],
            abandon_penalty=d["abandon_penalty"],
            total_cost=d["total_cost"],
            name=d.get("name", ""),
        )
        for d in items
    )


def instance_to_json(inst: PrelimitInstance | LimitInstance) -> dict:
    """Self-describing JSON document; arrays are row-major [class][interval]."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "prelimit" if isinstance(inst, PrelimitInstance) else "limit",
        "horizon": inst.grid.horizon,
        "interval_count": inst.grid.interval_count,
        "classes": _classes_to_json(inst.classes),
        "arrival_rate": inst.arrival_rate.tolist(),
    }
    if isinstance(inst, PrelimitInstance):
        doc["staffing"] = inst.staffing.tolist()
        doc["overtime_rate"] = inst.overtime_rate
    else:
        doc["second_order"] = inst.second_order.tolist()
        doc["staffing"] = inst.staffing.tolist()
        doc["scale"] = inst.scale
        doc["overtime_rate"] = inst.overtime_rate
    return doc


def instance_from_json(doc: dict) -> PrelimitInstance | LimitInstance:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    grid = TimeGrid(horizon=doc["horizon"], interval_count=doc["interval_count"])
    classes = _classes_from_json(doc["classes"])
    if doc["kind"] == "prelimit":
        return PrelimitInstance(
            classes=classes,
            grid=grid,
            arrival_rate=np.array(doc["arrival_rate"]),
            staffing=np.array(doc["staffing"]),
            overtime_rate=doc["overtime_rate"],
        )
    if doc["kind"] == "limit":
        return LimitInstance(
            classes=classes,
            grid=grid,
            arrival_rate=np.array(doc["arrival_rate"]),
            second_order=np.array(doc["second_order"]),
            staffing=np.array(doc["staffing"]),
            scale=doc["scale"],
            overtime_rate=doc.get("overtime_rate", 0.0),
        )
    raise ValueError(f"unknown instance kind {doc['kind']!r}")


def save_instance(inst: PrelimitInstance | LimitInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance_to_json(inst)))


def load_instance(path: str | Path) -> PrelimitInstance | LimitInstance:
    return instance_from_json(json.loads(Path(path).read_text()))
