"""Ranking policies for the simulator.

Turns value-gradient information (trained subnets, dynamic-programming
difference tables, fitted heuristic models) and closed-form indices into
service-priority rankings.  The ranking convention everywhere: highest
effective holding cost is served first, so backlog accumulates in the
cheapest classes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .diffusion import center_state
from .model import ClassParams, LimitInstance, PrelimitInstance
from .sim import StaticRanking

STATIC_RULE_KINDS = ("cmu_over_theta", "cmu", "c", "mu_minus_theta",
                     "c_times_mu_minus_theta")


def _descending_stable(index: np.ndarray) -> np.ndarray:
    """Permutation sorting the index descending, ties by class number."""
    return np.argsort(-np.asarray(index, dtype=np.float64), kind="stable")


def effective_cost(v: np.ndarray, classes: Sequence[ClassParams]) -> np.ndarray:
    """phi_k = c_k + (mu_k - theta_k) v_k given a value gradient v."""
    c = np.array([cp.total_cost for cp in classes])
    coeff = np.array([cp.service_rate - cp.abandon_rate for cp in classes])
    return c + coeff * np.asarray(v, dtype=np.float64)


def static_rule(kind: str, classes: Sequence[ClassParams]) -> StaticRanking:
    """Time-invariant priority permutation by the named index, descending."""
    c = np.array([cp.total_cost for cp in classes])
    mu = np.array([cp.service_rate for cp in classes])
    theta = np.array([cp.abandon_rate for cp in classes])
    if kind == "cmu_over_theta":
        if np.any(theta == 0):
            raise ValueError(
                "cmu_over_theta undefined for classes without abandonment")
        index = c * mu / theta
    elif kind == "cmu":
        index = c * mu
    elif kind == "c":
        index = c
    elif kind == "mu_minus_theta":
        index = mu - theta
    elif kind == "c_times_mu_minus_theta":
        index = c * (mu - theta)
    else:
        raise ValueError(f"unknown static rule {kind!r}")
    order = tuple(int(k) for k in _descending_stable(index))
    return StaticRanking(order, name=kind)


def rank_by_effective_cost(t: float, headcount: np.ndarray,
                           gradient_source: Callable[[float, np.ndarray], np.ndarray],
                           pre: PrelimitInstance, lim: LimitInstance,
                           clamp: bool = True) -> np.ndarray:
    """One ranking decision from a value-gradient source.

    The headcount is centered into diffusion coordinates, the source is
    evaluated there, and classes are ordered by effective cost descending
    (stable ties by class index).  ``clamp`` floors the gradient at zero.
    """
    xhat = center_state(t, headcount, pre, lim)
    v = np.asarray(gradient_source(t, xhat), dtype=np.float64)
    if clamp:
        v = np.maximum(v, 0.0)
    return _descending_stable(effective_cost(v, lim.classes))


@dataclass
class GradientRankingPolicy:
    """RankingPolicy wrapping a value-gradient source.

    The simulator calls ``rank`` at its decision epochs and holds the
    permutation constant in between, so the decision frequency is set by
    the simulation call, not here.
    """

    pre: PrelimitInstance
    lim: LimitInstance
    gradient_source: Callable[[float, np.ndarray], np.ndarray]
    clamp: bool = True
    name: str = "gradient"

    def rank(self, t: float, X: np.ndarray) -> np.ndarray:
        # clamp t into the model horizon (the simulator may poll exactly at T)
        t = min(t, self.lim.grid.horizon * (1.0 - 1e-12))
        return rank_by_effective_cost(t, X, self.gradient_source,
                                      self.pre, self.lim, clamp=self.clamp)


def stack_gradient_source(stack) -> Callable[[float, np.ndarray], np.ndarray]:
    """Adapter: trained network stack -> gradient source over its own grid.

    Maps t in [0, T) to the subnet of the enclosing training interval.
    """
    def source(t: float, xhat: np.ndarray) -> np.ndarray:
        from .bsde import NetworkStack  # noqa: F401  (type only)
        N = stack.interval_count
        # the stack's grid may be coarser than the simulator's
        frac = t / _stack_horizon(stack)
        n = min(int(frac * N), N - 1)
        return stack.gradient_at_step(n, np.atleast_2d(xhat))[0]
    return source


def _stack_horizon(stack) -> float:
    horizon = getattr(stack, "horizon", None)
    if horizon is None:
        raise ValueError("network stack lacks a horizon attribute; "
                         "set stack.horizon to the training horizon")
    return float(horizon)


def nn_policy(stack, pre: PrelimitInstance, lim: LimitInstance, *,
              clamp: bool = True, name: str = "nn") -> GradientRankingPolicy:
    """The trained-network ranking policy."""
    if getattr(stack, "horizon", None) is None:
        stack.horizon = lim.grid.horizon
    return GradientRankingPolicy(pre=pre, lim=lim,
                                 gradient_source=stack_gradient_source(stack),
                                 clamp=clamp, name=name)
