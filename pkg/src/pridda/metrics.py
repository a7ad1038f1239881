"""Suboptimality and consensus metrics plus the theoretical envelopes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgument, InvalidSchedule
from .schedules import Schedule

COROLLARIES = ("C1", "C2_subopt", "C2_consensus")


@dataclass(frozen=True)
class BoundParams:
    L: float
    beta: float
    iota: float
    mu: float
    sigma: float
    m: int
    d_xstar: float
    schedule: Schedule

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise InvalidArgument(f"beta must lie in [0, 1), got {self.beta}")
        if not 0.0 <= self.iota <= 1.0:
            raise InvalidArgument(f"iota must lie in [0, 1], got {self.iota}")
        if min(self.L, self.mu, self.sigma) < 0 or self.m < 1:
            raise InvalidArgument("L, mu, sigma must be nonnegative and m positive")


def d_of(x) -> float:
    """The prox-function d(x) = ||x||^2 / 2."""
    x = np.asarray(x, dtype=float)
    return 0.5 * float(x @ x)


def constant_M(params: BoundParams) -> float:
    p = params
    return p.iota * p.L**2 / 2 + 2 * math.sqrt(p.iota) * p.L**2 / (1 - p.beta)


def _denominators(params: BoundParams, t):
    den = params.schedule.mu * params.iota * params.schedule.A(t) + params.schedule.gamma_at(t)
    if np.any(np.asarray(den) <= 0):
        raise InvalidSchedule("mu*iota*A_t + gamma_t must be positive")
    return den


def noise_factor(params: BoundParams) -> float:
    """M + m iota sigma^2 / 2 + 2 sqrt(m iota) L sigma / (1 - beta)."""
    p = params
    return (
        constant_M(p)
        + p.m * p.iota * p.sigma**2 / 2
        + 2 * math.sqrt(p.m * p.iota) * p.L * p.sigma / (1 - p.beta)
    )


def theorem2_series(params: BoundParams, T: int) -> np.ndarray:
    """Envelope on E[F(y~_t)] - F(x*) for t = 1..T (index t-1)."""
    if params.iota <= 0:
        raise InvalidArgument("iota must be positive")
    t = np.arange(1, T + 1, dtype=float)
    s = params.schedule
    partial = np.cumsum(s.a(t) ** 2 / _denominators(params, t))
    return (s.gamma_at(t) * params.d_xstar / params.iota + partial * noise_factor(params)) / s.A(t)


def theorem2_envelope(params: BoundParams, t: int) -> float:
    if t < 1:
        raise InvalidArgument("t must be positive")
    return float(theorem2_series(params, t)[-1])


def lemma4_series(params: BoundParams, t):
    """Consensus bounds (mean, mean-square) at the times in ``t``."""
    p = params
    t = np.asarray(t, dtype=float)
    den = _denominators(p, t)
    a = p.schedule.a(t)
    mean = a * (p.L + math.sqrt(p.m) * p.sigma) * math.sqrt(p.iota) / ((1 - p.beta) * den)
    sq = a**2 * (p.L**2 + p.m * p.sigma**2) * p.iota / ((1 - p.beta) ** 2 * den**2)
    return mean, sq


def lemma4_envelope(params: BoundParams, t: int):
    if t < 1:
        raise InvalidArgument("t must be positive")
    mean, sq = lemma4_series(params, t)
    return float(mean), float(sq)


def corollary_envelope(params: BoundParams, which: str, t):
    """Closed-form corollary bounds; ``t`` may be an array.

    ``C1`` needs the strongly convex schedule, the ``C2_*`` forms the convex
    one. A vanishing sampling ratio makes ``C2_subopt`` infinite.
    """
    p = params
    kind = p.schedule.kind
    t = np.asarray(t, dtype=float)
    if which == "C1":
        if kind != "strongly_convex":
            raise InvalidArgument("C1 needs the strongly_convex schedule")
        if p.iota == 0:
            return np.full_like(t, math.inf) if t.ndim else math.inf
        M = constant_M(p)
        out = 16 / (t + 1) * (
            p.L**2 * (np.log(t) + 1) / (p.mu**2 * p.iota * (1 - p.beta) ** 2 * t)
            + M / (p.mu**2 * p.iota)
        )
    elif which == "C2_subopt":
        if kind != "convex":
            raise InvalidArgument("C2_subopt needs the convex schedule")
        if p.iota == 0:
            return np.full_like(t, math.inf) if t.ndim else math.inf
        out = (p.d_xstar + 2 * p.iota * constant_M(p)) / (p.iota * p.schedule.gamma * np.sqrt(t))
    elif which == "C2_consensus":
        if kind != "convex":
            raise InvalidArgument("C2_consensus needs the convex schedule")
        out = 2 * p.L * math.sqrt(p.iota) / (p.schedule.gamma * (1 - p.beta) * np.sqrt(t))
    else:
        raise InvalidArgument(f"unknown corollary {which!r}")
    return float(out) if np.ndim(out) == 0 else out


def utility_horizon(q, epsilon, iota, beta, m, delta0, scale=1.0) -> int:
    """Horizon at the utility-loss scaling q^2 eps^2 / (iota^3 (1-beta)^2 m log(1/delta0)).

    The scaling is only known up to a constant, supplied as ``scale``.
    """
    raw = q**2 * epsilon**2 / (iota**3 * (1 - beta) ** 2 * m * math.log(1 / delta0))
    return max(1, int(round(scale * raw)))


def loglog_slope(t, values, t_min, t_max) -> float:
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = (t >= t_min) & (t <= t_max) & (v > 0)
    if keep.sum() < 2:
        raise InvalidArgument("need at least two positive points in the slope window")
    slope, _ = np.polyfit(np.log(t[keep]), np.log(v[keep]), 1)
    return float(slope)


def mean_and_se(rows: np.ndarray, axis=0):
    rows = np.asarray(rows, dtype=float)
    k = rows.shape[axis]
    mean = rows.mean(axis=axis)
    se = rows.std(axis=axis, ddof=1) / math.sqrt(k) if k > 1 else np.zeros_like(mean)
    return mean, se


@dataclass(frozen=True)
class UtilitySummary:
    suboptimality: np.ndarray
    final_suboptimality: float
    final_distance_sq: Optional[float]
    auc: float


def utility_summary(trace, reference: float) -> UtilitySummary:
    if not math.isfinite(reference):
        raise InvalidArgument("reference objective must be finite")
    sub = np.asarray(trace.objective_mean_ergodic) - reference
    dist = trace.dist_sq_ergodic
    final_dist = float(dist[-1]) if dist is not None and len(dist) and np.isfinite(dist[-1]) else None
    t = np.asarray(trace.t, dtype=float)
    auc = float(np.trapezoid(sub, t)) if len(t) > 1 else float(sub.sum())
    return UtilitySummary(
        suboptimality=sub,
        final_suboptimality=float(sub[-1]),
        final_distance_sq=final_dist,
        auc=auc,
    )
