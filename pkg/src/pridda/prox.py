"""Primal recovery step of dual averaging.

Solves ``argmin_x <z, x> + c h(x) + gamma/2 ||x||^2`` in closed form, and
provides a slow brute-force oracle for low-dimensional checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DegenerateSubproblem, OracleScaleError
from .problems import Regularizer, regularizer_value


@dataclass(frozen=True)
class ProxQuery:
    z: np.ndarray
    c: float
    gamma: float
    regularizer: Regularizer

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        check_well_posed(self.c, self.gamma, self.regularizer)


def check_well_posed(c, gamma, reg):
    if c < 0 or gamma < 0:
        raise DegenerateSubproblem(f"c={c} and gamma={gamma} must be nonnegative")
    if reg.kind == "l2_half":
        if gamma + c * reg.modulus <= 0:
            raise DegenerateSubproblem("gamma + c*mu must be positive")
    elif gamma <= 0:
        raise DegenerateSubproblem(f"{reg.kind} regularizer needs gamma > 0")


def prox(z: np.ndarray, c: float, gamma: float, reg: Regularizer) -> np.ndarray:
    """Closed-form minimizer; ``z`` may be one vector or a stack of rows."""
    check_well_posed(c, gamma, reg)
    z = np.asarray(z, dtype=float)
    if reg.kind == "l2_half":
        return -z / (c * reg.parameter + gamma)
    if reg.kind == "l1":
        return -np.sign(z) * np.maximum(np.abs(z) - c * reg.parameter, 0.0) / gamma
    if reg.kind == "ball":
        # ι·h ≡ h for an indicator, so c plays no role.
        x = -z / gamma
        norm = np.linalg.norm(x, axis=-1, keepdims=True)
        shrink = np.where(norm > reg.parameter, reg.parameter / np.where(norm > 0, norm, 1.0), 1.0)
        return x * shrink
    return -z / gamma


def prox_solve(query: ProxQuery) -> np.ndarray:
    return prox(query.z, query.c, query.gamma, query.regularizer)


def prox_objective(query: ProxQuery, x) -> float:
    x = np.asarray(x, dtype=float)
    reg = query.regularizer
    h = regularizer_value(reg, x)
    if reg.kind == "ball":
        scaled = h
    else:
        scaled = query.c * h
    return float(query.z @ x) + scaled + 0.5 * query.gamma * float(x @ x)


def _grid_objective(query: ProxQuery, pts: np.ndarray) -> np.ndarray:
    reg = query.regularizer
    lin = pts @ query.z + 0.5 * query.gamma * np.einsum("ij,ij->i", pts, pts)
    if reg.kind == "l1":
        return lin + query.c * reg.parameter * np.abs(pts).sum(axis=1)
    if reg.kind == "l2_half":
        return lin + 0.5 * query.c * reg.parameter * np.einsum("ij,ij->i", pts, pts)
    if reg.kind == "ball":
        return np.where(np.linalg.norm(pts, axis=1) <= reg.parameter, lin, np.inf)
    return lin


def _to_cartesian(r, angles):
    m = len(angles) + 1
    x = np.empty(m)
    s = r
    for k, a in enumerate(angles):
        x[k] = s * math.cos(a)
        s *= math.sin(a)
    x[m - 1] = s
    return x


def _to_spherical(x):
    m = len(x)
    angles = []
    for k in range(m - 2):
        tail = float(np.linalg.norm(x[k:]))
        angles.append(math.acos(max(-1.0, min(1.0, x[k] / tail))) if tail > 0 else 0.0)
    angles.append(math.atan2(x[m - 1], x[m - 2]))
    return float(np.linalg.norm(x)), angles


def _coordinate_descent(f, v, lower, upper, tol):
    """Cyclic exact line searches along coordinates until a sweep moves < tol."""
    v = list(v)
    best = f(v)
    for _ in range(500):
        moved = 0.0
        for k in range(len(v)):
            def along(t, k=k):
                w = v.copy()
                w[k] = t
                return f(w)

            res = minimize_scalar(along, bounds=(lower[k], upper[k]), method="bounded",
                                  options={"xatol": 1e-12, "maxiter": 500})
            if res.fun < best:
                moved = max(moved, abs(res.x - v[k]))
                v[k] = float(res.x)
                best = res.fun
        if moved < tol:
            break
    return v


def prox_oracle(query: ProxQuery, box_radius: float, resolution: float) -> np.ndarray:
    """Grid search over ``[-box_radius, box_radius]^m`` then coordinate descent.

    For the ball regularizer the refinement runs in hyperspherical
    coordinates so the feasible set becomes a box.
    """
    m = query.z.size
    if m > 3:
        raise OracleScaleError(f"oracle only supports dimension <= 3, got {m}")
    axis = np.arange(-box_radius, box_radius + resolution / 2, resolution)
    pts = np.stack(np.meshgrid(*([axis] * m), indexing="ij"), axis=-1).reshape(-1, m)
    start = pts[int(np.argmin(_grid_objective(query, pts)))]
    f = lambda v: prox_objective(query, np.asarray(v))
    tol = 1e-8

    reg = query.regularizer
    if reg.kind != "ball":
        return np.array(_coordinate_descent(f, start, [-box_radius] * m, [box_radius] * m, tol))

    radius = reg.parameter
    if m == 1 or np.linalg.norm(start) + 2 * resolution * math.sqrt(m) < radius:
        bound = min(box_radius, radius)
        return np.array(_coordinate_descent(f, start, [-bound] * m, [bound] * m, tol))

    r0, ang0 = _to_spherical(start)
    g = lambda v: f(_to_cartesian(v[0], v[1:]))
    width = min(math.pi, 4 * resolution / max(r0, resolution))
    lo = [0.0] + [a - width for a in ang0]
    hi = [radius] + [a + width for a in ang0]
    v = _coordinate_descent(g, [min(r0, radius)] + ang0, lo, hi, 1e-10)
    return _to_cartesian(v[0], v[1:])
