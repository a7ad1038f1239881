"""Step-weight sequences a_t, A_t and regularization weights gamma_t."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSchedule

SCHEDULE_KINDS = ("strongly_convex", "convex", "constant_gamma")


@dataclass(frozen=True)
class Schedule:
    """``strongly_convex``: a_t = t, gamma_t = 0.
    ``convex``: a_t = 1, gamma_t = gamma sqrt(t).
    ``constant_gamma``: a_t = t, gamma_t = gamma.

    Index 0 is the convention a_0 = A_0 = gamma_0 = 0.
    """

    kind: str
    gamma: float = 0.0
    mu: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise InvalidSchedule(f"unknown schedule kind {self.kind!r}")
        if self.gamma < 0 or self.mu < 0:
            raise InvalidSchedule("gamma and mu must be nonnegative")
        if self.kind == "strongly_convex" and not self.mu > 0:
            raise InvalidSchedule("strongly_convex schedule requires mu > 0")
        if self.kind in ("convex", "constant_gamma") and not self.gamma > 0:
            raise InvalidSchedule(f"{self.kind} schedule requires gamma > 0")

    def a(self, t):
        t = np.asarray(t, dtype=float)
        out = t if self.kind != "convex" else np.where(t > 0, 1.0, 0.0)
        return float(out) if out.ndim == 0 else out

    def A(self, t):
        t = np.asarray(t, dtype=float)
        out = t * (t + 1) / 2 if self.kind != "convex" else t
        return float(out) if out.ndim == 0 else out

    def gamma_at(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "strongly_convex":
            out = np.zeros_like(t)
        elif self.kind == "convex":
            out = self.gamma * np.sqrt(t)
        else:
            out = np.where(t > 0, self.gamma, 0.0)
        return float(out) if out.ndim == 0 else out

    def strong_convexity(self, iota: float, t):
        """mu iota A_t + gamma_t, the modulus of the primal subproblem at t."""
        return self.mu * iota * self.A(t) + self.gamma_at(t)


def check_positive_modulus(schedule: Schedule, iota: float):
    """A_t and gamma_t never decrease, so positivity at t = 1 suffices."""
    if not schedule.strong_convexity(iota, 1) > 0:
        raise InvalidSchedule("mu*iota*A_t + gamma_t must be positive for every t >= 1")
