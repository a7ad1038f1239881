"""Privacy accountant for private dual averaging with node sampling.

Each round is a Gaussian mechanism on the subgradients of the active nodes,
amplified by the node-sampling ratio, and the rounds are combined with the
heterogeneous advanced composition rule. All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

from .errors import (
    HorizonTooShort,
    InfinitePrivacyLoss,
    InvalidArgument,
    OutOfRange,
    SurrogateInvalid,
)

# e^x - 1 <= 2x holds exactly up to the positive root of e^x = 1 + 2x.
SURROGATE_LIMIT = 1.2564
COMPOSITION_EPS_MAX = 0.9


def minimum_horizon(epsilon: float, iota: float) -> int:
    """Smallest integer T with T >= 5 eps^2 / (4 iota^2)."""
    bound = 5.0 * epsilon**2 / (4.0 * iota**2)
    return max(1, math.ceil(bound * (1.0 - 1e-12)))


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta0: float
    iota: float
    lipschitz: float
    samples_per_node: int
    horizon: int

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise OutOfRange(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not 0.0 < self.delta0 <= 1.0:
            raise OutOfRange(f"delta0 must lie in (0, 1], got {self.delta0}")
        if not 0.0 < self.iota <= 1.0:
            raise OutOfRange(f"iota must lie in (0, 1], got {self.iota}")
        if not self.lipschitz > 0.0:
            raise InvalidArgument(f"lipschitz must be positive, got {self.lipschitz}")
        if int(self.samples_per_node) != self.samples_per_node or self.samples_per_node < 1:
            raise InvalidArgument("samples_per_node must be a positive integer")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InvalidArgument("horizon must be a positive integer")

    @property
    def minimum_horizon(self) -> int:
        return minimum_horizon(self.epsilon, self.iota)


@dataclass(frozen=True)
class NoiseCalibration:
    sigma: float
    sigma_squared: float
    per_step_epsilon: float
    amplified_epsilon: float
    final_epsilon: float
    final_delta: float
    budget: PrivacyBudget
    exact_amplified_epsilon: float = math.nan


def sensitivity(L: float, q: int) -> float:
    """L2 sensitivity 2L/q of one round's stacked subgradients."""
    if L < 0:
        raise InvalidArgument("L must be nonnegative")
    if q < 1:
        raise InvalidArgument("q must be a positive integer")
    return 2.0 * L / q


def gaussian_epsilon(sens: float, sigma: float, delta: float) -> float:
    """Epsilon of the Gaussian mechanism: sqrt(2 log(2/delta)) * sens / sigma."""
    if sigma == 0:
        raise InfinitePrivacyLoss("sigma = 0 gives unbounded privacy loss")
    return math.sqrt(2.0 * math.log(2.0 / delta)) * sens / sigma


def per_step_epsilon(L: float, q: int, sigma: float, delta0: float) -> float:
    if sigma < 0:
        raise InvalidArgument("sigma must be nonnegative")
    if not 0.0 < delta0 <= 1.0:
        raise OutOfRange("delta0 must lie in (0, 1]")
    return gaussian_epsilon(sensitivity(L, q), sigma, delta0)


class Amplified(NamedTuple):
    exact: float
    surrogate: Optional[float]
    delta: float


def amplify(epsilon: float, delta: float, iota: float, surrogate: bool = True) -> Amplified:
    """Privacy of a mechanism run on a random ``iota`` fraction of the data.

    ``exact`` is iota (e^eps - 1); ``surrogate`` is the linear upper bound
    2 iota eps, which only dominates the exact value for eps <= 1.2564.
    """
    if epsilon < 0:
        raise InvalidArgument("epsilon must be nonnegative")
    if not 0.0 < iota <= 1.0:
        raise OutOfRange("iota must lie in (0, 1]")
    exact = iota * math.expm1(epsilon)
    sur = None
    if surrogate:
        if epsilon > SURROGATE_LIMIT:
            raise SurrogateInvalid(
                f"2*iota*eps does not bound iota*(e^eps-1) for eps={epsilon} > {SURROGATE_LIMIT}"
            )
        sur = 2.0 * iota * epsilon
    return Amplified(exact, sur, iota * delta)


def _composed(sum_sq: float, log_keep: float, delta_prime: float) -> Tuple[float, float]:
    eps = math.sqrt(2.0 * sum_sq * math.log(math.e + math.sqrt(sum_sq) / delta_prime)) + sum_sq
    delta = -math.expm1(math.log1p(-delta_prime) + log_keep) if delta_prime < 1 else 1.0
    return eps, delta


def _check_delta_prime(delta_prime: float):
    if not 0.0 < delta_prime <= 1.0:
        raise OutOfRange(f"delta_prime must lie in (0, 1], got {delta_prime}")


def _log_keep(delta: float) -> float:
    return math.log1p(-delta) if delta < 1 else -math.inf


def compose(steps: Sequence[Tuple[float, float]], delta_prime: float) -> Tuple[float, float]:
    """Advanced composition of heterogeneous (eps_i, delta_i) guarantees.

    Returns ``(eps, delta)`` with
    eps = sqrt(2 S log(e + sqrt(S)/delta')) + S,  S = sum eps_i^2, and
    delta = 1 - (1 - delta') prod(1 - delta_i).
    """
    _check_delta_prime(delta_prime)
    sum_sq = 0.0
    log_keep = 0.0
    for eps_i, delta_i in steps:
        if not 0.0 < eps_i <= COMPOSITION_EPS_MAX:
            raise OutOfRange(f"each epsilon must lie in (0, 0.9], got {eps_i}")
        if not 0.0 < delta_i <= 1.0:
            raise OutOfRange(f"each delta must lie in (0, 1], got {delta_i}")
        sum_sq += eps_i * eps_i
        log_keep += _log_keep(delta_i)
    return _composed(sum_sq, log_keep, delta_prime)


def compose_repeated(epsilon: float, delta: float, count: int, delta_prime: float) -> Tuple[float, float]:
    """``compose`` of ``count`` identical steps, in O(1)."""
    _check_delta_prime(delta_prime)
    if count < 0:
        raise InvalidArgument("count must be nonnegative")
    if count and not 0.0 < epsilon <= COMPOSITION_EPS_MAX:
        raise OutOfRange(f"each epsilon must lie in (0, 0.9], got {epsilon}")
    if count and not 0.0 < delta <= 1.0:
        raise OutOfRange(f"each delta must lie in (0, 1], got {delta}")
    return _composed(count * epsilon * epsilon, count * _log_keep(delta) if count else 0.0, delta_prime)


def noise_variance(budget: PrivacyBudget) -> float:
    """Smallest admissible sigma^2 = 32 iota^2 L^2 T log(2/delta0) / (q^2 eps^2)."""
    b = budget
    return (
        32.0 * b.iota**2 * b.lipschitz**2 * b.horizon * math.log(2.0 / b.delta0)
        / (b.samples_per_node**2 * b.epsilon**2)
    )


def replay_guarantee(budget: PrivacyBudget, sigma: float) -> Tuple[float, float, float, float]:
    """Re-derive the end-to-end guarantee for a given noise scale.

    Gaussian mechanism per round, surrogate amplification by node sampling,
    then composition over the horizon with delta' = sqrt(sum eps'_t^2).
    Returns ``(eps_t, eps'_t, eps_tilde, delta_tilde)``.
    """
    b = budget
    eps_t = per_step_epsilon(b.lipschitz, b.samples_per_node, sigma, b.delta0)
    amp = amplify(eps_t, b.delta0, b.iota)
    delta_prime = min(1.0, math.sqrt(b.horizon) * amp.surrogate)
    eps_total, delta_total = compose_repeated(amp.surrogate, amp.delta, b.horizon, delta_prime)
    return eps_t, amp.surrogate, eps_total, delta_total


def calibrate(budget: PrivacyBudget) -> NoiseCalibration:
    if budget.horizon < budget.minimum_horizon:
        raise HorizonTooShort(budget.horizon, budget.minimum_horizon)
    var = noise_variance(budget)
    sigma = math.sqrt(var)
    eps_t, eps_amp, eps_total, delta_total = replay_guarantee(budget, sigma)
    return NoiseCalibration(
        sigma=sigma,
        sigma_squared=var,
        per_step_epsilon=eps_t,
        amplified_epsilon=eps_amp,
        final_epsilon=eps_total,
        final_delta=delta_total,
        budget=budget,
        exact_amplified_epsilon=amplify(eps_t, budget.delta0, budget.iota, surrogate=False).exact,
    )


def replay_calibrate(budget: PrivacyBudget, rel_tol: float = 1e-12) -> NoiseCalibration:
    """Smallest sigma whose replayed guarantee satisfies eps_tilde <= eps.

    Found by bisection on ``replay_guarantee``, which is decreasing in sigma.
    The closed-form variance of ``calibrate`` does not meet this target (the
    replay gives eps_tilde = eps*sqrt(2 log(e+1)) + eps^2 there), so this is
    the variant to use when the composed guarantee itself must hold.
    """
    if budget.horizon < budget.minimum_horizon:
        raise HorizonTooShort(budget.horizon, budget.minimum_horizon)

    def ok(sigma):
        try:
            return replay_guarantee(budget, sigma)[2] <= budget.epsilon
        except (OutOfRange, SurrogateInvalid):
            return False

    lo = math.sqrt(noise_variance(budget))
    hi = lo
    while not ok(hi):
        lo, hi = hi, 2.0 * hi
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    eps_t, eps_amp, eps_total, delta_total = replay_guarantee(budget, hi)
    return NoiseCalibration(
        sigma=hi,
        sigma_squared=hi * hi,
        per_step_epsilon=eps_t,
        amplified_epsilon=eps_amp,
        final_epsilon=eps_total,
        final_delta=delta_total,
        budget=budget,
        exact_amplified_epsilon=amplify(eps_t, budget.delta0, budget.iota, surrogate=False).exact,
    )


def privacy_loss_at(t: int, T: int, epsilon: float) -> float:
    """Cumulative privacy loss after ``t`` of ``T`` calibrated rounds."""
    if T < 1:
        raise InvalidArgument("T must be positive")
    if not 0 <= t <= T:
        raise OutOfRange(f"t={t} outside [0, {T}]")
    return math.sqrt(3 * t / (5 * T)) * epsilon + t / (5 * T) * epsilon**2
