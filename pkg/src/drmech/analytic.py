"""Closed-form expected utility and threshold-reward solving.

A targeted user with demand slope alpha and announced baseline x_hat
consumes xbar * exp(-alpha * r) during an event with reward rate r. The
measured reduction is x_hat minus that; positive reduction earns r per
kWh, negative reduction (consumption above baseline) is charged q per
kWh. Taking the expectation over the base-consumption distribution
yields a closed form in the lognormal CDF and partial expectation, and
the threshold reward is the smallest r at which that expectation stops
being negative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .dist import lognorm_moments
from .errors import DomainError, SolverError, UnboundedThresholdError
from .model import UserType, _require_finite

__all__ = [
    "ThresholdSolveConfig",
    "expected_reduction_parts",
    "expected_utility",
    "expected_reduction",
    "threshold_reward",
    "max_feasible_target",
]

# math.exp overflows just above 709; stay clear of it. Beyond the cap
# the kept-below-baseline probability is 1 to double precision anyway.
_EXP_CAP = 700.0


@dataclass(frozen=True)
class ThresholdSolveConfig:
    abs_tol: float = 1e-8
    r_max: float = 1e4
    max_iter: int = 200

    def __post_init__(self) -> None:
        if not (math.isfinite(self.abs_tol) and self.abs_tol > 0):
            raise DomainError(f"abs_tol must be > 0, got {self.abs_tol}")
        if not (math.isfinite(self.r_max) and self.r_max > 0):
            raise DomainError(f"r_max must be > 0, got {self.r_max}")
        if self.max_iter < 1:
            raise DomainError(f"max_iter must be >= 1, got {self.max_iter}")


def _validate_inputs(x_hat: float, reward: float) -> None:
    _require_finite("x_hat", x_hat)
    _require_finite("reward", reward)
    if x_hat < 0:
        raise DomainError(f"x_hat must be >= 0, got {x_hat}")
    if reward < 0:
        raise DomainError(f"reward must be >= 0, got {reward}")


def expected_reduction_parts(
    user: UserType, x_hat: float, reward: float
) -> tuple[float, float]:
    """Expected positive reduction and expected shortfall magnitude.

    With c = exp(-alpha r) the reduction x_hat - c * xbar is nonnegative
    exactly when xbar <= a = x_hat * exp(alpha r), so splitting on that
    event gives
        E[reduction+]  = x_hat * G(a) - c * PE(a)
        E[shortfall]   = c * (mean - PE(a)) - x_hat * (1 - G(a))
    where G is the CDF and PE the lower partial expectation. Both parts
    are nonnegative; their difference is the unconditional expected
    reduction.
    """
    _validate_inputs(x_hat, reward)
    exponent = user.alpha * reward
    c = math.exp(-exponent)
    if x_hat == 0.0:
        a = 0.0
    elif exponent >= _EXP_CAP:
        a = math.inf
    else:
        a = x_hat * math.exp(exponent)
    m = lognorm_moments(user.params, a)
    gain = x_hat * m.cdf - c * m.partial_expectation
    shortfall = c * (m.mean - m.partial_expectation) - x_hat * (1.0 - m.cdf)
    # Clip the tiny negatives that cancellation can leave behind.
    return max(gain, 0.0), max(shortfall, 0.0)


def expected_utility(user: UserType, x_hat: float, reward: float, q: float) -> float:
    """Expected event payoff: reward on the surplus, penalty on the shortfall."""
    _require_finite("q", q)
    if q < 0:
        raise DomainError(f"q must be >= 0, got {q}")
    gain, shortfall = expected_reduction_parts(user, x_hat, reward)
    return reward * gain - q * shortfall


def expected_reduction(user: UserType, x_hat: float, reward: float) -> float:
    """Unconditional expected reduction x_hat - exp(-alpha r) * E[xbar]."""
    _validate_inputs(x_hat, reward)
    return x_hat - math.exp(-user.alpha * reward) * user.params.mean


def threshold_reward(
    user: UserType,
    x_hat: float,
    q: float,
    cfg: ThresholdSolveConfig = ThresholdSolveConfig(),
) -> float:
    """Smallest reward at which expected event payoff is nonnegative.

    At r = 0 the payoff is -q * E[(xbar - x_hat)+], strictly negative
    whenever the penalty bites, and it grows without bound in r, so a
    unique zero crossing exists. The solver brackets it by doubling,
    then runs a Newton iteration (central-difference slope) safeguarded
    by bisection; convergence is declared when |payoff| <= abs_tol.

    Raises
    ------
    UnboundedThresholdError
        If no sign change occurs by cfg.r_max. This happens when
        x_hat = 0: the measured reduction is then never positive.
    SolverError
        If the iteration budget runs out before the residual converges.
    """
    if q < 0 or not math.isfinite(q):
        raise DomainError(f"q must be finite and >= 0, got {q}")
    if q == 0.0:
        # No penalty; participation is costless from reward zero up.
        _validate_inputs(x_hat, 0.0)
        return 0.0

    def payoff(r: float) -> float:
        return expected_utility(user, x_hat, r, q)

    f_lo = payoff(0.0)
    if f_lo >= 0.0:
        return 0.0
    lo = 0.0
    hi = 1.0
    f_hi = payoff(hi)
    # Bracket on a strictly positive endpoint: the payoff can underflow
    # to -0.0 on its flat asymptote (x_hat = 0), which is not a root.
    while f_hi <= 0.0:
        lo, f_lo = hi, f_hi
        hi *= 2.0
        if hi > cfg.r_max:
            raise UnboundedThresholdError(
                f"no sign change in expected payoff up to r = {cfg.r_max}"
            )
        f_hi = payoff(hi)

    r = 0.5 * (lo + hi)
    for _ in range(cfg.max_iter):
        f_r = payoff(r)
        if abs(f_r) <= cfg.abs_tol:
            return r
        if f_r > 0.0:
            hi = r
        else:
            lo = r
        h = min(1e-6 * max(1.0, r), 0.5 * r)
        slope = (payoff(r + h) - payoff(r - h)) / (2.0 * h)
        if slope > 0.0:
            candidate = r - f_r / slope
        else:
            candidate = lo  # force the bisection fallback
        if not (lo < candidate < hi):
            candidate = 0.5 * (lo + hi)
        r = candidate
    raise SolverError(
        f"threshold residual did not reach {cfg.abs_tol} in {cfg.max_iter} iterations"
    )


def max_feasible_target(
    users: Sequence[UserType],
    x_hats: Sequence[float],
    q: float,
    cfg: ThresholdSolveConfig = ThresholdSolveConfig(),
) -> float:
    """Upper bound on the reduction target the auction can dependably meet.

    With thresholds sorted ascending, the bound is the summed expected
    reduction of the 2nd through (n-1)-th cheapest users, each priced at
    the (n-1)-th threshold. Dropping the cheapest user covers the worst
    single exclusion the pricing rule performs, and stopping before the
    n-th keeps the price a competitive one. Targets above this bound can
    leave the exclusion re-run without a clearing index.
    """
    if len(users) != len(x_hats):
        raise DomainError(
            f"users and x_hats lengths differ: {len(users)} vs {len(x_hats)}"
        )
    if len(users) < 3:
        raise DomainError(f"need at least 3 users for a usable bound, got {len(users)}")
    thresholds = [
        threshold_reward(u, xh, q, cfg) for u, xh in zip(users, x_hats)
    ]
    order = sorted(range(len(users)), key=lambda i: thresholds[i])
    price = thresholds[order[-2]]
    middle = order[1:-1]
    return sum(expected_reduction(users[i], x_hats[i], price) for i in middle)
