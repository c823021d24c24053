"""Core domain types and deterministic per-user relations.

Everything here is a pure function of its inputs: the semi-log demand
curve, realized utility/payment for a single event hour, the split of a
measured reduction into its virtual and behavioral parts, and the
aggregator's realized profit. Energy is in kWh, money in $, per-unit
rewards and penalties in $/kWh.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError

__all__ = [
    "ConsumptionParams",
    "UserType",
    "MarketParams",
    "ReductionDecomposition",
    "demand",
    "realized_utility",
    "decompose_reduction",
    "realized_profit",
]


def _require_finite(name: str, value: float) -> float:
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class ConsumptionParams:
    """Three-parameter lognormal description of a user's base consumption.

    `sigma` is the shape, `scale` the median of the shifted distribution
    (e to the log-mean), and `loc` the lower support bound; all in kWh
    except the dimensionless shape.
    """

    sigma: float
    scale: float
    loc: float = 0.0

    def __post_init__(self) -> None:
        if _require_finite("sigma", self.sigma) <= 0:
            raise DomainError(f"sigma must be > 0, got {self.sigma}")
        if _require_finite("scale", self.scale) <= 0:
            raise DomainError(f"scale must be > 0, got {self.scale}")
        if _require_finite("loc", self.loc) < 0:
            raise DomainError(f"loc must be >= 0, got {self.loc}")

    @property
    def mean(self) -> float:
        """Expected base consumption, loc + scale * exp(sigma^2 / 2)."""
        return self.loc + self.scale * math.exp(0.5 * self.sigma * self.sigma)

    @property
    def variance(self) -> float:
        """Base-consumption variance, scale^2 * e^{sigma^2} (e^{sigma^2} - 1)."""
        s2 = self.sigma * self.sigma
        return self.scale * self.scale * math.exp(s2) * math.expm1(s2)


@dataclass(frozen=True)
class UserType:
    """A user's private information: demand-curve slope plus consumption law."""

    alpha: float
    params: ConsumptionParams

    def __post_init__(self) -> None:
        if _require_finite("alpha", self.alpha) <= 0:
            raise DomainError(f"alpha must be > 0, got {self.alpha}")


@dataclass(frozen=True)
class MarketParams:
    """Wholesale-side terms and the common user penalty.

    `q` is the per-unit charge a targeted user pays for consuming above
    her baseline; `r_bar` and `q_bar` are the wholesale per-unit reward
    and shortfall penalty; `target` is the aggregate reduction the
    aggregator committed to deliver.
    """

    q: float
    r_bar: float
    q_bar: float
    target: float

    def __post_init__(self) -> None:
        for name in ("q", "r_bar", "q_bar", "target"):
            if _require_finite(name, getattr(self, name)) < 0:
                raise DomainError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class ReductionDecomposition:
    """A measured reduction split into baseline error and behavioral response.

    `total == virtual + actual` holds exactly; `virtual` is baseline minus
    base consumption (credited without any behavior change), `actual` the
    response elicited by the reward.
    """

    total: float
    virtual: float
    actual: float


def demand(base: float, alpha: float, reward: float) -> float:
    """Consumption under a per-unit reward on the semi-log demand curve.

    Returns base * exp(-alpha * reward): equal to `base` at zero reward,
    strictly decreasing and log-linear in the reward with slope -alpha.
    """
    if _require_finite("base", base) <= 0:
        raise DomainError(f"base must be > 0, got {base}")
    if _require_finite("alpha", alpha) <= 0:
        raise DomainError(f"alpha must be > 0, got {alpha}")
    if _require_finite("reward", reward) < 0:
        raise DomainError(f"reward must be >= 0, got {reward}")
    return base * math.exp(-alpha * reward)


def realized_utility(
    baseline: float,
    consumption: float,
    reward: float,
    q: float,
    targeted: bool,
) -> float:
    """Payment from the aggregator to one user for one event hour.

    Non-targeted users get nothing. A targeted user earns `reward` per
    unit below her baseline and pays `q` per unit above it. The returned
    value is simultaneously the user's realized utility and the
    aggregator's disbursement to her.
    """
    for name, value in (
        ("baseline", baseline),
        ("consumption", consumption),
        ("reward", reward),
        ("q", q),
    ):
        if _require_finite(name, value) < 0:
            raise DomainError(f"{name} must be >= 0, got {value}")
    if not targeted:
        return 0.0
    shortfall = baseline - consumption
    if shortfall >= 0:
        return reward * shortfall
    return q * shortfall  # shortfall < 0: penalty on the over-consumption


def decompose_reduction(
    baseline: float,
    base: float,
    alpha: float,
    reward: float,
) -> ReductionDecomposition:
    """Split the measured reduction at `reward` into virtual and actual parts.

    virtual = baseline - base (pure estimation error, any sign);
    actual = base - demand(base, alpha, reward) (non-negative);
    total = virtual + actual = baseline - demand(base, alpha, reward).
    """
    if _require_finite("baseline", baseline) < 0:
        raise DomainError(f"baseline must be >= 0, got {baseline}")
    consumed = demand(base, alpha, reward)
    virtual = baseline - base
    actual = base - consumed
    return ReductionDecomposition(total=virtual + actual, virtual=virtual, actual=actual)


def realized_profit(
    reductions: list[float],
    rewards: list[float],
    market: MarketParams,
) -> float:
    """Aggregator profit for one event hour given realized per-user reductions.

    Wholesale side: earn `r_bar` per unit up to the committed target, pay
    `q_bar` per unit of shortfall. User side: each user is paid her reward
    per unit of (positive) reduction and charged `q` per unit of increase.
    Requires min(q_bar, r_bar) to exceed every per-unit user reward, so
    that serving reductions is never a loss at the margin.
    """
    if len(reductions) != len(rewards):
        raise DomainError(
            f"reductions and rewards must have equal length, "
            f"got {len(reductions)} and {len(rewards)}"
        )
    cap = min(market.q_bar, market.r_bar)
    for i, r_i in enumerate(rewards):
        if _require_finite(f"rewards[{i}]", r_i) < 0:
            raise DomainError(f"rewards[{i}] must be >= 0, got {r_i}")
        if r_i >= cap:
            raise DomainError(
                f"rewards[{i}]={r_i} violates min(q_bar, r_bar)={cap} > max user reward"
            )
    total = 0.0
    payments = 0.0
    for i, (delta, r_i) in enumerate(zip(reductions, rewards)):
        _require_finite(f"reductions[{i}]", delta)
        total += delta
        if delta >= 0:
            payments += r_i * delta
        else:
            payments += market.q * delta  # user pays q per unit of increase
    shortfall = market.target - total
    profit = market.r_bar * min(total, market.target)
    if shortfall > 0:
        profit -= market.q_bar * shortfall
    return profit - payments
