"""Reduction auction core: clearing-index allocation and its audits.

Bidders are (threshold, expected-reduction function) pairs sorted by
threshold. The operator serves the shortest prefix whose summed expected
reduction, priced at the prefix's last threshold, covers the target M;
each served bidder is then paid the threshold of the index that would
clear the market without her. That exclusion pricing is what makes
truthful reporting a dominant strategy, and `audit_incentives` checks
the claim numerically on concrete instances.

The searches for clearing indices assume the prefix sums are
non-decreasing in the index. That holds whenever every bidder's
reduction function is non-decreasing and non-negative at her own
threshold (user-side: threshold not above the penalty rate); pools that
violate it should use search="scan".
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Sequence

from .analytic import (
    ThresholdSolveConfig,
    expected_reduction,
    expected_reduction_parts,
    expected_utility,
    threshold_reward,
)
from .errors import DomainError, InfeasibleTargetError
from .model import UserType, _require_finite

__all__ = [
    "Bidder",
    "Allocation",
    "run_dr_mechanism",
    "run_omniscient",
    "feasible_target_bound",
    "PaymentSummary",
    "expected_payments",
    "Violation",
    "AuditReport",
    "audit_incentives",
    "write_allocation_csv",
]

_TIE_TOL = 1e-12
_MONOTONE_SPOT_TOL = 1e-9


@dataclass(frozen=True)
class Bidder:
    """One auction participant: threshold price and reduction curve.

    `reduction_fn` maps a reward rate to the expected reduction (kWh)
    the bidder delivers at that rate; it must be non-decreasing, which
    is spot-checked on a 3-point grid at construction.
    """

    id: object
    threshold: float
    reduction_fn: Callable[[float], float]

    def __post_init__(self) -> None:
        _require_finite("threshold", self.threshold)
        if self.threshold < 0:
            raise DomainError(f"threshold must be >= 0, got {self.threshold}")
        r0 = self.threshold
        grid = (r0, 1.5 * r0 + 1.0, 3.0 * r0 + 2.0)
        values = [self.reduction_fn(r) for r in grid]
        if not all(
            b >= a - _MONOTONE_SPOT_TOL for a, b in zip(values, values[1:])
        ):
            raise DomainError(
                f"reduction_fn of bidder {self.id!r} decreases on {grid}"
            )


@dataclass(frozen=True)
class Allocation:
    """Auction outcome over the threshold-sorted bidder order.

    `j_max` is the 1-based clearing index (0 for an empty allocation);
    `j_of` maps each targeted id to the index whose threshold sets its
    reward. Rewards are zero and decisions False for everyone else.
    """

    targeted: tuple
    rewards: dict
    decisions: dict
    j_max: int
    j_of: dict

    @property
    def n_targeted(self) -> int:
        return len(self.targeted)

    def reward_of(self, bidder_id) -> float:
        return self.rewards[bidder_id]


def _sorted_bidders(bidders: Sequence[Bidder]) -> list[Bidder]:
    """Ascending threshold order; near-ties (1e-12) broken by id."""
    ordered = sorted(bidders, key=lambda b: b.threshold)
    i = 0
    while i < len(ordered):
        j = i + 1
        while j < len(ordered) and ordered[j].threshold - ordered[j - 1].threshold <= _TIE_TOL:
            j += 1
        if j - i > 1:
            ordered[i:j] = sorted(ordered[i:j], key=lambda b: b.id)
        i = j
    return ordered


class _PrefixSums:
    """Memoized per-index reduction columns over sorted bidders.

    Column j holds delta_i(r_tilde_j) for the first j bidders; F(j) is
    its sum and F(j) - column[j][i-1] the sum excluding bidder i. Each
    column is computed at most once no matter how many searches touch it.
    """

    def __init__(self, ordered: Sequence[Bidder]):
        self.bidders = ordered
        self.thresholds = [b.threshold for b in ordered]
        self._cols: dict[int, list[float]] = {}
        self._sums: dict[int, float] = {}

    def column(self, j: int) -> list[float]:
        col = self._cols.get(j)
        if col is None:
            r = self.thresholds[j - 1]
            col = [b.reduction_fn(r) for b in self.bidders[:j]]
            self._cols[j] = col
        return col

    def total(self, j: int) -> float:
        s = self._sums.get(j)
        if s is None:
            s = math.fsum(self.column(j))
            self._sums[j] = s
        return s

    def total_excluding(self, j: int, i: int) -> float:
        # i is a 1-based sorted position with i <= j
        return self.total(j) - self.column(j)[i - 1]


def _first_index(predicate, lo: int, hi: int, search: str) -> int | None:
    """Smallest index in [lo, hi] satisfying `predicate`, or None.

    The binary mode requires the predicate to be monotone
    (False...False, True...True) over the range.
    """
    if search == "scan":
        for j in range(lo, hi + 1):
            if predicate(j):
                return j
        return None
    if search != "binary":
        raise DomainError(f"search must be 'binary' or 'scan', got {search!r}")
    if lo > hi or not predicate(hi):
        return None
    while lo < hi:
        mid = (lo + hi) // 2
        if predicate(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def _empty_allocation(bidders: Sequence[Bidder]) -> Allocation:
    ordered = _sorted_bidders(bidders)
    return Allocation(
        targeted=(),
        rewards={b.id: 0.0 for b in ordered},
        decisions={b.id: False for b in ordered},
        j_max=0,
        j_of={},
    )


def run_dr_mechanism(
    bidders: Sequence[Bidder], M: float, *, search: str = "binary"
) -> Allocation:
    """Allocate rewards to meet an expected-reduction target of M kWh.

    Sorted ascending by threshold, the clearing index j_max is the
    smallest j whose first j bidders, all priced at threshold j, jointly
    cover M. Each targeted bidder i <= j_max is then paid the threshold
    of j(i), the index that would clear the market with i excluded, so
    no bidder's report moves her own price.

    `search` selects how clearing indices are located: "binary" matches
    the O(n log n) design and is exact under the monotonicity premise in
    the module docstring; "scan" is the exhaustive fallback.

    Raises
    ------
    InfeasibleTargetError
        If no prefix covers M, or some exclusion re-run fails to clear.
    """
    _require_finite("M", M)
    if M < 0:
        raise DomainError(f"M must be >= 0, got {M}")
    if M == 0.0:
        return _empty_allocation(bidders)
    if not bidders:
        raise InfeasibleTargetError(f"no bidders available for target M={M}")

    ordered = _sorted_bidders(bidders)
    n = len(ordered)
    sums = _PrefixSums(ordered)

    j_max = _first_index(lambda j: sums.total(j) >= M, 1, n, search)
    if j_max is None:
        raise InfeasibleTargetError(
            f"target M={M} exceeds total expected reduction {sums.total(n):.6g}"
        )

    rewards = {b.id: 0.0 for b in ordered}
    decisions = {b.id: False for b in ordered}
    j_of: dict = {}
    for i in range(1, j_max + 1):
        bidder = ordered[i - 1]
        # The re-run without i may only price at OTHER bidders' thresholds;
        # otherwise a bidder sitting at j_max could set her own price and
        # profit from inflating it. Below j_max the prefix sums are short
        # of M, so the only candidate to skip is i's own slot at j_max.
        lo = j_max + 1 if i == j_max else j_max
        j_i = _first_index(
            lambda j: sums.total_excluding(j, i) >= M, lo, n, search
        )
        if j_i is None:
            raise InfeasibleTargetError(
                f"target M={M} cannot be met when excluding bidder {bidder.id!r}"
            )
        j_of[bidder.id] = j_i
        rewards[bidder.id] = sums.thresholds[j_i - 1]
        decisions[bidder.id] = True

    return Allocation(
        targeted=tuple(b.id for b in ordered[:j_max]),
        rewards=rewards,
        decisions=decisions,
        j_max=j_max,
        j_of=j_of,
    )


def run_omniscient(
    bidders: Sequence[Bidder], M: float, epsilon: float = 0.0
) -> Allocation:
    """Full-information benchmark: pay each served bidder her threshold.

    Serves the shortest prefix whose summed reductions, each priced at
    the bidder's OWN threshold, cover M; rewards are threshold + epsilon.
    Knowing thresholds exactly lets this rule stop earlier and pay less
    than the private-information mechanism.
    """
    _require_finite("M", M)
    _require_finite("epsilon", epsilon)
    if M < 0:
        raise DomainError(f"M must be >= 0, got {M}")
    if epsilon < 0:
        raise DomainError(f"epsilon must be >= 0, got {epsilon}")
    if M == 0.0:
        return _empty_allocation(bidders)
    if not bidders:
        raise InfeasibleTargetError(f"no bidders available for target M={M}")

    ordered = _sorted_bidders(bidders)
    own = [b.reduction_fn(b.threshold) for b in ordered]
    running = 0.0
    j_star = None
    partials = []
    for j, delta in enumerate(own, start=1):
        running += delta
        partials.append(running)
        if running >= M:
            j_star = j
            break
    if j_star is None:
        raise InfeasibleTargetError(
            f"target M={M} exceeds own-threshold total {running:.6g}"
        )

    rewards = {b.id: 0.0 for b in ordered}
    decisions = {b.id: False for b in ordered}
    j_of: dict = {}
    for i in range(1, j_star + 1):
        bidder = ordered[i - 1]
        rewards[bidder.id] = bidder.threshold + epsilon
        decisions[bidder.id] = True
        j_of[bidder.id] = i

    return Allocation(
        targeted=tuple(b.id for b in ordered[:j_star]),
        rewards=rewards,
        decisions=decisions,
        j_max=j_star,
        j_of=j_of,
    )


def feasible_target_bound(bidders: Sequence[Bidder]) -> float:
    """Largest target the exclusion pricing can dependably clear.

    Sum of the 2nd..(n-1)-th cheapest bidders' reductions priced at the
    (n-1)-th threshold. Below three bidders the bound is zero.
    """
    if len(bidders) < 3:
        return 0.0
    ordered = _sorted_bidders(bidders)
    price = ordered[-2].threshold
    return math.fsum(b.reduction_fn(price) for b in ordered[1:-1])


class PaymentSummary(NamedTuple):
    net: float
    gross: float


def _resolve_user(users, uid):
    if isinstance(users, Mapping):
        try:
            return users[uid]
        except KeyError:
            raise LookupError(f"allocation id {uid!r} not among users") from None
    try:
        return users[uid]
    except (IndexError, TypeError) as exc:
        raise LookupError(f"allocation id {uid!r} not among users") from exc


def expected_payments(
    alloc: Allocation,
    users: Sequence[tuple[UserType, float]] | Mapping,
    q: float,
) -> PaymentSummary:
    """Expected payout of an allocation, net and gross.

    Net sums each targeted user's expected utility (reward income minus
    penalty exposure); at threshold rewards it is near zero. Gross sums
    reward * E[positive part of reduction] and is the disbursement the
    operator budgets for. `users` maps allocation ids to
    (UserType, baseline) either as a mapping or by sequence position.
    """
    _require_finite("q", q)
    if q < 0:
        raise DomainError(f"q must be >= 0, got {q}")
    net = 0.0
    gross = 0.0
    for uid in alloc.targeted:
        user, x_hat = _resolve_user(users, uid)
        r = alloc.rewards[uid]
        gain, _ = expected_reduction_parts(user, x_hat, r)
        net += expected_utility(user, x_hat, r, q)
        gross += r * gain
    return PaymentSummary(net=net, gross=gross)


@dataclass(frozen=True)
class Violation:
    kind: str
    user: object
    detail: str
    gain: float = 0.0
    factors: tuple = ()


@dataclass(frozen=True)
class AuditReport:
    """Outcome of the rationality and truthfulness checks.

    Violations carry the perturbation factors that produced them, so a
    reported case can be replayed without the original generator state.
    """

    n_users: int
    M: float
    q: float
    n_misreports: int
    ir_violations: tuple = field(default_factory=tuple)
    ic_violations: tuple = field(default_factory=tuple)
    infeasible_misreports: int = 0

    @property
    def passed(self) -> bool:
        return not self.ir_violations and not self.ic_violations


def _honest_bidder(uid, user: UserType, x_hat: float, q: float, cfg) -> Bidder:
    return Bidder(
        id=uid,
        threshold=threshold_reward(user, x_hat, q, cfg),
        reduction_fn=lambda r, u=user, xh=x_hat: expected_reduction(u, xh, r),
    )


def audit_incentives(
    users: Sequence[tuple[UserType, float]],
    M: float,
    q: float,
    n_misreports: int,
    rng,
    cfg: ThresholdSolveConfig = ThresholdSolveConfig(),
    *,
    search: str = "binary",
) -> AuditReport:
    """Check rationality and truthfulness of the auction on an instance.

    Rationality: every targeted user's expected utility at the assigned
    reward must be >= -10 * abs_tol, and non-targeted users pay and
    receive nothing. Truthfulness: for `n_misreports` random multiplicative
    perturbations (factors in [0.5, 2] on alpha, sigma, scale, loc) of a
    random user's report, re-running the auction must not raise that
    user's TRUE expected utility by more than 10 * abs_tol.

    Violations become report entries, never exceptions; a misreport that
    leaves the target infeasible counts separately (the event simply
    cannot run) and is not a violation.
    """
    if n_misreports < 0:
        raise DomainError(f"n_misreports must be >= 0, got {n_misreports}")
    tol = 10.0 * cfg.abs_tol
    bidders = [
        _honest_bidder(uid, user, x_hat, q, cfg)
        for uid, (user, x_hat) in enumerate(users)
    ]
    truthful = run_dr_mechanism(bidders, M, search=search)

    ir: list[Violation] = []
    truthful_utility = {}
    for uid, (user, x_hat) in enumerate(users):
        if uid in truthful.j_of:
            mu = expected_utility(user, x_hat, truthful.rewards[uid], q)
            truthful_utility[uid] = mu
            if mu < -tol:
                ir.append(
                    Violation(
                        kind="ir",
                        user=uid,
                        detail=f"targeted utility {mu:.3e} below -{tol:.1e}",
                        gain=-mu,
                    )
                )
        else:
            truthful_utility[uid] = 0.0
            if truthful.rewards[uid] != 0.0:
                ir.append(
                    Violation(
                        kind="ir",
                        user=uid,
                        detail="non-targeted user carries a nonzero reward",
                    )
                )

    ic: list[Violation] = []
    infeasible = 0
    for _ in range(n_misreports):
        uid = int(rng.integers(0, len(users)))
        user, x_hat = users[uid]
        f_alpha, f_sigma, f_scale, f_loc = rng.uniform(0.5, 2.0, size=4)
        reported = UserType(
            alpha=user.alpha * f_alpha,
            params=type(user.params)(
                sigma=user.params.sigma * f_sigma,
                scale=user.params.scale * f_scale,
                loc=user.params.loc * f_loc,
            ),
        )
        trial = list(bidders)
        trial[uid] = _honest_bidder(uid, reported, x_hat, q, cfg)
        try:
            outcome = run_dr_mechanism(trial, M, search=search)
        except InfeasibleTargetError:
            infeasible += 1
            continue
        if uid in outcome.j_of:
            mu_lie = expected_utility(user, x_hat, outcome.rewards[uid], q)
        else:
            mu_lie = 0.0
        gain = mu_lie - truthful_utility[uid]
        if gain > tol:
            ic.append(
                Violation(
                    kind="ic",
                    user=uid,
                    detail=(
                        f"misreport raises true utility {truthful_utility[uid]:.6e}"
                        f" -> {mu_lie:.6e}"
                    ),
                    gain=gain,
                    factors=(f_alpha, f_sigma, f_scale, f_loc),
                )
            )

    return AuditReport(
        n_users=len(users),
        M=M,
        q=q,
        n_misreports=n_misreports,
        ir_violations=tuple(ir),
        ic_violations=tuple(ic),
        infeasible_misreports=infeasible,
    )


def write_allocation_csv(
    alloc: Allocation,
    path: str | Path,
    *,
    M: float,
    q: float,
    seed: object = None,
) -> None:
    """Write `id,targeted,reward,j_of` rows under a metadata comment line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# M={M!r} q={q!r} j_max={alloc.j_max} seed={seed!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "targeted", "reward", "j_of"])
        for uid, reward in alloc.rewards.items():
            writer.writerow(
                [
                    uid,
                    str(alloc.decisions[uid]).lower(),
                    repr(reward),
                    alloc.j_of.get(uid, 0),
                ]
            )
