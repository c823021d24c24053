"""Allocation rule, benchmark rule, payments, audits, serialization.

The six-bidder linear pool is small enough to check every intermediate
sum by hand; the randomized pools exercise the same paths at scale.
"""
import math

import numpy as np
import pytest

from helpers import calibrated_pairs, pool_bidders, safe_target_cap, six_linear_bidders

from drmech.analytic import ThresholdSolveConfig, threshold_reward
from drmech.dist import sample_base_consumption
from drmech.errors import DomainError, InfeasibleTargetError
from drmech.mechanism import (
    Allocation,
    Bidder,
    audit_incentives,
    expected_payments,
    feasible_target_bound,
    run_dr_mechanism,
    run_omniscient,
    write_allocation_csv,
)
from drmech.model import ConsumptionParams, UserType


def test_six_bidder_pool_m43():
    alloc = run_dr_mechanism(six_linear_bidders(), 4.3)
    assert alloc.targeted == (1, 2)
    assert alloc.j_max == 2
    assert alloc.j_of == {1: 4, 2: 4}
    assert alloc.rewards[1] == pytest.approx(1.8, abs=1e-12)
    assert alloc.rewards[2] == pytest.approx(1.8, abs=1e-12)
    assert alloc.decisions == {1: True, 2: True, 3: False, 4: False, 5: False, 6: False}


def test_six_bidder_intermediate_sums():
    b = {bid.id: bid.reduction_fn for bid in six_linear_bidders()}
    assert b[1](1.0) + b[2](1.0) == pytest.approx(4.5, abs=1e-12)
    assert b[2](1.8) + b[3](1.8) + b[4](1.8) == pytest.approx(6.95, abs=1e-12)
    assert b[2](1.5) + b[3](1.5) == pytest.approx(4.25, abs=1e-12)
    assert b[1](1.8) + b[3](1.8) + b[4](1.8) == pytest.approx(6.85, abs=1e-12)
    assert b[1](1.5) + b[3](1.5) == pytest.approx(4.0, abs=1e-12)


def test_six_bidder_pool_m40():
    # one notch easier: both winners now price at the third threshold
    alloc = run_dr_mechanism(six_linear_bidders(), 4.0)
    assert alloc.j_max == 2
    assert alloc.j_of == {1: 3, 2: 3}
    # non-targeted bidders stay in the map at reward zero
    assert alloc.rewards == {
        1: pytest.approx(1.5),
        2: pytest.approx(1.5),
        3: 0.0,
        4: 0.0,
        5: 0.0,
        6: 0.0,
    }


def test_zero_target_is_empty():
    alloc = run_dr_mechanism(six_linear_bidders(), 0.0)
    assert alloc.targeted == ()
    assert set(alloc.rewards.values()) == {0.0}
    assert alloc.j_max == 0
    assert all(not d for d in alloc.decisions.values())
    assert run_omniscient(six_linear_bidders(), 0.0).targeted == ()


def test_infeasible_target_raises():
    with pytest.raises(InfeasibleTargetError):
        run_dr_mechanism(six_linear_bidders(), 1e6)


def test_negative_target_rejected():
    with pytest.raises(DomainError):
        run_dr_mechanism(six_linear_bidders(), -1.0)


def test_feasible_bound_drops_cheapest_and_dearest():
    # sum of bidders 2..5 priced at the 5th threshold (2.0)
    assert feasible_target_bound(six_linear_bidders()) == pytest.approx(
        3.0 + (1.0 + 2.0 / 3.0) + 2.5 + 2.0, abs=1e-12
    )


def test_omniscient_m43():
    alloc = run_omniscient(six_linear_bidders(), 4.3)
    assert alloc.targeted == (1, 2, 3)
    assert alloc.j_max == 3
    assert alloc.rewards[1] == pytest.approx(0.5)
    assert alloc.rewards[2] == pytest.approx(1.0)
    assert alloc.rewards[3] == pytest.approx(1.5)
    assert alloc.rewards[4] == 0.0


def test_omniscient_m15_and_epsilon():
    alloc = run_omniscient(six_linear_bidders(), 1.5)
    assert alloc.targeted == (1,)
    assert alloc.rewards[1] == pytest.approx(0.5)
    bumped = run_omniscient(six_linear_bidders(), 1.5, epsilon=0.01)
    assert bumped.rewards[1] == pytest.approx(0.51)


def test_search_modes_agree_on_linear_pool():
    for m in (0.5, 2.0, 4.0, 4.3, 6.0, 9.0):
        a = run_dr_mechanism(six_linear_bidders(), m, search="binary")
        b = run_dr_mechanism(six_linear_bidders(), m, search="scan")
        assert a == b


def test_tie_break_by_id():
    def flat(c):
        return lambda r: c

    bidders = [Bidder("b", 1.0, flat(2.0)), Bidder("a", 1.0 + 1e-13, flat(2.0))]
    alloc = run_dr_mechanism(bidders + [Bidder("c", 3.0, flat(2.0))], 1.0)
    # thresholds equal within tolerance: "a" sorts ahead of "b"
    assert alloc.targeted == ("a",)


def test_monotone_spot_check_rejects_decreasing_fn():
    with pytest.raises(DomainError):
        Bidder(1, 1.0, lambda r: 5.0 - r)


def test_bidder_rejects_bad_threshold():
    with pytest.raises(DomainError):
        Bidder(1, -0.5, lambda r: 1.0)
    with pytest.raises(DomainError):
        Bidder(1, float("nan"), lambda r: 1.0)


def test_allocated_rewards_never_below_thresholds():
    rng = np.random.default_rng(17)
    pairs = calibrated_pairs(rng, 60)
    bidders = pool_bidders(pairs, 5.0)
    m = 0.5 * min(feasible_target_bound(bidders), safe_target_cap(bidders))
    alloc = run_dr_mechanism(bidders, m)
    assert alloc.targeted
    by_id = {b.id: b for b in bidders}
    for uid in alloc.targeted:
        assert alloc.rewards[uid] >= by_id[uid].threshold - 1e-12
    # delivered expected reduction meets the target at the assigned rewards
    delivered = sum(by_id[u].reduction_fn(alloc.rewards[u]) for u in alloc.targeted)
    assert delivered >= m - 1e-9


def test_payments_empty_allocation():
    empty = Allocation(targeted=(), rewards={}, decisions={}, j_max=0, j_of={})
    user = UserType(0.5, ConsumptionParams(1.0, 1.0))
    assert expected_payments(empty, {"u": (user, 1.0)}, 5.0) == (0.0, 0.0)


def test_payments_net_zero_at_own_threshold():
    cfg = ThresholdSolveConfig()
    user = UserType(0.5, ConsumptionParams(1.0, 1.0))
    r = threshold_reward(user, 1.0, 5.0, cfg)
    alloc = Allocation(
        targeted=("u",), rewards={"u": r}, decisions={"u": True}, j_max=1, j_of={"u": 1}
    )
    pay = expected_payments(alloc, {"u": (user, 1.0)}, 5.0)
    assert abs(pay.net) <= 10.0 * cfg.abs_tol
    assert pay.gross > 0.0


def test_payments_gross_matches_sampling():
    user = UserType(0.5, ConsumptionParams(1.0, 1.0))
    x_hat, q, r = 1.0, 5.0, 2.0
    alloc = Allocation(
        targeted=(0,), rewards={0: r}, decisions={0: True}, j_max=1, j_of={0: 1}
    )
    gross = expected_payments(alloc, [(user, x_hat)], q).gross
    rng = np.random.default_rng(2024)
    x = sample_base_consumption(user.params, 2_000_000, rng)
    draws = r * np.maximum(x_hat - x * math.exp(-user.alpha * r), 0.0)
    se = draws.std(ddof=1) / math.sqrt(draws.size)
    assert gross == pytest.approx(draws.mean(), abs=3.0 * se)


def test_payments_unknown_id():
    alloc = Allocation(
        targeted=("ghost",),
        rewards={"ghost": 1.0},
        decisions={"ghost": True},
        j_max=1,
        j_of={"ghost": 1},
    )
    user = UserType(0.5, ConsumptionParams(1.0, 1.0))
    with pytest.raises(LookupError):
        expected_payments(alloc, {"u": (user, 1.0)}, 5.0)


def test_audit_passes_on_calibrated_pool():
    rng = np.random.default_rng(4)
    pairs = calibrated_pairs(rng, 25)
    bidders = pool_bidders(pairs, 5.0)
    m = 0.4 * min(feasible_target_bound(bidders), safe_target_cap(bidders))
    report = audit_incentives(pairs, m, 5.0, 20, rng)
    assert report.passed
    assert report.ir_violations == ()
    assert report.ic_violations == ()
    assert report.n_misreports == 20


def test_audit_validates_inputs():
    rng = np.random.default_rng(0)
    pairs = calibrated_pairs(rng, 10)
    with pytest.raises(DomainError):
        audit_incentives(pairs, 1.0, 5.0, -1, rng)
    # zero misreports is a legal (vacuous) audit
    report = audit_incentives(pairs, 0.5, 5.0, 0, rng)
    assert report.n_misreports == 0


def test_allocation_csv(tmp_path):
    alloc = run_dr_mechanism(six_linear_bidders(), 4.3)
    path = tmp_path / "alloc.csv"
    write_allocation_csv(alloc, path, M=4.3, q=5.0, seed=7)
    lines = path.read_text().splitlines()
    assert lines[0] == "# M=4.3 q=5.0 j_max=2 seed=7"
    assert lines[1] == "id,targeted,reward,j_of"
    assert lines[2].startswith("1,true,1.8")
    # every bidder appears exactly once
    assert len(lines) == 2 + 6
