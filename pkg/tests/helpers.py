"""Shared pool builders used by the mechanism and acceptance tests."""
from functools import partial

from drmech.analytic import ThresholdSolveConfig, expected_reduction, threshold_reward
from drmech.dist import DEFAULT_SYNTHETIC_PRIOR, sample_user_types
from drmech.mechanism import Bidder


def six_linear_bidders():
    """Hand-checkable pool: six ascending thresholds, linear reductions."""
    thresholds = (0.5, 1.0, 1.5, 1.8, 2.0, 2.1)
    intercepts = (1.0, 2.0, 1.0, 2.0, 1.0, 1.0)
    slopes = (1.0, 0.5, 1.0 / 3.0, 0.25, 0.5, 0.2)

    def linear(a, b):
        return lambda r: a + b * r

    return [
        Bidder(i + 1, thresholds[i], linear(intercepts[i], slopes[i]))
        for i in range(6)
    ]


def calibrated_pairs(rng, n, prior=DEFAULT_SYNTHETIC_PRIOR):
    """(user, baseline) pairs with each baseline set to the user's mean.

    Calibrated baselines keep every threshold below q and every
    own-threshold expected reduction non-negative, which is the
    monotonicity premise the mechanism's binary search relies on.
    """
    users = sample_user_types(prior, n, rng)
    return [(u, u.params.mean) for u in users]


def pool_bidders(pairs, q, cfg=ThresholdSolveConfig()):
    return [
        Bidder(
            idx,
            threshold_reward(user, x_hat, q, cfg),
            partial(expected_reduction, user, x_hat),
        )
        for idx, (user, x_hat) in enumerate(pairs)
    ]


def safe_target_cap(bidders):
    """Largest M that every single-bidder exclusion re-run can still meet.

    The n >= 3 feasibility bound assumes dropping the cheapest bidder is
    the worst case; a heavy-tail bidder elsewhere in the pool can break
    that. This cap checks every exclusion directly.
    """
    order = sorted(bidders, key=lambda b: (b.threshold, str(b.id)))
    top = order[-1].threshold
    col = [b.reduction_fn(top) for b in order]
    total = sum(col)
    worst_exclusion = min(total - col[i] for i in range(len(order) - 1))
    body = sum(b.reduction_fn(order[-2].threshold) for b in order[:-1])
    return min(worst_exclusion, body)
