"""Seeded simulation sweeps over reduction targets.

One run samples a user pool from the population prior, draws per-user
synthetic baselines, solves every threshold, and then walks the target
grid running the auction (and, in compare mode, the full-information
benchmark) at each M. Three modes fill different row fields:

  compare    targeted counts and payments, mechanism vs benchmark (k=10)
  decompose  measured reduction split into its baseline-error and
             behavioral parts, averaged over consumption realizations,
             per k in k_set
  payments   gross and net expected payments per k in k_set

Baselines and consumption realizations are drawn once per (k, seed) and
reused across the whole M sweep, so M-dependence in the output is never
confounded with redraw noise. Identical configs produce byte-identical
output files.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .analytic import ThresholdSolveConfig, expected_reduction, threshold_reward
from .baseline import synthetic_baseline
from .dist import DEFAULT_SYNTHETIC_PRIOR, CompoundPrior, load_prior, sample_user_types
from .errors import ConfigError, InfeasibleTargetError
from .mechanism import Bidder, expected_payments, run_dr_mechanism, run_omniscient

__all__ = [
    "MODES",
    "ScenarioConfig",
    "SweepRow",
    "SweepResult",
    "run_scenario",
    "emit_results",
    "SWEEP_CSV_HEADER",
]

log = logging.getLogger(__name__)

MODES = ("compare", "decompose", "payments")

_DEFAULT_M_GRID = tuple(float(m) for m in np.linspace(0.0, 200.0, 21))
_COMPARE_K = 10


@dataclass(frozen=True)
class ScenarioConfig:
    """Experiment parameters; defaults mirror the n=500, q=5.0 setup."""

    n: int = 500
    q: float = 5.0
    alpha_bounds: tuple[float, float] = (0.05, 0.06)
    prior: CompoundPrior | str | Path | None = None
    M_grid: tuple[float, ...] = _DEFAULT_M_GRID
    k_set: tuple[int, ...] = (5, 10, 20, 40)
    mc_reps: int = 200
    seed: int = 0
    solve: ThresholdSolveConfig = field(default_factory=ThresholdSolveConfig)

    def __post_init__(self) -> None:
        if self.n < 3:
            raise ConfigError(f"n must be >= 3, got {self.n}")
        if not (math.isfinite(self.q) and self.q >= 0):
            raise ConfigError(f"q must be finite and >= 0, got {self.q}")
        lo, hi = self.alpha_bounds
        if not (0 < lo < hi):
            raise ConfigError(f"alpha_bounds must satisfy 0 < lo < hi, got {self.alpha_bounds}")
        if not self.M_grid:
            raise ConfigError("M_grid must not be empty")
        if any(m < 0 for m in self.M_grid):
            raise ConfigError("M_grid entries must be >= 0")
        if list(self.M_grid) != sorted(self.M_grid):
            raise ConfigError("M_grid must be ascending")
        if not self.k_set or any(k < 1 for k in self.k_set):
            raise ConfigError(f"k_set entries must be >= 1, got {self.k_set}")
        if self.mc_reps < 1:
            raise ConfigError(f"mc_reps must be >= 1, got {self.mc_reps}")

    def resolved_prior(self) -> tuple[CompoundPrior, str]:
        """The population prior plus a provenance label for output metadata."""
        if self.prior is None:
            prior, label = DEFAULT_SYNTHETIC_PRIOR, "synthetic-default"
        elif isinstance(self.prior, CompoundPrior):
            prior, label = self.prior, "supplied"
        else:
            prior, label = load_prior(self.prior), f"file:{self.prior}"
        return prior.with_alpha_bounds(*self.alpha_bounds), label


@dataclass(frozen=True)
class SweepRow:
    M: float
    n_targeted_mech: int
    n_targeted_omn: int
    gross_mech: float
    gross_omn: float
    net_mech: float
    sum_delta_bl: float
    sum_delta_r: float
    k: int
    seed: int


@dataclass(frozen=True)
class SweepResult:
    mode: str
    prior_label: str
    seed: int
    rows: tuple[SweepRow, ...]


def _pool_bidders(users, x_hats, q, solve) -> list[Bidder]:
    return [
        Bidder(
            id=i,
            threshold=threshold_reward(u, xh, q, solve),
            reduction_fn=lambda r, u=u, xh=xh: expected_reduction(u, xh, r),
        )
        for i, (u, xh) in enumerate(zip(users, x_hats))
    ]


def run_scenario(cfg: ScenarioConfig, mode: str = "compare") -> SweepResult:
    """Execute one seeded sweep; infeasible grid entries are skipped.

    The auction runs with the exhaustive index scan: sampled pools can
    contain users whose baseline draw badly undershoots their mean, and
    those users' negative expected reductions void the sorted-prefix
    monotonicity that the binary search relies on.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    prior, label = cfg.resolved_prior()
    root = np.random.SeedSequence(cfg.seed)
    ss_users, ss_base, ss_mc = root.spawn(3)
    users = sample_user_types(prior, cfg.n, np.random.default_rng(ss_users))
    alphas = np.array([u.alpha for u in users])
    locs = np.array([u.params.loc for u in users])
    scales = np.array([u.params.scale for u in users])
    sigmas = np.array([u.params.sigma for u in users])

    ks = (_COMPARE_K,) if mode == "compare" else tuple(cfg.k_set)
    base_children = ss_base.spawn(len(ks))
    mc_children = ss_mc.spawn(len(ks))

    rows: list[SweepRow] = []
    for k, base_child, mc_child in zip(ks, base_children, mc_children):
        rng_base = np.random.default_rng(base_child)
        x_hats = np.array(
            [synthetic_baseline(u.params, k, rng_base).value for u in users]
        )
        bidders = _pool_bidders(users, x_hats, cfg.q, cfg.solve)
        pairs = [(u, float(xh)) for u, xh in zip(users, x_hats)]

        if mode == "decompose":
            z = np.random.default_rng(mc_child).standard_normal((cfg.mc_reps, cfg.n))
            xbars = locs + scales * np.exp(sigmas * z)

        for M in cfg.M_grid:
            try:
                mech = run_dr_mechanism(bidders, M, search="scan")
            except InfeasibleTargetError as exc:
                log.warning("skipping M=%g (k=%d): %s", M, k, exc)
                continue
            n_omn = 0
            gross_mech = gross_omn = net_mech = 0.0
            sum_bl = sum_dr = 0.0

            if mode == "compare":
                try:
                    omn = run_omniscient(bidders, M)
                except InfeasibleTargetError as exc:
                    log.warning("skipping M=%g (k=%d): benchmark: %s", M, k, exc)
                    continue
                n_omn = omn.n_targeted
                net_mech, gross_mech = expected_payments(mech, pairs, cfg.q)
                _, gross_omn = expected_payments(omn, pairs, cfg.q)
            elif mode == "payments":
                net_mech, gross_mech = expected_payments(mech, pairs, cfg.q)
            else:
                idx = np.fromiter(mech.targeted, dtype=int, count=mech.n_targeted)
                if idx.size:
                    r = np.array([mech.rewards[i] for i in mech.targeted])
                    picked = xbars[:, idx]
                    sum_bl = float((x_hats[idx] - picked).sum(axis=1).mean())
                    sum_dr = float(
                        (picked * -np.expm1(-alphas[idx] * r)).sum(axis=1).mean()
                    )

            rows.append(
                SweepRow(
                    M=float(M),
                    n_targeted_mech=mech.n_targeted,
                    n_targeted_omn=n_omn,
                    gross_mech=gross_mech,
                    gross_omn=gross_omn,
                    net_mech=net_mech,
                    sum_delta_bl=sum_bl,
                    sum_delta_r=sum_dr,
                    k=k,
                    seed=cfg.seed,
                )
            )
    return SweepResult(mode=mode, prior_label=label, seed=cfg.seed, rows=tuple(rows))


SWEEP_CSV_HEADER = [
    "M",
    "n_targeted_mech",
    "n_targeted_omn",
    "gross_mech",
    "gross_omn",
    "net_mech",
    "sum_delta_bl",
    "sum_delta_r",
    "k",
    "seed",
]

_FLOAT_FIELDS = ("M", "gross_mech", "gross_omn", "net_mech", "sum_delta_bl", "sum_delta_r")


def _row_cells(row: SweepRow) -> list:
    cells = []
    for name in SWEEP_CSV_HEADER:
        value = getattr(row, name)
        cells.append(f"{value:.9g}" if name in _FLOAT_FIELDS else value)
    return cells


def emit_results(result: SweepResult, path: str | Path, format: str = "csv") -> None:
    """Write sweep rows as CSV (fixed header) or JSON, 9 significant digits."""
    if format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SWEEP_CSV_HEADER)
            for row in result.rows:
                writer.writerow(_row_cells(row))
    elif format == "json":
        doc = {
            "mode": result.mode,
            "prior": result.prior_label,
            "seed": result.seed,
            "rows": [
                {
                    name: (
                        float(f"{getattr(row, name):.9g}")
                        if name in _FLOAT_FIELDS
                        else getattr(row, name)
                    )
                    for name in SWEEP_CSV_HEADER
                }
                for row in result.rows
            ],
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")
    else:
        raise ConfigError(f"format must be 'csv' or 'json', got {format!r}")
