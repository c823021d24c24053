"""Command-line entry points for the pipeline stages.

Every stage is a subcommand with seeded, reproducible behavior:

  fit           per-user lognormal parameters from a meter CSV
  sample-users  synthetic user pool drawn from a population prior
  baseline      settlement baselines for one event date
  mechanism     a single auction run over a user pool
  scenario      the full target-grid sweep (compare/decompose/payments)

Exit codes: 0 success, 2 configuration error, 3 data error,
4 infeasible reduction target.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from datetime import date
from pathlib import Path

import numpy as np

from .analytic import expected_reduction, threshold_reward
from .baseline import (
    Calendar,
    caiso_baseline,
    synthetic_baseline,
    write_baselines_csv,
)
from .dist import fit_lognormal3, sample_user_types, write_params_csv
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    DRMechError,
    InfeasibleTargetError,
    InsufficientHistoryError,
    PriorError,
)
from .ingest import hour_slice, read_holidays, read_meter_csv
from .mechanism import (
    Bidder,
    expected_payments,
    run_dr_mechanism,
    write_allocation_csv,
)
from .model import ConsumptionParams, UserType
from .scenario import MODES, ScenarioConfig, emit_results, run_scenario

log = logging.getLogger(__name__)

_MIN_FIT_DAYS = 20


def _hour(text: str) -> int:
    value = int(text)
    if not 0 <= value <= 23:
        raise argparse.ArgumentTypeError(f"hour must be in 0..23, got {text}")
    return value


def _date_arg(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}") from None


def _m_grid(text: str) -> tuple[float, ...]:
    try:
        lo, hi, steps = text.split(":")
        lo_f, hi_f, n = float(lo), float(hi), int(steps)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected lo:hi:steps, got {text!r}"
        ) from None
    if n < 1:
        raise argparse.ArgumentTypeError("steps must be >= 1")
    return tuple(float(m) for m in np.linspace(lo_f, hi_f, n))


def _k_set(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a,b,c integers, got {text!r}") from None


def _cmd_fit(args) -> int:
    series_list = read_meter_csv(args.input)
    rows = []
    skipped = 0
    for series in series_list:
        samples = hour_slice(series, args.hour, exclude_dr=True)
        if len(samples) < _MIN_FIT_DAYS:
            log.warning(
                "user %s: only %d usable hour-%d readings, need %d; skipped",
                series.user_id, len(samples), args.hour, _MIN_FIT_DAYS,
            )
            skipped += 1
            continue
        rows.append((series.user_id, args.hour, fit_lognormal3(samples)))
    if not rows:
        raise DataError(f"no user in {args.input} has enough hour-{args.hour} history")
    write_params_csv(args.out, rows)
    print(f"fitted {len(rows)} user(s), skipped {skipped}; wrote {args.out}")
    return 0


def _cmd_sample_users(args) -> int:
    cfg = ScenarioConfig(n=args.n, seed=args.seed, prior=args.prior)
    prior, label = cfg.resolved_prior()
    users = sample_user_types(prior, args.n, np.random.default_rng(np.random.SeedSequence(args.seed)))
    ids = [f"u{i:04d}" for i in range(len(users))]
    if args.format == "json":
        doc = {
            "seed": args.seed,
            "prior": label,
            "hour": args.hour,
            "users": [
                {
                    "id": uid,
                    "alpha": u.alpha,
                    "sigma": u.params.sigma,
                    "scale": u.params.scale,
                    "loc": u.params.loc,
                }
                for uid, u in zip(ids, users)
            ],
        }
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    else:
        log.info("csv output drops the alpha column; use json to keep full types")
        write_params_csv(args.out, [(uid, args.hour, u.params) for uid, u in zip(ids, users)])
    print(f"sampled {len(users)} user(s) from {label} prior; wrote {args.out}")
    return 0


def _cmd_baseline(args) -> int:
    cal = Calendar(holidays=read_holidays(args.holidays) if args.holidays else frozenset())
    series_list = read_meter_csv(args.input)
    rows = []
    skipped = 0
    for series in series_list:
        try:
            est = caiso_baseline(
                series, args.date, args.hour, cal, strict=args.strict_baseline
            )
        except InsufficientHistoryError as exc:
            if args.strict_baseline:
                raise
            log.warning("%s; skipped", exc)
            skipped += 1
            continue
        rows.append((series.user_id, args.date, est))
    write_baselines_csv(rows, args.out)
    print(f"baselined {len(rows)} user(s), skipped {skipped}; wrote {args.out}")
    return 0


def _load_users_json(path) -> list[tuple[str, UserType]]:
    try:
        doc = json.loads(Path(path).read_text())
        out = []
        for entry in doc["users"]:
            out.append(
                (
                    str(entry["id"]),
                    UserType(
                        alpha=float(entry["alpha"]),
                        params=ConsumptionParams(
                            sigma=float(entry["sigma"]),
                            scale=float(entry["scale"]),
                            loc=float(entry["loc"]),
                        ),
                    ),
                )
            )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed users file {path}: {exc}") from exc
    if not out:
        raise DataError(f"users file {path} contains no users")
    return out


def _read_baseline_values(path) -> dict[str, float]:
    values: dict[str, float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            try:
                values[row["user_id"]] = float(row["value_kwh"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"malformed baseline file {path}: {exc}") from exc
    return values


def _cmd_mechanism(args) -> int:
    users = _load_users_json(args.users)
    if args.baselines:
        values = _read_baseline_values(args.baselines)
        missing = [uid for uid, _ in users if uid not in values]
        if missing:
            raise DataError(f"no baseline for user(s): {', '.join(missing[:5])}")
        x_hats = [values[uid] for uid, _ in users]
    else:
        rng = np.random.default_rng(np.random.SeedSequence(args.seed))
        x_hats = [
            synthetic_baseline(u.params, args.k, rng).value for _, u in users
        ]

    bidders = [
        Bidder(
            id=uid,
            threshold=threshold_reward(u, xh, args.q),
            reduction_fn=lambda r, u=u, xh=xh: expected_reduction(u, xh, r),
        )
        for (uid, u), xh in zip(users, x_hats)
    ]
    alloc = run_dr_mechanism(bidders, args.m, search=args.search)
    write_allocation_csv(alloc, args.out, M=args.m, q=args.q, seed=args.seed)
    pairs = {uid: (u, xh) for (uid, u), xh in zip(users, x_hats)}
    net, gross = expected_payments(alloc, pairs, args.q)
    print(
        f"targeted {alloc.n_targeted}/{len(users)} user(s), j_max={alloc.j_max}, "
        f"gross={gross:.6g}, net={net:.6g}; wrote {args.out}"
    )
    return 0


def _cmd_scenario(args) -> int:
    cfg = ScenarioConfig(
        n=args.n,
        q=args.q,
        prior=args.prior,
        M_grid=args.m_grid,
        k_set=args.k_set,
        mc_reps=args.reps,
        seed=args.seed,
    )
    result = run_scenario(cfg, args.mode)
    emit_results(result, args.out, args.format)
    print(f"{args.mode}: {len(result.rows)} row(s); wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drmech",
        description="Demand-response auction pipeline: fitting, baselines, allocation, sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit per-user lognormal parameters from a meter CSV")
    p.add_argument("--input", required=True, help="meter CSV (user_id,timestamp,kwh[,dr_event])")
    p.add_argument("--hour", type=_hour, default=17, help="clock hour to fit (default 17)")
    p.add_argument("--out", required=True, help="output params CSV")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("sample-users", help="draw a synthetic user pool from a prior")
    p.add_argument("--n", type=int, required=True, help="number of users")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prior", default=None, help="prior JSON (default: built-in synthetic)")
    p.add_argument("--hour", type=_hour, default=17)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample_users)

    p = sub.add_parser("baseline", help="settlement baselines for an event date")
    p.add_argument("--input", required=True, help="meter CSV")
    p.add_argument("--date", type=_date_arg, required=True, help="event date YYYY-MM-DD")
    p.add_argument("--hour", type=_hour, default=17)
    p.add_argument("--holidays", default=None, help="holiday list, one YYYY-MM-DD per line")
    p.add_argument("--strict-baseline", action="store_true",
                   help="error out instead of using fewer than the full day count")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("mechanism", help="run one auction over a sampled user pool")
    p.add_argument("--users", required=True, help="users JSON from sample-users")
    p.add_argument("--m", type=float, required=True, help="reduction target (kWh)")
    p.add_argument("--q", type=float, default=5.0, help="penalty rate ($/kWh)")
    p.add_argument("--baselines", default=None, help="baseline CSV; omit to draw synthetic")
    p.add_argument("--k", type=int, default=10, help="synthetic baseline days (default 10)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--search", choices=("binary", "scan"), default="scan")
    p.add_argument("--out", required=True, help="allocation CSV")
    p.set_defaults(func=_cmd_mechanism)

    p = sub.add_parser("scenario", help="target-grid sweep (compare/decompose/payments)")
    p.add_argument("--mode", choices=MODES, default="compare")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--q", type=float, default=5.0)
    p.add_argument("--m-grid", type=_m_grid, default=None, metavar="LO:HI:STEPS")
    p.add_argument("--k-set", type=_k_set, default=(5, 10, 20, 40), metavar="A,B,C")
    p.add_argument("--reps", type=int, default=200, help="consumption replications (decompose)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prior", default=None, help="prior JSON (default: built-in synthetic)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_scenario)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "m_grid", "absent") is None:
        args.m_grid = ScenarioConfig().M_grid
    try:
        return args.func(args)
    except (ConfigError, DomainError, PriorError) as exc:
        log.error("%s", exc)
        return 2
    except (DataError, OSError) as exc:
        log.error("%s", exc)
        return 3
    except InfeasibleTargetError as exc:
        log.error("%s", exc)
        return 4
    except DRMechError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
