"""Command-line entry points.

Every subcommand shares three flags: --config (key=value file), --seed, and
--out (output directory). The item catalogue is always derived from the
config's own seed, never from --seed, so artifacts trained from one dataset
stay valid for cohorts drawn under other seeds; --seed shifts only the
per-user randomness. Same seed and flags produce byte-identical outputs.

Exit codes: 0 on success, 2 for configuration problems, 3 for data problems.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import ConfigError, DataError, ItemId, RewardSpec
from .estimators import (
    SWEEP_HEADER,
    clicky_chooser,
    day0_policy,
    default_meta_actions,
    sample_complexity_sweep,
    sticky_chooser,
)
from .harness import (
    ARM_FIGURE_HEADER,
    CALIBRATION_HEADER,
    HOLDBACK_HEADER,
    WEEKLY_FIGURE_HEADER,
    ExperimentSpec,
    report_record,
    run_ab,
    run_calibration,
    run_holdback,
)
from .io import (
    USERS,
    read_dataset,
    read_json,
    read_user_states,
    write_csv,
    write_dataset,
    write_json,
)
from .models import (
    DISCOVERY_HORIZON,
    ClickinessModel,
    StickinessModel,
    build_clickiness_rows,
    build_resurfacing_tables,
    discoveries_by_item,
    resurfacing_rows,
    train_clickiness,
    train_stickiness_models,
    unpersonalized_stickiness,
)
from .policy_improve import direct_pi_dataset, make_quantile_phi
from .qvalue import ARM_CONTROL, ARM_PERSONALIZED, ARMS, ScoreModels, ScorePolicy
from .simulator import (
    Catalogue,
    DailyPolicy,
    LoggingPolicy,
    SimConfig,
    catalogue_rng,
    format_config,
    read_config,
    simulate_cohort,
    spawn_catalogue,
)

CLICKINESS_FILE = "clickiness.json"
STICKINESS_FILE = "stickiness.json"


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _setup(args: argparse.Namespace) -> Tuple[SimConfig, int, str]:
    config = read_config(args.config) if args.config else SimConfig()
    seed = args.seed if args.seed is not None else config.seed
    out = args.out
    if out is None:
        raise ConfigError("--out is required")
    os.makedirs(out, exist_ok=True)
    return config, seed, out


def _catalogue(config: SimConfig) -> Catalogue:
    return spawn_catalogue(config, catalogue_rng(config.seed))


def _int_list(text: str, flag: str) -> List[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"{flag} expects comma-separated integers: {exc}") from exc


def _write_stickiness_artifact(
    path: str,
    models: Dict[ItemId, StickinessModel],
    by_item: Dict[ItemId, list],
    horizon: int,
    lam: float,
    d: int,
) -> None:
    items = []
    for item in sorted(models):
        rec = models[item].to_record()
        recs = by_item.get(item, [])
        rec["n_records"] = len(recs)
        rec["vbar"] = unpersonalized_stickiness(recs) if recs else None
        items.append(rec)
    write_json(path, {"horizon": horizon, "lambda": lam, "d": d, "items": items})


def _read_stickiness_artifact(
    path: str,
) -> Tuple[Dict[ItemId, StickinessModel], Dict[ItemId, float]]:
    raw = read_json(path)
    if not isinstance(raw, dict) or "items" not in raw:
        raise DataError(f"malformed stickiness artifact {path!r}")
    models: Dict[ItemId, StickinessModel] = {}
    vbar: Dict[ItemId, float] = {}
    for rec in raw["items"]:
        model = StickinessModel.from_record(rec)
        models[model.item] = model
        if rec.get("vbar") is not None:
            vbar[model.item] = float(rec["vbar"])
    return models, vbar


def _load_score_models(models_dir: str, nu: np.ndarray) -> ScoreModels:
    click_rec = read_json(os.path.join(models_dir, CLICKINESS_FILE))
    if not isinstance(click_rec, dict):
        raise DataError(f"malformed clickiness artifact in {models_dir!r}")
    click = ClickinessModel.from_record(click_rec)
    stick, vbar = _read_stickiness_artifact(os.path.join(models_dir, STICKINESS_FILE))
    return ScoreModels(click=click, stickiness=stick, vbar=vbar, nu=nu)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> int:
    config, seed, out = _setup(args)
    catalogue = _catalogue(config)
    policy = LoggingPolicy(config.epsilon, config.pool_rule)
    cohort = simulate_cohort(policy, config, args.users, catalogue=catalogue, seed=seed)
    write_dataset(out, cohort)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(format_config(config))
    total_days = sum(len(run.trajectory) for run in cohort.users)
    print(f"simulate: {len(cohort)} users, {total_days} logged days -> {out}")
    return 0


def cmd_train_short(args: argparse.Namespace) -> int:
    _, _, out = _setup(args)
    ds = read_dataset(args.data)
    X, y = build_clickiness_rows(ds.users, ds.nu)
    model = train_clickiness(X, y)
    write_json(os.path.join(out, CLICKINESS_FILE), model.to_record())
    print(
        f"train-short: {X.shape[0]} impressions, "
        f"loss {model.initial_loss:.4f} -> {model.final_loss:.4f}"
    )
    return 0


def cmd_train_stickiness(args: argparse.Namespace) -> int:
    _, _, out = _setup(args)
    ds = read_dataset(args.data)
    if not ds.users:
        raise DataError("dataset has no users")
    d = len(ds.users[0].taste)
    by_item = discoveries_by_item(ds.users, args.horizon)
    models = train_stickiness_models(
        by_item, d, items=range(ds.nu.shape[0]), lam=args.ridge
    )
    _write_stickiness_artifact(
        os.path.join(out, STICKINESS_FILE), models, by_item, args.horizon, args.ridge, d
    )
    n_recs = sum(len(v) for v in by_item.values())
    print(f"train-stickiness: {len(models)} items, {n_recs} discoveries")
    return 0


def cmd_build_resurfacing(args: argparse.Namespace) -> int:
    _, _, out = _setup(args)
    ds = read_dataset(args.data)
    items = (
        _int_list(args.items, "--items")
        if args.items
        else list(range(ds.nu.shape[0]))
    )
    tables = {
        item: build_resurfacing_tables(ds.users, item, ds.alpha, args.horizon)
        for item in items
    }
    rows = list(resurfacing_rows(tables))
    write_csv(
        os.path.join(out, "resurfacing.csv"),
        ("item", "cell_i", "cell_j", "p_rec", "p_norec", "v"),
        rows,
    )
    print(f"build-resurfacing: {len(items)} items, {len(rows)} complete cells")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    _, _, out = _setup(args)
    ds = read_dataset(args.data)
    states = read_user_states(os.path.join(args.data, USERS))
    sm = _load_score_models(args.models, ds.nu)
    n_items = ds.nu.shape[0]
    rows: List[Tuple[int, int, float, float, float]] = []
    for user_id, _, state in sorted(states, key=lambda t: t[0]):
        click = sm.click_probs(state.taste, state.context)
        stick = sm.theta @ np.asarray(state.taste)
        q = click * (1.0 + np.maximum(stick, 0.0))
        for item in range(n_items):
            rows.append(
                (user_id, item, float(click[item]), float(stick[item]), float(q[item]))
            )
    write_csv(
        os.path.join(out, "scores.csv"),
        ("user_id", "item_id", "click_p", "stickiness", "q"),
        rows,
    )
    print(f"score: {len(states)} users x {n_items} items -> scores.csv")
    return 0


def _arm_policies(
    arm_names: Sequence[str],
    exposure: str,
    config: SimConfig,
    catalogue: Catalogue,
    models_dir: Optional[str],
):
    """One star policy per arm. With trained artifacts every named ranking arm
    is available; without them only the simulator-side stand-ins are."""
    if models_dir:
        sm = _load_score_models(models_dir, catalogue.nu)
        choosers = {
            name: ScorePolicy(sm, name, pool_rule="unseen").pick_star
            for name in arm_names
        }
    else:
        oracle = {
            ARM_CONTROL: clicky_chooser(),
            ARM_PERSONALIZED: sticky_chooser(),
        }
        missing = [n for n in arm_names if n not in oracle]
        if missing:
            raise ConfigError(
                f"arms {missing} need trained models; pass --models or use "
                f"{sorted(oracle)}"
            )
        choosers = {name: oracle[name] for name in arm_names}
    arms = []
    for name in arm_names:
        if exposure == "shelf":
            arms.append((name, DailyPolicy(choosers[name])))
        else:
            arms.append((name, day0_policy(choosers[name], config)))
    return tuple(arms)


def cmd_ab_test(args: argparse.Namespace) -> int:
    config, seed, out = _setup(args)
    catalogue = _catalogue(config)
    arm_names = [tok.strip() for tok in args.arms.split(",") if tok.strip()]
    if not arm_names:
        raise ConfigError("--arms must name at least one arm")
    for name in arm_names:
        if name not in ARMS:
            raise ConfigError(f"unknown arm {name!r}; expected one of {ARMS}")
    arms = _arm_policies(arm_names, args.exposure, config, catalogue, args.models)
    spec = ExperimentSpec(arms=arms, n_users=args.users, seed=seed)
    report = run_ab(spec, config, catalogue)
    write_json(os.path.join(out, "report.json"), report_record(report))
    if args.exposure == "shelf":
        write_csv(os.path.join(out, "fig4a.csv"), ARM_FIGURE_HEADER, report.fig_arm_rows())
        write_csv(
            os.path.join(out, "fig4b.csv"), WEEKLY_FIGURE_HEADER, report.fig_weekly_rows()
        )
    else:
        write_csv(
            os.path.join(out, "fig5b.csv"), WEEKLY_FIGURE_HEADER, report.fig_weekly_rows()
        )
    print(
        f"ab-test: {args.users} users x {len(arms)} arms ({args.exposure}), "
        f"impacted fraction {report.impacted_fraction:.3f}"
    )
    return 0


def cmd_holdback(args: argparse.Namespace) -> int:
    config, seed, out = _setup(args)
    catalogue = _catalogue(config)
    report = run_holdback(config, args.item, args.users, seed, catalogue, args.window)
    write_csv(os.path.join(out, "holdback.csv"), HOLDBACK_HEADER, report.rows())
    ratio = report.ratio
    write_json(
        os.path.join(out, "holdback.json"),
        {
            "item": int(report.item),
            "shown_n": report.shown_n,
            "shown_targeted": report.shown_targeted,
            "shown_discoveries": report.shown_discoveries,
            "shown_rate": report.shown_rate,
            "holdback_n": report.holdback_n,
            "holdback_targeted": report.holdback_targeted,
            "holdback_discoveries": report.holdback_discoveries,
            "holdback_rate": report.holdback_rate,
            "ratio": ratio if np.isfinite(ratio) else None,
        },
    )
    shown = f"{report.shown_rate:.4f}"
    held = f"{report.holdback_rate:.4f}"
    print(f"holdback: item {args.item}, shown rate {shown}, holdback rate {held}")
    return 0


def cmd_calibration(args: argparse.Namespace) -> int:
    config, seed, out = _setup(args)
    catalogue = _catalogue(config)
    models, _ = _read_stickiness_artifact(os.path.join(args.models, STICKINESS_FILE))
    rows = run_calibration(
        config, catalogue, models, args.users, seed, n_bins=args.bins
    )
    write_csv(os.path.join(out, "fig4c.csv"), CALIBRATION_HEADER, rows)
    print(f"calibration: {sum(r[3] for r in rows)} discoveries in {len(rows)} bins")
    return 0


def cmd_sample_complexity(args: argparse.Namespace) -> int:
    if args.seed is None:
        raise ConfigError("--seed is required for sample-complexity")
    config, seed, out = _setup(args)
    catalogue = _catalogue(config)
    grid = _int_list(args.grid, "--grid")
    rows = sample_complexity_sweep(
        config,
        catalogue,
        default_meta_actions(),
        grid,
        seed,
        aux_size=args.aux,
    )
    write_csv(os.path.join(out, "fig8.csv"), SWEEP_HEADER, rows)
    print(f"sample-complexity: grid {grid}, {len(rows)} rows -> fig8.csv")
    return 0


def cmd_policy_improve(args: argparse.Namespace) -> int:
    _, _, out = _setup(args)
    ds = read_dataset(args.data)
    if not ds.users:
        raise DataError("dataset has no users")
    if len(ds.users[0].taste) < 2:
        raise ConfigError("taste must have a second coordinate to cluster on")
    values = [lu.taste[1] for lu in ds.users]
    phi = make_quantile_phi(values, args.clusters, lambda s: s.taste[1])
    est = direct_pi_dataset(
        ds.users,
        phi,
        ds.alpha,
        RewardSpec(),
        clusters=range(args.clusters),
        min_visits=args.min_visits,
    )
    policy = {
        str(c): (None if est.greedy.get(c) is None else int(est.greedy[c]))
        for c in sorted(est.greedy)
    }
    write_json(
        os.path.join(out, "policy.json"),
        {
            "clusters": args.clusters,
            "policy": policy,
            "undecided": [int(c) for c in est.undecided],
        },
    )
    qbar_rows = []
    for (cluster, action), q in sorted(
        est.q_hat.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1])
    ):
        action_str = "none" if action is None else str(int(action))
        qbar_rows.append((int(cluster), action_str, q, est.counts[(cluster, action)]))
    write_csv(os.path.join(out, "qbar.csv"), ("cluster", "action", "q_hat", "n"), qbar_rows)
    print(
        f"policy-improve: {args.clusters} clusters, "
        f"{len(est.undecided)} undecided -> policy.json"
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="habitrec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="log a cohort under the incumbent")
    p.add_argument("--users", type=int, required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train-short", parents=[common], help="fit the click model")
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_train_short)

    p = sub.add_parser(
        "train-stickiness", parents=[common], help="fit per-item return-day regressions"
    )
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=int, default=DISCOVERY_HORIZON)
    p.add_argument("--ridge", type=float, default=1.0)
    p.set_defaults(fn=cmd_train_stickiness)

    p = sub.add_parser(
        "build-resurfacing", parents=[common], help="empirical grid tables per item"
    )
    p.add_argument("--data", required=True)
    p.add_argument("--items", help="comma-separated item ids (default: all)")
    p.add_argument("--horizon", type=int, default=DISCOVERY_HORIZON)
    p.set_defaults(fn=cmd_build_resurfacing)

    p = sub.add_parser("score", parents=[common], help="score user-item pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("ab-test", parents=[common], help="paired arm comparison")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--exposure", choices=("shelf", "banner"), default="shelf")
    p.add_argument("--arms", default=f"{ARM_CONTROL},{ARM_PERSONALIZED}")
    p.add_argument("--models", help="trained artifact directory (enables all arms)")
    p.set_defaults(fn=cmd_ab_test)

    p = sub.add_parser("holdback", parents=[common], help="generated vs delivered promotion")
    p.add_argument("--item", type=int, required=True)
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--window", type=int, default=60)
    p.set_defaults(fn=cmd_holdback)

    p = sub.add_parser("calibration", parents=[common], help="predicted vs realized deciles")
    p.add_argument("--models", required=True)
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(fn=cmd_calibration)

    p = sub.add_parser(
        "sample-complexity", parents=[common], help="estimator SE vs sample size"
    )
    p.add_argument("--grid", default="1000,10000,100000")
    p.add_argument("--aux", type=int, default=7000)
    p.set_defaults(fn=cmd_sample_complexity)

    p = sub.add_parser(
        "policy-improve", parents=[common], help="greedy policy from aggregated values"
    )
    p.add_argument("--data", required=True)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--min-visits", type=int, default=1)
    p.set_defaults(fn=cmd_policy_improve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
