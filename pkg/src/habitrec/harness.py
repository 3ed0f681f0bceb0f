"""Experiment orchestration: A/B runs, holdback, calibration, figure data.

A/B runs are paired counterfactuals: every user is simulated under every arm
with the same rng substream, and the hash assignment only decides which arm's
outcome the "as deployed" view reports. Pairing is what makes the impacted
accounting an identity instead of an estimate: a user whose arms all chose
the same items has byte-identical trajectories, so every cross-arm delta
concentrates on the users the policies actually treated differently.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import ConfigError, DataError, ItemId, Trajectory, consumed_items, consumption
from .estimators import SWEEP_HEADER
from .io import LoggedUser, write_csv
from .models import StickinessModel, iter_discoveries
from .simulator import (
    Catalogue,
    FirstDayPolicy,
    FixedItemPolicy,
    LoggingPolicy,
    SimConfig,
    StarPolicy,
    catalogue_rng,
    run_user,
    spawn_catalogue,
    user_rng,
)

SCALAR_METRICS = ("first_streams", "active_days_60", "minutes_60", "lasting_discovery")
WEEKLY_METRIC = "weekly_consumption"
METRIC_NAMES = SCALAR_METRICS + (WEEKLY_METRIC,)

LASTING_MIN_DAYS = 3
LASTING_MIN_MINUTES = 120.0
LASTING_WINDOW_DAYS = 42


# ---------------------------------------------------------------------------
# arm assignment
# ---------------------------------------------------------------------------

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _fold_str(s: str) -> int:
    h = 0
    for b in s.encode("utf-8"):
        h = splitmix64(h ^ b)
    return h


def assign_arm(seed: int, user_id: int, arms: Sequence[str]) -> str:
    """Highest-hash-wins assignment over (seed, arm, user).

    Appending new arms to the list never moves a user between existing arms:
    each user keeps their winner unless a newly added arm outbids it.
    """
    if not arms:
        raise ValueError("arms must be non-empty")
    best, best_h = arms[0], -1
    for arm in arms:
        h = splitmix64(splitmix64(seed ^ _fold_str(arm)) ^ user_id)
        if h > best_h:
            best, best_h = arm, h
    return best


# ---------------------------------------------------------------------------
# per-user metrics
# ---------------------------------------------------------------------------

def user_metrics(
    traj: Trajectory, window: int, weeks: int, staple_set: frozenset
) -> Tuple[Dict[str, float], np.ndarray]:
    """The four outcome metrics plus the weekly minutes series.

    first_streams counts distinct items first listened inside the window.
    A lasting discovery is a non-staple item first listened in the window
    that gets 3+ active days and 2+ hours within 42 days of the discovery;
    staples are everyone's baseline diet, not discoveries worth crediting.
    """
    days = traj.days
    in_window = days[:window]
    first_streams = 0
    active_days = 0
    minutes = 0.0
    seen: set = set()
    first_listen: Dict[ItemId, int] = {}
    for i, day in enumerate(days):
        consumed = consumed_items(day)
        for item in consumed:
            if item not in first_listen:
                first_listen[item] = i
        if i < window:
            new_items = set(consumed) - seen
            first_streams += len(new_items)
            if consumed:
                active_days += 1
            minutes += sum(day.engagements) / 60.0
        seen.update(consumed)

    lasting = 0.0
    for item, t0 in first_listen.items():
        if t0 >= window or item in staple_set:
            continue
        span = days[t0 : t0 + LASTING_WINDOW_DAYS]
        item_days = sum(1 for d in span if consumption(d, item) > 0.0)
        item_minutes = sum(consumption(d, item) for d in span) / 60.0
        if item_days >= LASTING_MIN_DAYS and item_minutes >= LASTING_MIN_MINUTES:
            lasting = 1.0
            break

    weekly = np.zeros(weeks)
    for w in range(weeks):
        chunk = days[7 * w : 7 * (w + 1)]
        weekly[w] = sum(sum(d.engagements) for d in chunk) / 60.0

    return (
        {
            "first_streams": float(first_streams),
            "active_days_60": float(active_days),
            "minutes_60": minutes,
            "lasting_discovery": lasting,
        },
        weekly,
    )


# ---------------------------------------------------------------------------
# A/B runs
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ExperimentSpec:
    """Arms are (name, policy) pairs; the first arm is the control baseline."""

    arms: Tuple[Tuple[str, StarPolicy], ...]
    n_users: int
    outcome_window: int = 60
    weeks: int = 9
    seed: int = 0
    metrics: Tuple[str, ...] = METRIC_NAMES

    def __post_init__(self) -> None:
        if not self.arms:
            raise ConfigError("at least one arm required")
        names = [name for name, _ in self.arms]
        if len(set(names)) != len(names):
            raise ConfigError("arm names must be unique")
        if self.n_users < 0:
            raise ConfigError("n_users must be >= 0")
        if self.outcome_window < 1 or self.weeks < 1:
            raise ConfigError("outcome_window and weeks must be >= 1")
        for m in self.metrics:
            if m not in METRIC_NAMES:
                raise ConfigError(f"unknown metric {m!r}")

    @property
    def control(self) -> str:
        return self.arms[0][0]

    @property
    def scalar_metrics(self) -> Tuple[str, ...]:
        return tuple(m for m in SCALAR_METRICS if m in self.metrics)

    @property
    def wants_weekly(self) -> bool:
        return WEEKLY_METRIC in self.metrics

    @property
    def horizon(self) -> int:
        weeks = self.weeks if self.wants_weekly else 0
        return max(self.outcome_window, 7 * weeks)


@dataclass(eq=False)
class ArmStats:
    name: str
    assigned_n: int
    assigned_mean: Dict[str, float]
    assigned_se: Dict[str, float]
    assigned_quartiles: Dict[str, Tuple[float, float, float]]
    paired_mean: Dict[str, float]
    weekly_minutes: np.ndarray


@dataclass(eq=False)
class DeltaStats:
    """Paired effect of one arm vs control for one metric."""

    arm: str
    metric: str
    all_users: float
    all_users_se: float
    impacted: float


@dataclass(eq=False)
class MetricReport:
    arms: Tuple[str, ...]
    n_users: int
    outcome_window: int
    weeks: int
    impacted_fraction: float
    arm_stats: Dict[str, ArmStats]
    deltas: List[DeltaStats] = field(default_factory=list)

    def delta(self, arm: str, metric: str) -> DeltaStats:
        for d in self.deltas:
            if d.arm == arm and d.metric == metric:
                return d
        raise KeyError((arm, metric))

    def fig_arm_rows(self) -> List[Tuple[str, str, float, float, float, float]]:
        return [
            (d.metric, d.arm, d.all_users, d.impacted, self.impacted_fraction, d.all_users_se)
            for d in self.deltas
        ]

    def fig_weekly_rows(self) -> List[Tuple[int, str, float, float]]:
        rows: List[Tuple[int, str, float, float]] = []
        if not self.arm_stats:
            return rows
        control = self.arm_stats[self.arms[0]].weekly_minutes
        for name in self.arms:
            weekly = self.arm_stats[name].weekly_minutes
            for w in range(self.weeks):
                base = control[w]
                rel = weekly[w] / base if base > 0.0 else float("nan")
                rows.append((w + 1, name, float(weekly[w]), rel))
        return rows


def report_record(report: MetricReport) -> dict:
    """JSON-ready view of a MetricReport; key order is fixed for stable bytes."""
    rec: dict = {
        "arms": list(report.arms),
        "n_users": report.n_users,
        "outcome_window": report.outcome_window,
        "weeks": report.weeks,
        "impacted_fraction": report.impacted_fraction,
        "arm_stats": {},
        "deltas": [],
    }
    for name in report.arms:
        st = report.arm_stats[name]
        rec["arm_stats"][name] = {
            "assigned_n": st.assigned_n,
            "assigned_mean": dict(st.assigned_mean),
            "assigned_se": dict(st.assigned_se),
            "assigned_quartiles": {m: list(q) for m, q in st.assigned_quartiles.items()},
            "paired_mean": dict(st.paired_mean),
            "weekly_minutes": [float(v) for v in st.weekly_minutes],
        }
    for d in report.deltas:
        rec["deltas"].append(
            {
                "arm": d.arm,
                "metric": d.metric,
                "all_users": d.all_users,
                "all_users_se": d.all_users_se,
                "impacted": d.impacted,
            }
        )
    return rec


def run_ab(
    spec: ExperimentSpec,
    config: SimConfig,
    catalogue: Optional[Catalogue] = None,
) -> MetricReport:
    """Paired counterfactual A/B run.

    Reports the assigned-cohort view per arm (means, SEs, quartiles), paired
    all-user and impacted-user deltas against the control arm, the impacted
    fraction, and weekly minutes series over the full paired population.
    """
    if spec.horizon > config.max_days:
        raise ConfigError("outcome window exceeds the simulator horizon")
    if catalogue is None:
        catalogue = spawn_catalogue(config, catalogue_rng(config.seed))
    staple_set = frozenset(int(i) for i in catalogue.staples(config))
    names = [name for name, _ in spec.arms]
    metrics = spec.scalar_metrics
    weeks = spec.weeks if spec.wants_weekly else 0

    assigned_values: Dict[str, Dict[str, List[float]]] = {
        n: {m: [] for m in metrics} for n in names
    }
    assigned_count = {n: 0 for n in names}
    paired_sum = {n: {m: 0.0 for m in metrics} for n in names}
    delta_sum = {n: {m: 0.0 for m in metrics} for n in names}
    delta_sumsq = {n: {m: 0.0 for m in metrics} for n in names}
    impacted_delta_sum = {n: {m: 0.0 for m in metrics} for n in names}
    weekly_sum = {n: np.zeros(weeks) for n in names}
    impacted_count = 0

    for uid in range(spec.n_users):
        assigned = assign_arm(spec.seed, uid, names)
        assigned_count[assigned] += 1
        metrics_by_arm: Dict[str, Dict[str, float]] = {}
        trajs: Dict[str, Trajectory] = {}
        for name, policy in spec.arms:
            run = run_user(
                policy,
                config,
                catalogue,
                user_rng(spec.seed, uid),
                user_id=uid,
                max_days=spec.horizon,
            )
            m, weekly = user_metrics(run.trajectory, spec.outcome_window, weeks, staple_set)
            metrics_by_arm[name] = m
            trajs[name] = run.trajectory
            weekly_sum[name] += weekly
            for metric in metrics:
                paired_sum[name][metric] += m[metric]
        control_traj = trajs[names[0]]
        impacted = any(trajs[n] != control_traj for n in names[1:])
        if impacted:
            impacted_count += 1
        for name in names:
            for metric in metrics:
                d = metrics_by_arm[name][metric] - metrics_by_arm[names[0]][metric]
                delta_sum[name][metric] += d
                delta_sumsq[name][metric] += d * d
                if impacted:
                    impacted_delta_sum[name][metric] += d
        for metric in metrics:
            assigned_values[assigned][metric].append(metrics_by_arm[assigned][metric])

    n = spec.n_users
    frac = impacted_count / n if n else 0.0
    arm_stats: Dict[str, ArmStats] = {}
    deltas: List[DeltaStats] = []
    for name in names:
        means, ses, quarts, paired = {}, {}, {}, {}
        for metric in metrics:
            vals = np.asarray(assigned_values[name][metric])
            if vals.size:
                means[metric] = float(vals.mean())
                ses[metric] = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
                quarts[metric] = tuple(float(q) for q in np.percentile(vals, (25, 50, 75)))
            else:
                means[metric] = float("nan")
                ses[metric] = float("nan")
                quarts[metric] = (float("nan"),) * 3
            paired[metric] = paired_sum[name][metric] / n if n else float("nan")
        arm_stats[name] = ArmStats(
            name=name,
            assigned_n=assigned_count[name],
            assigned_mean=means,
            assigned_se=ses,
            assigned_quartiles=quarts,
            paired_mean=paired,
            weekly_minutes=weekly_sum[name] / n if n else np.full(weeks, np.nan),
        )
        if name == names[0]:
            continue
        for metric in metrics:
            if n:
                mean_d = delta_sum[name][metric] / n
                var_d = max(delta_sumsq[name][metric] / n - mean_d**2, 0.0)
                se_d = float(np.sqrt(var_d / n)) if n > 1 else 0.0
                imp = (
                    impacted_delta_sum[name][metric] / impacted_count
                    if impacted_count
                    else 0.0
                )
            else:
                mean_d, se_d, imp = float("nan"), float("nan"), float("nan")
            deltas.append(
                DeltaStats(
                    arm=name,
                    metric=metric,
                    all_users=mean_d,
                    all_users_se=se_d,
                    impacted=imp,
                )
            )
    return MetricReport(
        arms=tuple(names),
        n_users=n,
        outcome_window=spec.outcome_window,
        weeks=weeks,
        impacted_fraction=frac,
        arm_stats=arm_stats,
        deltas=deltas,
    )


# ---------------------------------------------------------------------------
# holdback
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class HoldbackReport:
    """Cohort counts for one promoted item: generated vs delivered."""

    item: ItemId
    shown_n: int
    shown_targeted: int
    shown_discoveries: int
    holdback_n: int
    holdback_targeted: int
    holdback_discoveries: int

    @property
    def shown_rate(self) -> float:
        return self.shown_discoveries / self.shown_n if self.shown_n else float("nan")

    @property
    def holdback_rate(self) -> float:
        return (
            self.holdback_discoveries / self.holdback_n if self.holdback_n else float("nan")
        )

    @property
    def ratio(self) -> float:
        hb = self.holdback_rate
        if hb == 0.0:
            return float("inf") if self.shown_rate > 0.0 else float("nan")
        return self.shown_rate / hb

    def rows(self) -> List[Tuple[str, int, int, int, float]]:
        return [
            ("shown", self.shown_n, self.shown_targeted, self.shown_discoveries, self.shown_rate),
            (
                "holdback",
                self.holdback_n,
                self.holdback_targeted,
                self.holdback_discoveries,
                self.holdback_rate,
            ),
        ]


HOLDBACK_HEADER = ("cohort", "n_users", "targeted", "discoveries", "discovery_rate")


def run_holdback(
    config: SimConfig,
    item: ItemId,
    n_users: int,
    seed: int,
    catalogue: Optional[Catalogue] = None,
    window: int = 60,
) -> HoldbackReport:
    """Day-0 promotion of one item, delivered to one cohort and suppressed
    for the other. The promotion is generated for every user and the split
    alternates by user id, so both cohorts are targeted in equal numbers.
    """
    if catalogue is None:
        catalogue = spawn_catalogue(config, catalogue_rng(config.seed))
    if window > config.max_days:
        raise ConfigError("window exceeds the simulator horizon")
    quiet = FixedItemPolicy(None)
    shown_policy = FirstDayPolicy(chooser=lambda view: item, then=quiet)
    holdback_policy = FirstDayPolicy(chooser=lambda view: None, then=quiet)
    counts = {
        "shown": {"n": 0, "targeted": 0, "disc": 0},
        "holdback": {"n": 0, "targeted": 0, "disc": 0},
    }
    for uid in range(n_users):
        cohort = "shown" if uid % 2 == 0 else "holdback"
        policy = shown_policy if cohort == "shown" else holdback_policy
        run = run_user(
            policy, config, catalogue, user_rng(seed, uid), user_id=uid, max_days=window
        )
        c = counts[cohort]
        c["n"] += 1
        c["targeted"] += 1  # the promotion is generated for every user
        if any(consumption(d, item) > 0.0 for d in run.trajectory.days):
            c["disc"] += 1
    return HoldbackReport(
        item=item,
        shown_n=counts["shown"]["n"],
        shown_targeted=counts["shown"]["targeted"],
        shown_discoveries=counts["shown"]["disc"],
        holdback_n=counts["holdback"]["n"],
        holdback_targeted=counts["holdback"]["targeted"],
        holdback_discoveries=counts["holdback"]["disc"],
    )


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

CALIBRATION_HEADER = ("decile", "predicted_mean", "realized_mean", "count")


def calibration_table(
    pairs: Sequence[Tuple[float, float]], n_bins: int = 10
) -> List[Tuple[int, float, float, int]]:
    """Bin (predicted, realized) pairs by predicted quantile.

    Bins are equal-count by construction; rows are (bin index from 1,
    predicted mean, realized mean, count).
    """
    if not pairs:
        return []
    pred = np.asarray([p for p, _ in pairs], dtype=float)
    real = np.asarray([r for _, r in pairs], dtype=float)
    order = np.argsort(pred, kind="stable")
    splits = np.array_split(order, n_bins)
    rows: List[Tuple[int, float, float, int]] = []
    for i, idx in enumerate(splits):
        if idx.size == 0:
            continue
        rows.append(
            (i + 1, float(pred[idx].mean()), float(real[idx].mean()), int(idx.size))
        )
    return rows


def collect_calibration_pairs(
    config: SimConfig,
    catalogue: Catalogue,
    models: Dict[ItemId, StickinessModel],
    n_users: int,
    seed: int,
    horizon: int = 60,
    min_pairs: Optional[int] = None,
) -> List[Tuple[float, float]]:
    """(predicted, realized) stickiness pairs from a fresh evaluation cohort.

    Simulates users under the incumbent and scores every qualifying discovery
    of a modeled item. Stops early once min_pairs is reached, if given.
    """
    policy = LoggingPolicy(config.epsilon, config.pool_rule)
    pairs: List[Tuple[float, float]] = []
    for uid in range(n_users):
        run = run_user(policy, config, catalogue, user_rng(seed, uid), user_id=uid)
        lu = LoggedUser(user_id=uid, taste=tuple(run.taste), trajectory=run.trajectory)
        for rec in iter_discoveries([lu], horizon):
            model = models.get(rec.item)
            if model is None:
                continue
            pairs.append((model.predict(rec.taste), float(rec.v_hat)))
        if min_pairs is not None and len(pairs) >= min_pairs:
            break
    return pairs


def run_calibration(
    config: SimConfig,
    catalogue: Catalogue,
    models: Dict[ItemId, StickinessModel],
    n_users: int,
    seed: int,
    n_bins: int = 10,
    horizon: int = 60,
    min_pairs: Optional[int] = None,
) -> List[Tuple[int, float, float, int]]:
    pairs = collect_calibration_pairs(
        config, catalogue, models, n_users, seed, horizon, min_pairs
    )
    if not pairs:
        raise DataError("evaluation cohort produced no qualifying discoveries")
    return calibration_table(pairs, n_bins)


# ---------------------------------------------------------------------------
# figure data
# ---------------------------------------------------------------------------

ARM_FIGURE_HEADER = (
    "metric",
    "arm",
    "all_users_delta",
    "impacted_delta",
    "impacted_fraction",
    "delta_se",
)
WEEKLY_FIGURE_HEADER = ("week", "arm", "minutes", "vs_control")


def emit_figures_data(
    out_dir: str,
    shelf: Optional[MetricReport] = None,
    banner: Optional[MetricReport] = None,
    calibration: Optional[Sequence[Tuple[int, float, float, int]]] = None,
    sweep: Optional[Sequence[Tuple[str, str, int, float, float]]] = None,
) -> Dict[str, str]:
    """Write the five figure-data CSVs; absent reports yield header-only files.

    Filenames are the artifact contract consumed downstream; schemas are fixed
    and byte-stable for a fixed seed.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "fig4a": os.path.join(out_dir, "fig4a.csv"),
        "fig4b": os.path.join(out_dir, "fig4b.csv"),
        "fig4c": os.path.join(out_dir, "fig4c.csv"),
        "fig5b": os.path.join(out_dir, "fig5b.csv"),
        "fig8": os.path.join(out_dir, "fig8.csv"),
    }
    write_csv(paths["fig4a"], ARM_FIGURE_HEADER, shelf.fig_arm_rows() if shelf else [])
    write_csv(paths["fig4b"], WEEKLY_FIGURE_HEADER, shelf.fig_weekly_rows() if shelf else [])
    write_csv(paths["fig4c"], CALIBRATION_HEADER, calibration or [])
    write_csv(paths["fig5b"], WEEKLY_FIGURE_HEADER, banner.fig_weekly_rows() if banner else [])
    write_csv(paths["fig8"], SWEEP_HEADER, sweep or [])
    return paths
