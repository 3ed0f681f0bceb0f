"""Three offline estimates of a day-0 promotion's 60-day value.

A meta-action is a deterministic day-0 promotion rule; afterwards the star
slot goes back to the incumbent. Each sampled user contributes (y, r, g):
whether they streamed their promoted item on day 0, their minutes on that
item over the window, and their minutes on everything over the window. The
holistic estimator averages g, the item-local one averages r, and the
two-part estimator multiplies the day-0 stream rate by the mean follow-on
minutes measured on an auxiliary cohort of streamers. The point of the
comparison is the error bars, not the point estimates: the product needs far
fewer experiment users for the same precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import DataError, ItemId, Trajectory, consumption
from .simulator import (
    Catalogue,
    DayView,
    FirstDayPolicy,
    LoggingPolicy,
    SimConfig,
    StarPolicy,
    eligible_pool,
    run_user,
    user_rng,
)

WINDOW_DAYS = 60
AUX_UID_BASE = 1_000_000  # auxiliary cohorts draw from their own id range

Chooser = Callable[[DayView], ItemId]


@dataclass(frozen=True)
class OutcomeSample:
    """One experiment user's windowed outcomes for their promoted item."""

    y: int        # streamed the item on day 0
    r: float      # minutes on the item within the window
    g: float      # minutes on all items within the window

    def __post_init__(self) -> None:
        if self.y not in (0, 1):
            raise ValueError("y must be 0 or 1")
        if not (0.0 <= self.r <= self.g + 1e-9):
            raise ValueError("need 0 <= r <= g")


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float
    n: int


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    if values.size < 2:
        raise DataError("need at least two samples for a standard error")
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def q_holistic(samples: Sequence[OutcomeSample]) -> Estimate:
    """Mean all-item minutes; unbiased for total value but carries the full
    variance of everything else the user listens to."""
    g = np.asarray([s.g for s in samples], dtype=float)
    mean, se = _mean_se(g)
    return Estimate(mean, se, g.size)


def q_local(samples: Sequence[OutcomeSample]) -> Estimate:
    """Mean promoted-item minutes; drops the unrelated-listening variance."""
    r = np.asarray([s.r for s in samples], dtype=float)
    mean, se = _mean_se(r)
    return Estimate(mean, se, r.size)


def q_product(samples: Sequence[OutcomeSample], aux_minutes: Sequence[float]) -> Estimate:
    """Day-0 stream rate times mean follow-on minutes from an independent
    streamer cohort, with the product's first-order standard error.

    se^2 = vbar^2 se_y^2 + ybar^2 se_v^2, valid because the two factors come
    from disjoint user populations.
    """
    y = np.asarray([s.y for s in samples], dtype=float)
    v = np.asarray(aux_minutes, dtype=float)
    y_mean, y_se = _mean_se(y)
    v_mean, v_se = _mean_se(v)
    se = float(np.sqrt(v_mean**2 * y_se**2 + y_mean**2 * v_se**2))
    return Estimate(y_mean * v_mean, se, y.size)


# ---------------------------------------------------------------------------
# meta-actions and sample collection
# ---------------------------------------------------------------------------

def fixed_item_chooser(item: ItemId) -> Chooser:
    return lambda view: item


def clicky_chooser(pool_rule: str = "unseen") -> Chooser:
    """Day-0 pick by the incumbent's systematic click score (ties: lowest id)."""

    def choose(view: DayView) -> ItemId:
        pool = eligible_pool(view, pool_rule)
        return int(pool[np.argmax(view.sys_click[pool])])

    return choose


def sticky_chooser(tradeoff: float = 18.0, pool_rule: str = "unseen") -> Chooser:
    """Day-0 pick by click chance times habit payoff, the value-form ranking.

    Reads the simulator's ground truth, so this is an experiment meta-action,
    not a learner; it stands in for a long-term-aware ranking. The payoff
    multiple is the chance one listen turns into a repeat loop, worth
    `tradeoff` extra listens when it does. exp(sys_click) is proportional to
    the day-0 stream chance in the rare-click regime, so the argmax matches
    ranking by expected minutes.
    """

    def choose(view: DayView) -> ItemId:
        pool = eligible_pool(view, pool_rule)
        lat = view.latent
        click = np.exp(view.sys_click[pool])
        boot = 1.0 / (1.0 + np.exp(-(lat.base_affinity[pool] + 0.5 * lat.habit_gain[pool])))
        return int(pool[np.argmax(click * (1.0 + tradeoff * boot))])

    return choose


def default_meta_actions() -> Dict[str, Chooser]:
    return {"control": clicky_chooser(), "personalized": sticky_chooser()}


class CappedIncumbent(StarPolicy):
    """Incumbent wrapper that never re-promotes an already-promoted item.

    The incumbent's own fresh-first pool avoids repeats until late in a long
    window, when the fresh tiers empty and its fallbacks would re-promote.
    Capping closes that leak, which is what ties the item-local outcome to the
    day-0 exposure: a user who skipped their promoted item never hears about
    it again, so y=0 forces r=0 for promo-tier items.
    """

    def __init__(self, inner: StarPolicy):
        self.inner = inner

    @property
    def rng_draws(self) -> int:  # type: ignore[override]
        return self.inner.rng_draws

    def pick_star(self, view: DayView) -> Optional[ItemId]:
        pick = self.inner.pick_star(view)
        if pick is None or not view.promoted[pick]:
            return pick
        pool = eligible_pool(view, "unseen")
        pool = pool[~view.promoted[pool]]
        if pool.size == 0:
            return None
        return int(pool[np.argmax(view.sys_click[pool])])


def day0_policy(chooser: Chooser, config: SimConfig) -> StarPolicy:
    """Promote the chooser's pick on day 0, then hand back to the incumbent
    with a frequency cap on everything already promoted."""
    return FirstDayPolicy(
        chooser=chooser,
        then=CappedIncumbent(LoggingPolicy(config.epsilon, config.pool_rule)),
    )


def windowed_outcomes(traj: Trajectory, horizon: int = WINDOW_DAYS) -> OutcomeSample:
    """(y, r, g) against the day-0 star item of the trajectory."""
    days = traj.days[:horizon]
    item = days[0].star_item
    y = 1 if consumption(days[0], item) > 0.0 else 0
    r = sum(consumption(d, item) for d in days) / 60.0
    g = sum(sum(d.engagements) for d in days) / 60.0
    return OutcomeSample(y=y, r=r, g=g)


def collect_outcome_samples(
    chooser: Chooser,
    config: SimConfig,
    catalogue: Catalogue,
    seed: int,
    n_users: int,
    uid_start: int = 0,
    horizon: int = WINDOW_DAYS,
) -> List[OutcomeSample]:
    """Simulate n_users fresh users under the day-0 meta-action.

    User ids index rng substreams, so two meta-actions sampled over the same
    id range face identical user populations.
    """
    policy = day0_policy(chooser, config)
    out: List[OutcomeSample] = []
    for uid in range(uid_start, uid_start + n_users):
        run = run_user(
            policy, config, catalogue, user_rng(seed, uid), user_id=uid, max_days=horizon
        )
        out.append(windowed_outcomes(run.trajectory, horizon))
    return out


def collect_aux_minutes(
    chooser: Chooser,
    config: SimConfig,
    catalogue: Catalogue,
    seed: int,
    n_needed: int,
    uid_start: int = AUX_UID_BASE,
    horizon: int = WINDOW_DAYS,
    max_attempts: Optional[int] = None,
) -> List[float]:
    """Follow-on minutes for n_needed users who streamed their pick on day 0.

    Candidates are screened with a one-day run first; only streamers are
    re-simulated over the full window (the substream makes the replay land on
    the identical day 0). Raises DataError when the id budget runs out before
    enough streamers are found.
    """
    policy = day0_policy(chooser, config)
    if max_attempts is None:
        max_attempts = max(400 * n_needed, 10_000)
    out: List[float] = []
    uid = uid_start
    attempts = 0
    while len(out) < n_needed and attempts < max_attempts:
        screen = run_user(
            policy, config, catalogue, user_rng(seed, uid), user_id=uid, max_days=1
        )
        day0 = screen.trajectory.days[0]
        if consumption(day0, day0.star_item) > 0.0:
            full = run_user(
                policy, config, catalogue, user_rng(seed, uid), user_id=uid, max_days=horizon
            )
            out.append(windowed_outcomes(full.trajectory, horizon).r)
        uid += 1
        attempts += 1
    if len(out) < n_needed:
        raise DataError(
            f"found only {len(out)} day-0 streamers in {attempts} attempts"
        )
    return out


# ---------------------------------------------------------------------------
# the sweep
# ---------------------------------------------------------------------------

ESTIMATOR_LABELS = ("holistic", "item-local", "product")

SWEEP_HEADER = ("estimator", "meta_action", "n", "mean", "se")


def estimate_all(
    samples: Sequence[OutcomeSample], aux_minutes: Sequence[float]
) -> Dict[str, Estimate]:
    return {
        "holistic": q_holistic(samples),
        "item-local": q_local(samples),
        "product": q_product(samples, aux_minutes),
    }


def sample_complexity_sweep(
    config: SimConfig,
    catalogue: Catalogue,
    meta_actions: Dict[str, Chooser],
    n_grid: Sequence[int],
    seed: int,
    aux_size: int = 7000,
    horizon: int = WINDOW_DAYS,
) -> List[Tuple[str, str, int, float, float]]:
    """Rows (estimator, meta_action, n, mean, se) over a grid of cohort sizes.

    The largest cohort is simulated once per meta-action and smaller ns are
    prefixes of it; the auxiliary cohort is shared across ns, matching how a
    fixed historical log would back every experiment size. Means come from
    the prefixes; spreads are estimated once on the full cohort and projected
    down as sigma/sqrt(n). A small prefix of a heavy-tailed payoff often
    misses the rare large outcomes and so understates its own error bar, and
    the sweep is a statement about error-bar size, not about one prefix's
    luck with the tail.
    """
    if not meta_actions:
        raise DataError("need at least one meta-action")
    n_grid = sorted(set(int(n) for n in n_grid))
    if n_grid[0] < 2:
        raise DataError("cohort sizes must be >= 2")
    n_max = n_grid[-1]
    rows: List[Tuple[str, str, int, float, float]] = []
    for name in sorted(meta_actions):
        chooser = meta_actions[name]
        samples = collect_outcome_samples(chooser, config, catalogue, seed, n_max, 0, horizon)
        aux = collect_aux_minutes(chooser, config, catalogue, seed, aux_size, horizon=horizon)
        g = np.asarray([s.g for s in samples], dtype=float)
        r = np.asarray([s.r for s in samples], dtype=float)
        y = np.asarray([s.y for s in samples], dtype=float)
        g_sd = float(g.std(ddof=1))
        r_sd = float(r.std(ddof=1))
        y_rate = float(y.mean())
        v_mean, v_se = _mean_se(np.asarray(aux, dtype=float))
        for n in n_grid:
            root_n = math.sqrt(n)
            ours_se = math.sqrt(
                v_mean**2 * y_rate * (1.0 - y_rate) / n + (y[:n].mean() ** 2) * v_se**2
            )
            rows.append(("holistic", name, n, float(g[:n].mean()), g_sd / root_n))
            rows.append(("item-local", name, n, float(r[:n].mean()), r_sd / root_n))
            rows.append(("product", name, n, float(y[:n].mean() * v_mean), ours_se))
    return rows
