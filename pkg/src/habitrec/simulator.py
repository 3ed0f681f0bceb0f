"""Synthetic listening-platform simulator.

Design goals, in order: (1) the structural assumptions the scoring theory
needs hold exactly by construction (single star slot carries the only
recommendation effect, per-item listens depend only on that item's own state
and exposure, the future depends on today's recommendation only through the
updated relationship state); (2) the generative process is rich enough that
short-term appeal and long-term habit formation are distinct, negatively
correlatable item traits; (3) fixed seed means byte-identical output, however
the work is scheduled.

Catalogue geometry: the popularity ranking exposes the first
`L - 1 - shortcut_slots` items ("staples") in background slots every day;
the rest of the catalogue ("promo tier") is only ever reachable through the
star slot, like platform-exclusive inventory pushed by promotions. Users'
own strongest relationships occupy the shortcut slots, which is what lets a
promoted discovery turn into a durable habit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ConfigError,
    DataError,
    DayContext,
    DayOutcome,
    ItemId,
    RECENCY_CAP,
    Trajectory,
    UserState,
    zero_state,
)

# Minimum seconds a listen lasts; consumption > 0 coincides with the usual
# "listened for at least 30 seconds" threshold by construction.
LISTEN_FLOOR_S = 30.0

# Weekly activity pattern added to the listen logit, scaled by dow_amplitude.
DOW_PATTERN = (0.0, 0.1, 0.1, 0.0, 0.2, 0.5, 0.4)

# Relationship strength below which an item no longer claims a shortcut slot.
SHORTCUT_MIN = 0.02


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    d: int = 8                       # taste dimension, leading coord fixed at 1
    n_items: int = 50
    L: int = 20                      # slots per day, slot 0 is the star slot
    gamma: float = 0.967             # per-day survival probability
    epsilon: float = 0.1             # logging-policy exploration rate
    k: int = 3                       # relationship state components
    alpha: Tuple[float, ...] = (0.5, 0.9, 0.98)
    seed: int = 0
    max_days: int = 200
    appeal_correlation: float = -0.8  # corr(click appeal, stick appeal)
    base_logit: float = -12.5        # organic listen logit for an unseen item
    click_scale: float = 1.1         # item click appeal -> embedding intercept
    taste_weight: float = 0.8        # scale of the personalized part of u . nu
    idio_scale: float = 0.5          # per (user, item) logit noise
    star_boost: float = 5.6          # logit boost for the star-slot item
    habit_base: float = 13.0         # habit gain level (softplus input)
    habit_scale: float = 4.7         # item stick appeal weight in habit gain
    habit_taste: float = 5.5         # user-taste weight in habit gain
    staple_bonus: float = 5.0        # extra base logit for background staples
    noise_scale: float = 0.7         # sd of the shared daily logit shock
    dow_amplitude: float = 0.5       # scale of the weekly pattern
    engagement_mean_s: float = 600.0  # exponential mean added to the 30s floor
    shortcut_slots: int = 6
    pool_rule: str = "unseen"        # "unseen": fresh promo-tier items; "all": whole catalogue
    indirect_spillover: float = 0.0  # >0 breaks the no-indirect-impact assumption
    rec_affinity_drift: float = 0.0  # >0 breaks the state-sufficiency assumption

    def __post_init__(self) -> None:
        if self.d < 2:
            raise ConfigError("d must be >= 2 (bias coordinate plus taste)")
        if self.n_items < 2:
            raise ConfigError("n_items must be >= 2")
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        if not (0.0 < self.gamma < 1.0):
            raise ConfigError("gamma must lie in (0, 1)")
        if not (self.epsilon > 0.0):
            raise ConfigError("epsilon must be > 0 (every action needs support)")
        if self.epsilon > 1.0:
            raise ConfigError("epsilon must be <= 1")
        if self.k != len(self.alpha):
            raise ConfigError("k must equal len(alpha)")
        for a in self.alpha:
            if not (0.0 < a <= 1.0):
                raise ConfigError("alpha components must lie in (0, 1]")
        if self.max_days < 1:
            raise ConfigError("max_days must be >= 1")
        if not (-1.0 <= self.appeal_correlation <= 1.0):
            raise ConfigError("appeal_correlation must lie in [-1, 1]")
        if self.engagement_mean_s <= 0.0:
            raise ConfigError("engagement_mean_s must be > 0")
        if self.shortcut_slots < 0:
            raise ConfigError("shortcut_slots must be >= 0")
        if self.noise_scale < 0 or self.idio_scale < 0:
            raise ConfigError("noise scales must be >= 0")
        if self.pool_rule not in ("unseen", "all"):
            raise ConfigError(f"unknown pool_rule {self.pool_rule!r}")
        if self.indirect_spillover < 0 or self.rec_affinity_drift < 0:
            raise ConfigError("assumption-violation knobs must be >= 0")

    @property
    def n_background(self) -> int:
        """Number of staple items shown in background slots every day."""
        return max(0, min(self.L - 1 - self.shortcut_slots, self.n_items))


_TUPLE_KEYS = {"alpha"}
_INT_KEYS = {"d", "n_items", "L", "k", "seed", "max_days", "shortcut_slots"}
_STR_KEYS = {"pool_rule"}


def parse_config(text: str) -> SimConfig:
    """Parse the flat key=value config format. Unknown keys are an error."""
    known = {f.name for f in fields(SimConfig)}
    kwargs: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        try:
            if key in _TUPLE_KEYS:
                kwargs[key] = tuple(float(v) for v in value.split(",") if v.strip())
            elif key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in _STR_KEYS:
                kwargs[key] = value
            else:
                kwargs[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    if "alpha" in kwargs and "k" not in kwargs:
        kwargs["k"] = len(kwargs["alpha"])  # type: ignore[arg-type]
    return SimConfig(**kwargs)  # type: ignore[arg-type]


def read_config(path: str) -> SimConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc


def format_config(config: SimConfig) -> str:
    lines = []
    for f in fields(SimConfig):
        v = getattr(config, f.name)
        if f.name in _TUPLE_KEYS:
            v = ",".join(repr(x) for x in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# catalogue and users
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Catalogue:
    """Item ground truth plus the observable embedding side.

    click_appeal / stick_appeal / stick_dir are latent; nu (the platform's
    item embedding) and the popularity order are observable to learners.
    """

    nu: np.ndarray            # (n_items, d) observable embeddings
    click_appeal: np.ndarray  # (n_items,) latent short-term appeal
    stick_appeal: np.ndarray  # (n_items,) latent habit-forming appeal
    stick_dir: np.ndarray     # (n_items, d-1) latent taste direction of stickiness
    popularity: np.ndarray    # (n_items,) item ids by organic prominence rank

    @property
    def n_items(self) -> int:
        return self.nu.shape[0]

    def staples(self, config: SimConfig) -> np.ndarray:
        return self.popularity[: config.n_background]

    def promo_mask(self, config: SimConfig) -> np.ndarray:
        mask = np.ones(self.n_items, dtype=bool)
        mask[self.staples(config)] = False
        return mask


@dataclass(frozen=True, eq=False)
class LatentUserType:
    """Hidden per-user ground truth. Learners never see this."""

    base_affinity: np.ndarray  # (n_items,) organic listen logit per item
    habit_gain: np.ndarray     # (n_items,) habit logit gain per item
    noise_scale: float
    type_id: int = 0


def spawn_catalogue(config: SimConfig, rng: np.random.Generator) -> Catalogue:
    n, d = config.n_items, config.d
    rho = config.appeal_correlation
    z1 = rng.normal(size=n)
    z2 = rng.normal(size=n)
    click = z1
    stick = rho * z1 + math.sqrt(max(0.0, 1.0 - rho * rho)) * z2
    nu = np.empty((n, d))
    nu[:, 0] = config.click_scale * click
    nu[:, 1:] = rng.normal(size=(n, d - 1)) * (config.taste_weight / math.sqrt(d - 1))
    stick_dir = rng.normal(size=(n, d - 1)) / math.sqrt(d - 1)
    popularity = rng.permutation(n)
    return Catalogue(
        nu=nu,
        click_appeal=click,
        stick_appeal=stick,
        stick_dir=stick_dir,
        popularity=popularity,
    )


def _user_vectors(
    config: SimConfig, catalogue: Catalogue, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Draw (taste, base_affinity, habit_gain, t0) for one user."""
    d = config.d
    taste = np.empty(d)
    taste[0] = 1.0
    taste[1:] = rng.normal(size=d - 1)
    idio = rng.normal(size=config.n_items)
    t0 = int(rng.integers(0, 7))
    sys_logit = config.base_logit + catalogue.nu @ taste
    base_affinity = sys_logit + config.idio_scale * idio
    base_affinity = base_affinity + config.staple_bonus * ~catalogue.promo_mask(config)
    m = catalogue.stick_dir @ taste[1:]
    habit_gain = _softplus(
        config.habit_base
        + config.habit_scale * catalogue.stick_appeal
        + config.habit_taste * m
    )
    return taste, base_affinity, habit_gain, t0


def spawn_user(
    config: SimConfig, catalogue: Catalogue, rng: np.random.Generator, type_id: int = 0
) -> Tuple[UserState, LatentUserType]:
    """A fresh user: observable state plus the hidden type behind it."""
    taste, base_affinity, habit_gain, t0 = _user_vectors(config, catalogue, rng)
    state = UserState(
        taste=tuple(taste),
        context=DayContext(day_of_week=t0 % 7, recency=RECENCY_CAP),
        relationships={},
    )
    latent = LatentUserType(
        base_affinity=base_affinity,
        habit_gain=habit_gain,
        noise_scale=config.noise_scale,
        type_id=type_id,
    )
    return state, latent


def listen_probability(
    user: UserState,
    latent: LatentUserType,
    item: ItemId,
    recommended_at_star: bool,
    star_boost: float,
    extra_logit: float = 0.0,
    k: int = 3,
) -> float:
    """P(item consumed today | exposed), the simulator's single listen model.

    logit = base_affinity + habit_gain * habit_signal(Z) + boost if at star,
    plus any day-level offset (weekday pattern, shared shock) the caller adds.
    """
    z = user.relationship(item, k)
    logit = (
        float(latent.base_affinity[item])
        + float(latent.habit_gain[item]) * z[0]
        + (star_boost if recommended_at_star else 0.0)
        + extra_logit
    )
    return _sigmoid(logit)


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class DayView:
    """What a star-slot policy may look at when picking today's item.

    `latent` is simulator ground truth: only simulator-side oracle policies
    (the incumbent stand-in, experiment meta-actions) may read it. Learner
    policies must restrict themselves to the observable fields.
    """

    t_index: int
    dow: int
    recency: float             # days since last active day, capped
    taste: np.ndarray
    z: np.ndarray              # (k, n_items) relationship states
    seen: np.ndarray           # (n_items,) consumed at least once
    promoted: np.ndarray       # (n_items,) ever placed at the star slot
    sys_click: np.ndarray      # (n_items,) incumbent systematic click score
    promo_mask: np.ndarray     # (n_items,) promo-tier membership
    rng: np.random.Generator
    latent: LatentUserType


class StarPolicy:
    """Picks the star-slot item each day; None means no promotion shown."""

    def pick_star(self, view: DayView) -> Optional[ItemId]:
        raise NotImplementedError

    # Number of rng draws consumed per call; fixed so that paired runs with a
    # shared seed stay aligned across arms that make different choices.
    rng_draws = 0


def eligible_pool(view: DayView, pool_rule: str) -> np.ndarray:
    """Item ids the star slot may promote today, in ascending id order.

    "unseen": fresh promo-tier items not yet promoted to this user, with
    fallbacks (fresh promo-tier, then any fresh item, then everything) so the
    pool is never empty. "all": the whole catalogue.
    """
    n = view.seen.shape[0]
    if pool_rule == "all":
        return np.arange(n)
    fresh = ~view.seen
    for mask in (
        fresh & view.promo_mask & ~view.promoted,
        fresh & view.promo_mask,
        fresh,
    ):
        pool = np.flatnonzero(mask)
        if pool.size:
            return pool
    return np.arange(n)


class LoggingPolicy(StarPolicy):
    """The incumbent: argmax systematic click score, epsilon-uniform otherwise.

    Always consumes exactly two rng draws per day, so trajectories simulated
    under different arms share their randomness once the policies agree.
    """

    rng_draws = 2

    def __init__(self, epsilon: float, pool_rule: str = "unseen"):
        if not (0.0 < epsilon <= 1.0):
            raise ConfigError("epsilon must lie in (0, 1]")
        self.epsilon = epsilon
        self.pool_rule = pool_rule

    def pick_star(self, view: DayView) -> Optional[ItemId]:
        pool = eligible_pool(view, self.pool_rule)
        u = view.rng.random()
        j = int(view.rng.integers(0, pool.size))
        if u < self.epsilon:
            return int(pool[j])
        return int(pool[np.argmax(view.sys_click[pool])])


class FixedItemPolicy(StarPolicy):
    """Always promotes one item (used by holdback and forced-discovery runs)."""

    def __init__(self, item: Optional[ItemId]):
        self.item = item

    def pick_star(self, view: DayView) -> Optional[ItemId]:
        return self.item


class FirstDayPolicy(StarPolicy):
    """chooser on day 0, another policy afterwards (banner-style exposure).

    On day 0 the handed-back policy's pick is generated and discarded before
    the chooser runs, so an arm using this policy consumes rng draws exactly
    like an arm running `then` throughout; users whose day-0 picks coincide
    then see byte-identical trajectories.
    """

    def __init__(self, chooser: Callable[[DayView], Optional[ItemId]], then: StarPolicy):
        self.chooser = chooser
        self.then = then

    def pick_star(self, view: DayView) -> Optional[ItemId]:
        if view.t_index == 0:
            self.then.pick_star(view)
            return self.chooser(view)
        return self.then.pick_star(view)

    @property
    def rng_draws(self) -> int:  # type: ignore[override]
        return self.then.rng_draws


class DailyPolicy(StarPolicy):
    """chooser every day (shelf-style exposure)."""

    def __init__(self, chooser: Callable[[DayView], Optional[ItemId]]):
        self.chooser = chooser

    def pick_star(self, view: DayView) -> Optional[ItemId]:
        return self.chooser(view)


# ---------------------------------------------------------------------------
# the per-user kernel
# ---------------------------------------------------------------------------

class _UserSim:
    """Array-backed state for one user's lifetime. Not thread-shared."""

    def __init__(
        self,
        config: SimConfig,
        catalogue: Catalogue,
        taste: np.ndarray,
        latent: LatentUserType,
        t0: int,
        rng: np.random.Generator,
        initial_relationships: Optional[Dict[ItemId, Sequence[float]]] = None,
    ):
        self.config = config
        self.catalogue = catalogue
        self.taste = taste
        self.latent = latent
        self.t0 = t0
        self.rng = rng
        n = config.n_items
        self.alpha_col = np.asarray(config.alpha)[:, None]
        self.omega = latent.base_affinity.copy()
        self.habit = latent.habit_gain
        self.z = np.zeros((config.k, n))
        self.seen = np.zeros(n, dtype=bool)
        if initial_relationships:
            for item, zvec in initial_relationships.items():
                self.z[:, item] = np.asarray(zvec, dtype=float)
                self.seen[item] = True
        self.promoted = np.zeros(n, dtype=bool)
        self.sys_click = config.base_logit + catalogue.nu @ taste
        self.staples = catalogue.staples(config)
        self.promo_mask = catalogue.promo_mask(config)
        self.t_index = 0
        self.last_active: Optional[int] = None
        # per-day loop invariants, hoisted out of slots()/day()
        self._staple_list = [int(i) for i in self.staples]
        self._pad_list = self._staple_list or [int(catalogue.popularity[0])]
        self._one_minus_alpha_col = 1.0 - self.alpha_col
        self._promo_idx = np.flatnonzero(self.promo_mask)

    def recency(self) -> float:
        if self.last_active is None:
            return RECENCY_CAP
        return min(float(self.t_index - self.last_active), RECENCY_CAP)

    def view(self) -> DayView:
        return DayView(
            t_index=self.t_index,
            dow=(self.t0 + self.t_index) % 7,
            recency=self.recency(),
            taste=self.taste,
            z=self.z,
            seen=self.seen,
            promoted=self.promoted,
            sys_click=self.sys_click,
            promo_mask=self.promo_mask,
            rng=self.rng,
            latent=self.latent,
        )

    def slots(self, star: Optional[ItemId]) -> List[ItemId]:
        """Today's layout: star, the user's shortcuts, the staples, padding.

        Shortcuts resurface items the user has a live relationship with;
        staples already own background slots, so only promo-tier items
        compete for the shortcut row.
        """
        config = self.config
        L = config.L
        out: List[ItemId] = []
        n_short = min(config.shortcut_slots, L - 1)
        z0 = self.z[0][self._promo_idx]
        if n_short > 0 and z0.size and z0.max() >= SHORTCUT_MIN:
            cand = self._promo_idx[z0 >= SHORTCUT_MIN]
            order = cand[np.argsort(-self.z[0][cand], kind="stable")]
            out.extend(order[:n_short].tolist())
        out.extend(self._staple_list)
        if star is None:
            first = out[0] if out else self._pad_list[0]
            out.insert(0, first)
        else:
            out.insert(0, int(star))
        if len(out) < L:
            pad = self._pad_list
            i = 0
            while len(out) < L:
                out.append(pad[i % len(pad)])
                i += 1
        return out[:L]

    def day(self, star: Optional[ItemId]) -> DayOutcome:
        """Simulate one day given the star pick; advances relationship states."""
        config = self.config
        actions = self.slots(star)
        shock = self.rng.normal(0.0, self.latent.noise_scale)
        dow = (self.t0 + self.t_index) % 7
        offset = shock + config.dow_amplitude * DOW_PATTERN[dow]

        # distinct exposed items in slot order, with the slot each maps back to
        first_slot: Dict[ItemId, int] = {}
        for s, a in enumerate(actions):
            if a not in first_slot:
                first_slot[a] = s
        exposed = np.fromiter(first_slot.keys(), dtype=np.int64, count=len(first_slot))

        logits = self.omega[exposed] + self.habit[exposed] * self.z[0][exposed] + offset
        if star is not None:
            # slots() puts the star at slot 0, so it is the first distinct item
            logits[0] += config.star_boost
            if config.indirect_spillover > 0.0:
                logits[1:] += config.indirect_spillover
        probs = 1.0 / (1.0 + np.exp(-logits))
        # one uniform and one engagement draw per catalogue item per day,
        # indexed by item id: paired arms then share every draw, so outcome
        # differences isolate the policy effect instead of stream drift
        u = self.rng.random(config.n_items)
        secs_all = LISTEN_FLOOR_S + self.rng.exponential(
            config.engagement_mean_s, size=config.n_items
        )
        listened = u[exposed] < probs
        listeners = exposed[listened]

        engagements = [0.0] * len(actions)
        for item in listeners.tolist():
            engagements[first_slot[item]] = secs_all[item]

        # state advance: every item decays, consumed items get the full pull
        self.z *= self.alpha_col
        if listeners.size:
            self.z[:, listeners] += self._one_minus_alpha_col
            self.seen[listeners] = True
            self.last_active = self.t_index
            if (
                config.rec_affinity_drift > 0.0
                and star is not None
                and bool(listened[0])
            ):
                self.omega[star] += config.rec_affinity_drift
        if star is not None:
            self.promoted[star] = True
        self.t_index += 1
        return DayOutcome(tuple(actions), tuple(engagements))

    def survives(self) -> bool:
        return self.rng.random() < self.config.gamma


def step_day(
    user: UserState,
    latent: LatentUserType,
    actions: Sequence[ItemId],
    rng: np.random.Generator,
    config: SimConfig,
) -> DayOutcome:
    """One exogenous day: listens, engagements, no policy involved.

    The star item is actions[0]; every distinct item in `actions` gets one
    Bernoulli listen draw from `listen_probability` (with the day's shared
    offset), and engagement seconds follow the configured floor-plus-
    exponential law. Pure function of (inputs, rng state).
    """
    if len(actions) != config.L:
        raise ValueError(f"expected {config.L} slots, got {len(actions)}")
    star = int(actions[0])
    shock = rng.normal(0.0, latent.noise_scale)
    dow = user.context.day_of_week
    offset = shock + config.dow_amplitude * DOW_PATTERN[dow]

    first_slot: Dict[ItemId, int] = {}
    for s, a in enumerate(actions):
        if a not in first_slot:
            first_slot[a] = s
    exposed = list(first_slot.keys())
    probs = [
        listen_probability(
            user,
            latent,
            item,
            recommended_at_star=(item == star),
            star_boost=config.star_boost,
            extra_logit=offset
            + (
                config.indirect_spillover
                if (config.indirect_spillover > 0.0 and item != star)
                else 0.0
            ),
            k=config.k,
        )
        for item in exposed
    ]
    u = rng.random(config.n_items)
    secs_all = LISTEN_FLOOR_S + rng.exponential(
        config.engagement_mean_s, size=config.n_items
    )
    listeners = [item for item, p in zip(exposed, probs) if u[item] < p]
    engagements = [0.0] * len(actions)
    for item in listeners:
        engagements[first_slot[item]] = float(secs_all[item])
    return DayOutcome(tuple(actions), tuple(engagements))


# ---------------------------------------------------------------------------
# lifetimes and cohorts
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class UserRun:
    """One simulated user: observable pieces plus the hidden type."""

    user_id: int
    taste: np.ndarray
    t0: int
    trajectory: Trajectory
    latent: LatentUserType
    final_z: np.ndarray          # (k, n_items) relationship states after t1
    final_recency: float


def user_rng(seed: int, user_id: int) -> np.random.Generator:
    return np.random.default_rng((seed, 1, user_id))


def catalogue_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng((seed, 0))


def run_user(
    policy: StarPolicy,
    config: SimConfig,
    catalogue: Catalogue,
    rng: np.random.Generator,
    user_id: int = 0,
    type_id: int = 0,
    initial_relationships: Optional[Dict[ItemId, Sequence[float]]] = None,
    max_days: Optional[int] = None,
) -> UserRun:
    taste, base_affinity, habit_gain, t0 = _user_vectors(config, catalogue, rng)
    latent = LatentUserType(base_affinity, habit_gain, config.noise_scale, type_id)
    sim = _UserSim(config, catalogue, taste, latent, t0, rng, initial_relationships)
    horizon = config.max_days if max_days is None else max_days
    days: List[DayOutcome] = []
    for _ in range(horizon):
        star = policy.pick_star(sim.view())
        days.append(sim.day(star))
        if not sim.survives():
            break
    traj = Trajectory(
        start=t0, end=t0 + len(days) - 1, days=tuple(days), latent_type_id=type_id
    )
    return UserRun(
        user_id=user_id,
        taste=taste,
        t0=t0,
        trajectory=traj,
        latent=latent,
        final_z=sim.z,
        final_recency=sim.recency(),
    )


def simulate_user(
    policy: StarPolicy,
    config: SimConfig,
    catalogue: Catalogue,
    rng: np.random.Generator,
) -> Trajectory:
    """Spawn one user and simulate their lifetime under `policy`."""
    return run_user(policy, config, catalogue, rng).trajectory


def iter_cohort(
    policy: StarPolicy,
    config: SimConfig,
    n_users: int,
    catalogue: Optional[Catalogue] = None,
    seed: Optional[int] = None,
    user_ids: Optional[Sequence[int]] = None,
) -> Iterator[UserRun]:
    """Simulate users one at a time on independent seeded substreams.

    Each user's randomness is a pure function of (seed, user_id), so any
    scheduling of the work produces the same runs.
    """
    if seed is None:
        seed = config.seed
    if catalogue is None:
        catalogue = spawn_catalogue(config, catalogue_rng(seed))
    ids = range(n_users) if user_ids is None else user_ids
    for uid in ids:
        yield run_user(policy, config, catalogue, user_rng(seed, uid), user_id=uid)


@dataclass(eq=False)
class Cohort:
    config: SimConfig
    catalogue: Catalogue
    users: List[UserRun]

    def __iter__(self) -> Iterator[UserRun]:
        return iter(self.users)

    def __len__(self) -> int:
        return len(self.users)


def simulate_cohort(
    policy: StarPolicy,
    config: SimConfig,
    n_users: int,
    catalogue: Optional[Catalogue] = None,
    seed: Optional[int] = None,
    n_workers: int = 1,
) -> Cohort:
    """Simulate a cohort; output is byte-identical for a fixed seed no matter
    how many workers share the job."""
    if seed is None:
        seed = config.seed
    if catalogue is None:
        catalogue = spawn_catalogue(config, catalogue_rng(seed))
    if n_workers <= 1:
        users = list(iter_cohort(policy, config, n_users, catalogue, seed))
    else:
        def job(uid: int) -> UserRun:
            return run_user(policy, config, catalogue, user_rng(seed, uid), user_id=uid)

        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            users = list(pool.map(job, range(n_users)))
        users.sort(key=lambda r: r.user_id)
    return Cohort(config=config, catalogue=catalogue, users=users)


def final_user_state(run: UserRun, config: SimConfig) -> UserState:
    """Observable snapshot of a user the day after their last logged day."""
    t_next = run.t0 + len(run.trajectory)
    rel = {
        int(i): tuple(run.final_z[:, i])
        for i in np.flatnonzero(np.any(run.final_z != 0.0, axis=0))
    }
    return UserState(
        taste=tuple(run.taste),
        context=DayContext(day_of_week=t_next % 7, recency=run.final_recency),
        relationships=rel,
    )
