"""Core domain types: relationship states, trajectories, rewards.

Everything here is deterministic and side-effect free. The simulator, the
models, and the experiment harness all speak in these types, so the contracts
are kept deliberately small: immutable values, pure update functions, and a
stable JSONL wire format for logged trajectories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

ItemId = int

# Components of the default relationship state: a fast habit signal plus two
# slower activity signals usable as an aggregated two-axis view.
DEFAULT_ALPHA: Tuple[float, ...] = (0.5, 0.9, 0.98)


class ConfigError(ValueError):
    """Invalid configuration (bad key, bad value, inconsistent settings)."""


class DataError(ValueError):
    """Invalid or missing input data (malformed records, empty datasets)."""


# ---------------------------------------------------------------------------
# relationship state
# ---------------------------------------------------------------------------

def _check_alpha(alpha: Sequence[float]) -> None:
    if len(alpha) == 0:
        raise ValueError("alpha must have at least one component")
    for a in alpha:
        if not (0.0 < a <= 1.0):
            raise ValueError(f"alpha components must lie in (0, 1], got {a!r}")


def zero_state(k: int) -> Tuple[float, ...]:
    if k < 1:
        raise ValueError("k must be >= 1")
    return (0.0,) * k


def update_relationship_state(
    z: Sequence[float], alpha: Sequence[float], listened: bool
) -> Tuple[float, ...]:
    """One day of componentwise exponential smoothing toward the listen bit.

    z' = alpha * z + (1 - alpha) * 1(listened), per component. Components of a
    valid state stay inside [0, 1] and the all-zero state is a fixed point of
    the no-listen branch.
    """
    if len(z) != len(alpha):
        raise ValueError(f"state has {len(z)} components but alpha has {len(alpha)}")
    _check_alpha(alpha)
    for v in z:
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"state components must lie in [0, 1], got {v!r}")
    b = 1.0 if listened else 0.0
    return tuple(a * v + (1.0 - a) * b for v, a in zip(z, alpha))


def successor_states(
    z: Sequence[float], alpha: Sequence[float]
) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    """(z_plus, z_minus): the listen and no-listen one-day successors."""
    return (
        update_relationship_state(z, alpha, True),
        update_relationship_state(z, alpha, False),
    )


def habit_signal(z: Sequence[float]) -> float:
    """The fast component of the state, used as the habit feature."""
    return z[0]


# ---------------------------------------------------------------------------
# day outcomes and trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DayOutcome:
    """One day of the log: the L slotted items and the seconds engaged at each.

    Slot 0 is the distinguished recommendation slot. The same item may occupy
    several slots; engagement for an item is recorded at the first slot that
    shows it.
    """

    actions: Tuple[ItemId, ...]
    engagements: Tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.actions) != len(self.engagements):
            raise ValueError("actions and engagements must have equal length")
        if len(self.actions) == 0:
            raise ValueError("a day must have at least one slot")
        if min(self.engagements) < 0.0:
            raise ValueError("engagements must be non-negative")

    @property
    def star_item(self) -> ItemId:
        return self.actions[0]


def consumption(day: DayOutcome, item: ItemId) -> float:
    """Total seconds engaged with `item` across every slot showing it."""
    return sum(e for a, e in zip(day.actions, day.engagements) if a == item)


def consumed_items(day: DayOutcome) -> Dict[ItemId, float]:
    """Map of item -> positive consumed seconds for the day."""
    out: Dict[ItemId, float] = {}
    for a, e in zip(day.actions, day.engagements):
        if e > 0.0:
            out[a] = out.get(a, 0.0) + e
    return out


@dataclass(frozen=True)
class Trajectory:
    """A user's logged lifetime: days start..end inclusive.

    latent_type_id is simulator bookkeeping (an opaque tag for the hidden user
    type); it is never serialized and learners must not read it.
    """

    start: int
    end: int
    days: Tuple[DayOutcome, ...]
    latent_type_id: Optional[int] = None

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise ValueError("end must be >= start")
        if len(self.days) != self.end - self.start + 1:
            raise ValueError(
                f"expected {self.end - self.start + 1} days, got {len(self.days)}"
            )

    def __len__(self) -> int:
        return len(self.days)


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------

BINARY = "binary-indicator"
MINUTES = "minutes"


@dataclass(frozen=True)
class RewardSpec:
    """Separable per-item reward: r applied to each item's daily consumption.

    kind "binary-indicator": r(c) = 1(c > 0), so a day's reward is the number
    of distinct items consumed. kind "minutes": r(c) = c on whatever unit the
    consumption carries.
    """

    kind: str = BINARY

    def __post_init__(self) -> None:
        if self.kind not in (BINARY, MINUTES):
            raise ConfigError(f"unknown reward kind {self.kind!r}")

    def item_reward(self, consumed: float) -> float:
        if consumed < 0.0:
            raise ValueError("consumption must be non-negative")
        if self.kind == BINARY:
            return 1.0 if consumed > 0.0 else 0.0
        return consumed


def day_reward(day: DayOutcome, spec: RewardSpec) -> float:
    """Sum of r over the distinct items consumed this day."""
    return sum(spec.item_reward(c) for c in consumed_items(day).values())


def lifetime_reward(traj: Trajectory, spec: RewardSpec) -> float:
    """Undiscounted sum of day rewards over the whole trajectory.

    Separability makes this identical to summing each item's per-day rewards
    over items first; tests rely on that identity.
    """
    return sum(day_reward(d, spec) for d in traj.days)


def item_lifetime_reward(traj: Trajectory, item: ItemId, spec: RewardSpec) -> float:
    """Sum over days of r applied to this item's daily consumption."""
    return sum(spec.item_reward(consumption(d, item)) for d in traj.days)


# ---------------------------------------------------------------------------
# user state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DayContext:
    """Observable exogenous-ish context: day of week and a recency feature.

    recency is days since the user's last active day (capped); it is logged
    for models but carries no weight in the simulator's ground truth.
    """

    day_of_week: int
    recency: float

    def __post_init__(self) -> None:
        if not (0 <= self.day_of_week <= 6):
            raise ValueError("day_of_week must be in 0..6")
        if self.recency < 0.0:
            raise ValueError("recency must be non-negative")


@dataclass(frozen=True)
class UserState:
    """What the system can see about a user on a given day.

    taste is the user embedding (leading coordinate fixed at 1.0 so dot-product
    models carry intercepts). relationships maps item -> relationship state and
    omits items whose state is exactly all-zero.
    """

    taste: Tuple[float, ...]
    context: DayContext
    relationships: Dict[ItemId, Tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        cleaned = {
            item: tuple(z)
            for item, z in self.relationships.items()
            if any(v != 0.0 for v in z)
        }
        object.__setattr__(self, "relationships", cleaned)
        object.__setattr__(self, "taste", tuple(self.taste))

    def relationship(self, item: ItemId, k: int) -> Tuple[float, ...]:
        return self.relationships.get(item, zero_state(k))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def trajectory_to_record(user_id: int, traj: Trajectory) -> dict:
    return {
        "user_id": user_id,
        "t0": traj.start,
        "t1": traj.end,
        "days": [
            {"actions": list(d.actions), "engagements": list(d.engagements)}
            for d in traj.days
        ],
    }


def trajectory_from_record(rec: dict) -> Tuple[int, Trajectory]:
    try:
        user_id = int(rec["user_id"])
        t0 = int(rec["t0"])
        t1 = int(rec["t1"])
        days = tuple(
            DayOutcome(tuple(d["actions"]), tuple(float(e) for e in d["engagements"]))
            for d in rec["days"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed trajectory record: {exc}") from exc
    return user_id, Trajectory(t0, t1, days)


def write_trajectories(path: str, records: Iterable[Tuple[int, Trajectory]]) -> None:
    """Write user trajectories as JSONL, sorted by user_id, stable field order."""
    rows = sorted(records, key=lambda r: r[0])
    with open(path, "w") as fh:
        for user_id, traj in rows:
            fh.write(json.dumps(trajectory_to_record(user_id, traj)))
            fh.write("\n")


def read_trajectories(path: str) -> List[Tuple[int, Trajectory]]:
    out: List[Tuple[int, Trajectory]] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSONL line: {exc}") from exc
            out.append(trajectory_from_record(rec))
    return out


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

RECENCY_CAP = 14.0


@dataclass(frozen=True)
class LoggedStep:
    """One replayed (state, star action, day reward) triple from the log.

    star_item is None on days with an empty star slot; day is None for steps
    synthesized by environments that have no slot layout to report.
    """

    state: UserState
    star_item: Optional[ItemId]
    reward: float
    day: Optional[DayOutcome]
    t: int


def replay_steps(
    taste: Sequence[float],
    traj: Trajectory,
    alpha: Sequence[float] = DEFAULT_ALPHA,
    reward_spec: RewardSpec = RewardSpec(BINARY),
) -> Iterator[LoggedStep]:
    """Reconstruct the per-day observable states underlying a trajectory.

    Relationship states are replayed with the shared update rule; the context
    is rebuilt from the absolute start day and the consumption record, so the
    replayed states are exactly what the system observed when logging.
    """
    _check_alpha(alpha)
    k = len(alpha)
    rel: Dict[ItemId, Tuple[float, ...]] = {}
    last_active: Optional[int] = None
    taste_t = tuple(taste)
    for i, day in enumerate(traj.days):
        t = traj.start + i
        recency = RECENCY_CAP if last_active is None else min(float(t - last_active), RECENCY_CAP)
        ctx = DayContext(day_of_week=t % 7, recency=recency)
        state = UserState(taste=taste_t, context=ctx, relationships=dict(rel))
        yield LoggedStep(
            state=state,
            star_item=day.star_item,
            reward=day_reward(day, reward_spec),
            day=day,
            t=t,
        )
        consumed = consumed_items(day)
        if consumed:
            last_active = t
        touched = set(day.actions) | set(consumed)
        for item in touched:
            z = rel.get(item, zero_state(k))
            rel[item] = update_relationship_state(z, alpha, item in consumed)
        for item in list(rel):
            if item not in touched:
                z = rel[item]
                if any(v != 0.0 for v in z):
                    rel[item] = update_relationship_state(z, alpha, False)
