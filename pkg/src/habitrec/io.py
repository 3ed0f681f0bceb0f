"""On-disk formats for logged datasets, model artifacts, and user states.

A logged dataset directory holds:
    trajectories.jsonl  one record per user, sorted by user_id
    users.jsonl         observable per-user facts: taste, start day, end state
    catalogue.json      observable item side: embeddings, popularity, tiers

Only observable quantities are ever written; hidden user types and item
appeals stay inside the process that simulated them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    DataError,
    DayContext,
    ItemId,
    Trajectory,
    UserState,
    read_trajectories,
    write_trajectories,
)
from .simulator import Catalogue, Cohort, SimConfig, UserRun, final_user_state

TRAJECTORIES = "trajectories.jsonl"
USERS = "users.jsonl"
CATALOGUE = "catalogue.json"


@dataclass(eq=False)
class LoggedUser:
    """One user's observable log: enough to replay their states."""

    user_id: int
    taste: Tuple[float, ...]
    trajectory: Trajectory


@dataclass(eq=False)
class LoggedDataset:
    """Observable view of a logged cohort, as a learner would load it."""

    users: List[LoggedUser]
    nu: np.ndarray
    popularity: np.ndarray
    n_background: int
    alpha: Tuple[float, ...]

    def __iter__(self):
        return iter(self.users)

    def __len__(self) -> int:
        return len(self.users)

    def promo_items(self) -> List[ItemId]:
        return sorted(int(i) for i in self.popularity[self.n_background:])


def write_dataset(out_dir: str, cohort: Cohort) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_trajectories(
        os.path.join(out_dir, TRAJECTORIES),
        ((run.user_id, run.trajectory) for run in cohort.users),
    )
    with open(os.path.join(out_dir, USERS), "w") as fh:
        for run in sorted(cohort.users, key=lambda r: r.user_id):
            state = final_user_state(run, cohort.config)
            fh.write(json.dumps(user_state_record(run.user_id, state, run.t0)))
            fh.write("\n")
    with open(os.path.join(out_dir, CATALOGUE), "w") as fh:
        json.dump(catalogue_record(cohort.catalogue, cohort.config), fh)
        fh.write("\n")


def catalogue_record(catalogue: Catalogue, config: SimConfig) -> dict:
    return {
        "n_items": int(catalogue.n_items),
        "d": int(catalogue.nu.shape[1]),
        "alpha": list(config.alpha),
        "n_background": int(config.n_background),
        "nu": [[float(v) for v in row] for row in catalogue.nu],
        "popularity": [int(i) for i in catalogue.popularity],
    }


def user_state_record(user_id: int, state: UserState, t0: int) -> dict:
    return {
        "user_id": user_id,
        "t0": int(t0),
        "taste": [float(v) for v in state.taste],
        "dow": int(state.context.day_of_week),
        "recency": float(state.context.recency),
        "relationships": {
            str(item): [float(v) for v in z]
            for item, z in sorted(state.relationships.items())
        },
    }


def user_state_from_record(rec: dict) -> Tuple[int, int, UserState]:
    try:
        user_id = int(rec["user_id"])
        t0 = int(rec["t0"])
        state = UserState(
            taste=tuple(float(v) for v in rec["taste"]),
            context=DayContext(int(rec["dow"]), float(rec["recency"])),
            relationships={
                int(item): tuple(float(v) for v in z)
                for item, z in rec.get("relationships", {}).items()
            },
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed user-state record: {exc}") from exc
    return user_id, t0, state


def read_user_states(path: str) -> List[Tuple[int, int, UserState]]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSONL line: {exc}") from exc
            out.append(user_state_from_record(rec))
    return out


def read_dataset(data_dir: str) -> LoggedDataset:
    traj_path = os.path.join(data_dir, TRAJECTORIES)
    users_path = os.path.join(data_dir, USERS)
    cat_path = os.path.join(data_dir, CATALOGUE)
    for p in (traj_path, users_path, cat_path):
        if not os.path.exists(p):
            raise DataError(f"missing dataset file {p!r}")
    trajectories = dict(read_trajectories(traj_path))
    states = read_user_states(users_path)
    try:
        with open(cat_path) as fh:
            cat = json.load(fh)
        nu = np.asarray(cat["nu"], dtype=float)
        popularity = np.asarray(cat["popularity"], dtype=int)
        n_background = int(cat["n_background"])
        alpha = tuple(float(a) for a in cat["alpha"])
    except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed catalogue file: {exc}") from exc
    users = []
    for user_id, _, state in states:
        if user_id not in trajectories:
            raise DataError(f"user {user_id} has a state row but no trajectory")
        users.append(
            LoggedUser(user_id=user_id, taste=state.taste, trajectory=trajectories[user_id])
        )
    return LoggedDataset(
        users=users,
        nu=nu,
        popularity=popularity,
        n_background=n_background,
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# model artifacts
# ---------------------------------------------------------------------------

def write_json(path: str, payload: object) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path: str) -> object:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {path!r}: {exc}") from exc


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    """Plain deterministic CSV: fixed header, %.10g floats, \n line ends."""
    def fmt(v: object) -> str:
        if isinstance(v, float):
            return format(v, ".10g")
        return str(v)

    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
