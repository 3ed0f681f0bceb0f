"""Log-based policy improvement over a coarse state aggregation.

The recipe: map each logged state through an aggregation phi, average the
plain rewards-to-go per (cluster, star action), and act greedily on those
averages. Because episodes end by survival chance, undiscounted rewards-to-go
are unbiased for the discounted values, and the aggregation is what makes the
averages estimable from finite logs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    BINARY,
    DataError,
    LoggedStep,
    RewardSpec,
    UserState,
    lifetime_reward,
    replay_steps,
)
from .io import LoggedUser
from .simulator import Catalogue, SimConfig, StarPolicy, catalogue_rng, run_user, spawn_catalogue, user_rng

Action = Optional[int]  # a star item id, or None for an empty star slot


def _action_order(a: Action) -> Tuple[int, int]:
    # no-star sorts before every item id; ids ascend
    return (0, 0) if a is None else (1, int(a))


@dataclass(eq=False)
class AggregatedQEstimate:
    """Per-cluster action values estimated straight from the log.

    Cells never visited are absent from q_hat/counts. Clusters with no data
    at all land in `undecided` instead of `greedy`.
    """

    q_hat: Dict[Tuple[Hashable, Action], float]
    counts: Dict[Tuple[Hashable, Action], int]
    greedy: Dict[Hashable, Action]
    undecided: Tuple[Hashable, ...] = ()

    def actions_seen(self) -> List[Action]:
        return sorted({a for (_, a) in self.counts}, key=_action_order)


def rewards_to_go(episode: Sequence[LoggedStep]) -> np.ndarray:
    r = np.array([step.reward for step in episode], dtype=float)
    return np.cumsum(r[::-1])[::-1]


def direct_pi(
    episodes: Iterable[Sequence[LoggedStep]],
    phi: Callable[[UserState], Hashable],
    clusters: Optional[Sequence[Hashable]] = None,
    min_visits: int = 1,
) -> AggregatedQEstimate:
    """Average undiscounted rewards-to-go per (phi(state), star action).

    The greedy action per cluster is the argmax over actions with at least
    min_visits samples, ties broken toward no-star then the lowest item id.
    Clusters from `clusters` (default: the ones observed) that have no
    qualifying action are marked undecided rather than guessed at.
    """
    sums: Dict[Tuple[Hashable, Action], float] = {}
    counts: Dict[Tuple[Hashable, Action], int] = {}
    for episode in episodes:
        episode = list(episode)
        if not episode:
            continue
        rtg = rewards_to_go(episode)
        for step, g in zip(episode, rtg):
            key = (phi(step.state), step.star_item)
            sums[key] = sums.get(key, 0.0) + float(g)
            counts[key] = counts.get(key, 0) + 1

    q_hat = {key: sums[key] / counts[key] for key in counts}
    universe = (
        sorted({c for (c, _) in counts}, key=repr) if clusters is None else list(clusters)
    )
    greedy: Dict[Hashable, Action] = {}
    undecided: List[Hashable] = []
    for c in universe:
        qualified = sorted(
            (a for (cc, a), n in counts.items() if cc == c and n >= min_visits),
            key=_action_order,
        )
        if not qualified:
            undecided.append(c)
            continue
        best = qualified[0]
        for a in qualified[1:]:
            if q_hat[(c, a)] > q_hat[(c, best)]:
                best = a
        greedy[c] = best
    return AggregatedQEstimate(
        q_hat=q_hat, counts=counts, greedy=greedy, undecided=tuple(undecided)
    )


def direct_pi_dataset(
    users: Iterable[LoggedUser],
    phi: Callable[[UserState], Hashable],
    alpha: Sequence[float],
    reward_spec: RewardSpec = RewardSpec(BINARY),
    clusters: Optional[Sequence[Hashable]] = None,
    min_visits: int = 1,
) -> AggregatedQEstimate:
    """direct_pi over a logged dataset, replaying states from trajectories."""

    def episodes() -> Iterable[List[LoggedStep]]:
        for lu in users:
            yield list(replay_steps(lu.taste, lu.trajectory, alpha, reward_spec))

    return direct_pi(episodes(), phi, clusters=clusters, min_visits=min_visits)


def greedy_from_aggregated(q_bar: np.ndarray) -> np.ndarray:
    """(C,) greedy action indices from a (C, A) table.

    NaN marks missing cells; rows are argmaxed over present cells only, and a
    fully missing row is an undecided cluster, which is an error here because
    the caller asked for a complete policy.
    """
    q_bar = np.asarray(q_bar, dtype=float)
    if q_bar.ndim != 2:
        raise ValueError("q_bar must be (clusters, actions)")
    undecided = np.flatnonzero(np.isnan(q_bar).all(axis=1))
    if undecided.size:
        raise DataError(f"undecided clusters (no populated action): {undecided.tolist()}")
    filled = np.where(np.isnan(q_bar), -np.inf, q_bar)
    return np.argmax(filled, axis=1)


def cluster_policy_matrix(
    phi_by_state: np.ndarray, greedy_action: np.ndarray, n_actions: int
) -> np.ndarray:
    """Lift per-cluster decisions to a deterministic (S, A) policy matrix."""
    pi = np.zeros((phi_by_state.shape[0], n_actions))
    pi[np.arange(phi_by_state.shape[0]), greedy_action[phi_by_state]] = 1.0
    return pi


def estimate_return(episodes: Iterable[Sequence[LoggedStep]]) -> Tuple[float, float]:
    """Mean and standard error of the per-episode total reward."""
    totals = [sum(step.reward for step in episode) for episode in episodes]
    if len(totals) < 2:
        raise DataError("need at least two episodes to estimate a return")
    arr = np.asarray(totals, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))


def estimate_J(
    policy: StarPolicy,
    config: SimConfig,
    n_users: int,
    seed: int,
    catalogue: Optional[Catalogue] = None,
    reward_spec: RewardSpec = RewardSpec(BINARY),
    uid_start: int = 0,
) -> Tuple[float, float]:
    """Mean lifetime reward over fresh simulated users, with its SE."""
    if n_users < 2:
        raise DataError("need at least two users")
    if catalogue is None:
        catalogue = spawn_catalogue(config, catalogue_rng(config.seed))
    totals = np.empty(n_users)
    for i, uid in enumerate(range(uid_start, uid_start + n_users)):
        run = run_user(policy, config, catalogue, user_rng(seed, uid), user_id=uid)
        totals[i] = lifetime_reward(run.trajectory, reward_spec)
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(n_users))


def make_quantile_phi(
    values: Sequence[float], n_bins: int, feature: Callable[[UserState], float]
) -> Callable[[UserState], int]:
    """Aggregate states by quantile bin of a scalar feature of the user."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    edges = np.quantile(np.asarray(values, dtype=float), np.linspace(0, 1, n_bins + 1)[1:-1])

    def phi(state: UserState) -> int:
        return int(np.searchsorted(edges, feature(state), side="right"))

    return phi
