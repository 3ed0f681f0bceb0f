"""A tiny enumerable world where every quantity has an exact answer.

Two items, a handful of relationship levels each, a couple of taste clusters.
The star policy is state-independent, so each item's level chain evolves on
its own and the separable-reward decomposition holds exactly. Everything the
large simulator can only estimate (values, advantages, occupancies, policy
returns) is computable here by linear solves, which makes this module the
ground truth for the scoring formulas and the improvement loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import DayContext, LoggedStep, UserState

NO_STAR = 0  # action 0 leaves the star slot empty; action 1 + i stars item i


# ---------------------------------------------------------------------------
# generic finite MDP machinery
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class EnumerableMDP:
    """Finite MDP with explicit tensors. P[a] is the (S, S) kernel of action a."""

    P: np.ndarray              # (A, S, S)
    R: np.ndarray              # (A, S) expected one-day reward
    mu0: np.ndarray            # (S,) start distribution
    gamma: float
    action_labels: Tuple[str, ...]
    state_labels: Tuple[object, ...]

    def __post_init__(self) -> None:
        A, S, S2 = self.P.shape
        if S != S2 or self.R.shape != (A, S) or self.mu0.shape != (S,):
            raise ValueError("inconsistent tensor shapes")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if not np.allclose(self.P.sum(axis=2), 1.0, atol=1e-10):
            raise ValueError("transition rows must sum to one")
        if not np.isclose(self.mu0.sum(), 1.0, atol=1e-10):
            raise ValueError("mu0 must sum to one")

    @property
    def n_states(self) -> int:
        return self.P.shape[1]

    @property
    def n_actions(self) -> int:
        return self.P.shape[0]


def stationary_policy(mdp: EnumerableMDP, probs: Sequence[float]) -> np.ndarray:
    """State-independent policy matrix: every row is `probs`."""
    p = np.asarray(probs, dtype=float)
    if p.shape != (mdp.n_actions,) or not np.isclose(p.sum(), 1.0) or np.any(p < 0.0):
        raise ValueError("probs must be a distribution over actions")
    return np.tile(p, (mdp.n_states, 1))


def deterministic_policy(mdp: EnumerableMDP, actions: Sequence[int]) -> np.ndarray:
    pi = np.zeros((mdp.n_states, mdp.n_actions))
    pi[np.arange(mdp.n_states), np.asarray(actions, dtype=int)] = 1.0
    return pi


def policy_kernel(mdp: EnumerableMDP, pi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(S, S) kernel and (S,) reward of following the policy matrix pi."""
    P_pi = np.einsum("sa,ast->st", pi, mdp.P)
    R_pi = np.einsum("sa,as->s", pi, mdp.R)
    return P_pi, R_pi


def value_of(mdp: EnumerableMDP, pi: np.ndarray) -> np.ndarray:
    P_pi, R_pi = policy_kernel(mdp, pi)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, R_pi)


def q_of(mdp: EnumerableMDP, V: np.ndarray) -> np.ndarray:
    """(S, A) one-step-deviation values given the continuation value V."""
    return (mdp.R + mdp.gamma * (mdp.P @ V)).T


def exact_return(mdp: EnumerableMDP, pi: np.ndarray) -> float:
    return float(mdp.mu0 @ value_of(mdp, pi))


def occupancy(mdp: EnumerableMDP, pi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Discounted state occupancy under pi, raw and normalized.

    The raw vector solves nu = mu0 + gamma P' nu and carries total mass
    1 / (1 - gamma); scaling by (1 - gamma) turns it into the distribution
    used for aggregation weights.
    """
    P_pi, _ = policy_kernel(mdp, pi)
    raw = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi.T, mdp.mu0)
    assert np.isclose(raw.sum(), 1.0 / (1.0 - mdp.gamma), rtol=1e-9)
    return raw, (1.0 - mdp.gamma) * raw


def mixture_policy(pi_new: np.ndarray, pi_old: np.ndarray, beta: float) -> np.ndarray:
    """Each day independently: follow pi_new with probability beta."""
    if not (0.0 <= beta <= 1.0):
        raise ValueError("beta must lie in [0, 1]")
    return beta * pi_new + (1.0 - beta) * pi_old


def brute_force_q(mdp: EnumerableMDP, pi: np.ndarray, state: int, action: int) -> float:
    """Exact one-step-deviation value: take `action` today, follow pi after."""
    V = value_of(mdp, pi)
    return float(mdp.R[action, state] + mdp.gamma * (mdp.P[action, state] @ V))


def aggregated_q_exact(
    mdp: EnumerableMDP, pi: np.ndarray, phi: Sequence[int]
) -> np.ndarray:
    """(C, A) occupancy-weighted conditional means of the deviation values.

    States sharing a cluster are pooled with their normalized occupancy under
    pi; this is the target that log-based estimates converge to. A cluster
    the chain never visits has no conditional mean and raises.
    """
    phi = np.asarray(phi, dtype=int)
    if phi.shape != (mdp.n_states,):
        raise ValueError("phi must label every state")
    Q = q_of(mdp, value_of(mdp, pi))
    _, nu = occupancy(mdp, pi)
    n_clusters = int(phi.max()) + 1
    out = np.zeros((n_clusters, mdp.n_actions))
    for c in range(n_clusters):
        w = nu[phi == c]
        if w.sum() <= 0.0:
            raise ValueError(f"cluster {c} has zero occupancy")
        out[c] = (w[:, None] * Q[phi == c]).sum(axis=0) / w.sum()
    return out


@dataclass(eq=False)
class GradientCheckReport:
    betas: np.ndarray
    deltas: np.ndarray        # exact J(mix) - J(pi_old) per beta
    predictions: np.ndarray   # beta times the occupancy-weighted advantage
    errors: np.ndarray        # |delta - prediction|
    slope: float              # log-log growth rate of the error


def policy_gradient_check(
    mdp: EnumerableMDP,
    pi_old: np.ndarray,
    pi_new: np.ndarray,
    betas: Sequence[float],
) -> GradientCheckReport:
    """Compare exact mixed-policy gains against the linear advantage term.

    The prediction is beta times the raw-occupancy-weighted advantage of
    pi_new over pi_old (the raw vector already carries the 1/(1-gamma) mass),
    and the leftover should shrink quadratically as beta goes to zero; the
    report's slope is the log-log fit of that leftover.
    """
    betas = np.asarray(betas, dtype=float)
    if np.any(betas <= 0.0) or np.any(betas > 1.0):
        raise ValueError("betas must lie in (0, 1]")
    V_old = value_of(mdp, pi_old)
    Q_old = q_of(mdp, V_old)
    raw, _ = occupancy(mdp, pi_old)
    adv = np.einsum("sa,sa->s", pi_new, Q_old) - np.einsum("sa,sa->s", pi_old, Q_old)
    slope_term = float(raw @ adv)
    j_old = float(mdp.mu0 @ V_old)
    deltas = np.array(
        [exact_return(mdp, mixture_policy(pi_new, pi_old, b)) - j_old for b in betas]
    )
    predictions = betas * slope_term
    errors = np.abs(deltas - predictions)
    fit = np.polyfit(np.log(betas), np.log(np.maximum(errors, 1e-300)), 1)
    return GradientCheckReport(
        betas=betas,
        deltas=deltas,
        predictions=predictions,
        errors=errors,
        slope=float(fit[0]),
    )


# ---------------------------------------------------------------------------
# the two-item level-ladder world
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ToyWorld:
    """The enumerable environment plus its per-item exact solutions."""

    mdp: EnumerableMDP
    n_levels: int
    n_clusters: int
    rho: np.ndarray            # (A,) state-independent star probabilities
    listen_p: np.ndarray       # (C, 2, m, 2) listen prob by cluster/item/level/rec
    item_values: np.ndarray    # (C, 2, m) exact item-level continuation values
    phi: np.ndarray            # (S,) taste-cluster label per state

    def state_index(self, cluster: int, la: int, lb: int) -> int:
        m = self.n_levels
        return (cluster * m + la) * m + lb

    def state_label(self, s: int) -> Tuple[int, int, int]:
        return self.mdp.state_labels[s]  # type: ignore[return-value]

    def pi0(self) -> np.ndarray:
        return stationary_policy(self.mdp, self.rho)

    def product_advantage(self, s: int, item: int) -> float:
        """(p_rec - p_norec) times the value gap between the two successors."""
        c, levels = self.state_label(s)[0], self.state_label(s)[1:]
        lv = levels[item]
        m = self.n_levels
        p1 = self.listen_p[c, item, lv, 1]
        p0 = self.listen_p[c, item, lv, 0]
        v_up = self.item_values[c, item, min(lv + 1, m - 1)]
        v_dn = self.item_values[c, item, max(lv - 1, 0)]
        g = self.mdp.gamma
        return (p1 - p0) * ((1.0 + g * v_up) - g * v_dn)

    def state_to_user(self, s: int) -> UserState:
        """Observable stand-in so log-based code can run on toy episodes."""
        c, la, lb = self.state_label(s)
        m = self.n_levels
        return UserState(
            taste=(1.0, float(c)),
            context=DayContext(day_of_week=0, recency=0.0),
            relationships={0: (la / (m - 1),), 1: (lb / (m - 1),)},
        )


def _level_kernel(p_listen_by_level: np.ndarray) -> np.ndarray:
    """Ladder walk: a listen climbs one level, a miss slides one down."""
    m = p_listen_by_level.shape[0]
    K = np.zeros((m, m))
    for lv in range(m):
        p = p_listen_by_level[lv]
        K[lv, min(lv + 1, m - 1)] += p
        K[lv, max(lv - 1, 0)] += 1.0 - p
    return K


def build_toy(
    gamma: float = 0.9,
    n_levels: int = 5,
    rho: Sequence[float] = (0.5, 0.25, 0.25),
    bases: Sequence[Sequence[float]] = ((0.25, 0.10), (0.08, 0.30)),
    level_slope=0.12,
    rec_lift=0.35,
) -> ToyWorld:
    """Two items, `n_levels` relationship levels, one cluster per row of bases.

    Listen probabilities are clipped affine in level with a flat lift when the
    item holds the star slot; the incumbent stars item i with probability
    rho[1 + i] regardless of state, so each item's chain is autonomous.
    level_slope and rec_lift broadcast to (clusters, items), so one item can
    be clicky-but-flat while the other builds a habit.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (3,) or not np.isclose(rho.sum(), 1.0) or np.any(rho < 0.0):
        raise ValueError("rho must be a distribution over (no-star, item 0, item 1)")
    bases = np.asarray(bases, dtype=float)
    C = bases.shape[0]
    m = n_levels
    if bases.shape != (C, 2):
        raise ValueError("bases must be (clusters, 2)")
    slopes = np.broadcast_to(np.asarray(level_slope, dtype=float), (C, 2))
    lifts = np.broadcast_to(np.asarray(rec_lift, dtype=float), (C, 2))

    levels = np.arange(m)
    listen_p = np.zeros((C, 2, m, 2))
    for c in range(C):
        for i in range(2):
            base = bases[c, i] + slopes[c, i] * levels
            listen_p[c, i, :, 0] = np.clip(base, 0.02, 0.95)
            listen_p[c, i, :, 1] = np.clip(base + lifts[c, i], 0.02, 0.95)

    # exact per-item chains under the incumbent's rec rate
    item_values = np.zeros((C, 2, m))
    for c in range(C):
        for i in range(2):
            r = rho[1 + i]
            p_bar = r * listen_p[c, i, :, 1] + (1.0 - r) * listen_p[c, i, :, 0]
            K = _level_kernel(p_bar)
            item_values[c, i] = np.linalg.solve(np.eye(m) - gamma * K, p_bar)

    S = C * m * m
    A = 3
    P = np.zeros((A, S, S))
    R = np.zeros((A, S))
    labels: List[Tuple[int, int, int]] = []
    for c in range(C):
        for la in range(m):
            for lb in range(m):
                labels.append((c, la, lb))
    for a in range(A):
        rec = (a == 1, a == 2)
        for s, (c, la, lb) in enumerate(labels):
            pa = listen_p[c, 0, la, int(rec[0])]
            pb = listen_p[c, 1, lb, int(rec[1])]
            R[a, s] = pa + pb
            for bit_a, wa in ((1, pa), (0, 1.0 - pa)):
                na = min(la + 1, m - 1) if bit_a else max(la - 1, 0)
                for bit_b, wb in ((1, pb), (0, 1.0 - pb)):
                    nb = min(lb + 1, m - 1) if bit_b else max(lb - 1, 0)
                    P[a, s, (c * m + na) * m + nb] += wa * wb

    mu0 = np.zeros(S)
    for c in range(C):
        mu0[(c * m + 0) * m + 0] = 1.0 / C

    mdp = EnumerableMDP(
        P=P,
        R=R,
        mu0=mu0,
        gamma=gamma,
        action_labels=("no-star", "star-0", "star-1"),
        state_labels=tuple(labels),
    )
    phi = np.array([c for (c, _, _) in labels])
    return ToyWorld(
        mdp=mdp,
        n_levels=m,
        n_clusters=C,
        rho=rho,
        listen_p=listen_p,
        item_values=item_values,
        phi=phi,
    )


def toy_aggregated_q(world: ToyWorld) -> np.ndarray:
    """Exact cluster-by-action table under the toy's incumbent."""
    return aggregated_q_exact(world.mdp, world.pi0(), world.phi)


def monte_carlo_q(
    world: ToyWorld,
    state: int,
    first_action: int,
    n_episodes: int,
    seed: int,
    max_days: int = 600,
) -> Tuple[float, float]:
    """Simulated one-step-deviation value: mean episode return and its SE.

    Episodes start at `state`, take first_action once, then follow the
    incumbent; survival each day with probability gamma stands in for the
    discount, so plain sums of rewards estimate the discounted value.
    """
    mdp = world.mdp
    m = world.n_levels
    c, la0, lb0 = world.state_label(state)
    totals = np.empty(n_episodes)
    for e in range(n_episodes):
        rng = np.random.default_rng((seed, 4, e))
        la, lb = la0, lb0
        total = 0.0
        for t in range(max_days):
            a = first_action if t == 0 else int(rng.choice(3, p=world.rho))
            pa = world.listen_p[c, 0, la, int(a == 1)]
            pb = world.listen_p[c, 1, lb, int(a == 2)]
            hit_a = rng.random() < pa
            hit_b = rng.random() < pb
            total += float(hit_a) + float(hit_b)
            la = min(la + 1, m - 1) if hit_a else max(la - 1, 0)
            lb = min(lb + 1, m - 1) if hit_b else max(lb - 1, 0)
            if rng.random() >= mdp.gamma:
                break
        totals[e] = total
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(n_episodes))


def sample_toy_episodes(
    world: ToyWorld,
    n_episodes: int,
    seed: int,
    max_days: int = 400,
    policy: Optional[Callable[[int, np.random.Generator], int]] = None,
) -> List[List[LoggedStep]]:
    """Monte Carlo episodes; survival each day with probability gamma.

    Episodes end by death (or the safety horizon), so plain rewards-to-go are
    unbiased for the discounted values the linear solves produce. Steps carry
    the observable stand-in states; the star action is None, 0, or 1.
    """
    mdp = world.mdp
    m = world.n_levels
    episodes: List[List[LoggedStep]] = []
    for e in range(n_episodes):
        rng = np.random.default_rng((seed, 3, e))
        c = int(rng.integers(0, world.n_clusters))
        la, lb = 0, 0
        steps: List[LoggedStep] = []
        for t in range(max_days):
            s = world.state_index(c, la, lb)
            if policy is None:
                a = int(rng.choice(3, p=world.rho))
            else:
                a = policy(s, rng)
            pa = world.listen_p[c, 0, la, int(a == 1)]
            pb = world.listen_p[c, 1, lb, int(a == 2)]
            hit_a = rng.random() < pa
            hit_b = rng.random() < pb
            steps.append(
                LoggedStep(
                    state=world.state_to_user(s),
                    star_item=None if a == NO_STAR else a - 1,
                    reward=float(hit_a) + float(hit_b),
                    day=None,
                    t=t,
                )
            )
            la = min(la + 1, m - 1) if hit_a else max(la - 1, 0)
            lb = min(lb + 1, m - 1) if hit_b else max(lb - 1, 0)
            if rng.random() >= mdp.gamma:
                break
        episodes.append(steps)
    return episodes
