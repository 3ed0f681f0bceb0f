"""Scores that approximate the lifetime value of promoting one item.

Everything here rests on the same decomposition: forcing an item into the
star slot changes (a) whether the user listens today and (b) which
relationship state they carry forward. The promotion's value is then

    (p_rec - p_norec) * ((r + continuation-if-listened) - continuation-if-not)

and the two product flavors plug different models into the two factors:
discovery uses a click model times a stickiness regression, resurfacing uses
the empirical grid tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .core import DataError, DayContext, ItemId, RECENCY_CAP, UserState, successor_states
from .models import ClickinessModel, MissingCellError, ResurfacingTables, StickinessModel
from .simulator import DayView, StarPolicy, eligible_pool

__all__ = [
    "ARMS",
    "MissingCellError",
    "ScoreModels",
    "ScorePolicy",
    "argmax_item",
    "q_discovery",
    "q_general_decomposed",
    "q_resurfacing",
]


def q_discovery(click_p: float, stickiness: float) -> float:
    """Expected first listen times the lifetime value it unlocks.

    Negative stickiness predictions clip to zero: a first listen is never
    worth less than the listen itself.
    """
    if not (0.0 <= click_p <= 1.0):
        raise ValueError(f"click_p must be a probability, got {click_p}")
    return click_p * (1.0 + max(stickiness, 0.0))


def q_resurfacing(tables: ResurfacingTables, z: Sequence[float]) -> float:
    """Grid-table promotion value for an already-known item in state z.

    Looks up the incremental listen probability at z and the continuation
    values at both successor states; any incomplete cell raises
    MissingCellError so the caller can fall back deliberately.
    """
    z_plus, z_minus = successor_states(tuple(z), tables.alpha)
    uplift = tables.p_rec(z) - tables.p_norec(z)
    return uplift * ((1.0 + tables.v(z_plus)) - tables.v(z_minus))


def q_general_decomposed(
    user: UserState,
    item: ItemId,
    short_term: Callable[[UserState, ItemId], Tuple[float, float]],
    value_fn: Callable[[Tuple[float, ...]], float],
    gamma: float,
    successors: Optional[
        Callable[[Tuple[float, ...]], Tuple[Tuple[float, ...], Tuple[float, ...]]]
    ] = None,
    alpha: Optional[Sequence[float]] = None,
    reward: float = 1.0,
) -> float:
    """Promotion advantage from pluggable short-term and long-term parts.

    short_term gives (p_rec, p_norec) for the item today; value_fn gives the
    remaining lifetime value of the item's relationship state; successors maps
    the current state to its listened/missed continuations (defaults to the
    smoothing update with `alpha`).
    """
    if alpha is not None:
        z = user.relationship(item, len(alpha))
    elif item in user.relationships:
        z = user.relationships[item]
    else:
        raise ValueError("state dimension unknown: pass alpha or seed the relationship")
    if successors is None:
        if alpha is None:
            raise ValueError("need either successors or alpha")
        successors = lambda s: successor_states(s, alpha)  # noqa: E731
    p_rec, p_norec = short_term(user, item)
    z_plus, z_minus = successors(z)
    return (p_rec - p_norec) * (
        (reward + gamma * value_fn(z_plus)) - gamma * value_fn(z_minus)
    )


# ---------------------------------------------------------------------------
# ranking arms
# ---------------------------------------------------------------------------

ARM_CONTROL = "control"
ARM_PERSONALIZED = "personalized"
ARM_UNPERSONALIZED = "unpersonalized"
ARM_SQRT = "square-root"
ARMS = (ARM_CONTROL, ARM_PERSONALIZED, ARM_UNPERSONALIZED, ARM_SQRT)


@dataclass(eq=False)
class ScoreModels:
    """Trained artifacts bundled for ranking: click weights, per-item theta,
    per-item mean stickiness. Items missing a mean fall back to the pooled
    mean, mirroring how the per-item regressions shrink to the pooled prior.
    """

    click: ClickinessModel
    stickiness: Dict[ItemId, StickinessModel]
    vbar: Dict[ItemId, float]
    nu: np.ndarray

    def __post_init__(self) -> None:
        n, d = self.nu.shape
        self.theta = np.zeros((n, d))
        for item, model in self.stickiness.items():
            if model.theta.shape != (d,):
                raise DataError(f"item {item}: theta dimension {model.theta.shape}")
            self.theta[item] = model.theta
        pooled = float(np.mean(list(self.vbar.values()))) if self.vbar else 0.0
        self.vbar_arr = np.full(n, pooled)
        for item, v in self.vbar.items():
            self.vbar_arr[item] = v
        if np.any(self.vbar_arr < 0.0):
            raise DataError("mean stickiness must be non-negative")

    def click_probs(self, taste: Sequence[float], context: DayContext) -> np.ndarray:
        w = self.click.weights
        s = (
            w[0] * (self.nu @ np.asarray(taste))
            + w[1 + context.day_of_week]
            + w[8] * context.recency / RECENCY_CAP
            + w[9]
        )
        return 1.0 / (1.0 + np.exp(-s))

    def lifetime_lift(self, taste: Sequence[float], arm: str) -> np.ndarray:
        if arm == ARM_CONTROL:
            return np.ones(self.nu.shape[0])
        if arm == ARM_PERSONALIZED:
            return 1.0 + np.maximum(self.theta @ np.asarray(taste), 0.0)
        if arm == ARM_UNPERSONALIZED:
            return 1.0 + self.vbar_arr
        if arm == ARM_SQRT:
            return 1.0 + np.sqrt(self.vbar_arr)
        raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")

    def scores(self, taste: Sequence[float], context: DayContext, arm: str) -> np.ndarray:
        return self.click_probs(taste, context) * self.lifetime_lift(taste, arm)

    def score(self, user: UserState, item: ItemId, arm: str) -> float:
        return float(self.scores(user.taste, user.context, arm)[item])


def argmax_item(pool: Sequence[ItemId], scores: Sequence[float]) -> ItemId:
    """Highest score wins; ties break toward the lowest item id."""
    pool_arr = np.asarray(pool)
    score_arr = np.asarray(scores, dtype=float)
    if pool_arr.size == 0:
        raise ValueError("empty pool")
    if pool_arr.shape != score_arr.shape:
        raise ValueError("pool and scores must align")
    order = np.argsort(pool_arr, kind="stable")
    pool_arr, score_arr = pool_arr[order], score_arr[order]
    return int(pool_arr[int(np.argmax(score_arr))])


class ScorePolicy(StarPolicy):
    """Star-slot policy driven by a ScoreModels bundle and an arm name."""

    def __init__(self, models: ScoreModels, arm: str, pool_rule: str = "unseen"):
        if arm not in ARMS:
            raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")
        self.models = models
        self.arm = arm
        self.pool_rule = pool_rule

    def pick_star(self, view: DayView) -> Optional[ItemId]:
        pool = eligible_pool(view, self.pool_rule)
        ctx = DayContext(day_of_week=view.dow, recency=view.recency)
        scores = self.models.scores(view.taste, ctx, self.arm)
        return argmax_item(pool, scores[pool])
