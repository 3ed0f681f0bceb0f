"""Trainable models: short-term clickiness, per-item stickiness, and the
nonparametric resurfacing tables.

The clickiness model is a logistic regression over star-slot impressions.
The stickiness model is one ridge regression per item, pulled toward an
informed prior, predicting how many of the next 59 days a discoverer will
return. The resurfacing tables aggregate the relationship state onto an
11 x 11 activity grid and hold empirical listen rates and continuation
values per cell; cells with no data stay missing rather than silently zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    DataError,
    DayContext,
    ItemId,
    RECENCY_CAP,
    consumed_items,
    consumption,
    update_relationship_state,
    zero_state,
)
from .io import LoggedUser

DISCOVERY_HORIZON = 60  # window length in days: the discovery day + 59 more


# ---------------------------------------------------------------------------
# clickiness
# ---------------------------------------------------------------------------

N_CLICK_FEATURES = 10  # taste-item affinity, 7 weekday one-hots, recency, bias


def click_features(nu_a: np.ndarray, taste: Sequence[float], context: DayContext) -> np.ndarray:
    x = np.zeros(N_CLICK_FEATURES)
    x[0] = float(np.dot(nu_a, np.asarray(taste)))
    x[1 + context.day_of_week] = 1.0
    x[8] = context.recency / RECENCY_CAP
    x[9] = 1.0
    return x


@dataclass(frozen=True, eq=False)
class ClickinessModel:
    weights: np.ndarray
    final_loss: float
    initial_loss: float

    def predict(self, nu_a: np.ndarray, taste: Sequence[float], context: DayContext) -> float:
        s = float(self.weights @ click_features(nu_a, taste, context))
        return 1.0 / (1.0 + math.exp(-s)) if s >= 0 else math.exp(s) / (1.0 + math.exp(s))

    def to_record(self) -> dict:
        return {"weights": [float(w) for w in self.weights]}

    @staticmethod
    def from_record(rec: dict) -> "ClickinessModel":
        try:
            w = np.asarray(rec["weights"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed clickiness artifact: {exc}") from exc
        return ClickinessModel(weights=w, final_loss=float("nan"), initial_loss=float("nan"))


def _cross_entropy(X: np.ndarray, y: np.ndarray, w: np.ndarray, ridge: float) -> float:
    s = X @ w
    # log(1 + exp(-s*ysign)) computed stably
    ysign = 2.0 * y - 1.0
    loss = np.logaddexp(0.0, -s * ysign).mean()
    return float(loss + 0.5 * ridge * float(w @ w) / X.shape[0])


def train_clickiness(
    X: np.ndarray,
    y: np.ndarray,
    max_iter: int = 50,
    tol: float = 1e-9,
    ridge: float = 1e-6,
) -> ClickinessModel:
    """Newton's method with backtracking on average cross-entropy.

    Deterministic for fixed inputs. Raises DataError when the labels are all
    one class, where the MLE runs away and the model would be meaningless.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DataError("X must be (n, p) and y must be (n,)")
    if X.shape[0] == 0:
        raise DataError("empty training set")
    n_pos = int((y > 0.5).sum())
    if n_pos == 0 or n_pos == y.shape[0]:
        raise DataError("training data must contain both classes")

    n, p = X.shape
    w = np.zeros(p)
    initial = _cross_entropy(X, y, w, ridge)
    loss = initial
    for _ in range(max_iter):
        s = X @ w
        prob = np.exp(-np.logaddexp(0.0, -s))
        grad = X.T @ (prob - y) / n + ridge * w / n
        weight = np.maximum(prob * (1.0 - prob), 1e-12)
        hess = (X.T * weight) @ X / n + (ridge / n) * np.eye(p)
        step = np.linalg.solve(hess, grad)
        # backtrack until the loss actually drops; keeps the descent monotone
        t = 1.0
        for _ in range(30):
            cand = w - t * step
            cand_loss = _cross_entropy(X, y, cand, ridge)
            if cand_loss <= loss:
                break
            t *= 0.5
        else:
            break
        if loss - cand_loss < tol:
            w, loss = cand, cand_loss
            break
        w, loss = cand, cand_loss
    return ClickinessModel(weights=w, final_loss=loss, initial_loss=initial)


def build_clickiness_rows(
    users: Iterable[LoggedUser], nu: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """One row per star-slot impression: did the user consume that item today."""
    feats: List[np.ndarray] = []
    labels: List[float] = []
    for lu in users:
        traj = lu.trajectory
        last_active: Optional[int] = None
        for i, day in enumerate(traj.days):
            t = traj.start + i
            recency = RECENCY_CAP if last_active is None else min(float(t - last_active), RECENCY_CAP)
            ctx = DayContext(day_of_week=t % 7, recency=recency)
            star = day.star_item
            feats.append(click_features(nu[star], lu.taste, ctx))
            labels.append(1.0 if consumption(day, star) > 0.0 else 0.0)
            if consumed_items(day):
                last_active = t
    if not feats:
        raise DataError("no impressions in dataset")
    return np.asarray(feats), np.asarray(labels)


# ---------------------------------------------------------------------------
# discoveries and stickiness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscoveryRecord:
    """A qualifying first listen: full follow-up window observed."""

    user_id: int
    item: ItemId
    t_index: int          # day offset of the discovery within the trajectory
    taste: Tuple[float, ...]
    v_hat: int            # distinct active days on the item in the next 59
    minutes: float        # minutes on the item, discovery day + 59 following


def iter_discoveries(
    users: Iterable[LoggedUser], horizon: int = DISCOVERY_HORIZON
) -> Iterable[DiscoveryRecord]:
    """All qualifying discoveries in the log.

    A discovery qualifies when the trajectory still covers the horizon-1 days
    after it; later days simply do not have their label yet, exactly like a
    training snapshot taken `horizon` days after the fact.
    """
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    for lu in users:
        days = lu.trajectory.days
        n = len(days)
        first_seen: Dict[ItemId, int] = {}
        consumed_by_day: List[Dict[ItemId, float]] = [consumed_items(d) for d in days]
        for i, consumed in enumerate(consumed_by_day):
            for item in consumed:
                if item not in first_seen:
                    first_seen[item] = i
        for item, i in sorted(first_seen.items()):
            if n - 1 - i < horizon - 1:
                continue
            window = consumed_by_day[i + 1 : i + horizon]
            v_hat = sum(1 for c in window if item in c)
            secs = consumed_by_day[i].get(item, 0.0) + sum(c.get(item, 0.0) for c in window)
            yield DiscoveryRecord(
                user_id=lu.user_id,
                item=item,
                t_index=i,
                taste=lu.taste,
                v_hat=v_hat,
                minutes=secs / 60.0,
            )


def build_discovery_dataset(
    users: Iterable[LoggedUser], item: ItemId, horizon: int = DISCOVERY_HORIZON
) -> List[DiscoveryRecord]:
    """Qualifying discoveries of one item (the regression rows for theta_a)."""
    return [r for r in iter_discoveries(users, horizon) if r.item == item]


def discoveries_by_item(
    users: Iterable[LoggedUser], horizon: int = DISCOVERY_HORIZON
) -> Dict[ItemId, List[DiscoveryRecord]]:
    out: Dict[ItemId, List[DiscoveryRecord]] = {}
    for rec in iter_discoveries(users, horizon):
        out.setdefault(rec.item, []).append(rec)
    return out


@dataclass(frozen=True, eq=False)
class StickinessModel:
    item: ItemId
    theta: np.ndarray
    lam: float
    prior_mean: np.ndarray

    def predict(self, taste: Sequence[float]) -> float:
        u = np.asarray(taste, dtype=float)
        if u.shape != self.theta.shape:
            raise ValueError(
                f"taste has dimension {u.shape[0]}, model expects {self.theta.shape[0]}"
            )
        return float(self.theta @ u)

    def to_record(self) -> dict:
        return {
            "item_id": int(self.item),
            "theta": [float(v) for v in self.theta],
            "lambda": float(self.lam),
            "prior_mean": [float(v) for v in self.prior_mean],
        }

    @staticmethod
    def from_record(rec: dict) -> "StickinessModel":
        try:
            return StickinessModel(
                item=int(rec["item_id"]),
                theta=np.asarray(rec["theta"], dtype=float),
                lam=float(rec["lambda"]),
                prior_mean=np.asarray(rec["prior_mean"], dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed stickiness artifact: {exc}") from exc


def train_stickiness(
    item: ItemId,
    records: Sequence[DiscoveryRecord],
    d: int,
    lam: float = 1.0,
    prior_mean: Optional[np.ndarray] = None,
) -> StickinessModel:
    """Ridge regression of v_hat on taste, shrunk toward the prior mean.

    Solves (X'X + lam I) theta = X'y + lam * prior. With no records the
    posterior is the prior itself.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    prior = np.zeros(d) if prior_mean is None else np.asarray(prior_mean, dtype=float)
    if prior.shape != (d,):
        raise ValueError(f"prior_mean must have dimension {d}")
    if not records:
        return StickinessModel(item=item, theta=prior.copy(), lam=lam, prior_mean=prior)
    X = np.asarray([r.taste for r in records], dtype=float)
    if X.shape[1] != d:
        raise ValueError(f"records have taste dimension {X.shape[1]}, expected {d}")
    y = np.asarray([r.v_hat for r in records], dtype=float)
    A = X.T @ X + lam * np.eye(d)
    b = X.T @ y + lam * prior
    try:
        theta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        # only reachable with lam=0 and a rank-deficient design
        raise DataError(f"singular system for item {item} with lam={lam}") from exc
    return StickinessModel(item=item, theta=theta, lam=lam, prior_mean=prior)


def default_prior_mean(records: Iterable[DiscoveryRecord], d: int) -> np.ndarray:
    """Informed prior: spreads the population mean label over the d coords."""
    vals = [r.v_hat for r in records]
    mean = float(np.mean(vals)) if vals else 0.0
    return np.full(d, mean / d)


def train_stickiness_models(
    by_item: Dict[ItemId, List[DiscoveryRecord]],
    d: int,
    items: Optional[Sequence[ItemId]] = None,
    lam: float = 1.0,
) -> Dict[ItemId, StickinessModel]:
    """One model per item, all shrunk toward the pooled prior."""
    pooled = [r for recs in by_item.values() for r in recs]
    prior = default_prior_mean(pooled, d)
    wanted = sorted(by_item) if items is None else list(items)
    return {
        item: train_stickiness(item, by_item.get(item, []), d, lam, prior)
        for item in wanted
    }


def unpersonalized_stickiness(records: Sequence[DiscoveryRecord]) -> float:
    """Mean label over the item's discovery records."""
    if not records:
        raise DataError("no records: unpersonalized stickiness is undefined")
    return float(np.mean([r.v_hat for r in records]))


# ---------------------------------------------------------------------------
# resurfacing tables
# ---------------------------------------------------------------------------

GRID_SIZE = 11  # both activity axes quantized at 10% increments


class MissingCellError(LookupError):
    """The aggregated-state cell has no data; the caller decides the fallback."""


def grid_axes(alpha: Sequence[float]) -> Tuple[int, int]:
    """(slow, fast) component indices: the two longest-memory components.

    The slow axis plays the role of the older activity window and the fast
    axis the recent one; for steady activity at rate f both read ~f.
    """
    if len(alpha) < 2:
        raise DataError("resurfacing grid needs at least two state components")
    order = sorted(range(len(alpha)), key=lambda i: (-alpha[i], i))
    return order[0], order[1]


def grid_cell(z: Sequence[float], alpha: Sequence[float]) -> Tuple[int, int]:
    slow, fast = grid_axes(alpha)
    i = int(round(min(max(z[slow], 0.0), 1.0) * (GRID_SIZE - 1)))
    j = int(round(min(max(z[fast], 0.0), 1.0) * (GRID_SIZE - 1)))
    return i, j


@dataclass(eq=False)
class CellStats:
    n_rec: int = 0
    rec_listens: int = 0
    n_norec: int = 0
    norec_listens: int = 0
    n_v: int = 0
    v_sum: float = 0.0


@dataclass(eq=False)
class ResurfacingTables:
    """Per-cell listen rates and continuation values for one item.

    p_rec composes the star-conversion rate with the organic rate, so a cell's
    recommended probability can never undercut its organic one.
    """

    item: ItemId
    alpha: Tuple[float, ...]
    cells: Dict[Tuple[int, int], CellStats] = field(default_factory=dict)

    def _full(self, cell: Tuple[int, int]) -> CellStats:
        st = self.cells.get(cell)
        if st is None or st.n_rec == 0 or st.n_norec == 0 or st.n_v == 0:
            raise MissingCellError(f"cell {cell} has no complete data for item {self.item}")
        return st

    def has_cell(self, z: Sequence[float]) -> bool:
        st = self.cells.get(grid_cell(z, self.alpha))
        return st is not None and st.n_rec > 0 and st.n_norec > 0 and st.n_v > 0

    def star_conversion(self, z: Sequence[float]) -> float:
        st = self._full(grid_cell(z, self.alpha))
        return st.rec_listens / st.n_rec

    def p_norec(self, z: Sequence[float]) -> float:
        st = self._full(grid_cell(z, self.alpha))
        return st.norec_listens / st.n_norec

    def p_rec(self, z: Sequence[float]) -> float:
        p_star = self.star_conversion(z)
        p_org = self.p_norec(z)
        return p_star + (1.0 - p_star) * p_org

    def v(self, z: Sequence[float]) -> float:
        st = self._full(grid_cell(z, self.alpha))
        return st.v_sum / st.n_v

    def rows(self) -> Iterable[Tuple[int, int, int, float, float, float]]:
        """(item, cell_i, cell_j, p_rec, p_norec, v) for complete cells."""
        for (i, j), st in sorted(self.cells.items()):
            if st.n_rec == 0 or st.n_norec == 0 or st.n_v == 0:
                continue
            p_star = st.rec_listens / st.n_rec
            p_org = st.norec_listens / st.n_norec
            yield (
                int(self.item),
                i,
                j,
                p_star + (1.0 - p_star) * p_org,
                p_org,
                st.v_sum / st.n_v,
            )


def build_resurfacing_tables(
    users: Iterable[LoggedUser],
    item: ItemId,
    alpha: Sequence[float],
    horizon: int = DISCOVERY_HORIZON,
) -> ResurfacingTables:
    """Walk the log once, replaying only this item's relationship state.

    Every (user, day) pair lands in the cell of its start-of-day state and
    contributes to the recommended or organic listen rate; days whose full
    follow-up window is observed also contribute a return-days sample to v.
    """
    grid_axes(alpha)  # validates k >= 2
    k = len(alpha)
    tables = ResurfacingTables(item=item, alpha=tuple(alpha))
    for lu in users:
        days = lu.trajectory.days
        n = len(days)
        listened = [consumption(d, item) > 0.0 for d in days]
        z = zero_state(k)
        for i, day in enumerate(days):
            cell = grid_cell(z, alpha)
            st = tables.cells.setdefault(cell, CellStats())
            if day.star_item == item:
                st.n_rec += 1
                st.rec_listens += int(listened[i])
            else:
                st.n_norec += 1
                st.norec_listens += int(listened[i])
            if n - 1 - i >= horizon - 1:
                st.n_v += 1
                st.v_sum += sum(1 for j in range(i + 1, i + horizon) if listened[j])
            z = update_relationship_state(z, alpha, listened[i])
    return tables


def resurfacing_rows(tables_by_item: Dict[ItemId, ResurfacingTables]):
    for item in sorted(tables_by_item):
        yield from tables_by_item[item].rows()
