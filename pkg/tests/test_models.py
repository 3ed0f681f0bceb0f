"""Model-layer tests: click model, discovery windows, ridge fits, cell tables."""

import math

import numpy as np
import pytest

from habitrec.core import DataError, DayContext, DayOutcome, Trajectory
from habitrec.io import LoggedUser
from habitrec.models import (
    CellStats,
    ClickinessModel,
    DiscoveryRecord,
    MissingCellError,
    ResurfacingTables,
    build_clickiness_rows,
    build_discovery_dataset,
    build_resurfacing_tables,
    click_features,
    default_prior_mean,
    discoveries_by_item,
    grid_axes,
    grid_cell,
    iter_discoveries,
    train_clickiness,
    train_stickiness,
    train_stickiness_models,
    unpersonalized_stickiness,
)
from habitrec.simulator import (
    FixedItemPolicy,
    SimConfig,
    catalogue_rng,
    iter_cohort,
    spawn_catalogue,
)


def logged(users):
    return [LoggedUser(r.user_id, tuple(r.taste), r.trajectory) for r in users]


# ---------------------------------------------------------------------------
# clickiness
# ---------------------------------------------------------------------------


def test_click_features_layout():
    ctx = DayContext(day_of_week=3, recency=7.0)
    x = click_features(np.array([2.0, 1.0]), (1.0, 0.5), ctx)
    assert x.shape == (10,)
    assert x[0] == pytest.approx(2.5)
    assert x[1 + 3] == 1.0 and x[1:8].sum() == 1.0
    assert x[8] == pytest.approx(0.5)
    assert x[9] == 1.0


def test_train_clickiness_initial_loss_is_coin_flip():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 10))
    y = (rng.random(200) < 0.7).astype(float)
    model = train_clickiness(X, y)
    assert model.initial_loss == pytest.approx(math.log(2.0))
    assert model.final_loss <= model.initial_loss


def test_train_clickiness_learns_separable_rule():
    rng = np.random.default_rng(1)
    X = np.zeros((500, 10))
    X[:, 0] = rng.normal(size=500)
    X[:, 9] = 1.0
    y = (X[:, 0] > 0).astype(float)
    model = train_clickiness(X, y)
    assert model.final_loss < 0.1
    hi = model.predict(np.array([3.0, 0.0]), (1.0, 0.0), DayContext(0, 0.0))
    lo = model.predict(np.array([-3.0, 0.0]), (1.0, 0.0), DayContext(0, 0.0))
    assert hi > 0.95 and lo < 0.05


def test_train_clickiness_matches_base_rate_with_intercept():
    # labels independent of features: the intercept must absorb the base rate,
    # and the score equations pin mean(prediction) to mean(y)
    rng = np.random.default_rng(2)
    n = 10000
    X = np.zeros((n, 10))
    X[:, 0] = rng.normal(size=n)
    X[:, 9] = 1.0
    y = (rng.random(n) < 0.3).astype(float)
    model = train_clickiness(X, y)
    sigma = 1.0 / (1.0 + np.exp(-(X @ model.weights)))
    assert abs(float(sigma.mean()) - float(y.mean())) < 1e-6


def test_train_clickiness_rejects_degenerate_labels():
    X = np.zeros((5, 10))
    with pytest.raises(DataError):
        train_clickiness(X, np.ones(5))
    with pytest.raises(DataError):
        train_clickiness(np.zeros((0, 10)), np.zeros(0))


def test_clickiness_model_roundtrip():
    model = ClickinessModel(weights=np.arange(10.0), final_loss=0.1, initial_loss=0.7)
    back = ClickinessModel.from_record(model.to_record())
    assert np.array_equal(back.weights, model.weights)
    zero = ClickinessModel(weights=np.zeros(10), final_loss=0.0, initial_loss=0.0)
    assert zero.predict(np.ones(2), (1.0, 1.0), DayContext(0, 0.0)) == 0.5


def test_build_clickiness_rows_one_per_star_impression():
    days = (
        DayOutcome((1, 0), (40.0, 0.0)),   # star 1, consumed
        DayOutcome((0, 1), (0.0, 30.0)),   # star 0, not consumed
        DayOutcome((2, 2), (0.0, 0.0)),    # star 2, not consumed
    )
    user = LoggedUser(0, (1.0, 0.2), Trajectory(0, 2, days))
    nu = np.tile(np.array([[1.0, 0.0]]), (3, 1))
    X, y = build_clickiness_rows([user], nu)
    assert X.shape == (3, 10)
    assert y.tolist() == [1.0, 0.0, 0.0]
    # first day of a fresh trajectory carries the capped recency
    assert X[0, 8] == 1.0
    # the day after a listen has recency 1/14
    assert X[1, 8] == pytest.approx(1.0 / 14.0)


# ---------------------------------------------------------------------------
# discovery windows
# ---------------------------------------------------------------------------


def day_with(items, secs=60.0):
    actions = tuple(items) + (0,) * (3 - len(items))
    engagements = tuple(secs for _ in items) + (0.0,) * (3 - len(items))
    return DayOutcome(actions, engagements)


def test_iter_discoveries_window_bookkeeping():
    # item 7 first consumed on day 2, again on days 4, 5 and 9
    days = []
    for t in range(10):
        if t in (2, 4, 5, 9):
            days.append(DayOutcome((7, 0, 1), (60.0, 0.0, 0.0)))
        else:
            days.append(DayOutcome((0, 1, 7), (0.0, 0.0, 0.0)))
    user = LoggedUser(3, (1.0, 0.0), Trajectory(0, 9, tuple(days)))
    recs = [r for r in iter_discoveries([user], horizon=5) if r.item == 7]
    assert len(recs) == 1
    rec = recs[0]
    assert rec.t_index == 2
    assert rec.v_hat == 2          # days 4 and 5 fall in the follow-up window
    assert rec.minutes == pytest.approx(3.0)  # day 9 is outside the window
    assert rec.user_id == 3


def test_iter_discoveries_requires_full_window():
    days = tuple(
        DayOutcome((9, 0), (60.0 if t == 8 else 0.0, 0.0)) for t in range(10)
    )
    user = LoggedUser(0, (1.0,), Trajectory(0, 9, days))
    assert [r.item for r in iter_discoveries([user], horizon=5)] == []
    # first consumption exactly horizon-1 days before the end still qualifies
    days = tuple(
        DayOutcome((9, 0), (60.0 if t == 5 else 0.0, 0.0)) for t in range(10)
    )
    user = LoggedUser(0, (1.0,), Trajectory(0, 9, days))
    recs = list(iter_discoveries([user], horizon=5))
    assert [r.item for r in recs] == [9]
    assert recs[0].v_hat == 0

    with pytest.raises(DataError):
        list(iter_discoveries([user], horizon=0))


def test_discovery_labels_stay_in_window_range(fast_config, fast_catalogue):
    from habitrec.simulator import LoggingPolicy

    users = logged(
        iter_cohort(LoggingPolicy(0.5), fast_config, 40, fast_catalogue, seed=9)
    )
    horizon = 20
    recs = list(iter_discoveries(users, horizon))
    assert recs, "expected at least one qualifying discovery"
    assert all(0 <= r.v_hat <= horizon - 1 for r in recs)
    by_item = discoveries_by_item(users, horizon)
    assert sum(len(v) for v in by_item.values()) == len(recs)
    some_item = recs[0].item
    assert build_discovery_dataset(users, some_item, horizon) == by_item[some_item]


def test_discovery_labels_match_binomial_oracle():
    # a world with no habit channel and no per-user heterogeneity: every staple
    # exposure converts i.i.d., so follow-up day counts are Binomial(h-1, p)
    cfg = SimConfig(
        n_items=8,
        L=8,
        shortcut_slots=2,
        gamma=0.99995,
        max_days=40,
        base_logit=-1.0,
        click_scale=0.0,
        taste_weight=0.0,
        idio_scale=0.0,
        star_boost=0.0,
        habit_base=-40.0,
        habit_scale=0.0,
        habit_taste=0.0,
        staple_bonus=0.0,
        noise_scale=0.0,
        dow_amplitude=0.0,
    )
    cat = spawn_catalogue(cfg, catalogue_rng(0))
    users = logged(iter_cohort(FixedItemPolicy(None), cfg, 600, cat, seed=5))
    horizon = 30
    staple = int(cat.popularity[0])
    labels = np.array(
        [r.v_hat for r in iter_discoveries(users, horizon) if r.item == staple], float
    )
    p = 1.0 / (1.0 + math.exp(1.0))
    n_trials = horizon - 1
    assert labels.size > 300
    assert labels.mean() == pytest.approx(n_trials * p, abs=0.3)
    assert labels.var() == pytest.approx(n_trials * p * (1 - p), rel=0.2)

    # promo items are never exposed under the quiet policy, so no discoveries
    promo = int(cat.popularity[-1])
    assert not [r for r in iter_discoveries(users, horizon) if r.item == promo]


# ---------------------------------------------------------------------------
# stickiness regression
# ---------------------------------------------------------------------------


def rec_with(taste, v):
    return DiscoveryRecord(
        user_id=0, item=1, t_index=0, taste=tuple(taste), v_hat=v, minutes=0.0
    )


def test_train_stickiness_hand_case():
    # one observation x=1, y=4 with unit ridge and zero prior: (1+1) theta = 4
    model = train_stickiness(1, [rec_with((1.0,), 4)], d=1, lam=1.0)
    assert model.theta[0] == pytest.approx(2.0)


def test_train_stickiness_prior_behaviour():
    prior = np.array([0.5, 1.5])
    empty = train_stickiness(1, [], d=2, lam=1.0, prior_mean=prior)
    assert np.allclose(empty.theta, prior)
    # heavy ridge pins the posterior near the prior
    recs = [rec_with((1.0, 0.0), 10)] * 3
    heavy = train_stickiness(1, recs, d=2, lam=1e9, prior_mean=prior)
    assert np.allclose(heavy.theta, prior, atol=1e-4)
    assert heavy.predict((2.0, 2.0)) == pytest.approx(float(heavy.theta @ [2.0, 2.0]))


def test_train_stickiness_singular_without_ridge():
    recs = [rec_with((1.0, 0.0), 2), rec_with((1.0, 0.0), 4)]
    with pytest.raises(DataError):
        train_stickiness(1, recs, d=2, lam=0.0)
    with pytest.raises(ValueError):
        train_stickiness(1, recs, d=2, lam=-1.0)
    with pytest.raises(ValueError):
        train_stickiness(1, recs, d=3)


def test_train_stickiness_matches_augmented_least_squares():
    rng = np.random.default_rng(8)
    d, lam = 4, 1.7
    prior = rng.normal(size=d)
    recs = [rec_with(rng.normal(size=d), int(v)) for v in rng.integers(0, 20, size=50)]
    model = train_stickiness(1, recs, d=d, lam=lam, prior_mean=prior)
    X = np.array([r.taste for r in recs])
    y = np.array([float(r.v_hat) for r in recs])
    X_aug = np.vstack([X, math.sqrt(lam) * np.eye(d)])
    y_aug = np.concatenate([y, math.sqrt(lam) * prior])
    theta, *_ = np.linalg.lstsq(X_aug, y_aug, rcond=None)
    assert np.allclose(model.theta, theta, atol=1e-8)


def test_pooled_prior_and_unpersonalized():
    assert np.allclose(default_prior_mean([rec_with((1.0,), 4)], 2), [2.0, 2.0])
    assert np.allclose(default_prior_mean([], 3), 0.0)
    assert unpersonalized_stickiness([rec_with((1.0,), 2), rec_with((1.0,), 4)]) == 3.0
    with pytest.raises(DataError):
        unpersonalized_stickiness([])

    by_item = {1: [rec_with((1.0, 0.0), 2)], 2: []}
    models = train_stickiness_models(by_item, d=2, items=[1, 2, 3])
    assert sorted(models) == [1, 2, 3]
    # items without data sit at the pooled prior
    assert np.allclose(models[3].theta, default_prior_mean(by_item[1], 2))


# ---------------------------------------------------------------------------
# resurfacing tables
# ---------------------------------------------------------------------------


def test_grid_axes_pick_longest_memories():
    assert grid_axes((0.5, 0.9, 0.98)) == (2, 1)
    assert grid_axes((0.9, 0.5)) == (0, 1)
    with pytest.raises(DataError):
        grid_axes((0.5,))


def test_grid_cell_quantization():
    alpha = (0.5, 0.9, 0.98)
    assert grid_cell((0.0, 0.0, 0.0), alpha) == (0, 0)
    assert grid_cell((0.0, 0.6, 1.0), alpha) == (10, 6)
    assert grid_cell((0.0, 2.0, -1.0), alpha) == (0, 10)  # clamped


def test_tables_compose_rates():
    tables = ResurfacingTables(item=3, alpha=(0.5, 0.9))
    tables.cells[(0, 0)] = CellStats(
        n_rec=4, rec_listens=2, n_norec=10, norec_listens=1, n_v=5, v_sum=10.0
    )
    z = (0.0, 0.0)
    assert tables.star_conversion(z) == 0.5
    assert tables.p_norec(z) == pytest.approx(0.1)
    assert tables.p_rec(z) == pytest.approx(0.55)
    assert tables.v(z) == 2.0
    assert tables.p_rec(z) >= tables.p_norec(z)
    assert tables.has_cell(z)

    tables.cells[(1, 1)] = CellStats(n_rec=1, rec_listens=1, n_norec=0)
    assert not tables.has_cell((0.1, 0.1))
    with pytest.raises(MissingCellError):
        tables.p_rec((0.1, 0.1))
    with pytest.raises(MissingCellError):
        tables.v((0.9, 0.9))
    # complete cells only in the emitted rows
    assert [row[1:3] for row in tables.rows()] == [(0, 0)]


def test_tables_degenerate_conversions():
    tables = ResurfacingTables(item=0, alpha=(0.5, 0.9))
    tables.cells[(0, 0)] = CellStats(
        n_rec=5, rec_listens=0, n_norec=5, norec_listens=2, n_v=1, v_sum=0.0
    )
    z = (0.0, 0.0)
    assert tables.p_rec(z) == tables.p_norec(z)  # no star conversion, no lift
    tables.cells[(0, 0)].rec_listens = 5
    assert tables.p_rec(z) == 1.0


def test_build_resurfacing_tables_hand_log():
    alpha = (0.5, 0.9)
    days = (
        DayOutcome((3, 0), (45.0, 0.0)),  # star 3, listened
        DayOutcome((0, 3), (0.0, 0.0)),   # organic exposure, quiet
        DayOutcome((0, 3), (0.0, 30.0)),  # organic listen
    )
    user = LoggedUser(0, (1.0,), Trajectory(0, 2, days))
    tables = build_resurfacing_tables([user], item=3, alpha=alpha, horizon=2)

    first = tables.cells[(0, 0)]
    assert (first.n_rec, first.rec_listens, first.n_norec) == (1, 1, 0)
    assert (first.n_v, first.v_sum) == (1, 0.0)  # next-day window saw no listen

    second = tables.cells[(1, 5)]  # state after the listen: (0.5, 0.1)
    assert (second.n_rec, second.n_norec, second.norec_listens) == (0, 1, 0)
    assert (second.n_v, second.v_sum) == (1, 1.0)

    third = tables.cells[(1, 2)]  # decayed state (0.25, 0.09)
    assert (third.n_norec, third.norec_listens) == (1, 1)
    assert third.n_v == 0  # last day has no follow-up window
