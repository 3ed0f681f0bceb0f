"""Promotion-value scores: product forms, the general decomposition, ranking."""

import numpy as np
import pytest

from habitrec.core import DataError, DayContext, UserState, successor_states
from habitrec.models import CellStats, ClickinessModel, ResurfacingTables, StickinessModel
from habitrec.qvalue import (
    ARMS,
    MissingCellError,
    ScoreModels,
    ScorePolicy,
    argmax_item,
    q_discovery,
    q_general_decomposed,
    q_resurfacing,
)


def user_at(z, item=0, taste=(1.0, 0.0)):
    return UserState(
        taste=taste,
        context=DayContext(day_of_week=0, recency=0.0),
        relationships={item: z},
    )


# ---------------------------------------------------------------------------
# product scores
# ---------------------------------------------------------------------------


def test_q_discovery_values():
    assert q_discovery(0.2, 3.0) == pytest.approx(0.8)
    assert q_discovery(0.5, 0.0) == 0.5
    # a first listen is never worth less than itself
    assert q_discovery(0.5, -2.0) == 0.5
    with pytest.raises(ValueError):
        q_discovery(1.5, 1.0)
    with pytest.raises(ValueError):
        q_discovery(-0.1, 1.0)


def stocked_tables(p_star, p_org, v_here, v_up, v_down):
    alpha = (0.5, 0.9)
    tables = ResurfacingTables(item=0, alpha=alpha)
    z = (0.0, 0.0)
    z_up, z_down = successor_states(z, alpha)

    def fill(state, v):
        from habitrec.models import grid_cell

        tables.cells[grid_cell(state, alpha)] = CellStats(
            n_rec=10,
            rec_listens=int(round(10 * p_star)),
            n_norec=10,
            norec_listens=int(round(10 * p_org)),
            n_v=1,
            v_sum=v,
        )

    fill(z, v_here)
    fill(z_up, v_up)
    fill(z_down, v_down)
    return tables, z


def test_q_resurfacing_hand_value():
    # uplift 0.3, listened continuation 3, missed continuation 0
    tables, z = stocked_tables(p_star=0.3, p_org=0.0, v_here=0.0, v_up=3.0, v_down=0.0)
    assert q_resurfacing(tables, z) == pytest.approx(0.3 * 4.0)


def test_q_resurfacing_no_uplift_no_value():
    tables, z = stocked_tables(p_star=0.0, p_org=0.4, v_here=1.0, v_up=9.0, v_down=0.0)
    assert q_resurfacing(tables, z) == 0.0


def test_q_resurfacing_equal_continuations_leave_the_listen():
    tables, z = stocked_tables(p_star=0.5, p_org=0.0, v_here=2.0, v_up=2.0, v_down=2.0)
    uplift = tables.p_rec(z) - tables.p_norec(z)
    assert q_resurfacing(tables, z) == pytest.approx(uplift * 1.0)


def test_q_resurfacing_missing_cell_propagates():
    tables = ResurfacingTables(item=0, alpha=(0.5, 0.9))
    with pytest.raises(MissingCellError):
        q_resurfacing(tables, (0.0, 0.0))


# ---------------------------------------------------------------------------
# general decomposition
# ---------------------------------------------------------------------------


def test_q_general_reduces_to_discovery_product():
    # fresh item, value linear in nothing: V(z) = stickiness once listened
    alpha = (0.5, 0.9)
    click_p, stick = 0.2, 3.0
    user = user_at((0.0, 0.0))

    def short_term(u, item):
        return click_p, 0.0

    def value_fn(z):
        return stick if z[0] > 0 else 0.0

    got = q_general_decomposed(user, 0, short_term, value_fn, gamma=1.0, alpha=alpha)
    assert got == pytest.approx(q_discovery(click_p, stick))


def test_q_general_zero_uplift_is_zero():
    user = user_at((0.3, 0.3))
    got = q_general_decomposed(
        user,
        0,
        short_term=lambda u, i: (0.4, 0.4),
        value_fn=lambda z: 100.0 * z[0],
        gamma=0.9,
        alpha=(0.5, 0.9),
    )
    assert got == 0.0


def test_q_general_discounts_both_continuations():
    alpha = (0.5,)
    user = user_at((0.4,))
    gamma = 0.9
    z_up, z_dn = successor_states((0.4,), alpha)
    value_fn = lambda z: 2.0 * z[0]  # noqa: E731
    got = q_general_decomposed(
        user, 0, lambda u, i: (0.6, 0.1), value_fn, gamma, alpha=alpha, reward=2.0
    )
    want = 0.5 * ((2.0 + gamma * value_fn(z_up)) - gamma * value_fn(z_dn))
    assert got == pytest.approx(want)


def test_q_general_needs_a_state_dimension():
    user = UserState(
        taste=(1.0,), context=DayContext(day_of_week=0, recency=0.0), relationships={}
    )
    with pytest.raises(ValueError):
        q_general_decomposed(user, 0, lambda u, i: (0.5, 0.0), lambda z: 0.0, 0.9)


# ---------------------------------------------------------------------------
# ranking arms
# ---------------------------------------------------------------------------


def make_models(n_items=4, d=2, thetas=None, vbars=None, w0=1.0):
    weights = np.zeros(10)
    weights[0] = w0
    click = ClickinessModel(weights=weights, final_loss=0.0, initial_loss=0.0)
    nu = np.zeros((n_items, d))
    nu[:, 0] = np.linspace(-1.0, 1.0, n_items)
    stick = {
        item: StickinessModel(
            item=item, theta=np.asarray(theta, float), lam=1.0, prior_mean=np.zeros(d)
        )
        for item, theta in (thetas or {}).items()
    }
    return ScoreModels(click=click, stickiness=stick, vbar=dict(vbars or {}), nu=nu)


def test_score_models_arms_disagree_on_purpose():
    # item 3 has the best click score; item 0 has all the stickiness
    models = make_models(thetas={0: (4.0, 0.0)}, vbars={0: 4.0, 1: 0.0, 2: 0.0, 3: 0.0})
    user = user_at((0.0, 0.0), taste=(1.0, 0.0))
    pool = [0, 1, 2, 3]

    def pick(arm):
        scores = models.scores(user.taste, user.context, arm)
        return argmax_item(pool, scores[pool])

    assert pick("control") == 3
    assert pick("personalized") == 0
    assert pick("unpersonalized") == 0
    assert pick("square-root") == 0


def test_score_models_square_root_damps_the_lift():
    models = make_models(vbars={0: 4.0, 3: 0.0})
    lift = models.lifetime_lift((1.0, 0.0), "square-root")
    full = models.lifetime_lift((1.0, 0.0), "unpersonalized")
    assert lift[0] == pytest.approx(3.0)
    assert full[0] == pytest.approx(5.0)


def test_score_models_personalized_clips_negative_fits():
    models = make_models(thetas={0: (-5.0, 0.0)})
    lift = models.lifetime_lift((1.0, 0.0), "personalized")
    assert lift[0] == 1.0


def test_score_models_equal_stickiness_collapses_the_arms():
    # same lift everywhere: every arm ranks purely by click probability
    models = make_models(
        thetas={i: (0.0, 0.0) for i in range(4)}, vbars={i: 0.0 for i in range(4)}
    )
    user = user_at((0.0, 0.0))
    pool = [0, 1, 2, 3]
    picks = {
        arm: argmax_item(pool, models.scores(user.taste, user.context, arm)[pool])
        for arm in ARMS
    }
    assert len(set(picks.values())) == 1


def test_score_models_validation():
    with pytest.raises(DataError):
        make_models(thetas={0: (1.0, 0.0, 0.0)})
    with pytest.raises(DataError):
        make_models(vbars={1: -0.5})
    models = make_models()
    with pytest.raises(ValueError):
        models.lifetime_lift((1.0, 0.0), "bespoke")


def test_unknown_items_fall_back_to_pooled_mean():
    models = make_models(vbars={0: 2.0, 1: 4.0})
    lift = models.lifetime_lift((1.0, 0.0), "unpersonalized")
    assert lift[2] == pytest.approx(4.0)  # 1 + pooled mean 3


def test_argmax_item_tie_breaks_to_lowest_id():
    assert argmax_item([4, 2, 7], [1.0, 1.0, 0.5]) == 2
    assert argmax_item([9], [0.0]) == 9
    with pytest.raises(ValueError):
        argmax_item([], [])
    with pytest.raises(ValueError):
        argmax_item([1, 2], [0.5])


def test_score_policy_validates_arm():
    models = make_models()
    with pytest.raises(ValueError):
        ScorePolicy(models, "bespoke")
