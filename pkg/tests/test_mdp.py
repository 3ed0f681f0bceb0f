"""Enumerable MDP machinery and the two-item ladder world."""

import numpy as np
import pytest

from habitrec.mdp import (
    EnumerableMDP,
    ToyWorld,
    aggregated_q_exact,
    brute_force_q,
    build_toy,
    deterministic_policy,
    exact_return,
    mixture_policy,
    monte_carlo_q,
    occupancy,
    policy_gradient_check,
    q_of,
    sample_toy_episodes,
    stationary_policy,
    toy_aggregated_q,
    value_of,
)


def small_mdp(P, R, mu0, gamma):
    P = np.asarray(P, float)
    labels = tuple(f"a{i}" for i in range(P.shape[0]))
    states = tuple(range(P.shape[1]))
    return EnumerableMDP(
        P=P,
        R=np.asarray(R, float),
        mu0=np.asarray(mu0, float),
        gamma=gamma,
        action_labels=labels,
        state_labels=states,
    )


def single_state_mdp(gamma=0.5, reward=1.0):
    return small_mdp(np.ones((1, 1, 1)), [[reward]], [1.0], gamma)


def swap_chain(gamma=0.5):
    # one action, two states that alternate forever
    P = [[[0.0, 1.0], [1.0, 0.0]]]
    R = [[-0.5, 2.5]]
    return small_mdp(P, R, [1.0, 0.0], gamma)


# ---------------------------------------------------------------------------
# solves
# ---------------------------------------------------------------------------


def test_mdp_validation():
    with pytest.raises(ValueError):
        small_mdp(np.full((1, 1, 1), 0.9), np.ones((1, 1)), [1.0], 0.5)
    with pytest.raises(ValueError):
        small_mdp(np.ones((1, 1, 1)), np.ones((1, 2)), [1.0], 0.5)
    with pytest.raises(ValueError):
        small_mdp(np.ones((1, 1, 1)), np.ones((1, 1)), [0.4], 0.5)
    with pytest.raises(ValueError):
        single_state_mdp(gamma=1.0)


def test_single_state_geometric_value():
    mdp = single_state_mdp(gamma=0.5)
    pi = stationary_policy(mdp, [1.0])
    assert value_of(mdp, pi)[0] == pytest.approx(2.0)
    assert exact_return(mdp, pi) == pytest.approx(2.0)
    assert q_of(mdp, value_of(mdp, pi))[0, 0] == pytest.approx(2.0)

    myopic = single_state_mdp(gamma=1e-12)
    assert value_of(myopic, stationary_policy(myopic, [1.0]))[0] == pytest.approx(1.0)


def test_swap_chain_values_by_hand():
    mdp = swap_chain()
    pi = stationary_policy(mdp, [1.0])
    V = value_of(mdp, pi)
    assert V == pytest.approx([1.0, 3.0])
    assert brute_force_q(mdp, pi, 0, 0) == pytest.approx(1.0)
    assert brute_force_q(mdp, pi, 1, 0) == pytest.approx(3.0)


def test_occupancy_masses():
    mdp = swap_chain(gamma=0.5)
    pi = stationary_policy(mdp, [1.0])
    raw, nu = occupancy(mdp, pi)
    assert raw.sum() == pytest.approx(2.0)      # 1 / (1 - gamma)
    assert nu.sum() == pytest.approx(1.0)
    # alternating chain from state 0: mass 1/(1+gamma) on the start state
    assert nu[0] == pytest.approx(2.0 / 3.0)
    assert nu[1] == pytest.approx(1.0 / 3.0)


def test_aggregated_q_pools_by_occupancy():
    mdp = swap_chain()
    pi = stationary_policy(mdp, [1.0])
    per_state = aggregated_q_exact(mdp, pi, [0, 1])
    assert per_state[:, 0] == pytest.approx([1.0, 3.0])
    pooled = aggregated_q_exact(mdp, pi, [0, 0])
    assert pooled[0, 0] == pytest.approx(2.0 / 3.0 * 1.0 + 1.0 / 3.0 * 3.0)
    with pytest.raises(ValueError):
        aggregated_q_exact(mdp, pi, [0])


def test_aggregated_q_rejects_unvisited_clusters():
    P = np.zeros((1, 2, 2))
    P[0, 0, 0] = 1.0
    P[0, 1, 1] = 1.0  # state 1 absorbing but never entered
    mdp = small_mdp(P, np.zeros((1, 2)), [1.0, 0.0], 0.5)
    with pytest.raises(ValueError):
        aggregated_q_exact(mdp, stationary_policy(mdp, [1.0]), [0, 1])


def test_mixture_policy_interpolates():
    mdp = swap_chain()
    a = stationary_policy(mdp, [1.0])
    b = np.zeros_like(a)
    assert np.array_equal(mixture_policy(b, a, 0.0), a)
    assert np.array_equal(mixture_policy(b, a, 1.0), b)
    with pytest.raises(ValueError):
        mixture_policy(b, a, 1.5)


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------


def test_gradient_check_validates_betas(toy_world):
    pi = toy_world.pi0()
    with pytest.raises(ValueError):
        policy_gradient_check(toy_world.mdp, pi, pi, [0.0, 0.1])
    with pytest.raises(ValueError):
        policy_gradient_check(toy_world.mdp, pi, pi, [0.5, 1.1])


def test_gradient_check_is_exact_for_identical_policies(toy_world):
    pi = toy_world.pi0()
    report = policy_gradient_check(toy_world.mdp, pi, pi, [0.1, 0.2, 0.4])
    assert np.allclose(report.deltas, 0.0)
    assert np.allclose(report.predictions, 0.0)


def test_gradient_check_remainder_is_second_order(toy_world):
    mdp = toy_world.mdp
    pi0 = toy_world.pi0()
    greedy = deterministic_policy(
        mdp, np.argmax(q_of(mdp, value_of(mdp, pi0)), axis=1)
    )
    report = policy_gradient_check(mdp, pi0, greedy, [0.05, 0.1, 0.2])
    assert np.all(report.deltas >= -1e-12)
    assert 1.7 < report.slope < 2.3


# ---------------------------------------------------------------------------
# the ladder world
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_world() -> ToyWorld:
    return build_toy()


def test_toy_structure(toy_world):
    mdp = toy_world.mdp
    m, C = toy_world.n_levels, toy_world.n_clusters
    assert mdp.n_states == C * m * m
    assert mdp.n_actions == 3
    assert np.allclose(mdp.P.sum(axis=2), 1.0)
    assert np.all((toy_world.listen_p >= 0.02) & (toy_world.listen_p <= 0.95))
    # recommendation never hurts the listen chance
    assert np.all(toy_world.listen_p[..., 1] >= toy_world.listen_p[..., 0])
    # starts concentrate on the cold state of each cluster
    cold = [toy_world.state_index(c, 0, 0) for c in range(C)]
    assert mdp.mu0.sum() == pytest.approx(1.0)
    assert mdp.mu0[cold].sum() == pytest.approx(1.0)
    assert toy_world.phi.tolist() == [
        toy_world.state_label(s)[0] for s in range(mdp.n_states)
    ]


def test_toy_aggregated_matches_exact(toy_world):
    got = toy_aggregated_q(toy_world)
    want = aggregated_q_exact(toy_world.mdp, toy_world.pi0(), toy_world.phi)
    assert np.allclose(got, want)
    assert got.shape == (toy_world.n_clusters, 3)


def test_monte_carlo_q_agrees_with_linear_solve(toy_world):
    s = toy_world.state_index(1, 2, 1)
    exact = brute_force_q(toy_world.mdp, toy_world.pi0(), s, 1)
    mean, se = monte_carlo_q(toy_world, s, 1, n_episodes=3000, seed=13)
    assert abs(mean - exact) < 3.0 * se
    assert se < 0.5


def test_sample_toy_episodes_shape_and_determinism(toy_world):
    eps_a = sample_toy_episodes(toy_world, 20, seed=3)
    eps_b = sample_toy_episodes(toy_world, 20, seed=3)
    assert len(eps_a) == 20
    for ea, eb in zip(eps_a, eps_b):
        assert len(ea) == len(eb)
        for sa, sb in zip(ea, eb):
            assert sa.star_item == sb.star_item
            assert sa.reward == sb.reward
            assert sa.state.relationships == sb.state.relationships
    flat = [s for ep in eps_a for s in ep]
    assert {s.star_item for s in flat} <= {None, 0, 1}
    assert all(r in (0.0, 1.0, 2.0) for r in (s.reward for s in flat))
    assert any(s.star_item is None for s in flat)


def test_toy_product_advantage_uses_the_ladder_neighbours(toy_world):
    # at the top rung the climb saturates; the formula must clip, not index out
    top = toy_world.state_index(0, toy_world.n_levels - 1, 0)
    val = toy_world.product_advantage(top, 0)
    assert np.isfinite(val)
    user = toy_world.state_to_user(top)
    assert user.relationships[0] == (1.0,)
    assert user.relationships.get(1, (0.0,)) == (0.0,)
