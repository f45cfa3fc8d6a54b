import itertools

import numpy as np
import pytest

from bcdp.errors import ValidationError
from bcdp.mdp import (
    TabularMDP,
    TabularPolicy,
    bellman_backup,
    delta_start,
    discounted_occupancy,
    expected_return,
    policy_evaluation,
    policy_transition,
    sample_trajectories,
    value_iteration,
)
from conftest import random_mdp

GAMMA = 0.9


def chain_mdp(gamma: float = GAMMA) -> TabularMDP:
    """4-state chain: action 1 moves right (clamped), action 0 left (clamped);
    state 3 absorbs under both actions; reward 1 iff the current state is 3."""
    n = 4
    transition = np.zeros((n, 2, n))
    for s in range(n):
        if s == 3:
            transition[s, :, s] = 1.0
        else:
            transition[s, 0, max(s - 1, 0)] = 1.0
            transition[s, 1, s + 1] = 1.0
    reward = np.zeros((n, 2))
    reward[3, :] = 1.0
    return TabularMDP(transition=transition, reward=reward,
                      initial_dist=delta_start(n, 0), gamma=gamma)


ALWAYS_RIGHT = TabularPolicy.deterministic([1, 1, 1, 1])


class TestValidation:
    def test_rejects_unnormalized_rows(self):
        t = np.zeros((2, 1, 2))
        t[:, :, 0] = 0.5  # rows sum to 0.5
        with pytest.raises(ValidationError):
            TabularMDP(transition=t, reward=np.zeros((2, 1)),
                       initial_dist=[1.0, 0.0], gamma=0.9)

    def test_rejects_reward_outside_unit_interval(self):
        t = np.zeros((1, 1, 1))
        t[0, 0, 0] = 1.0
        with pytest.raises(ValidationError):
            TabularMDP(transition=t, reward=[[1.5]], initial_dist=[1.0], gamma=0.9)

    def test_rejects_gamma_one(self):
        t = np.ones((1, 1, 1))
        with pytest.raises(ValidationError):
            TabularMDP(transition=t, reward=[[0.0]], initial_dist=[1.0], gamma=1.0)

    def test_policy_mdp_dimension_mismatch(self):
        mdp = chain_mdp()
        with pytest.raises(ValidationError):
            policy_evaluation(mdp, TabularPolicy.deterministic([1, 1, 1]))

    def test_policy_action_out_of_range(self):
        mdp = chain_mdp()
        with pytest.raises(ValidationError):
            policy_evaluation(mdp, TabularPolicy.deterministic([2, 1, 1, 1]))

    def test_stochastic_rows_must_normalize(self):
        with pytest.raises(ValidationError):
            TabularPolicy.stochastic([[0.5, 0.4], [0.5, 0.5]])


class TestPolicyEvaluation:
    # Closed form on the chain: V(3) = 1/(1-g); V(s) = g^(3-s)/(1-g) for s < 3.
    def test_chain_geometric_series(self):
        v = policy_evaluation(chain_mdp(), ALWAYS_RIGHT)
        expected = np.array([GAMMA ** 3, GAMMA ** 2, GAMMA, 1.0]) / (1.0 - GAMMA)
        np.testing.assert_allclose(v, expected, atol=1e-9)
        np.testing.assert_allclose(v, [7.29, 8.1, 9.0, 10.0], atol=1e-9)

    def test_chain_against_monte_carlo_rollouts(self, rng):
        # Independent sampling oracle: simulate the chain directly from its arrays.
        mdp = chain_mdp()
        n, horizon = 4000, 300
        returns = np.zeros(n)
        state = np.zeros(n, dtype=int)
        scale = 1.0
        for _ in range(horizon):
            returns += scale * mdp.reward[state, 1]
            cum = np.cumsum(mdp.transition[state, 1], axis=1)
            state = (cum < rng.random(n)[:, None]).sum(axis=1)
            scale *= mdp.gamma
        v0 = policy_evaluation(mdp, ALWAYS_RIGHT)[0]
        se = returns.std(ddof=1) / np.sqrt(n)
        assert abs(returns.mean() - v0) <= 3 * se + 1e-6  # chain is deterministic: se ~ 0

    def test_zero_reward_gives_zero_values(self):
        base = chain_mdp()
        mdp = TabularMDP(transition=base.transition, reward=np.zeros((4, 2)),
                         initial_dist=base.initial_dist, gamma=GAMMA)
        np.testing.assert_array_equal(policy_evaluation(mdp, ALWAYS_RIGHT), np.zeros(4))

    def test_single_absorbing_state(self):
        mdp = TabularMDP(transition=np.ones((1, 1, 1)), reward=[[1.0]],
                         initial_dist=[1.0], gamma=0.5)
        v = policy_evaluation(mdp, TabularPolicy.deterministic([0]))
        np.testing.assert_allclose(v, [2.0], atol=1e-12)

    def test_residual_bound_holds_for_both_methods(self, rng):
        for seed in range(10):
            mdp = random_mdp(np.random.default_rng(seed), 6, 3)
            pol = TabularPolicy.deterministic(np.random.default_rng(seed).integers(0, 3, 6))
            for method in ("solve", "iterate"):
                v = policy_evaluation(mdp, pol, tol=1e-10, method=method)
                residual = np.max(np.abs(v - bellman_backup(mdp, pol, v)))
                assert residual <= 1e-10

    def test_solve_and_iterate_agree_on_seeded_instances(self):
        tol = 1e-10
        for seed in range(50):
            r = np.random.default_rng(seed)
            mdp = random_mdp(r, 8, 3)
            pol = TabularPolicy.stochastic(r.dirichlet(np.ones(3), size=8))
            a = policy_evaluation(mdp, pol, tol=tol, method="solve")
            b = policy_evaluation(mdp, pol, tol=tol, method="iterate")
            assert np.max(np.abs(a - b)) <= 10 * tol


class TestValueIteration:
    def test_chain_matches_exhaustive_policy_enumeration(self):
        # Oracle: evaluate all 2^4 deterministic policies by direct linear solve.
        mdp = chain_mdp()
        best_v = np.full(4, -np.inf)
        for choice in itertools.product(range(2), repeat=4):
            p = np.array([mdp.transition[s, choice[s]] for s in range(4)])
            r = np.array([mdp.reward[s, choice[s]] for s in range(4)])
            v = np.linalg.solve(np.eye(4) - GAMMA * p, r)
            best_v = np.maximum(best_v, v)
        v_star, greedy = value_iteration(mdp, tol=1e-12)
        np.testing.assert_allclose(v_star, best_v, atol=1e-9)
        # Right in 0..2; state 3 is a tie -> lowest index.
        np.testing.assert_array_equal(greedy.actions, [1, 1, 1, 0])

    def test_all_ties_break_to_action_zero(self):
        n = 3
        row = np.full(n, 1.0 / n)
        transition = np.tile(row, (n, 2, 1))
        reward = np.full((n, 2), 0.5)
        mdp = TabularMDP(transition=transition, reward=reward,
                         initial_dist=np.full(n, 1.0 / n), gamma=0.9)
        _, greedy = value_iteration(mdp)
        np.testing.assert_array_equal(greedy.actions, [0, 0, 0])

    def test_error_sequence_contracts_geometrically(self):
        mdp = random_mdp(np.random.default_rng(7), 10, 4)
        v_star, _ = value_iteration(mdp, tol=1e-13)
        v = np.zeros(10)
        prev_err = np.max(np.abs(v - v_star))
        for _ in range(40):
            v = (mdp.reward + mdp.gamma * mdp.transition @ v).max(axis=1)
            err = np.max(np.abs(v - v_star))
            assert err <= mdp.gamma * prev_err + 1e-12
            prev_err = err


class TestExpectedReturn:
    def test_chain_from_delta_start(self):
        assert expected_return(chain_mdp(), ALWAYS_RIGHT) == pytest.approx(7.29, abs=1e-9)

    def test_zero_reward_absorbing_start(self):
        transition = np.zeros((2, 1, 2))
        transition[0, 0, 0] = 1.0
        transition[1, 0, 1] = 1.0
        mdp = TabularMDP(transition=transition, reward=[[0.0], [1.0]],
                         initial_dist=[1.0, 0.0], gamma=0.9)
        assert expected_return(mdp, TabularPolicy.deterministic([0, 0])) == 0.0

    def test_definitional_identity(self):
        mdp = random_mdp(np.random.default_rng(3), 7, 3)
        pol = TabularPolicy.deterministic(np.random.default_rng(3).integers(0, 3, 7))
        assert expected_return(mdp, pol) == pytest.approx(
            float(mdp.initial_dist @ policy_evaluation(mdp, pol)), abs=0)

    def test_reward_shift_raises_return_by_constant(self):
        base = random_mdp(np.random.default_rng(11), 6, 2)
        c = 0.25
        shrunk = TabularMDP(transition=base.transition, reward=base.reward * (1 - c),
                            initial_dist=base.initial_dist, gamma=base.gamma)
        shifted = TabularMDP(transition=base.transition, reward=base.reward * (1 - c) + c,
                             initial_dist=base.initial_dist, gamma=base.gamma)
        pol = TabularPolicy.deterministic([0, 1, 0, 1, 0, 1])
        gap = expected_return(shifted, pol) - expected_return(shrunk, pol)
        assert gap == pytest.approx(c / (1 - base.gamma), abs=1e-9)


class TestDiscountedOccupancy:
    def test_chain_absorbing_mass(self):
        mdp = chain_mdp()
        mass = discounted_occupancy(mdp, ALWAYS_RIGHT, start=delta_start(4, 0))
        # State 3 first reached at t=3: sum_{t>=3} g^t = g^3/(1-g).
        assert mass[3] == pytest.approx(GAMMA ** 3 / (1 - GAMMA), abs=1e-9)
        assert mass[3] == pytest.approx(7.29, abs=1e-9)

    def test_total_mass_is_one_over_one_minus_gamma(self):
        mdp = random_mdp(np.random.default_rng(5), 9, 3)
        pol = TabularPolicy.stochastic(np.random.default_rng(5).dirichlet(np.ones(3), size=9))
        mass = discounted_occupancy(mdp, pol)
        assert mass.sum() == pytest.approx(1 / (1 - mdp.gamma), abs=1e-9)

    def test_absorbing_start_keeps_all_mass(self):
        mdp = chain_mdp()
        mass = discounted_occupancy(mdp, ALWAYS_RIGHT, start=delta_start(4, 3))
        np.testing.assert_allclose(mass, [0, 0, 0, 10.0], atol=1e-9)

    def test_solve_matches_truncated_iteration(self):
        mdp = random_mdp(np.random.default_rng(13), 6, 2)
        pol = TabularPolicy.deterministic([1, 0, 1, 0, 1, 0])
        a = discounted_occupancy(mdp, pol, method="solve")
        b = discounted_occupancy(mdp, pol, method="iterate", tol=1e-12)
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_against_monte_carlo_episodes(self):
        # 1e5 truncated episodes, per-state 3-standard-error agreement.
        rng = np.random.default_rng(0)
        mdp = random_mdp(rng, 5, 2, gamma=0.9)
        pol = TabularPolicy.deterministic([0, 1, 1, 0, 1])
        n, horizon = 100_000, 220  # gamma^220/(1-gamma) ~ 9e-10
        discounts = mdp.gamma ** np.arange(horizon + 1)
        per_episode = np.zeros((n, 5))
        state = (np.cumsum(mdp.initial_dist) < rng.random(n)[:, None]).sum(axis=1)
        trans_cum = np.cumsum(mdp.transition, axis=2)
        for t in range(horizon + 1):
            per_episode[np.arange(n), state] += discounts[t]
            if t < horizon:
                rows = trans_cum[state, pol.actions[state]]
                state = (rows < rng.random(n)[:, None]).sum(axis=1)
        exact = discounted_occupancy(mdp, pol)
        mc = per_episode.mean(axis=0)
        se = per_episode.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(mc - exact) <= 3 * se + 1e-8)


class TestBellmanContraction:
    def test_backup_is_gamma_contraction(self):
        for seed in range(20):
            r = np.random.default_rng(seed)
            mdp = random_mdp(r, 6, 3)
            pol = TabularPolicy.deterministic(r.integers(0, 3, 6))
            v1, v2 = r.normal(size=6) * 10, r.normal(size=6) * 10
            lhs = np.max(np.abs(bellman_backup(mdp, pol, v1) - bellman_backup(mdp, pol, v2)))
            assert lhs <= mdp.gamma * np.max(np.abs(v1 - v2)) + 1e-12


class TestSampling:
    def test_trajectories_follow_deterministic_dynamics(self, rng):
        states, actions = sample_trajectories(chain_mdp(), ALWAYS_RIGHT, 3, 5, rng)
        np.testing.assert_array_equal(states, np.tile([0, 1, 2, 3, 3, 3], (3, 1)))
        np.testing.assert_array_equal(actions, np.ones((3, 5), dtype=int))

    def test_seeded_reproducibility(self):
        mdp = random_mdp(np.random.default_rng(2), 5, 2)
        pol = TabularPolicy.stochastic(np.random.default_rng(2).dirichlet(np.ones(2), size=5))
        a = sample_trajectories(mdp, pol, 4, 6, np.random.default_rng(9))
        b = sample_trajectories(mdp, pol, 4, 6, np.random.default_rng(9))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_marginals_match_policy_transition(self):
        rng = np.random.default_rng(1)
        mdp = random_mdp(rng, 4, 2)
        pol = TabularPolicy.deterministic([0, 1, 0, 1])
        states, _ = sample_trajectories(mdp, pol, 50_000, 1, rng, start=delta_start(4, 2))
        freq = np.bincount(states[:, 1], minlength=4) / 50_000
        p_row = policy_transition(mdp, pol)[2]
        se = np.sqrt(p_row * (1 - p_row) / 50_000)
        assert np.all(np.abs(freq - p_row) <= 3 * se + 1e-3)


class TestSerialization:
    def test_json_round_trip_is_exact(self):
        mdp = random_mdp(np.random.default_rng(21), 5, 3, gamma=0.95)
        clone = TabularMDP.from_json(mdp.to_json())
        np.testing.assert_array_equal(clone.transition, mdp.transition)
        np.testing.assert_array_equal(clone.reward, mdp.reward)
        np.testing.assert_array_equal(clone.initial_dist, mdp.initial_dist)
        assert clone.gamma == mdp.gamma
