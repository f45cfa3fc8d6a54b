import numpy as np
import pytest

from bcdp.mdp import TabularMDP


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float = 0.9) -> TabularMDP:
    """Dense random MDP with Dirichlet transition rows, for property tests."""
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    reward = rng.random((n_states, n_actions))
    initial = rng.dirichlet(np.ones(n_states))
    return TabularMDP(transition=transition, reward=reward, initial_dist=initial, gamma=gamma)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
