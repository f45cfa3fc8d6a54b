"""Finite tabular MDPs and exact dynamic-programming primitives.

States and actions are integer indices. Transition tensors are indexed
[s][a][s'], rewards [s][a] with values in [0, 1]. All operations are pure
functions of immutable inputs; arrays are locked after construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

PROB_TOL = 1e-12
DEFAULT_TOL = 1e-10


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TabularMDP:
    """A finite discounted MDP: transition tensor, reward table, start distribution."""

    transition: np.ndarray  # (S, A, S), rows sum to 1
    reward: np.ndarray      # (S, A), values in [0, 1]
    initial_dist: np.ndarray  # (S,), sums to 1
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))
        t, r, d0 = self.transition, self.reward, self.initial_dist
        if t.ndim != 3 or t.shape[0] != t.shape[2]:
            raise ValidationError(f"transition must be (S, A, S), got {t.shape}")
        s, a = t.shape[0], t.shape[1]
        if s < 1 or a < 1:
            raise ValidationError("need at least one state and one action")
        if r.shape != (s, a):
            raise ValidationError(f"reward must be {(s, a)}, got {r.shape}")
        if d0.shape != (s,):
            raise ValidationError(f"initial_dist must be ({s},), got {d0.shape}")
        if np.any(t < 0) or np.max(np.abs(t.sum(axis=2) - 1.0)) > PROB_TOL:
            raise ValidationError("transition rows must be probability vectors")
        if np.any(r < 0) or np.any(r > 1):
            raise ValidationError("rewards must lie in [0, 1]")
        if np.any(d0 < 0) or abs(d0.sum() - 1.0) > PROB_TOL:
            raise ValidationError("initial_dist must be a probability vector")
        if not (0.0 < self.gamma < 1.0):
            raise ValidationError("gamma must lie in (0, 1)")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def to_json(self) -> str:
        doc = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TabularMDP":
        doc = json.loads(text)
        mdp = cls(
            transition=np.array(doc["transition"], dtype=float),
            reward=np.array(doc["reward"], dtype=float),
            initial_dist=np.array(doc["initial_dist"], dtype=float),
            gamma=float(doc["gamma"]),
        )
        if mdp.n_states != doc["n_states"] or mdp.n_actions != doc["n_actions"]:
            raise ValidationError("declared sizes disagree with array shapes")
        return mdp


@dataclass(frozen=True)
class TabularPolicy:
    """A deterministic (one action per state) or stochastic (row-distribution) policy."""

    kind: str  # "deterministic" | "stochastic"
    actions: np.ndarray | None = None  # (S,) ints, deterministic only
    probs: np.ndarray | None = None    # (S, A), stochastic only

    def __post_init__(self):
        if self.kind == "deterministic":
            if self.actions is None:
                raise ValidationError("deterministic policy needs an action array")
            object.__setattr__(self, "actions", _frozen(self.actions, dtype=int))
            if self.actions.ndim != 1 or np.any(self.actions < 0):
                raise ValidationError("actions must be a 1-D array of action indices")
        elif self.kind == "stochastic":
            if self.probs is None:
                raise ValidationError("stochastic policy needs a probability matrix")
            object.__setattr__(self, "probs", _frozen(self.probs))
            p = self.probs
            if p.ndim != 2 or np.any(p < 0) or np.max(np.abs(p.sum(axis=1) - 1.0)) > PROB_TOL:
                raise ValidationError("policy rows must be probability vectors")
        else:
            raise ValidationError(f"unknown policy kind {self.kind!r}")

    @classmethod
    def deterministic(cls, actions) -> "TabularPolicy":
        return cls(kind="deterministic", actions=np.asarray(actions, dtype=int))

    @classmethod
    def stochastic(cls, probs) -> "TabularPolicy":
        return cls(kind="stochastic", probs=np.asarray(probs, dtype=float))

    @property
    def n_states(self) -> int:
        return len(self.actions) if self.kind == "deterministic" else self.probs.shape[0]

    def action_probs(self, n_actions: int) -> np.ndarray:
        """Policy as an (S, A) row-stochastic matrix regardless of kind."""
        if self.kind == "stochastic":
            if self.probs.shape[1] != n_actions:
                raise ValidationError("policy action dimension mismatch")
            return self.probs
        if np.any(self.actions >= n_actions):
            raise ValidationError("policy selects an action outside the MDP")
        out = np.zeros((self.n_states, n_actions))
        out[np.arange(self.n_states), self.actions] = 1.0
        return out


def _check_compatible(mdp: TabularMDP, policy: TabularPolicy) -> None:
    if policy.n_states != mdp.n_states:
        raise ValidationError(
            f"policy covers {policy.n_states} states, MDP has {mdp.n_states}"
        )
    if policy.kind == "deterministic" and np.any(policy.actions >= mdp.n_actions):
        raise ValidationError("policy selects an action outside the MDP")


def policy_transition(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    """State-to-state transition matrix (S, S) induced by the policy."""
    _check_compatible(mdp, policy)
    if policy.kind == "deterministic":
        return mdp.transition[np.arange(mdp.n_states), policy.actions]
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def policy_reward(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    """Expected one-step reward per state (S,) under the policy."""
    _check_compatible(mdp, policy)
    if policy.kind == "deterministic":
        return mdp.reward[np.arange(mdp.n_states), policy.actions]
    return np.einsum("sa,sa->s", policy.probs, mdp.reward)


def bellman_backup(mdp: TabularMDP, policy: TabularPolicy, values: np.ndarray) -> np.ndarray:
    """One application of the policy Bellman operator B^pi."""
    return policy_reward(mdp, policy) + mdp.gamma * policy_transition(mdp, policy) @ values


def policy_evaluation(
    mdp: TabularMDP,
    policy: TabularPolicy,
    tol: float = DEFAULT_TOL,
    method: str = "solve",
) -> np.ndarray:
    """Value of a fixed policy, with Bellman residual at most ``tol``.

    ``method="solve"`` inverts (I - gamma P_pi) directly; ``method="iterate"``
    applies the backup until the residual bound is met. Both are exposed so
    tests can cross-check one against the other.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    p = policy_transition(mdp, policy)
    r = policy_reward(mdp, policy)
    if method == "solve":
        return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p, r)
    if method == "iterate":
        v = np.zeros(mdp.n_states)
        while True:
            v_next = r + mdp.gamma * p @ v
            if mdp.gamma * np.max(np.abs(v_next - v)) <= tol:
                return v_next
            v = v_next
    raise ValidationError(f"unknown method {method!r}")


def value_iteration(
    mdp: TabularMDP, tol: float = DEFAULT_TOL
) -> tuple[np.ndarray, TabularPolicy]:
    """Optimal values within ``tol`` plus the greedy policy (ties -> lowest index)."""
    if tol <= 0:
        raise ValidationError("tol must be positive")
    v = np.zeros(mdp.n_states)
    gap = tol * (1.0 - mdp.gamma) / max(mdp.gamma, 1e-16)
    while True:
        q = mdp.reward + mdp.gamma * mdp.transition @ v
        v_next = q.max(axis=1)
        if np.max(np.abs(v_next - v)) <= gap:
            break
        v = v_next
    q = mdp.reward + mdp.gamma * mdp.transition @ v_next
    greedy = TabularPolicy.deterministic(q.argmax(axis=1))
    return v_next, greedy


def expected_return(mdp: TabularMDP, policy: TabularPolicy) -> float:
    """Discounted return J(pi) from the initial distribution."""
    return float(mdp.initial_dist @ policy_evaluation(mdp, policy))


def discounted_occupancy(
    mdp: TabularMDP,
    policy: TabularPolicy,
    start: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    method: str = "solve",
) -> np.ndarray:
    """Unnormalized discounted state-visit mass sum_t gamma^t Pr(s_t = s).

    Total mass is 1/(1 - gamma) for a proper start distribution. ``start``
    defaults to the MDP's initial distribution.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    d0 = mdp.initial_dist if start is None else np.asarray(start, dtype=float)
    if d0.shape != (mdp.n_states,) or np.any(d0 < 0) or abs(d0.sum() - 1.0) > 1e-9:
        raise ValidationError("start must be a probability vector over states")
    p = policy_transition(mdp, policy)
    if method == "solve":
        return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p.T, d0)
    if method == "iterate":
        # Truncate once the remaining tail gamma^T/(1-gamma) drops below tol.
        mass = d0.copy()
        dist = d0.copy()
        scale = mdp.gamma
        while scale / (1.0 - mdp.gamma) > tol:
            dist = p.T @ dist
            mass += scale * dist
            scale *= mdp.gamma
        return mass
    raise ValidationError(f"unknown method {method!r}")


def delta_start(n_states: int, state: int) -> np.ndarray:
    """Point-mass start distribution on one state."""
    d = np.zeros(n_states)
    d[state] = 1.0
    return d


def sample_trajectories(
    mdp: TabularMDP,
    policy: TabularPolicy,
    n_traj: int,
    horizon: int,
    rng: np.random.Generator,
    start: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Roll the policy for ``horizon`` steps in ``n_traj`` parallel chains.

    Returns (states, actions) with shapes (n_traj, horizon + 1) and
    (n_traj, horizon). Useful as a Monte-Carlo oracle against the exact
    linear-algebra paths.
    """
    if n_traj < 1 or horizon < 1:
        raise ValidationError("need n_traj >= 1 and horizon >= 1")
    _check_compatible(mdp, policy)
    d0 = mdp.initial_dist if start is None else np.asarray(start, dtype=float)
    cum0 = np.cumsum(d0)
    states = np.empty((n_traj, horizon + 1), dtype=np.int64)
    actions = np.empty((n_traj, horizon), dtype=np.int64)
    states[:, 0] = np.searchsorted(cum0, rng.random(n_traj), side="right")
    trans_cum = np.cumsum(mdp.transition, axis=2)
    probs = policy.action_probs(mdp.n_actions)
    pol_cum = np.cumsum(probs, axis=1)
    for t in range(horizon):
        s = states[:, t]
        if policy.kind == "deterministic":
            a = policy.actions[s]
        else:
            a = (pol_cum[s] < rng.random(n_traj)[:, None]).sum(axis=1)
        actions[:, t] = a
        rows = trans_cum[s, a]
        states[:, t + 1] = (rows < rng.random(n_traj)[:, None]).sum(axis=1)
    return states, actions
