"""Exact tabular verification of the return lower bounds.

Everything here is computed by linear solves and forward propagation on a
:class:`~bcdp.mdp.TabularMDP`:

* ``epsilon``: the largest expert-distribution mass on states where the
  evaluated policy disagrees with the expert, over time.
* ``beta``: discounted probability mass of visiting expert-observed states,
  minimized over a start set (all unobserved states, or only those one expert
  step away).
* the completion policy that copies the expert on observed states and
  maximizes that membership mass elsewhere, plus its brute-force check.
* the two return lower bounds and the per-state value-gap inequality, with
  pass flags at fixed tolerance.

Monte-Carlo estimators for the same quantities live here too, so the linear
algebra can be cross-checked against sampling.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .mdp import (
    TabularMDP,
    TabularPolicy,
    delta_start,
    discounted_occupancy,
    expected_return,
    policy_transition,
    sample_trajectories,
    value_iteration,
)

BOUND_TOL = 1e-8
SUPPORT_TOL = 1e-12


def _require_deterministic(policy: TabularPolicy, name: str) -> np.ndarray:
    if policy.kind != "deterministic":
        raise ValidationError(f"{name} must be deterministic")
    return policy.actions


@dataclass(frozen=True)
class TheoryInstance:
    """One verification case: an MDP, its expert, a dataset, and a completion."""

    mdp: TabularMDP
    expert_policy: TabularPolicy
    eval_policy: TabularPolicy
    expert_states: frozenset[int]
    n_expert_traj: int
    horizon: int
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "expert_states", frozenset(int(s) for s in self.expert_states))
        exp = _require_deterministic(self.expert_policy, "expert policy")
        ev = _require_deterministic(self.eval_policy, "eval policy")
        if self.n_expert_traj < 1 or self.horizon < 1:
            raise ValidationError("n_expert_traj and horizon must be >= 1")
        for s in self.expert_states:
            if not (0 <= s < self.mdp.n_states):
                raise ValidationError(f"expert state {s} outside the MDP")
            if ev[s] != exp[s]:
                raise ValidationError(
                    f"eval policy must copy the expert on observed state {s}")

    def member_mask(self) -> np.ndarray:
        mask = np.zeros(self.mdp.n_states, dtype=bool)
        mask[list(self.expert_states)] = True
        return mask


def sample_expert_dataset(mdp: TabularMDP, expert_policy: TabularPolicy,
                          n_traj: int, horizon: int, rng: np.random.Generator):
    """Expert-observed state set plus the raw rollouts that produced it."""
    if n_traj < 1:
        raise ValidationError("n_traj must be >= 1")
    _require_deterministic(expert_policy, "expert policy")
    states, actions = sample_trajectories(mdp, expert_policy, n_traj, horizon, rng)
    return frozenset(int(s) for s in np.unique(states)), (states, actions)


def compute_epsilon(mdp: TabularMDP, expert_policy: TabularPolicy,
                    eval_policy: TabularPolicy, t_max: int | None = None,
                    tol: float = 1e-12) -> float:
    """Max over time of expert-distribution mass on disagreement states.

    The expert state distribution is propagated forward; iteration stops at
    ``t_max`` (default 10 * n_states) or earlier once the distribution is
    stationary within ``tol`` total variation.
    """
    exp = _require_deterministic(expert_policy, "expert policy")
    ev = _require_deterministic(eval_policy, "eval policy")
    if t_max is None:
        t_max = 10 * mdp.n_states
    if t_max < 1:
        raise ValidationError("t_max must be >= 1")
    disagree = (exp != ev).astype(float)
    p = policy_transition(mdp, expert_policy)
    dist = mdp.initial_dist.copy()
    eps = float(dist @ disagree)
    for _ in range(t_max):
        nxt = p.T @ dist
        eps = max(eps, float(nxt @ disagree))
        if 0.5 * np.abs(nxt - dist).sum() < tol:
            break
        dist = nxt
    return eps


def membership_mass(mdp: TabularMDP, policy: TabularPolicy,
                    expert_states) -> np.ndarray:
    """W(s) = sum_{t>=1} gamma^t Pr(s_t in D^E | s_0 = s) by linear solve."""
    member = np.zeros(mdp.n_states)
    member[list(expert_states)] = 1.0
    p = policy_transition(mdp, policy)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p,
                           mdp.gamma * p @ member)


def compute_beta(mdp: TabularMDP, policy: TabularPolicy, expert_states,
                 from_states) -> float | None:
    """Min over the start set of the discounted expert-state visit mass.

    Returns None when the start set is empty; callers then fall back to the
    classical bound without the improvement term.
    """
    from_states = [int(s) for s in from_states]
    if not from_states:
        return None
    w = membership_mass(mdp, policy, expert_states)
    return float(w[from_states].min())


def compute_mis(mdp: TabularMDP, expert_policy: TabularPolicy,
                expert_states) -> frozenset[int]:
    """Unobserved states reachable in one expert action from observed ones."""
    exp = _require_deterministic(expert_policy, "expert policy")
    observed = set(int(s) for s in expert_states)
    out = set()
    for s in observed:
        for s_next in np.flatnonzero(mdp.transition[s, exp[s]] > 0.0):
            if int(s_next) not in observed:
                out.add(int(s_next))
    return frozenset(out)


def proposition1_policy(mdp: TabularMDP, expert_policy: TabularPolicy,
                        expert_states, tol: float = 1e-12) -> TabularPolicy:
    """Copy the expert on observed states; elsewhere maximize the discounted
    expert-state visit mass (ties to the lowest action index)."""
    exp = _require_deterministic(expert_policy, "expert policy")
    observed = np.zeros(mdp.n_states, dtype=bool)
    observed[list(expert_states)] = True
    member = observed.astype(float)
    w = np.zeros(mdp.n_states)
    gap = tol * (1.0 - mdp.gamma) / max(mdp.gamma, 1e-16)
    sidx = np.arange(mdp.n_states)
    while True:
        backup = mdp.gamma * mdp.transition @ (member + w)   # (S, A)
        w_next = backup.max(axis=1)
        w_next[observed] = backup[sidx, exp][observed]
        if np.max(np.abs(w_next - w)) <= gap:
            w = w_next
            break
        w = w_next
    backup = mdp.gamma * mdp.transition @ (member + w)
    actions = backup.argmax(axis=1)
    actions[observed] = exp[observed]
    return TabularPolicy.deterministic(actions)


def brute_force_membership(mdp: TabularMDP, expert_policy: TabularPolicy,
                           expert_states) -> np.ndarray:
    """State-wise max of W over every deterministic completion (oracle path).

    Enumerates all |A|^k completions over the k unobserved states with batched
    linear solves; intended for small instances.
    """
    exp = _require_deterministic(expert_policy, "expert policy")
    unobserved = [s for s in range(mdp.n_states) if s not in set(expert_states)]
    member = np.zeros(mdp.n_states)
    member[list(expert_states)] = 1.0
    base = mdp.transition[np.arange(mdp.n_states), exp].copy()
    if not unobserved:
        p = base
        return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p,
                               mdp.gamma * p @ member)
    combos = list(itertools.product(range(mdp.n_actions), repeat=len(unobserved)))
    k = len(combos)
    p = np.tile(base, (k, 1, 1))
    for j, s in enumerate(unobserved):
        choice = np.array([c[j] for c in combos])
        p[:, s, :] = mdp.transition[s, choice]
    lhs = np.eye(mdp.n_states)[None, :, :] - mdp.gamma * p
    rhs = mdp.gamma * np.einsum("kst,t->ks", p, member)
    w = np.linalg.solve(lhs, rhs[..., None])[..., 0]
    return w.max(axis=0)


def expert_min_reward(mdp: TabularMDP, expert_policy: TabularPolicy) -> float:
    """Smallest expert-action reward over the expert's occupancy support."""
    exp = _require_deterministic(expert_policy, "expert policy")
    mass = discounted_occupancy(mdp, expert_policy)
    support = np.flatnonzero(mass > SUPPORT_TOL)
    return float(mdp.reward[support, exp[support]].min())


@dataclass(frozen=True)
class TheoryReport:
    seed: int | None
    n_states: int
    j_pi: float
    j_expert: float
    epsilon: float
    beta: float | None
    beta_mis: float | None
    r_e: float
    mis_size: int
    rhs_theorem1: float
    rhs_lemma2: float
    holds_theorem1: bool
    holds_lemma2: bool
    flag_theorem1: bool
    flag_lemma2: bool

    @property
    def lhs(self) -> float:
        return self.j_pi

    @property
    def beta_re_flag(self) -> bool:
        return self.flag_theorem1 or self.flag_lemma2

    CSV_HEADER = ("seed,n_states,epsilon,beta,r_e,j_pi,j_expert,"
                  "rhs_t1,rhs_l2,holds_t1,holds_l2,beta_re_flag")

    def csv_row(self) -> str:
        beta = "" if self.beta is None else repr(self.beta)
        return ",".join([
            "" if self.seed is None else str(self.seed), str(self.n_states),
            repr(self.epsilon), beta, repr(self.r_e), repr(self.j_pi),
            repr(self.j_expert), repr(self.rhs_theorem1), repr(self.rhs_lemma2),
            str(int(self.holds_theorem1)), str(int(self.holds_lemma2)),
            str(int(self.beta_re_flag)),
        ])


def theory_report(instance: TheoryInstance, tol: float = BOUND_TOL) -> TheoryReport:
    """All bound quantities for one instance, exactly."""
    mdp = instance.mdp
    g = mdp.gamma
    j_pi = expected_return(mdp, instance.eval_policy)
    j_expert = expected_return(mdp, instance.expert_policy)
    epsilon = compute_epsilon(mdp, instance.expert_policy, instance.eval_policy,
                              t_max=10 * mdp.n_states)
    unobserved = [s for s in range(mdp.n_states) if s not in instance.expert_states]
    beta = compute_beta(mdp, instance.eval_policy, instance.expert_states, unobserved)
    mis = compute_mis(mdp, instance.expert_policy, instance.expert_states)
    beta_mis = compute_beta(mdp, instance.eval_policy, instance.expert_states, mis)
    r_e = expert_min_reward(mdp, instance.expert_policy)

    classical = j_expert - epsilon / (1.0 - g) ** 2
    rhs_t1 = classical
    if beta is not None:
        rhs_t1 = classical + (epsilon / (1.0 - g)) * beta * r_e
    rhs_l2 = classical
    if beta_mis is not None:
        rhs_l2 = classical + g * (epsilon / (1.0 - g)) * beta_mis * r_e

    return TheoryReport(
        seed=instance.seed,
        n_states=mdp.n_states,
        j_pi=j_pi,
        j_expert=j_expert,
        epsilon=epsilon,
        beta=beta,
        beta_mis=beta_mis,
        r_e=r_e,
        mis_size=len(mis),
        rhs_theorem1=rhs_t1,
        rhs_lemma2=rhs_l2,
        holds_theorem1=bool(j_pi >= rhs_t1 - tol),
        holds_lemma2=bool(j_pi >= rhs_l2 - tol),
        flag_theorem1=bool(beta is not None and beta * r_e > 1.0),
        flag_lemma2=bool(beta_mis is not None and beta_mis * r_e > 1.0),
    )


def verify_theorem1(instance: TheoryInstance, tol: float = BOUND_TOL) -> TheoryReport:
    """Check J(pi) >= J(expert) - eps/(1-g)^2 + (eps/(1-g)) * beta * R_E."""
    return theory_report(instance, tol)


def verify_lemma2(instance: TheoryInstance, tol: float = BOUND_TOL) -> TheoryReport:
    """Same bound with a gamma-damped improvement term and beta over Mis."""
    return theory_report(instance, tol)


@dataclass(frozen=True)
class StateGapRecord:
    state: int
    lhs: float                 # V_expert(s) - V_eval(s)
    unobserved_mass: float     # expectation of the off-dataset indicator
    rhs_safe: float            # factor-2 bound (asserted)
    rhs_paper: float           # factor-1 variant (logged)
    holds_safe: bool
    holds_paper: bool


def verify_state_gap(instance: TheoryInstance, s: int,
                     tol: float = BOUND_TOL) -> StateGapRecord:
    """Per-state value-gap inequality against the normalized occupancy from s."""
    if int(s) not in instance.expert_states:
        raise ValidationError(f"state {s} is not expert-observed")
    mdp = instance.mdp
    g = mdp.gamma
    from .mdp import policy_evaluation

    v_exp = policy_evaluation(mdp, instance.expert_policy)
    v_eval = policy_evaluation(mdp, instance.eval_policy)
    lhs = float(v_exp[s] - v_eval[s])
    mass = discounted_occupancy(mdp, instance.expert_policy,
                                start=delta_start(mdp.n_states, int(s)))
    normalized = (1.0 - g) * mass
    outside = float(normalized[~instance.member_mask()].sum())
    rhs_paper = outside / (1.0 - g) ** 2
    rhs_safe = 2.0 * rhs_paper
    return StateGapRecord(
        state=int(s), lhs=lhs, unobserved_mass=outside,
        rhs_safe=rhs_safe, rhs_paper=rhs_paper,
        holds_safe=bool(lhs <= rhs_safe + tol),
        holds_paper=bool(lhs <= rhs_paper + tol),
    )


def random_instance(seed: int, n_states: int, n_actions: int, gamma: float,
                    sparsity: float = 0.3, n_expert_traj: int = 3,
                    horizon: int | None = None) -> TheoryInstance:
    """Seeded random instance: sparse Dirichlet dynamics, uniform rewards,
    value-iteration expert, sampled dataset, completion policy."""
    if n_states < 2 or n_actions < 2:
        raise ValidationError("need n_states >= 2 and n_actions >= 2")
    if not (0.0 < sparsity <= 1.0):
        raise ValidationError("sparsity must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    nnz = max(2, int(round(sparsity * n_states)))
    transition = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            support = rng.choice(n_states, size=nnz, replace=False)
            transition[s, a, support] = rng.dirichlet(np.ones(nnz))
    reward = rng.random((n_states, n_actions))
    initial = rng.dirichlet(np.ones(n_states))
    mdp = TabularMDP(transition=transition, reward=reward,
                     initial_dist=initial, gamma=gamma)
    _, expert = value_iteration(mdp)
    if horizon is None:
        horizon = 10 * n_states  # matches the epsilon propagation horizon
    observed, _ = sample_expert_dataset(mdp, expert, n_expert_traj, horizon, rng)
    eval_policy = proposition1_policy(mdp, expert, observed)
    return TheoryInstance(mdp=mdp, expert_policy=expert, eval_policy=eval_policy,
                          expert_states=observed, n_expert_traj=n_expert_traj,
                          horizon=horizon, seed=seed)


def run_theory_suite(n_instances: int, n_states: int, n_actions: int,
                     gammas=(0.9, 0.95), base_seed: int = 0,
                     sparsity: float = 0.3, n_expert_traj: int = 3):
    """Instances cycled over the discount grid; returns (instance, report) pairs."""
    if n_instances < 1:
        raise ValidationError("n_instances must be >= 1")
    out = []
    for i in range(n_instances):
        gamma = gammas[i % len(gammas)]
        inst = random_instance(base_seed + i, n_states, n_actions, gamma,
                               sparsity=sparsity, n_expert_traj=n_expert_traj)
        out.append((inst, theory_report(inst)))
    return out


# ---- Monte-Carlo oracles ----------------------------------------------------

def _markov_stepper(mdp: TabularMDP, policy: TabularPolicy):
    actions = _require_deterministic(policy, "policy")
    rows_cum = np.cumsum(mdp.transition[np.arange(mdp.n_states), actions], axis=1)

    def step(states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return (rows_cum[states] < rng.random(states.size)[:, None]).sum(axis=1)

    return actions, step


def mc_expected_return(mdp: TabularMDP, policy: TabularPolicy, n: int,
                       horizon: int, rng: np.random.Generator):
    """Sampled discounted return from the initial distribution: (mean, stderr)."""
    actions, step = _markov_stepper(mdp, policy)
    states = (np.cumsum(mdp.initial_dist) < rng.random(n)[:, None]).sum(axis=1)
    totals = np.zeros(n)
    scale = 1.0
    for _ in range(horizon):
        totals += scale * mdp.reward[states, actions[states]]
        states = step(states, rng)
        scale *= mdp.gamma
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(n))


def mc_membership_mass(mdp: TabularMDP, policy: TabularPolicy, expert_states,
                       start_state: int, n: int, horizon: int,
                       rng: np.random.Generator):
    """Sampled W(start_state): discounted expert-state visits from t >= 1."""
    member = np.zeros(mdp.n_states, dtype=bool)
    member[list(expert_states)] = True
    _, step = _markov_stepper(mdp, policy)
    states = np.full(n, int(start_state))
    totals = np.zeros(n)
    scale = mdp.gamma
    for _ in range(horizon):
        states = step(states, rng)
        totals += scale * member[states]
        scale *= mdp.gamma
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(n))


def mc_disagreement_at(mdp: TabularMDP, expert_policy: TabularPolicy,
                       eval_policy: TabularPolicy, t: int, n: int,
                       rng: np.random.Generator):
    """Sampled expert-distribution disagreement mass at one time step."""
    exp = _require_deterministic(expert_policy, "expert policy")
    ev = _require_deterministic(eval_policy, "eval policy")
    disagree = exp != ev
    _, step = _markov_stepper(mdp, expert_policy)
    states = (np.cumsum(mdp.initial_dist) < rng.random(n)[:, None]).sum(axis=1)
    for _ in range(t):
        states = step(states, rng)
    hits = disagree[states].astype(float)
    return float(hits.mean()), float(hits.std(ddof=1) / np.sqrt(n))


def exact_disagreement_curve(mdp: TabularMDP, expert_policy: TabularPolicy,
                             eval_policy: TabularPolicy, t_max: int) -> np.ndarray:
    """e_t for t = 0..t_max by exact forward propagation (argmax gives epsilon)."""
    exp = _require_deterministic(expert_policy, "expert policy")
    ev = _require_deterministic(eval_policy, "eval policy")
    disagree = (exp != ev).astype(float)
    p = policy_transition(mdp, expert_policy)
    dist = mdp.initial_dist.copy()
    curve = [float(dist @ disagree)]
    for _ in range(t_max):
        dist = p.T @ dist
        curve.append(float(dist @ disagree))
    return np.array(curve)
