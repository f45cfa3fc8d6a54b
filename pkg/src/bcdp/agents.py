"""Offline trainers: behavioral cloning, BC plus dynamic programming, and UDS.

All trainers are scikit-learn style estimators: constructor arguments are
hyperparameters stored verbatim, ``fit`` consumes demosets, fitted state lands
in trailing-underscore attributes, and ``predict`` maps state rows to actions.

Two backends are selected from the dataset encoding header: ``index`` data
trains exact tables (softmax actor over per-state logits, twin Q-tables) and
``continuous`` data trains dense networks (tanh actor, twin critics). A
training step samples an expert and an offline minibatch, regresses both
critics toward the min-of-targets backup, and updates the actor with the
cloning gradient plus ``alpha`` times the critic gradient, the latter only
every ``t_freq`` steps together with the delayed-network soft updates.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator

from .data import Demoset
from .errors import ValidationError
from .mazes import ContinuousMazeEnv, DiscreteMazeEnv
from .metrics import rollout_eval
from .nets import (
    DenseNet,
    adam_update,
    backward,
    forward,
    forward_cached,
    init_adam,
    init_net,
    loss_and_grad,
    net_from_doc,
    net_to_doc,
    soft_update,
)

ALPHA_GUARD = 1e-8


@dataclass(frozen=True)
class TrainLogEntry:
    step: int
    critic_loss: float
    bc_loss: float
    q_term: float
    alpha: float
    eval_return: float | None = None


class TrainLog:
    """Per-step training records, exportable as CSV."""

    def __init__(self):
        self.entries: list[TrainLogEntry] = []

    def append(self, entry: TrainLogEntry) -> None:
        if self.entries and entry.step <= self.entries[-1].step:
            raise ValidationError("log steps must strictly increase")
        self.entries.append(entry)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "critic_loss", "bc_loss", "q_term",
                             "alpha", "eval_return"])
            for e in self.entries:
                writer.writerow([
                    e.step, repr(e.critic_loss), repr(e.bc_loss), repr(e.q_term),
                    repr(e.alpha), "" if e.eval_return is None else repr(e.eval_return),
                ])


def alpha_auto(l_bc: float, l_q: float, mode: str = "balance") -> float:
    """Balance factor between the cloning and critic gradients.

    ``balance`` matches the scaled critic-term magnitude to the cloning term;
    ``literal`` is the plain batch-loss quotient (Q loss over BC loss).
    """
    if not (np.isfinite(l_bc) and np.isfinite(l_q)):
        raise ValidationError("loss terms must be finite")
    if mode == "balance":
        return abs(l_bc) / (abs(l_q) + ALPHA_GUARD)
    if mode == "literal":
        denom = l_bc if abs(l_bc) > ALPHA_GUARD else ALPHA_GUARD
        return l_q / denom
    raise ValidationError(f"unknown alpha mode {mode!r}")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class _ArrayAdam:
    """Adam on a single table; same update rule as the network optimizer."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def update(self, param: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m, self.v = np.zeros_like(param), np.zeros_like(param)
        self.step += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.step)
        vhat = self.v / (1 - self.beta2 ** self.step)
        param -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        if not np.all(np.isfinite(param)):
            raise ValidationError("non-finite table parameters after update")


def _resolve_weights(ds: Demoset, sample_weight) -> np.ndarray:
    n = ds.n_transitions
    if sample_weight is None:
        return np.ones(n)
    if callable(sample_weight):
        w = np.array([float(sample_weight(r.s, r.a)) for r in ds.transitions()])
    else:
        w = np.asarray(sample_weight, dtype=float)
    if w.shape != (n,):
        raise ValidationError(f"need one weight per transition ({n}), got {w.shape}")
    if np.any(w < 0) or np.any(w > 1):
        raise ValidationError("per-sample weights must lie in [0, 1]")
    return w


def _tabular_arrays(ds: Demoset):
    arrays = ds.stacked()
    return (arrays["s"][:, 0].astype(int), arrays["a"][:, 0].astype(int),
            arrays["sn"][:, 0].astype(int), arrays["done"],
            arrays.get("r"))


def _infer_sizes(datasets, n_states, n_actions):
    """Table sizes from explicit values or the max index across all datasets."""
    datasets = [ds for ds in datasets if ds is not None]
    arrays = [_tabular_arrays(ds) for ds in datasets]
    max_s = max(int(max(s.max(), sn.max())) for s, _, sn, _, _ in arrays)
    max_a = max(int(a.max()) for _, a, _, _, _ in arrays)
    min_s = min(int(min(s.min(), sn.min())) for s, _, sn, _, _ in arrays)
    n_states = max_s + 1 if n_states is None else n_states
    n_actions = max_a + 1 if n_actions is None else n_actions
    if min_s < 0 or max_s >= n_states or max_a >= n_actions:
        raise ValidationError("state or action indices exceed the declared sizes")
    return n_states, n_actions


def _ce_loss_and_grad(logits, s, a, w, n_states):
    """Weighted softmax cross-entropy over sampled rows; dense table gradient."""
    rows = logits[s]
    p = _softmax_rows(rows)
    n = len(s)
    nll = -np.log(np.maximum(p[np.arange(n), a], 1e-300))
    loss = float(np.mean(w * nll))
    d_rows = p.copy()
    d_rows[np.arange(n), a] -= 1.0
    d_rows *= (w / n)[:, None]
    grad = np.zeros_like(logits)
    np.add.at(grad, s, d_rows)
    return loss, grad


class BehavioralCloner(BaseEstimator):
    """Supervised imitation of demonstrated actions, optionally sample-weighted.

    Weighting generalizes plain cloning: a zero weight removes a transition's
    pull entirely, so cloning-on-expert-only and cloning-on-everything are the
    two endpoints of the same objective.
    """

    def __init__(self, hidden_dims=(64, 64), training_steps=2000, batch_size=256,
                 lr=1e-3, action_bound=1.0, seed=0):
        self.hidden_dims = hidden_dims
        self.training_steps = training_steps
        self.batch_size = batch_size
        self.lr = lr
        self.action_bound = action_bound
        self.seed = seed

    def fit(self, data: Demoset, sample_weight=None, n_states=None, n_actions=None):
        if self.training_steps < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValidationError("training_steps, batch_size and lr must be positive")
        w = _resolve_weights(data, sample_weight)
        self.train_log_ = TrainLog()
        rng = np.random.default_rng(self.seed)
        if data.encoding == "index":
            self._fit_tabular(data, w, rng, n_states, n_actions)
        elif data.encoding == "continuous":
            self._fit_continuous(data, w, rng)
        else:
            raise ValidationError(
                "xy-encoded discrete data has no trainer backend; use 'index'")
        return self

    def _fit_tabular(self, data, w, rng, n_states, n_actions):
        n_states, n_actions = _infer_sizes([data], n_states, n_actions)
        s, a, _, _, _ = _tabular_arrays(data)
        pool = np.flatnonzero(w > 0)  # zero-weight rows contribute nothing
        if pool.size == 0:
            raise ValidationError("all sample weights are zero")
        logits = np.zeros((n_states, n_actions))
        adam = _ArrayAdam(self.lr)
        for t in range(1, self.training_steps + 1):
            idx = pool[rng.integers(0, pool.size, self.batch_size)]
            loss, grad = _ce_loss_and_grad(logits, s[idx], a[idx], w[idx], n_states)
            adam.update(logits, grad)
            self.train_log_.append(TrainLogEntry(t, 0.0, loss, 0.0, 0.0))
        self.kind_ = "tabular"
        self.logits_ = logits

    def _fit_continuous(self, data, w, rng):
        arrays = data.stacked()
        s, a = arrays["s"], arrays["a"]
        pool = np.flatnonzero(w > 0)
        if pool.size == 0:
            raise ValidationError("all sample weights are zero")
        actor = init_net((s.shape[1], *self.hidden_dims, a.shape[1]), rng,
                         output_activation="tanh", output_scale=self.action_bound)
        adam = init_adam(actor, self.lr)
        for t in range(1, self.training_steps + 1):
            idx = pool[rng.integers(0, pool.size, self.batch_size)]
            loss, grads = loss_and_grad(actor, s[idx], "mse", targets=a[idx],
                                        sample_weight=w[idx])
            adam_update(actor, grads, adam)
            self.train_log_.append(TrainLogEntry(t, 0.0, loss, 0.0, 0.0))
        self.kind_ = "continuous"
        self.actor_ = actor

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind_ == "tabular":
            return self.logits_[X[:, 0].astype(int)].argmax(axis=1)
        return forward(self.actor_, X)

    def as_policy(self, env):
        """Callable state -> action for rollout evaluation in ``env``."""
        return _policy_for(self, env)

    def save(self, path) -> None:
        _save_agent(self, path)


def continuous_critic_target(actor_target: DenseNet, critic_targets, sn, r, done,
                             gamma: float, noise_std: float, noise_clip: float,
                             action_bound: float, rng: np.random.Generator):
    """Backup values y = r + (1 - done) gamma min_i Q_i'(s', a~).

    a~ is the delayed actor's action with clipped Gaussian smoothing noise
    (disabled when ``noise_std`` is zero), clipped to the action box.
    """
    a_next = forward(actor_target, sn)
    if noise_std > 0:
        noise = np.clip(rng.normal(0.0, noise_std, size=a_next.shape),
                        -noise_clip, noise_clip)
        a_next = np.clip(a_next + noise, -action_bound, action_bound)
    x = np.hstack([sn, a_next])
    q_min = np.minimum(*(forward(qt, x)[:, 0] for qt in critic_targets))
    return r + (1.0 - done) * gamma * q_min


def tabular_critic_target(logits_target, q_targets, sn, r, done, gamma: float):
    """Backup with the delayed softmax actor's expected action value."""
    probs = _softmax_rows(logits_target[sn])
    values = [np.sum(probs * qt[sn], axis=1) for qt in q_targets]
    return r + (1.0 - done) * gamma * np.minimum(*values)


def actor_q_objective(actor: DenseNet, critic: DenseNet, s):
    """Loss -mean Q(s, pi(s)), its gradient through the critic into the actor,
    and the mean |Q| magnitude used to balance it against the cloning term.

    The magnitude is taken on absolute values: a signed mean can cancel to
    zero across the batch and would blow the balance factor up.
    """
    u, cache_a = forward_cached(actor, s)
    x = np.hstack([s, u])
    q, cache_c = forward_cached(critic, x)
    l_q = -float(np.mean(q))
    d_q = np.full_like(q, -1.0 / q.shape[0])
    _, dx = backward(critic, cache_c, d_q)
    grads, _ = backward(actor, cache_a, dx[:, s.shape[1]:])
    return l_q, grads, float(np.mean(np.abs(q)))


def _combine_grads(g_bc, alpha, g_q):
    if g_q is None:
        return g_bc
    return [(bw + alpha * qw, bb + alpha * qb)
            for (bw, bb), (qw, qb) in zip(g_bc, g_q)]


@dataclass
class ContinuousBcdpState:
    actor: DenseNet
    critics: list[DenseNet]
    actor_target: DenseNet
    critic_targets: list[DenseNet]
    adam_actor: object
    adam_critics: list
    step: int = 0


@dataclass
class TabularBcdpState:
    logits: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    logits_target: np.ndarray
    q1_target: np.ndarray
    q2_target: np.ndarray
    adam_actor: _ArrayAdam
    adam_q1: _ArrayAdam
    adam_q2: _ArrayAdam
    step: int = 0


class BcdpAgent(BaseEstimator):
    """Cloning on expert data plus Q-learning on everything (TD3-flavored).

    Twin critics regress toward the min-of-delayed-targets backup over the
    union batch; the actor follows the cloning gradient every step and adds
    the scaled critic gradient on every ``t_freq``-th step, when the delayed
    networks also take their soft update. ``alpha_mode`` picks how the scale
    is set: ``auto`` balances the two gradient terms' loss magnitudes,
    ``literal`` uses the raw loss quotient, ``fixed`` uses ``alpha_value``.
    """

    _bc_on_union = False       # UDS flips this: regularize toward all behavior
    _offline_reward_zero = False

    def __init__(self, gamma=0.99, tau=0.005, t_freq=2, batch_size=256,
                 lr_actor=1e-3, lr_critic=1e-3, alpha_mode="auto", alpha_value=1.0,
                 target_noise_std=0.2, target_noise_clip=0.5, training_steps=5000,
                 hidden_dims=(64, 64), action_bound=1.0, seed=0):
        self.gamma = gamma
        self.tau = tau
        self.t_freq = t_freq
        self.batch_size = batch_size
        self.lr_actor = lr_actor
        self.lr_critic = lr_critic
        self.alpha_mode = alpha_mode
        self.alpha_value = alpha_value
        self.target_noise_std = target_noise_std
        self.target_noise_clip = target_noise_clip
        self.training_steps = training_steps
        self.hidden_dims = hidden_dims
        self.action_bound = action_bound
        self.seed = seed

    def _validate(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValidationError("gamma must lie in (0, 1)")
        if not (0.0 < self.tau <= 1.0):
            raise ValidationError("tau must lie in (0, 1]")
        if self.t_freq < 1 or self.training_steps < 1 or self.batch_size < 1:
            raise ValidationError("t_freq, training_steps, batch_size must be >= 1")
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ValidationError("learning rates must be positive")
        if self.alpha_mode not in ("auto", "literal", "fixed"):
            raise ValidationError(f"unknown alpha_mode {self.alpha_mode!r}")

    def _alpha(self, l_bc, l_q, q_scale):
        """Balance factor: auto mode normalizes by the actor-batch |Q| scale,
        literal mode divides the raw batch losses, fixed uses the constant."""
        if self.alpha_mode == "fixed":
            return float(self.alpha_value)
        if self.alpha_mode == "auto":
            return alpha_auto(l_bc, q_scale, "balance")
        return alpha_auto(l_bc, l_q, "literal")

    def _rewards(self, ds: Demoset, is_expert: bool) -> np.ndarray:
        if is_expert:
            return np.ones(ds.n_transitions)
        if self._offline_reward_zero:
            return np.zeros(ds.n_transitions)
        arrays = ds.stacked()
        if "r" not in arrays:
            raise ValidationError(
                "offline demoset is unlabeled; run the reward labeler first")
        return arrays["r"]

    def fit(self, expert: Demoset, offline: Demoset | None = None,
            eval_env=None, eval_every: int = 0, eval_episodes: int = 5,
            n_states=None, n_actions=None):
        self._validate()
        if offline is not None and expert.encoding != offline.encoding:
            raise ValidationError("expert and offline encodings differ")
        rng = np.random.default_rng(self.seed)
        self.train_log_ = TrainLog()
        self._eval = (eval_env, eval_every, eval_episodes)
        if expert.encoding == "index":
            self._fit_tabular(expert, offline, rng, n_states, n_actions)
        elif expert.encoding == "continuous":
            self._fit_continuous(expert, offline, rng)
        else:
            raise ValidationError(
                "xy-encoded discrete data has no trainer backend; use 'index'")
        return self

    # ---- shared loop plumbing -------------------------------------------

    def _maybe_eval(self, t: int) -> float | None:
        eval_env, eval_every, eval_episodes = self._eval
        if eval_env is None or eval_every <= 0 or t % eval_every != 0:
            return None
        eval_rng = np.random.default_rng([self.seed, t])
        return rollout_eval(eval_env, self.as_policy(eval_env),
                            episodes=eval_episodes, rng=eval_rng).mean_return

    def _batches(self, rng, n_expert, n_offline):
        idx_e = rng.integers(0, n_expert, self.batch_size)
        idx_o = rng.integers(0, n_offline, self.batch_size) if n_offline else None
        return idx_e, idx_o

    # ---- continuous backend ---------------------------------------------

    def _fit_continuous(self, expert, offline, rng):
        ex = expert.stacked()
        ex_r = self._rewards(expert, is_expert=True)
        off = offline.stacked() if offline is not None else None
        off_r = self._rewards(offline, is_expert=False) if offline is not None else None
        d_s, d_a = expert.state_dim, expert.action_dim

        actor = init_net((d_s, *self.hidden_dims, d_a), rng,
                         output_activation="tanh", output_scale=self.action_bound)
        critics = [init_net((d_s + d_a, *self.hidden_dims, 1), rng) for _ in range(2)]
        state = ContinuousBcdpState(
            actor=actor, critics=critics,
            actor_target=actor.copy(),                      # delayed == online at init
            critic_targets=[c.copy() for c in critics],
            adam_actor=init_adam(actor, self.lr_actor),
            adam_critics=[init_adam(c, self.lr_critic) for c in critics],
        )
        self.kind_ = "continuous"
        self.state_ = state
        self.actor_ = state.actor
        for t in range(1, self.training_steps + 1):
            idx_e, idx_o = self._batches(rng, len(ex["s"]), len(off["s"]) if off else 0)
            batch = {k: ex[k][idx_e] for k in ("s", "a", "sn", "done")}
            batch["r"] = ex_r[idx_e]
            if idx_o is not None:
                for k in ("s", "a", "sn", "done"):
                    batch[k] = np.concatenate([batch[k], off[k][idx_o]])
                batch["r"] = np.concatenate([batch["r"], off_r[idx_o]])
            bc_s = batch["s"] if self._bc_on_union else ex["s"][idx_e]
            bc_a = batch["a"] if self._bc_on_union else ex["a"][idx_e]
            entry = continuous_bcdp_step(state, batch, bc_s, bc_a, self, rng)
            self.train_log_.append(replace(entry, eval_return=self._maybe_eval(t)))

    # ---- tabular backend ---------------------------------------------------

    def _fit_tabular(self, expert, offline, rng, n_states, n_actions):
        n_states, n_actions = _infer_sizes([expert, offline], n_states, n_actions)
        se, ae, sne, de, _ = _tabular_arrays(expert)
        re = self._rewards(expert, is_expert=True)
        if offline is not None:
            so, ao, sno, do, _ = _tabular_arrays(offline)
            ro = self._rewards(offline, is_expert=False)
        # Random initial tables (small scale); delayed copies start identical.
        logits = 0.01 * rng.standard_normal((n_states, n_actions))
        q1 = 0.01 * rng.standard_normal((n_states, n_actions))
        q2 = 0.01 * rng.standard_normal((n_states, n_actions))
        state = TabularBcdpState(
            logits=logits, q1=q1, q2=q2,
            logits_target=logits.copy(),
            q1_target=q1.copy(),
            q2_target=q2.copy(),
            adam_actor=_ArrayAdam(self.lr_actor),
            adam_q1=_ArrayAdam(self.lr_critic),
            adam_q2=_ArrayAdam(self.lr_critic),
        )
        self.kind_ = "tabular"
        self.state_ = state
        self.logits_ = state.logits
        for t in range(1, self.training_steps + 1):
            idx_e, idx_o = self._batches(rng, len(se), len(so) if offline is not None else 0)
            s, a, sn = se[idx_e], ae[idx_e], sne[idx_e]
            done, r = de[idx_e], re[idx_e]
            if idx_o is not None:
                s = np.concatenate([s, so[idx_o]])
                a = np.concatenate([a, ao[idx_o]])
                sn = np.concatenate([sn, sno[idx_o]])
                done = np.concatenate([done, do[idx_o]])
                r = np.concatenate([r, ro[idx_o]])
            if self._bc_on_union:
                bc_s, bc_a = s, a
            else:
                bc_s, bc_a = se[idx_e], ae[idx_e]
            entry = tabular_bcdp_step(state, (s, a, sn, done, r), bc_s, bc_a, self)
            self.train_log_.append(replace(entry, eval_return=self._maybe_eval(t)))

    # ---- prediction and persistence -------------------------------------

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind_ == "tabular":
            return self.logits_[X[:, 0].astype(int)].argmax(axis=1)
        return forward(self.actor_, X)

    def as_policy(self, env):
        return _policy_for(self, env)

    def save(self, path) -> None:
        _save_agent(self, path)


def continuous_bcdp_step(state: ContinuousBcdpState, batch, bc_s, bc_a,
                         cfg: BcdpAgent, rng) -> TrainLogEntry:
    """One training step on network function approximators."""
    state.step += 1
    y = continuous_critic_target(
        state.actor_target, state.critic_targets, batch["sn"], batch["r"],
        batch["done"], cfg.gamma, cfg.target_noise_std, cfg.target_noise_clip,
        cfg.action_bound, rng)[:, None]
    x = np.hstack([batch["s"], batch["a"]])
    critic_loss = 0.0
    for critic, adam in zip(state.critics, state.adam_critics):
        loss, grads = loss_and_grad(critic, x, "mse", targets=y)
        adam_update(critic, grads, adam)
        critic_loss += loss / 2.0
    l_bc, g_bc = loss_and_grad(state.actor, bc_s, "mse", targets=bc_a)
    if state.step % cfg.t_freq == 0:
        l_q, g_q, q_scale = actor_q_objective(state.actor, state.critics[0],
                                              batch["s"])
        alpha = cfg._alpha(l_bc, l_q, q_scale)
        for target, online in zip(
                [state.actor_target, *state.critic_targets],
                [state.actor, *state.critics]):
            soft_update(target, online, cfg.tau)
    else:
        l_q, alpha, g_q = 0.0, 0.0, None
    adam_update(state.actor, _combine_grads(g_bc, alpha, g_q), state.adam_actor)
    return TrainLogEntry(step=state.step, critic_loss=critic_loss,
                         bc_loss=l_bc, q_term=l_q, alpha=alpha)


def tabular_bcdp_step(state: TabularBcdpState, batch, bc_s, bc_a,
                      cfg: BcdpAgent) -> TrainLogEntry:
    """One training step on exact tables."""
    state.step += 1
    s, a, sn, done, r = batch
    n = len(s)
    y = tabular_critic_target(state.logits_target,
                              (state.q1_target, state.q2_target),
                              sn, r, done, cfg.gamma)
    critic_loss = 0.0
    for q, adam in ((state.q1, state.adam_q1), (state.q2, state.adam_q2)):
        diff = q[s, a] - y
        grad = np.zeros_like(q)
        np.add.at(grad, (s, a), 2.0 * diff / n)
        critic_loss += float(np.mean(diff ** 2)) / 2.0
        adam.update(q, grad)
    l_bc, g_bc = _ce_loss_and_grad(state.logits, bc_s, bc_a,
                                   np.ones(len(bc_s)), state.logits.shape[0])
    if state.step % cfg.t_freq == 0:
        probs = _softmax_rows(state.logits[s])
        q_rows = state.q1[s]
        values = np.sum(probs * q_rows, axis=1)
        l_q = -float(np.mean(values))
        d_rows = -probs * (q_rows - values[:, None]) / n
        g_q = np.zeros_like(state.logits)
        np.add.at(g_q, s, d_rows)
        alpha = cfg._alpha(l_bc, l_q, float(np.mean(np.abs(values))))
        for target, online in ((state.logits_target, state.logits),
                               (state.q1_target, state.q1),
                               (state.q2_target, state.q2)):
            target *= 1.0 - cfg.tau
            target += cfg.tau * online
        total = g_bc + alpha * g_q
    else:
        l_q, alpha, total = 0.0, 0.0, g_bc
    state.adam_actor.update(state.logits, total)
    return TrainLogEntry(step=state.step, critic_loss=critic_loss,
                         bc_loss=l_bc, q_term=l_q, alpha=alpha)


class UdsAgent(BcdpAgent):
    """Ablation: zero rewards on offline data and cloning over the union.

    Offline transitions train the critics with reward 0 (expert stays at 1)
    and the cloning term regularizes toward every behavior in the union batch
    rather than the expert's alone.
    """

    _bc_on_union = True
    _offline_reward_zero = True


def _policy_for(agent, env):
    if agent.kind_ == "tabular":
        if not isinstance(env, DiscreteMazeEnv):
            raise ValidationError("tabular agents evaluate in discrete mazes")
        return lambda state: int(agent.predict(
            np.array([[env.cell_index(state)]], dtype=float))[0])
    if not isinstance(env, ContinuousMazeEnv):
        raise ValidationError("continuous agents evaluate in continuous mazes")
    return lambda state: agent.predict(np.asarray(state, dtype=float)[None, :])[0]


_AGENT_CLASSES = {"BehavioralCloner": BehavioralCloner, "BcdpAgent": BcdpAgent,
                  "UdsAgent": UdsAgent}


def _save_agent(agent, path) -> None:
    doc = {"class": type(agent).__name__, "params": agent.get_params(),
           "kind": agent.kind_}
    if agent.kind_ == "tabular":
        doc["logits"] = agent.logits_.tolist()
        if isinstance(agent, BcdpAgent):
            doc["q1"] = agent.state_.q1.tolist()
            doc["q2"] = agent.state_.q2.tolist()
    else:
        doc["actor"] = net_to_doc(agent.actor_)
        if isinstance(agent, BcdpAgent):
            doc["critic1"] = net_to_doc(agent.state_.critics[0])
            doc["critic2"] = net_to_doc(agent.state_.critics[1])
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_agent(path):
    """Rebuild a fitted agent from its JSON checkpoint (prediction-ready)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    cls = _AGENT_CLASSES.get(doc.get("class"))
    if cls is None:
        raise ValidationError(f"unknown agent class {doc.get('class')!r}")
    params = dict(doc["params"])
    for key in ("hidden_dims",):
        if key in params and isinstance(params[key], list):
            params[key] = tuple(params[key])
    agent = cls(**params)
    agent.kind_ = doc["kind"]
    if doc["kind"] == "tabular":
        agent.logits_ = np.array(doc["logits"], dtype=float)
    else:
        agent.actor_ = net_from_doc(doc["actor"])
    return agent
