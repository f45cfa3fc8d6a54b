"""Policy evaluation and expert-distance analyses.

Returns are undiscounted sums over full-horizon episodes (goals absorb or
sustain reward, so running to the horizon is the scoring convention).
Distance analyses use position coordinates only: a state's OOD distance is its
Euclidean distance to the nearest expert-observed position, and the reduction
gain of a transition is dist(s) - dist(s'), positive when the policy moves
toward expert support.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Demoset
from .errors import ValidationError
from .mazes import ContinuousMazeEnv, DiscreteMazeEnv, cell_center


@dataclass(frozen=True)
class EvalResult:
    mean_return: float
    stderr: float
    episodes: int
    normalized: float | None = None

    def __post_init__(self):
        if self.episodes < 1 or self.stderr < 0:
            raise ValidationError("episodes must be >= 1 and stderr nonnegative")


def rollout_return(env, policy, rng: np.random.Generator) -> float:
    state = env.reset(rng)
    total = 0.0
    for _ in range(env.horizon):
        out = env.step(state, policy(state))
        total += out.reward
        state = out.next_state
    return total


def rollout_eval(env, policy, episodes: int = 30,
                 rng: np.random.Generator | None = None) -> EvalResult:
    """Mean and standard error of the undiscounted return over seeded episodes."""
    if episodes < 1:
        raise ValidationError("episodes must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    returns = np.array([rollout_return(env, policy, rng) for _ in range(episodes)])
    stderr = 0.0 if episodes == 1 else float(returns.std(ddof=1) / np.sqrt(episodes))
    return EvalResult(float(returns.mean()), stderr, episodes)


def normalized_score(raw: float, random_ref: float, expert_ref: float) -> float:
    """Affine score: 0 at the random reference, 100 at the expert reference."""
    if expert_ref == random_ref:
        raise ValidationError("degenerate references: expert equals random")
    return 100.0 * (raw - random_ref) / (expert_ref - random_ref)


def reference_scores(env, rng: np.random.Generator,
                     episodes: int = 30) -> tuple[float, float]:
    """(random_ref, expert_ref) mean returns for normalization."""
    random_ref = rollout_eval(env, lambda s: env.random_action(rng),
                              episodes, rng).mean_return
    expert_ref = rollout_eval(env, env.expert_action, episodes, rng).mean_return
    return random_ref, expert_ref


def ood_distance(state, expert_states) -> float:
    """Exact brute-force distance from a position to the nearest expert position."""
    pts = np.asarray(expert_states, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValidationError("expert_states must be a nonempty (n, d) array")
    q = np.asarray(state, dtype=float)
    return float(np.sqrt(((pts - q) ** 2).sum(axis=1).min()))


class ExpertStateIndex:
    """Grid-bucketed exact nearest-neighbor distance over expert positions.

    Buckets of side ``cell`` are searched in expanding rings; the search stops
    once the ring's lower bound exceeds the best distance found, so results
    equal the brute-force answer exactly.
    """

    def __init__(self, points, cell: float = 1.0):
        self.points = np.asarray(points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[0] == 0:
            raise ValidationError("need a nonempty (n, d) point array")
        if cell <= 0:
            raise ValidationError("cell size must be positive")
        self.cell = cell
        self._buckets: dict[tuple, np.ndarray] = {}
        keys = np.floor(self.points / cell).astype(int)
        for key in np.unique(keys, axis=0):
            mask = np.all(keys == key, axis=1)
            self._buckets[tuple(key)] = self.points[mask]

    def distance(self, state) -> float:
        q = np.asarray(state, dtype=float)
        home = tuple(np.floor(q / self.cell).astype(int))
        best = np.inf
        ring = 0
        dim = len(home)
        while True:
            # Any point in a ring-r bucket is at least (r-1)*cell away.
            if ring > 0 and (ring - 1) * self.cell >= best:
                return float(best)
            found_bucket = False
            for offset in np.ndindex(*([2 * ring + 1] * dim)):
                rel = np.array(offset) - ring
                if np.max(np.abs(rel)) != ring:
                    continue  # interior cells were covered by smaller rings
                pts = self._buckets.get(tuple(np.array(home) + rel))
                if pts is None:
                    continue
                found_bucket = True
                d = np.sqrt(((pts - q) ** 2).sum(axis=1).min())
                best = min(best, float(d))
            ring += 1
            if ring > 10_000 and not found_bucket and not np.isfinite(best):
                raise ValidationError("nearest-neighbor search diverged")


def state_position(env, state) -> np.ndarray:
    """Position coordinates of an env state (velocity excluded)."""
    if isinstance(env, DiscreteMazeEnv):
        return cell_center(state)
    return np.asarray(state, dtype=float)[:2]


def expert_positions(ds: Demoset) -> np.ndarray:
    """Unique expert-observed positions from an xy- or continuous-encoded demoset."""
    if ds.encoding == "index":
        raise ValidationError(
            "index-encoded states carry no coordinates; regenerate with 'xy'")
    rows = []
    for traj in ds.trajectories:
        for rec in traj:
            rows.append(rec.s[:2])
        rows.append(traj[-1].s_next[:2])
    return np.unique(np.array(rows), axis=0)


@dataclass(frozen=True)
class DrgSample:
    state: np.ndarray        # position the transition left from
    ood_distance: float
    drg: float               # dist(s) - dist(s')
    return_to_go: float | None = None


def drg_analysis(env, policy, expert_states, n_traj: int,
                 rng: np.random.Generator) -> list[DrgSample]:
    """Roll the policy and emit one distance-reduction sample per transition."""
    if n_traj < 1:
        raise ValidationError("n_traj must be >= 1")
    index = ExpertStateIndex(expert_states)
    samples: list[DrgSample] = []
    for _ in range(n_traj):
        state = env.reset(rng)
        positions = [state_position(env, state)]
        rewards = []
        for _ in range(env.horizon):
            out = env.step(state, policy(state))
            rewards.append(out.reward)
            state = out.next_state
            positions.append(state_position(env, state))
        dists = [index.distance(p) for p in positions]
        rtg = np.cumsum(rewards[::-1])[::-1]
        for t in range(len(rewards)):
            samples.append(DrgSample(
                state=positions[t],
                ood_distance=dists[t],
                drg=dists[t] - dists[t + 1],
                return_to_go=float(rtg[t]),
            ))
    return samples


def binned_report(samples: list[DrgSample], n_bins: int) -> list[dict]:
    """Equal-width bins over OOD distance with per-bin means; CSV-friendly rows."""
    if not samples:
        raise ValidationError("need at least one sample")
    if n_bins < 1:
        raise ValidationError("n_bins must be >= 1")
    dists = np.array([s.ood_distance for s in samples])
    drgs = np.array([s.drg for s in samples])
    has_rtg = all(s.return_to_go is not None for s in samples)
    rtgs = np.array([s.return_to_go for s in samples]) if has_rtg else None
    hi = float(dists.max())
    edges = np.linspace(0.0, hi, n_bins + 1) if hi > 0 else np.linspace(0, 1, n_bins + 1)
    which = np.clip(np.searchsorted(edges, dists, side="right") - 1, 0, n_bins - 1)
    rows = []
    for b in range(n_bins):
        mask = which == b
        row = {
            "bin_center": float((edges[b] + edges[b + 1]) / 2),
            "count": int(mask.sum()),
            "mean_drg": float(drgs[mask].mean()) if mask.any() else float("nan"),
        }
        if has_rtg:
            row["mean_return"] = float(rtgs[mask].mean()) if mask.any() else float("nan")
        rows.append(row)
    return rows
