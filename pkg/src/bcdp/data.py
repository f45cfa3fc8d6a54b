"""Demonstration datasets: rollout generation, statistics, JSONL persistence.

A demoset is a list of trajectories of (s, a, s', done, reward?) records. The
on-disk format is JSON Lines: line 1 is a header object
``{"env_id", "policy_tag", "seed", "dims", "encoding"}``; every following line
is one transition ``{"s", "a", "sn", "d", "r", "t"}`` where ``r`` is null for
unlabeled data and ``t`` is the trajectory index (needed to restore trajectory
boundaries losslessly). Floats round-trip exactly through json's shortest-repr
encoding.

Discrete states can be encoded as a length-1 state-index vector (``index``,
the tabular path) or as the (x, y) cell center (``xy``, used for distance
analyses); the header records which.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParseError, ValidationError
from .mazes import ContinuousMazeEnv, DiscreteMazeEnv, cell_center

ENCODINGS = ("index", "xy", "continuous")


@dataclass(frozen=True)
class TransitionRecord:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    done: bool
    reward_label: float | None = None

    def __post_init__(self):
        for name in ("s", "a", "s_next"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.reward_label is not None and not (0.0 <= self.reward_label <= 1.0):
            raise ValidationError(f"reward_label {self.reward_label} outside [0, 1]")


@dataclass(frozen=True)
class Demoset:
    env_id: str
    policy_tag: str
    seed: int
    encoding: str
    trajectories: tuple[tuple[TransitionRecord, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "trajectories", tuple(tuple(t) for t in self.trajectories))
        if self.encoding not in ENCODINGS:
            raise ValidationError(f"unknown encoding {self.encoding!r}")
        if not self.trajectories or any(len(t) == 0 for t in self.trajectories):
            raise ValidationError("demoset and every trajectory must be nonempty")
        s_dim, a_dim = self.state_dim, self.action_dim
        for traj in self.trajectories:
            for rec in traj:
                if rec.s.shape != (s_dim,) or rec.s_next.shape != (s_dim,) \
                        or rec.a.shape != (a_dim,):
                    raise ValidationError("inconsistent transition dimensions")

    @property
    def state_dim(self) -> int:
        return self.trajectories[0][0].s.shape[0]

    @property
    def action_dim(self) -> int:
        return self.trajectories[0][0].a.shape[0]

    @property
    def n_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def transitions(self):
        for traj in self.trajectories:
            yield from traj

    def stacked(self) -> dict[str, np.ndarray]:
        """Flat arrays for training: s, a, sn, done; r when every record is labeled."""
        recs = list(self.transitions())
        out = {
            "s": np.stack([r.s for r in recs]),
            "a": np.stack([r.a for r in recs]),
            "sn": np.stack([r.s_next for r in recs]),
            "done": np.array([r.done for r in recs], dtype=float),
        }
        labels = [r.reward_label for r in recs]
        if all(v is not None for v in labels):
            out["r"] = np.array(labels, dtype=float)
        return out

    def is_labeled(self) -> bool:
        return all(r.reward_label is not None for r in self.transitions())


def _encode_state(env, state, encoding: str) -> np.ndarray:
    if isinstance(env, ContinuousMazeEnv):
        if encoding != "continuous":
            raise ValidationError("continuous envs require the 'continuous' encoding")
        return np.asarray(state, dtype=float)
    if encoding == "index":
        return np.array([float(env.cell_index(state))])
    if encoding == "xy":
        return cell_center(state)
    raise ValidationError(f"encoding {encoding!r} not valid for discrete envs")


def _default_encoding(env) -> str:
    return "continuous" if isinstance(env, ContinuousMazeEnv) else "index"


def _rollout(env, state, rng, pick_action, encoding):
    records = []
    for _ in range(env.horizon):
        action = pick_action(state, rng)
        out = env.step(state, action)
        records.append(TransitionRecord(
            s=_encode_state(env, state, encoding),
            a=np.atleast_1d(np.asarray(action, dtype=float)),
            s_next=_encode_state(env, out.next_state, encoding),
            done=out.done,
        ))
        state = out.next_state
        if out.done:
            break
    return tuple(records)


def _generate(env, n_traj, rng_seed, pick_action, policy_tag, encoding):
    if n_traj < 1:
        raise ValidationError("n_traj must be >= 1")
    encoding = encoding or _default_encoding(env)
    trajectories = []
    for i in range(n_traj):
        rng = np.random.default_rng(rng_seed + i)  # per-trajectory derived seed
        trajectories.append(_rollout(env, env.reset(rng), rng, pick_action, encoding))
    return Demoset(env_id=env.env_id, policy_tag=policy_tag, seed=rng_seed,
                   encoding=encoding, trajectories=tuple(trajectories))


def generate_expert(env, n_traj: int, rng_seed: int, encoding: str | None = None) -> Demoset:
    """Roll the built-in planner from reset until done or horizon."""
    return _generate(env, n_traj, rng_seed,
                     lambda s, r: env.expert_action(s), "expert", encoding)


def generate_offline(env, n_traj: int, rng_seed: int, policy_tag: str = "random",
                     encoding: str | None = None) -> Demoset:
    """Roll a uniformly random behavior policy; no reward labels are stored."""
    if policy_tag != "random":
        raise ValidationError("only the 'random' behavior policy is built in")
    return _generate(env, n_traj, rng_seed,
                     lambda s, r: env.random_action(r), policy_tag, encoding)


def save_demoset(ds: Demoset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {"env_id": ds.env_id, "policy_tag": ds.policy_tag, "seed": ds.seed,
                  "dims": {"s": ds.state_dim, "a": ds.action_dim},
                  "encoding": ds.encoding}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for t, traj in enumerate(ds.trajectories):
            for rec in traj:
                line = {"s": rec.s.tolist(), "a": rec.a.tolist(),
                        "sn": rec.s_next.tolist(), "d": bool(rec.done),
                        "r": rec.reward_label, "t": t}
                fh.write(json.dumps(line, sort_keys=True) + "\n")


def load_demoset(path) -> Demoset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    try:
        header = json.loads(lines[0])
        env_id, tag = header["env_id"], header["policy_tag"]
        seed, encoding = header["seed"], header["encoding"]
        dims = header["dims"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"bad header: {exc}", line=1) from exc
    by_traj: dict[int, list[TransitionRecord]] = {}
    for no, raw in enumerate(lines[1:], start=2):
        try:
            doc = json.loads(raw)
            rec = TransitionRecord(
                s=np.array(doc["s"], dtype=float),
                a=np.array(doc["a"], dtype=float),
                s_next=np.array(doc["sn"], dtype=float),
                done=bool(doc["d"]),
                reward_label=None if doc["r"] is None else float(doc["r"]),
            )
            t = int(doc["t"])
        except ValidationError:
            raise
        except Exception as exc:
            raise ParseError(f"bad transition: {exc}", line=no) from exc
        if rec.s.shape != (dims["s"],) or rec.a.shape != (dims["a"],):
            raise ValidationError(
                f"line {no}: transition dimensions disagree with header dims")
        by_traj.setdefault(t, []).append(rec)
    if not by_traj:
        raise ParseError("no transitions after header", line=2)
    trajectories = tuple(tuple(by_traj[t]) for t in sorted(by_traj))
    return Demoset(env_id=env_id, policy_tag=tag, seed=seed,
                   encoding=encoding, trajectories=trajectories)


def dataset_stats(ds: Demoset) -> dict:
    """Counts and means mirroring the dataset summary tables."""
    lens = [len(t) for t in ds.trajectories]
    out = {"n_transitions": int(sum(lens)),
           "mean_traj_len": float(np.mean(lens))}
    labels = [r.reward_label for r in ds.transitions()]
    if all(v is not None for v in labels):
        out["mean_reward_label"] = float(np.mean(labels))
    return out


def merge_demosets(a: Demoset, b: Demoset, policy_tag: str = "merged") -> Demoset:
    """Concatenate two compatible demosets (the BC-on-everything training set)."""
    if (a.encoding, a.state_dim, a.action_dim) != (b.encoding, b.state_dim, b.action_dim):
        raise ValidationError("demosets have incompatible encodings or dimensions")
    return Demoset(env_id=a.env_id, policy_tag=policy_tag, seed=a.seed,
                   encoding=a.encoding, trajectories=a.trajectories + b.trajectories)


def with_labels(ds: Demoset, values) -> Demoset:
    """Copy of ``ds`` with reward labels taken from ``values`` (one per transition)."""
    values = np.asarray(values, dtype=float)
    if values.shape != (ds.n_transitions,):
        raise ValidationError(
            f"need {ds.n_transitions} labels, got shape {values.shape}")
    it = iter(values)
    trajectories = tuple(
        tuple(replace(rec, reward_label=float(next(it))) for rec in traj)
        for traj in ds.trajectories)
    return Demoset(env_id=ds.env_id, policy_tag=ds.policy_tag, seed=ds.seed,
                   encoding=ds.encoding, trajectories=trajectories)
