"""Command-line entry point.

Subcommands: ``gen-data`` (roll out demonstrations), ``label`` (discriminator
reward labeling), ``train`` (bcdp | bc-exp | bc-all | uds), ``evaluate``,
``verify-theory`` (the tabular bound suite), and ``drg`` (distance-reduction
analysis). All outputs are plain files; a run directory always carries a
manifest with the config snapshot, input hashes, and the tool version, and no
output embeds timestamps, so reruns with the same seed are byte-identical.

Settings may come from a flat ``key=value`` config file; explicit flags win.
Exit codes: 0 success, 1 usage error, 2 validation error, 3 verify-theory
violations.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .agents import BcdpAgent, BehavioralCloner, UdsAgent, load_agent
from .data import (
    generate_expert,
    generate_offline,
    load_demoset,
    merge_demosets,
    save_demoset,
)
from .errors import ParseError, ValidationError
from .labeling import label_demoset, train_discriminator
from .mazes import make_env
from .metrics import (
    binned_report,
    drg_analysis,
    expert_positions,
    normalized_score,
    reference_scores,
    rollout_eval,
)
from .theory import TheoryReport, run_theory_suite


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage to 1
        raise UsageError(f"{self.prog}: {message}")


class _Outputs:
    """Tracks files written by a command so failures leave nothing behind."""

    def __init__(self):
        self.paths: list[str] = []

    def register(self, path) -> str:
        self.paths.append(str(path))
        return str(path)

    def cleanup(self) -> None:
        for path in self.paths:
            if os.path.isfile(path):
                os.remove(path)


def _require_file(path, what: str) -> str:
    if not os.path.isfile(path):
        raise UsageError(f"missing {what}: {path}")
    return str(path)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_config(path) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{no}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _merge_settings(args, schema: dict, config_path) -> dict:
    """Built-in defaults, overridden by the config file, overridden by flags."""
    merged = {k: default for k, (_, default) in schema.items()}
    if config_path:
        _require_file(config_path, "config file")
        for key, value in _read_config(config_path).items():
            if key not in schema:
                raise UsageError(f"unknown config key {key!r}")
            cast = schema[key][0]
            merged[key] = cast(value)
    for key in schema:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    return merged


def _load_env(args):
    layout_text = None
    if getattr(args, "layout_file", None):
        layout_text = open(_require_file(args.layout_file, "layout file"),
                           encoding="utf-8").read()
    overrides = {}
    if getattr(args, "horizon", None) is not None:
        overrides["horizon"] = args.horizon
    if getattr(args, "env_gamma", None) is not None:
        overrides["gamma"] = args.env_gamma
    return make_env(args.env, layout_text=layout_text, **overrides)


def _write_manifest(out_dir, outputs, command: str, settings: dict,
                    inputs: dict[str, str]) -> None:
    doc = {
        "command": command,
        "config": settings,
        "inputs": {name: _sha256(path) for name, path in inputs.items()},
        "version": __version__,
    }
    path = outputs.register(os.path.join(out_dir, "manifest.json"))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)


# ---- subcommands -------------------------------------------------------------


def cmd_gen_data(args, outputs) -> int:
    env = _load_env(args)
    if args.kind == "expert":
        ds = generate_expert(env, args.n_traj, args.seed, encoding=args.encoding)
    else:
        ds = generate_offline(env, args.n_traj, args.seed, encoding=args.encoding)
    save_demoset(ds, outputs.register(args.out))
    print(f"wrote {ds.n_transitions} transitions to {args.out}")
    return 0


def cmd_label(args, outputs) -> int:
    expert = load_demoset(_require_file(args.expert, "expert dataset"))
    offline = load_demoset(_require_file(args.offline, "offline dataset"))
    disc = train_discriminator(expert, offline, steps=args.steps,
                               batch_size=args.batch_size, lr=args.lr,
                               seed=args.seed, rescale=args.rescale)
    labeled = label_demoset(disc, offline)
    save_demoset(labeled, outputs.register(args.out))
    values = [r.reward_label for r in labeled.transitions()]
    print(f"labeled {len(values)} transitions "
          f"(mean {float(np.mean(values)):.4f}) -> {args.out}")
    return 0


TRAIN_SCHEMA = {
    "gamma": (float, 0.99),
    "tau": (float, 0.005),
    "t_freq": (int, 2),
    "batch_size": (int, 256),
    "lr_actor": (float, 1e-3),
    "lr_critic": (float, 1e-3),
    "alpha_mode": (str, "auto"),
    "alpha_value": (float, 1.0),
    "target_noise_std": (float, 0.2),
    "target_noise_clip": (float, 0.5),
    "training_steps": (int, 5000),
    "seed": (int, 0),
    "eval_every": (int, 0),
    "eval_episodes": (int, 30),
}


def cmd_train(args, outputs) -> int:
    settings = _merge_settings(args, TRAIN_SCHEMA, args.config)
    expert = load_demoset(_require_file(args.expert, "expert dataset"))
    offline = None
    if args.offline:
        offline = load_demoset(_require_file(args.offline, "offline dataset"))
    if args.algo in ("bc-all", "bcdp", "uds") and offline is None:
        raise UsageError(f"--algo {args.algo} requires --offline")
    env = _load_env(args) if args.env else None
    sizes = {}
    if env is not None and expert.encoding == "index":
        sizes = {"n_states": len(env.layout.open_cells), "n_actions": env.n_actions}

    if args.algo in ("bc-exp", "bc-all"):
        agent = BehavioralCloner(
            training_steps=settings["training_steps"],
            batch_size=settings["batch_size"], lr=settings["lr_actor"],
            seed=settings["seed"])
        data = expert if args.algo == "bc-exp" else merge_demosets(expert, offline)
        agent.fit(data, **sizes)
    else:
        cls = BcdpAgent if args.algo == "bcdp" else UdsAgent
        agent = cls(
            gamma=settings["gamma"], tau=settings["tau"], t_freq=settings["t_freq"],
            batch_size=settings["batch_size"], lr_actor=settings["lr_actor"],
            lr_critic=settings["lr_critic"], alpha_mode=settings["alpha_mode"],
            alpha_value=settings["alpha_value"],
            target_noise_std=settings["target_noise_std"],
            target_noise_clip=settings["target_noise_clip"],
            training_steps=settings["training_steps"], seed=settings["seed"])
        agent.fit(expert, offline, eval_env=env if settings["eval_every"] else None,
                  eval_every=settings["eval_every"],
                  eval_episodes=settings["eval_episodes"], **sizes)

    os.makedirs(args.out_dir, exist_ok=True)
    agent.save(outputs.register(os.path.join(args.out_dir, "checkpoint.json")))
    if hasattr(agent, "train_log_"):
        agent.train_log_.to_csv(
            outputs.register(os.path.join(args.out_dir, "trainlog.csv")))
    final_eval = None
    if env is not None:
        final_eval = rollout_eval(env, agent.as_policy(env),
                                  episodes=settings["eval_episodes"],
                                  rng=np.random.default_rng(settings["seed"]))
        print(f"final eval: mean return {final_eval.mean_return:.3f} "
              f"+- {final_eval.stderr:.3f}")
    inputs = {"expert": args.expert}
    if args.offline:
        inputs["offline"] = args.offline
    manifest_settings = {**settings, "algo": args.algo, "env": args.env,
                         "final_eval": None if final_eval is None
                         else final_eval.mean_return}
    _write_manifest(args.out_dir, outputs, "train", manifest_settings, inputs)
    print(f"run artifacts in {args.out_dir}")
    return 0


def cmd_evaluate(args, outputs) -> int:
    agent = load_agent(_require_file(args.agent, "agent checkpoint"))
    env = _load_env(args)
    rng = np.random.default_rng(args.seed)
    result = rollout_eval(env, agent.as_policy(env), episodes=args.episodes, rng=rng)
    normalized = ""
    if args.normalize:
        random_ref, expert_ref = reference_scores(
            env, np.random.default_rng(args.seed + 1), episodes=args.episodes)
        normalized = repr(normalized_score(result.mean_return,
                                           random_ref, expert_ref))
    if args.out:
        path = outputs.register(args.out)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("episodes,mean,stderr,normalized\n")
            fh.write(f"{result.episodes},{result.mean_return!r},"
                     f"{result.stderr!r},{normalized}\n")
    print(f"mean return {result.mean_return:.3f} +- {result.stderr:.3f}"
          + (f" (normalized {normalized})" if normalized else ""))
    return 0


def cmd_verify_theory(args, outputs) -> int:
    try:
        gammas = tuple(float(g) for g in args.gamma.split(","))
    except ValueError as exc:
        raise UsageError(f"bad --gamma value: {exc}") from exc
    results = run_theory_suite(args.instances, args.states, args.actions,
                               gammas=gammas, base_seed=args.seed,
                               sparsity=args.sparsity,
                               n_expert_traj=args.expert_traj)
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = outputs.register(os.path.join(args.out_dir, "theory_report.csv"))
    violations = 0
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(TheoryReport.CSV_HEADER + "\n")
        for inst, report in results:
            fh.write(report.csv_row() + "\n")
            bad_t1 = not report.flag_theorem1 and not report.holds_theorem1
            bad_l2 = not report.flag_lemma2 and not report.holds_lemma2
            if bad_t1 or bad_l2:
                violations += 1
                dump = outputs.register(os.path.join(
                    args.out_dir, f"violation_seed{inst.seed}.json"))
                with open(dump, "w", encoding="utf-8") as vh:
                    vh.write(inst.mdp.to_json())
    flagged = sum(r.beta_re_flag for _, r in results)
    _write_manifest(args.out_dir, outputs, "verify-theory",
                    {"instances": args.instances, "states": args.states,
                     "actions": args.actions, "gamma": args.gamma,
                     "seed": args.seed, "sparsity": args.sparsity,
                     "expert_traj": args.expert_traj}, {})
    print(f"{len(results)} instances: {violations} violations, "
          f"{flagged} flagged (beta * R_E > 1); report at {csv_path}")
    return 3 if violations else 0


def cmd_drg(args, outputs) -> int:
    agent = load_agent(_require_file(args.agent, "agent checkpoint"))
    expert = load_demoset(_require_file(args.expert_data, "expert dataset"))
    env = _load_env(args)
    points = expert_positions(expert)
    rng = np.random.default_rng(args.seed)
    samples = drg_analysis(env, agent.as_policy(env), points, args.n_traj, rng)
    os.makedirs(args.out_dir, exist_ok=True)
    raw_path = outputs.register(os.path.join(args.out_dir, "drg_samples.csv"))
    with open(raw_path, "w", encoding="utf-8") as fh:
        fh.write("ood_distance,drg\n")
        for s in samples:
            fh.write(f"{s.ood_distance!r},{s.drg!r}\n")
    rows = binned_report(samples, args.bins)
    binned_path = outputs.register(os.path.join(args.out_dir, "drg_binned.csv"))
    with open(binned_path, "w", encoding="utf-8") as fh:
        fh.write("bin_center,count,mean_drg,mean_return\n")
        for row in rows:
            fh.write(f"{row['bin_center']!r},{row['count']},"
                     f"{row['mean_drg']!r},{row.get('mean_return', '')!r}\n")
    _write_manifest(args.out_dir, outputs, "drg",
                    {"env": args.env, "n_traj": args.n_traj, "bins": args.bins,
                     "seed": args.seed},
                    {"agent": args.agent, "expert_data": args.expert_data})
    print(f"{len(samples)} samples -> {raw_path}")
    return 0


# ---- parser ----------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="bcdp", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_env_args(p, required=True):
        p.add_argument("--env", required=required,
                       help="env id like grid-umaze-sparse or point-medium-dense")
        p.add_argument("--layout-file", help="text layout overriding the builtin")
        p.add_argument("--horizon", type=int)
        p.add_argument("--env-gamma", type=float)

    p = sub.add_parser("gen-data", help="roll out expert or random demonstrations")
    add_env_args(p)
    p.add_argument("--kind", choices=["expert", "random"], required=True)
    p.add_argument("--n-traj", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encoding", choices=["index", "xy", "continuous"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("label", help="reward-label an offline dataset")
    p.add_argument("--expert", required=True)
    p.add_argument("--offline", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rescale", choices=["ratio", "log_ratio"], default="ratio")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train bcdp or a baseline")
    p.add_argument("--algo", choices=["bcdp", "bc-exp", "bc-all", "uds"],
                   required=True)
    p.add_argument("--expert", required=True)
    p.add_argument("--offline")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="flat key=value file; flags win")
    add_env_args(p, required=False)
    for key, (cast, _) in TRAIN_SCHEMA.items():
        p.add_argument(f"--{key.replace('_', '-')}", type=cast, default=None,
                       dest=key)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="roll out a trained agent")
    add_env_args(p)
    p.add_argument("--agent", required=True)
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", help="optional CSV destination")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify-theory", help="run the tabular bound suite")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--states", type=int, default=20)
    p.add_argument("--actions", type=int, default=4)
    p.add_argument("--gamma", default="0.9,0.95",
                   help="comma-separated discount grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sparsity", type=float, default=0.3)
    p.add_argument("--expert-traj", type=int, default=3)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("drg", help="distance-reduction analysis of an agent")
    add_env_args(p)
    p.add_argument("--agent", required=True)
    p.add_argument("--expert-data", required=True,
                   help="xy- or continuous-encoded expert demoset")
    p.add_argument("--n-traj", type=int, default=200)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_drg)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    outputs = _Outputs()
    try:
        args = parser.parse_args(argv)
        return args.func(args, outputs)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        outputs.cleanup()
        return 1
    except (ValidationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        outputs.cleanup()
        return 2


if __name__ == "__main__":
    sys.exit(main())
