"""``ffrl`` command-line entry point.

Exit codes: 0 success, 2 config error, 3 I/O or policy-file error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import asdict, replace

import numpy as np

from ffrl import __version__
from ffrl.config import ConfigError, RunConfig, dump_config, load_config
from ffrl.curriculum import DEFAULT_LADDER, AdvancementRule, CurriculumState, ladder_to_csv, truncate, variant_curriculum
from ffrl.env import GoalPose, ZeroGEnv
from ffrl.evaluate import (
    UNDOCK_DELTAS,
    UNDOCK_GOAL,
    NullController,
    PDController,
    PolicyController,
    rollout,
    run_undock,
    success_table,
    undock_mse_table,
    write_plot_data,
)
from ffrl.policy import PolicyFormatError, load_policy, save_policy, serialize
from ffrl.ppo import TRAIN_LOG_COLUMNS, NumericError, TrainConfig, train
from ffrl.sixdof import IDENTITY_QUAT, BodyState, MassProps

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def write_json_atomic(path, data):
    """Write JSON via a temp file in the same directory and rename over ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def code_version():
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True, text=True, timeout=5
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+{rev}" if rev else __version__


def make_run_dir(cfg, now=None):
    stamp = time.strftime("%Y%m%dT%H%M%S", time.localtime(now))
    path = os.path.join(cfg.output_dir, f"{stamp}-{cfg.seed}-{cfg.tag}")
    suffix = 1
    base = path
    while os.path.exists(path):
        suffix += 1
        path = f"{base}.{suffix}"
    os.makedirs(path)
    return path


def build_envs(cfg, n_envs=None, workers=None):
    """Split the training batch into one ZeroGEnv per worker partition."""
    n = n_envs or cfg.train.n_envs
    workers = max(1, min(workers or cfg.train.workers, n))
    ladder = cfg.curriculum.ladder()
    rule = AdvancementRule(cfg.curriculum.reward_threshold, cfg.curriculum.hold_steps)
    sizes = [n // workers + (1 if k < n % workers else 0) for k in range(workers)]
    envs, offset = [], 0
    for size in sizes:
        cur = CurriculumState(size, ladder) if ladder is not None else None
        envs.append(ZeroGEnv(cfg.env, cfg.reward, size, cur, rule if cur is not None else None, env_offset=offset))
        offset += size
    return envs


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_sidecar(policy_path, cfg, iteration, extra=None):
    data = {
        "iteration": iteration,
        "seed": cfg.seed,
        "ppo": asdict(cfg.ppo),
        "train": asdict(cfg.train),
        "format": "FFRL v1",
    }
    data.update(extra or {})
    write_json_atomic(os.path.splitext(policy_path)[0] + ".json", data)


def train_run(cfg, workers=None, log=print):
    """Run training per ``cfg``; returns ``(run_dir, TrainResult)``."""
    if workers is not None:
        cfg = replace(cfg, train=replace(cfg.train, workers=workers))
    run_dir = make_run_dir(cfg)
    manifest_path = os.path.join(run_dir, "manifest.json")
    manifest = {
        "config": cfg.to_dict(),
        "code_version": code_version(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "finished": None,
        "checkpoints": [],
        "final_metrics": None,
        "status": "running",
    }
    with open(os.path.join(run_dir, "config.yaml"), "w") as f:
        f.write(dump_config(cfg))
    write_json_atomic(manifest_path, manifest)

    ckpt_dir = os.path.join(run_dir, "checkpoints")
    log_path = os.path.join(run_dir, "train_log.csv")
    log_file = open(log_path, "w", newline="")
    writer = csv.writer(log_file, lineterminator="\n")
    writer.writerow(TRAIN_LOG_COLUMNS)

    def on_iteration(row, params):
        writer.writerow([_fmt(row[c]) for c in TRAIN_LOG_COLUMNS])
        log_file.flush()
        if log and (row["iteration"] % 50 == 0 or row["iteration"] == cfg.train.iterations - 1):
            log(
                f"iter {row['iteration']:5d}  reward {row['mean_reward']:.3f}  "
                f"success {row['success_rate']:.3f}  level {row['mean_level']:.2f}"
            )

    def on_checkpoint(it, params):
        os.makedirs(ckpt_dir, exist_ok=True)
        path = os.path.join(ckpt_dir, f"ckpt_{it:06d}.ffrl")
        save_policy(path, params)
        write_sidecar(path, cfg, it)
        manifest["checkpoints"].append(os.path.relpath(path, run_dir))
        write_json_atomic(manifest_path, manifest)

    tc = TrainConfig(
        iterations=cfg.train.iterations,
        seed=cfg.seed,
        workers=cfg.train.workers,
        init_log_std=cfg.train.init_log_std,
        checkpoint_every=cfg.train.checkpoint_every,
        record_wall_ms=cfg.train.record_wall_ms,
        stagger_episodes=cfg.train.stagger_episodes,
        obs_scale=cfg.train.obs_scale,
    )
    try:
        result = train(build_envs(cfg), cfg.ppo, tc, on_iteration=on_iteration, on_checkpoint=on_checkpoint)
    except NumericError:
        manifest["status"] = "numeric-failure"
        manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        write_json_atomic(manifest_path, manifest)
        raise
    finally:
        log_file.close()
    policy_path = os.path.join(run_dir, "policy.ffrl")
    save_policy(policy_path, result.params)
    write_sidecar(policy_path, cfg, cfg.train.iterations)
    last = result.log[-1] if result.log else {}
    manifest["final_metrics"] = {k: last.get(k) for k in ("mean_reward", "success_rate", "mean_level")}
    manifest["policy"] = "policy.ffrl"
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    manifest["status"] = "ok"
    write_json_atomic(manifest_path, manifest)
    return run_dir, result


def _controller(args, cfg):
    if getattr(args, "controller", "policy") == "pd":
        return PDController(f_max=cfg.env.f_max, tau_max=cfg.env.tau_max)
    if getattr(args, "controller", "policy") == "null":
        return NullController()
    if not args.policy:
        raise ConfigError("a policy file is required unless --controller pd or null is given")
    name = os.path.splitext(os.path.basename(args.policy))[0]
    return PolicyController(load_policy(args.policy), name=name)


def _load_cfg(path):
    return load_config(path) if path else RunConfig()


def cmd_train(args):
    cfg = load_config(args.config)
    if args.tag:
        cfg = replace(cfg, tag=args.tag)
    if args.output_dir:
        cfg = replace(cfg, output_dir=args.output_dir)
    run_dir, _ = train_run(cfg, workers=args.workers, log=None if args.quiet else print)
    print(run_dir)
    return EXIT_OK


def cmd_eval(args):
    cfg = _load_cfg(args.config)
    controller = _controller(args, cfg)
    ev = cfg.eval
    report = success_table(
        [controller],
        ev.n_envs,
        ev.seeds,
        mass_conditions=ev.mass_conditions,
        pos_R=ev.pos_R,
        ori_R=ev.ori_R,
        criterion=ev.criterion(),
        env_cfg=cfg.env,
        reward_cfg=cfg.reward,
        hold_steps=ev.hold_steps,
    )
    out = args.out or (os.path.join(os.path.dirname(os.path.abspath(args.policy)), "eval") if args.policy else "eval")
    os.makedirs(out, exist_ok=True)
    write_json_atomic(os.path.join(out, "report.json"), json.loads(report.to_json()))
    with open(os.path.join(out, "report.txt"), "w") as f:
        f.write(report.to_table())
    print(report.to_table(), end="")
    if args.emit_plot_data:
        _emit_plot_data(args.emit_plot_data, controller, cfg)
    return EXIT_OK


def _emit_plot_data(out_dir, controller, cfg):
    controllers = [PDController(f_max=cfg.env.f_max, tau_max=cfg.env.tau_max)]
    if not isinstance(controller, PDController):
        controllers.append(controller)
    table, trajs = undock_mse_table(controllers, env_cfg=cfg.env, reward_cfg=cfg.reward)
    payload = {f"{controller.name}_dm{d:+g}": trajs[controller.name][d] for d in UNDOCK_DELTAS}
    paths = write_plot_data(out_dir, trajs, payload)
    for p in paths:
        print(p)


def cmd_rollout(args):
    cfg = _load_cfg(args.config)
    controller = _controller(args, cfg)
    if args.scenario == "undock":
        rec = run_undock(controller, args.mass_delta, cfg.env, cfg.reward, UNDOCK_GOAL)
    else:
        mass = max(cfg.env.base_mass + args.mass_delta, cfg.env.min_mass)
        goal = GoalPose(np.asarray(cfg.env.baseline_goal, dtype=float), IDENTITY_QUAT.copy())
        rec = rollout(controller, BodyState.at_rest(), goal, MassProps.scaled(mass, cfg.env.base_mass), cfg.env, cfg.reward)
    out = args.out or f"rollout_{args.scenario}_dm{args.mass_delta:+g}.csv"
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    rec.to_csv(out)
    print(out)
    if args.emit_plot_data:
        _emit_plot_data(args.emit_plot_data, controller, cfg)
    return EXIT_OK


def cmd_export(args):
    params = load_policy(args.checkpoint)
    actor = params.actor_only()
    size = len(serialize(actor))
    if size >= 1 << 20:
        print(f"error: exported policy is {size} bytes, limit is 1 MiB", file=sys.stderr)
        return EXIT_NUMERIC
    save_policy(args.out, actor)
    print(f"{args.out}: {size} bytes")
    return EXIT_OK


def cmd_curriculum_dump(args):
    ladder = DEFAULT_LADDER
    if args.mass_override is not None:
        ladder = variant_curriculum(ladder, args.mass_override)
    if args.max_level is not None:
        ladder = truncate(ladder, args.max_level)
    sys.stdout.write(ladder_to_csv(ladder))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ffrl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ffrl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy from a config file")
    t.add_argument("config")
    t.add_argument("--workers", type=int, default=None, help="rollout worker threads (1 = deterministic)")
    t.add_argument("--tag", default=None)
    t.add_argument("--output-dir", default=None)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="Monte-Carlo success rates under mass variation")
    e.add_argument("policy", nargs="?")
    e.add_argument("--config")
    e.add_argument("--controller", choices=("policy", "pd", "null"), default="policy")
    e.add_argument("--out")
    e.add_argument("--emit-plot-data", metavar="DIR")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", help="record one trajectory as CSV")
    r.add_argument("policy", nargs="?")
    r.add_argument("--scenario", choices=("undock", "reach"), default="undock")
    r.add_argument("--mass-delta", type=float, default=0.0)
    r.add_argument("--controller", choices=("policy", "pd", "null"), default="policy")
    r.add_argument("--config")
    r.add_argument("--out")
    r.add_argument("--emit-plot-data", metavar="DIR")
    r.set_defaults(func=cmd_rollout)

    x = sub.add_parser("export", help="write the actor-only inference file")
    x.add_argument("checkpoint")
    x.add_argument("out")
    x.set_defaults(func=cmd_export)

    c = sub.add_parser("curriculum-dump", help="print the embedded curriculum ladder as CSV")
    c.add_argument("--mass-override", type=float, default=None)
    c.add_argument("--max-level", type=int, default=None)
    c.set_defaults(func=cmd_curriculum_dump)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PolicyFormatError as e:
        print(f"policy file error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, IndexError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
