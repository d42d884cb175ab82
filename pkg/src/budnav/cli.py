"""Command-line entry point.

Subcommands:

    train      run one training configuration, writing run artifacts
    eval       evaluate a checkpoint on a benchmark suite
    compare    train several configs over seeds, print a summary table
    replay     re-execute a trace file and render an ASCII map
    gen-suite  generate and write a benchmark suite file

Exit codes: 0 success, 1 generic/partial failure, 2 unreadable or
invalid config/arguments, 3 divergence (non-finite gradient), 4
checkpoint corruption, 5 trace replay divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import (
    apply_cli_overrides,
    build_train_config,
    load_config,
    write_manifest,
)
from .errors import CheckpointError, ConfigError, NonFiniteGradient, TraceError
from .metrics import METRICS_HEADER, evaluate, format_metrics_row
from .policy import load_checkpoint, snapshot
from .rollout import RolloutConfig, parse_trace, serialize_trace, verify_trace
from .suite import generate_suite, parse_suite, serialize_suite
from .trainer import train


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NonFiniteGradient as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return 3
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except TraceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="budnav", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"budnav {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training configuration")
    p.add_argument("--config", required=True, help="config file (key=value lines)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--algo", choices=("gro", "dagger", "bc"), default=None,
                   help="override the configured variant")
    p.add_argument("--seed", type=int, default=None, help="override trainer.run_seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a suite")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--out", default=None, help="directory for CSV and traces")
    p.add_argument("--limit", type=int, default=0, help="cap held-out episodes (0 = all)")
    p.add_argument("--json", action="store_true", help="print a JSON report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train configs across seeds, tabulate")
    p.add_argument("--configs", nargs="+", required=True)
    p.add_argument("--seeds", nargs="*", type=int, default=[0])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("replay", help="verify a trace and draw the map")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("gen-suite", help="generate a benchmark suite file")
    p.add_argument("--name", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--train-worlds", type=int, required=True)
    p.add_argument("--held", type=int, required=True)
    p.add_argument("--width", type=int, default=10)
    p.add_argument("--height", type=int, default=10)
    p.add_argument("--density", type=float, default=0.15)
    p.add_argument("--goal-radius", type=float, default=3.0)
    p.add_argument("--min-length", type=float, default=6.0)
    p.add_argument("--max-run", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_suite)
    return parser


_ALGO_VARIANT = {"gro": "full", "dagger": "dagger", "bc": "bc"}


def cmd_train(args) -> int:
    cfg, values, overrides = load_config(args.config)
    variant = _ALGO_VARIANT[args.algo] if args.algo else None
    if variant is not None or args.seed is not None:
        values = apply_cli_overrides(values, seed=args.seed, variant=variant)
        overrides = dict(overrides)
        if variant is not None:
            overrides["trainer.variant"] = variant
        if args.seed is not None:
            overrides["trainer.run_seed"] = args.seed
        cfg = build_train_config(values, base_dir=Path(args.config).parent)
    out = Path(args.out)
    write_manifest(out, values, overrides, cfg.suite, __version__)
    (out / "suite.suite").write_text(serialize_suite(cfg.suite))
    result = train(cfg, out_dir=out)
    last = result.evals[-1][1]
    print(f"run complete: {len(result.reports)} episodes, "
          f"final SR {last.sr:.1f} SPL {last.spl:.1f} NE {last.ne:.2f}")
    print(f"artifacts in {out}")
    return 0


def _load_suite_file(path_s: str):
    path = Path(path_s)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read suite file {path}: {e}") from e
    return parse_suite(text)


def cmd_eval(args) -> int:
    try:
        params = load_checkpoint(args.ckpt)
    except OSError as e:
        raise ConfigError(f"cannot read checkpoint {args.ckpt}: {e}") from e
    suite = _load_suite_file(args.suite)
    from .suite import build_held_episodes

    episodes = build_held_episodes(suite, args.limit)
    outcome = evaluate(snapshot(params, "eval"), episodes, RolloutConfig())
    r = outcome.report
    row = format_metrics_row(0, r, 0.0, 0)
    if args.json:
        print(json.dumps({
            "n": r.n, "sr": r.sr, "spl": r.spl, "osr": r.osr,
            "ne": r.ne, "ndtw": r.ndtw,
        }))
    else:
        print(f"n={r.n} SR={r.sr:.1f} SPL={r.spl:.1f} OSR={r.osr:.1f} "
              f"NE={r.ne:.2f} nDTW={r.ndtw:.1f}")
    if args.out:
        out = Path(args.out)
        (out / "traces").mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(METRICS_HEADER + "\n" + row + "\n")
        for episode, traj in list(zip(episodes, outcome.trajectories))[:3]:
            (out / "traces" / f"episode_{episode.id}.trace").write_text(
                serialize_trace(traj, episode)
            )
    return 0


def cmd_compare(args) -> int:
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = 0
    for cfg_path in args.configs:
        label = Path(cfg_path).stem
        per_seed = []
        env_totals = []
        for seed in args.seeds:
            run_dir = out_root / f"{label}_seed{seed}"
            try:
                cfg, values, overrides = load_config(cfg_path)
                values = apply_cli_overrides(values, seed=seed)
                overrides = dict(overrides, **{"trainer.run_seed": seed})
                cfg = build_train_config(values, base_dir=Path(cfg_path).parent)
                write_manifest(run_dir, values, overrides, cfg.suite, __version__)
                result = train(cfg, out_dir=run_dir)
            except Exception as e:  # partial results are still reported
                print(f"warning: {label} seed {seed} failed: {e}", file=sys.stderr)
                failures += 1
                continue
            per_seed.append(result.evals[-1][1])
            env_totals.append(_env_total(result))
        if per_seed:
            n = len(per_seed)
            rows.append((
                label, n,
                sum(r.sr for r in per_seed) / n,
                sum(r.spl for r in per_seed) / n,
                sum(r.osr for r in per_seed) / n,
                sum(r.ne for r in per_seed) / n,
                sum(r.ndtw for r in per_seed) / n,
                sum(env_totals) / n,
            ))
        else:
            rows.append((label, 0, None, None, None, None, None, None))
    if len(args.seeds) == 1:
        print(f"single seed: {args.seeds[0]}")
    header = f"{'config':<20} {'seeds':>5} {'SR':>6} {'SPL':>6} {'OSR':>6} {'NE':>6} {'nDTW':>6} {'env-steps':>10}"
    print(header)
    print("-" * len(header))
    table_lines = [header]
    for label, n, sr, spl, osr, ne, ndtw, env in rows:
        if n == 0:
            line = f"{label:<20} {'0':>5} {'(all runs failed)':>6}"
        else:
            line = (f"{label:<20} {n:>5} {sr:>6.1f} {spl:>6.1f} {osr:>6.1f} "
                    f"{ne:>6.2f} {ndtw:>6.1f} {env:>10.0f}")
        print(line)
        table_lines.append(line)
    (out_root / "compare.txt").write_text("\n".join(table_lines) + "\n")
    return 1 if failures else 0


def _env_total(result) -> int:
    return sum(r.env_steps_used for r in result.reports)


def cmd_replay(args) -> int:
    try:
        text = Path(args.trace).read_text()
    except OSError as e:
        raise TraceError(f"cannot read trace {args.trace}: {e}") from e
    doc = parse_trace(text)
    n = verify_trace(doc)
    print(f"trace verified: {n} steps, success={doc.success}, trigger={doc.trigger}")
    print(render_map(doc))
    return 0


def render_map(doc) -> str:
    """ASCII map: walls '#', reference path 'o', executed path '*',
    both '@', start 'S', goal 'G', trigger 'X', rect anchor 'A'."""
    world = doc.episode.world
    grid = [
        ["#" if (x, y) in world.blocked else "." for x in range(world.width)]
        for y in range(world.height)
    ]

    def put(x, y, ch):
        grid[y][x] = ch

    executed = [s.pose_before for s in doc.steps] + [doc.final_pose]
    for x, y in doc.episode.reference_waypoints:
        put(x, y, "o")
    for pose in executed:
        put(pose.x, pose.y, "@" if grid[pose.y][pose.x] == "o" else "*")
    trigger_pose = None
    if doc.trigger != "-":
        step_idx = int(doc.trigger.split("@")[1])
        later = [s for s in doc.steps if s.t > step_idx]
        trigger_pose = later[0].pose_before if later else doc.final_pose
        put(trigger_pose.x, trigger_pose.y, "X")
    if doc.rect is not None:
        p = doc.rect["anchor_pose"]
        put(p.x, p.y, "A")
    sx, sy = doc.episode.start.x, doc.episode.start.y
    gx, gy = doc.episode.goal
    put(sx, sy, "S")
    put(gx, gy, "G")
    legend = "S start  G goal  o reference  * executed  @ both  X trigger  A anchor"
    return "\n".join("".join(row) for row in grid) + "\n" + legend


def cmd_gen_suite(args) -> int:
    suite = generate_suite(
        name=args.name,
        seed=args.seed,
        n_train_worlds=args.train_worlds,
        n_held=args.held,
        width=args.width,
        height=args.height,
        density=args.density,
        goal_radius=args.goal_radius,
        min_episode_length=args.min_length,
        max_run=args.max_run,
    )
    Path(args.out).write_text(serialize_suite(suite))
    print(f"wrote suite {suite.name!r}: {len(suite.train_world_seeds)} train worlds, "
          f"{len(suite.held_pairs)} held episodes -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
