"""Command-line interface.

Subcommands: train, eval, bench-latency, replay, plot-data. All accept
--seed, --out-dir and --deterministic; every run is deterministic for a given
seed (single-threaded torch, explicit numpy generators), the flag exists so
scripts can state the requirement and fail fast if the build cannot honor it.

Errors print one machine-parseable line to stderr:
    cabletow: error code=<slug>: <detail>
and exit 2 (4 for unexpected internal failures). replay exits 3 when the
re-simulation diverges from the logged trace.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import torch

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_REPLAY_MISMATCH = 3
EXIT_INTERNAL = 4


class CliError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(detail)
        self.code = code


def _fail(code: str, detail: str) -> "CliError":
    return CliError(code, detail)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cabletow",
        description="Decentralized multi-robot cable towing: train, evaluate, "
                    "benchmark, replay.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out-dir", default=None,
                       help="override the config output directory")
        p.add_argument("--deterministic", action="store_true",
                       help="require bit-reproducible execution")

    p_train = sub.add_parser("train", help="run the curriculum from a config")
    p_train.add_argument("--config", required=True)
    common(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", default=None,
                        help="world template and eval settings (optional)")
    p_eval.add_argument("--team-sizes", default=None,
                        help="comma-separated team sizes (overrides config)")
    p_eval.add_argument("--episodes", type=int, default=None)
    p_eval.add_argument("--trace-count", type=int, default=None,
                        help="episodes per size to dump as traces")
    common(p_eval)

    p_lat = sub.add_parser("bench-latency",
                           help="time the per-agent decision path")
    p_lat.add_argument("--checkpoint", required=True)
    p_lat.add_argument("--sizes", default=None,
                       help="comma-separated team sizes (default 1,2,4,8,12)")
    p_lat.add_argument("--trials", type=int, default=100)
    common(p_lat)

    p_rep = sub.add_parser("replay",
                           help="re-simulate a logged episode and compare")
    p_rep.add_argument("--trace", required=True)
    common(p_rep)

    p_plot = sub.add_parser("plot-data",
                            help="emit tidy CSV from a training log or trace")
    p_plot.add_argument("--log", default=None, help="training log CSV")
    p_plot.add_argument("--trace", default=None, help="episode trace CSV")
    p_plot.add_argument("--out", required=True, help="output CSV path")
    common(p_plot)
    return parser


def _parse_sizes(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise _fail("bad-args", f"cannot parse team sizes from {text!r}")
    if not sizes or any(s < 1 for s in sizes):
        raise _fail("bad-args", f"team sizes must be positive: {text!r}")
    return sizes


def _load_config(path: str | None):
    from .config import ConfigError, RunConfig, load_config
    if path is None:
        return RunConfig()
    try:
        return load_config(path)
    except ConfigError as exc:
        raise _fail("bad-config", str(exc))


def _require_checkpoint(path: str) -> str:
    if not os.path.exists(path):
        raise _fail("checkpoint-not-found", f"no such checkpoint: {path}")
    return path


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)


def _cmd_train(args) -> int:
    from .curriculum import run_curriculum
    from .traces import TrainingLog
    cfg = _load_config(args.config)
    if cfg.schedule is None:
        raise _fail("bad-config", f"{args.config}: train needs a stages list")
    seed = cfg.seed if args.seed is None else args.seed
    out_dir = cfg.out_dir if args.out_dir is None else args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    log = TrainingLog(os.path.join(out_dir, "train_log.csv"))
    try:
        _, report = run_curriculum(cfg.schedule, seed, out_dir=out_dir, log=log,
                                   sigma_max=cfg.actor.sigma_max)
    finally:
        log.close()
    print(f"checkpoint {report['final_checkpoint']}")
    print(f"log {os.path.join(out_dir, 'train_log.csv')}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .checkpoint import ChecksumMismatch
    from .harness import evaluate
    cfg = _load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    out_dir = cfg.out_dir if args.out_dir is None else args.out_dir
    sizes = (_parse_sizes(args.team_sizes) if args.team_sizes is not None
             else cfg.eval.team_sizes)
    episodes = cfg.eval.episodes if args.episodes is None else args.episodes
    trace_count = (cfg.eval.trace_count if args.trace_count is None
                   else args.trace_count)
    path = _require_checkpoint(args.checkpoint)
    try:
        report = evaluate(path, list(sizes), episodes, seed,
                          template=cfg.world, sim=cfg.sim,
                          trace_dir=os.path.join(out_dir, "traces")
                          if trace_count else None,
                          trace_count=trace_count)
    except ChecksumMismatch as exc:
        raise _fail("checkpoint-corrupt", f"{path}: {exc}")
    _write_json(os.path.join(out_dir, "eval.json"), report)
    for size in sizes:
        rep = report["reports"][str(size)]
        print(f"n={size} success={100.0 * rep['success_rate']:.1f}% "
              f"speed={rep['avg_speed_mean']:.3f}±{rep['avg_speed_std']:.3f}m/s "
              f"cosine={rep['cosine_mean']:.3f}±{rep['cosine_std']:.3f} "
              f"causes={rep['causes']}")
    print(f"report {os.path.join(out_dir, 'eval.json')}")
    return EXIT_OK


def _cmd_bench_latency(args) -> int:
    from .checkpoint import ChecksumMismatch
    from .harness import DEFAULT_BENCH_SIZES, bench_latency
    seed = 0 if args.seed is None else args.seed
    out_dir = "runs/run" if args.out_dir is None else args.out_dir
    sizes = (_parse_sizes(args.sizes) if args.sizes is not None
             else DEFAULT_BENCH_SIZES)
    path = _require_checkpoint(args.checkpoint)
    try:
        report = bench_latency(path, sizes, args.trials, seed=seed)
    except ChecksumMismatch as exc:
        raise _fail("checkpoint-corrupt", f"{path}: {exc}")
    _write_json(os.path.join(out_dir, "latency.json"), report)
    for size in sizes:
        rep = report["reports"][str(size)]
        print(f"n={size} mean={rep['mean_s'] * 1e3:.3f}ms "
              f"p99={rep['p99_s'] * 1e3:.3f}ms trials={rep['trials']}")
    print(f"report {os.path.join(out_dir, 'latency.json')}")
    return EXIT_OK


def _cmd_replay(args) -> int:
    from .env import TowEnv
    from .sim import NonFiniteState
    from .traces import read_episode_trace, trace_actions
    if not os.path.exists(args.trace):
        raise _fail("trace-not-found", f"no such trace: {args.trace}")
    try:
        scenario, rows = read_episode_trace(args.trace)
    except (ValueError, KeyError, json.JSONDecodeError, FileNotFoundError) as exc:
        raise _fail("bad-trace", f"{args.trace}: {exc}")
    env = TowEnv(scenario)
    n = scenario.team_size
    mismatch = None
    for row in rows:
        state = env.state
        fields = {}
        for i, body in enumerate(state.robots):
            fields.update({f"r{i}_x": body.x, f"r{i}_y": body.y,
                           f"r{i}_theta": body.theta, f"r{i}_vx": body.vx,
                           f"r{i}_vy": body.vy, f"r{i}_omega": body.omega})
        fields.update({"load_x": state.load.x, "load_y": state.load.y,
                       "load_theta": state.load.theta, "load_vx": state.load.vx,
                       "load_vy": state.load.vy, "load_omega": state.load.omega})
        for key, value in fields.items():
            if row[key] != value:
                mismatch = (int(row["step"]), key, row[key], value)
                break
        if mismatch:
            break
        try:
            out = env.step(trace_actions(row, n))
        except NonFiniteState as exc:
            raise _fail("bad-trace", f"replay went non-finite: {exc}")
        if row["reward"] != out.reward or int(row["terminal"]) != int(out.terminal):
            mismatch = (int(row["step"]), "reward/terminal",
                        (row["reward"], int(row["terminal"])),
                        (out.reward, int(out.terminal)))
            break
    if mismatch:
        step, key, logged, computed = mismatch
        print(f"mismatch at step {step} field {key}: "
              f"logged {logged!r} != computed {computed!r}", file=sys.stderr)
        return EXIT_REPLAY_MISMATCH
    print(f"replay ok: {len(rows)} steps match bit-exactly")
    return EXIT_OK


def _cmd_plot_data(args) -> int:
    from .traces import read_episode_trace, read_training_log, write_plot_rows
    if (args.log is None) == (args.trace is None):
        raise _fail("bad-args", "plot-data needs exactly one of --log/--trace")
    if args.log is not None:
        if not os.path.exists(args.log):
            raise _fail("log-not-found", f"no such log: {args.log}")
        rows = read_training_log(args.log)
        metrics = ["ep_reward_mean", "success_rate", "value_loss", "entropy",
                   "kd", "surrogate", "clip_frac"]
        out_rows = [(int(r["update"]), int(r["steps"]), m, r[m])
                    for r in rows for m in metrics]
        write_plot_rows(args.out, ["update", "steps", "metric", "value"], out_rows)
    else:
        if not os.path.exists(args.trace):
            raise _fail("trace-not-found", f"no such trace: {args.trace}")
        scenario, rows = read_episode_trace(args.trace)
        out_rows = []
        for row in rows:
            step = int(row["step"])
            for i in range(scenario.team_size):
                out_rows.append((step, f"robot{i}", row[f"r{i}_x"],
                                 row[f"r{i}_y"], row[f"r{i}_theta"]))
            out_rows.append((step, "load", row["load_x"], row["load_y"],
                             row["load_theta"]))
            out_rows.append((step, "local_goal", row["p_local_x"],
                             row["p_local_y"], 0.0))
        out_rows.append((0, "goal", scenario.goal[0], scenario.goal[1], 0.0))
        write_plot_rows(args.out, ["step", "entity", "x", "y", "theta"], out_rows)
    print(f"wrote {args.out}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bench-latency": _cmd_bench_latency,
    "replay": _cmd_replay,
    "plot-data": _cmd_plot_data,
}


def main(argv: list[str] | None = None) -> int:
    torch.set_num_threads(1)
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"cabletow: error code={exc.code}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # pragma: no cover - defensive
        print(f"cabletow: error code=internal: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_INTERNAL


def cli(argv: list[str] | None = None) -> int:
    """Alias of main(); subcommand dispatch entry point."""
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
