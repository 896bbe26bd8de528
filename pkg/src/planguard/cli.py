"""Command-line interface: run experiments, replay traces, calibrate, summarize."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import SimConfig, load_config, save_config
from .errors import PlanGuardError
from .executive import lint_abort_latency, replay, trace_from_text
from .harness import (
    GRIDS,
    ExperimentConfig,
    calibrate,
    parse_csv,
    policy,
    results_to_csv,
    run_experiment,
    summarize,
)
from .protocol import MockServer
from .world import TASK_BUILDERS


def _sim_config(args) -> SimConfig:
    return load_config(args.config) if getattr(args, "config", None) else SimConfig()


def cmd_run(args) -> int:
    sim = _sim_config(args)
    try:
        grid = GRIDS[args.grid]()
    except KeyError:
        print(f"unknown grid {args.grid!r}; known: {', '.join(sorted(GRIDS))}")
        return 2
    policies = tuple(policy(p.strip()) for p in args.policies.split(","))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    exp = ExperimentConfig(
        cells=grid,
        policies=policies,
        seeds=seeds,
        episodes_per_seed=args.episodes,
        workers=args.workers,
        sim=sim,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_experiment(exp, keep_traces=args.save_traces)
    csv_text = results_to_csv(result.cells)
    (out_dir / "results.csv").write_text(csv_text, encoding="utf-8")
    if args.save_traces:
        trace_dir = out_dir / "traces"
        trace_dir.mkdir(exist_ok=True)
        for i, text in enumerate(result.traces):
            (trace_dir / f"episode_{i:05d}.tsv").write_text(text, encoding="utf-8")
    print(summarize(result.cells))
    print(f"wrote {out_dir / 'results.csv'}")
    return 0


def cmd_replay(args) -> int:
    trace = trace_from_text(Path(args.trace).read_text(encoding="utf-8"))
    sim = _sim_config(args)
    report = replay(trace, sim)
    if report.config_mismatch:
        print("warning: trace was produced under a different config (digest mismatch)")
    problems = lint_abort_latency(trace, sim.check_ticks)
    for p in problems:
        print(f"lint: {p}")
    if report.identical:
        print("replay: identical")
        return 0
    print(f"replay: diverged at event {report.first_divergence}: {report.detail}")
    return 1


def cmd_calibrate(args) -> int:
    base = _sim_config(args)
    fitted, report = calibrate(base)
    for line in report:
        print(line)
    if args.out:
        save_config(fitted, args.out)
        print(f"wrote fitted config to {args.out}")
    return 0


def cmd_summarize(args) -> int:
    results = parse_csv(Path(args.csv).read_text(encoding="utf-8"))
    print(summarize(results))
    return 0


def cmd_mock_server(args) -> int:
    task = TASK_BUILDERS[args.family]() if args.family else None
    server = MockServer(
        task=task,
        config=_sim_config(args),
        detector_answer=args.detector_answer,
        host=args.host,
        port=args.port,
    )
    print(f"mock server listening on {server.address[0]}:{server.address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planguard",
        description="Deterministic closed-loop skill execution simulator and harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment grid and write results.csv")
    p_run.add_argument("--grid", default="quick", help="named grid: arm, humanoid, quick")
    p_run.add_argument(
        "--policies",
        default="saycan,repeat,inner_monologue,doremi,im_oracle",
        help="comma list of kind[:detector_model]",
    )
    p_run.add_argument("--seeds", default="1,2,3,4")
    p_run.add_argument("--episodes", type=int, default=12)
    p_run.add_argument("--out", default="results")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--config", help="YAML config file")
    p_run.add_argument("--save-traces", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_replay = sub.add_parser("replay", help="re-simulate a trace and verify it")
    p_replay.add_argument("--trace", required=True)
    p_replay.add_argument("--config")
    p_replay.set_defaults(func=cmd_replay)

    p_cal = sub.add_parser("calibrate", help="fit speed/exposure knobs to the nominal times")
    p_cal.add_argument("--config")
    p_cal.add_argument("--out", help="write the fitted config YAML here")
    p_cal.set_defaults(func=cmd_calibrate)

    p_sum = sub.add_parser("summarize", help="print the success/time grid from a CSV")
    p_sum.add_argument("--csv", required=True)
    p_sum.set_defaults(func=cmd_summarize)

    p_mock = sub.add_parser("mock-server", help="reference planner/detector peer")
    p_mock.add_argument("--family", choices=sorted(TASK_BUILDERS), help="back planner replies with the scripted planner for this task family")
    p_mock.add_argument("--detector-answer", default="Yes", choices=["Yes", "No"])
    p_mock.add_argument("--host", default="127.0.0.1")
    p_mock.add_argument("--port", type=int, default=0)
    p_mock.add_argument("--config")
    p_mock.set_defaults(func=cmd_mock_server)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PlanGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
