"""Experiment runner: task grids, per-seed statistics, CSV persistence.

The default protocol mirrors the evaluation convention this suite targets:
4 seeds with 12 episodes each per grid cell, success rate reported as
mean +/- std across per-seed means, execution time averaged over successful
episodes and reported only when the cell's success rate clears the reporting
threshold (otherwise "-").

Determinism: each episode's random streams are keyed by (cell, seed,
episode index); the executive additionally salts its detector stream with
the policy, so world evolution is policy-independent and worker parallelism
cannot change any number.
"""

from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .config import SimConfig
from .detector import get_model
from .errors import ConfigError
from .executive import EpisodeTrace, PolicySpec, run_episode, trace_to_text
from .rng import derive_seed
from .world import (
    TaskSpec,
    move_box_task,
    obstacle_task,
    pick_place_task,
    prepare_food_task,
    stack_task,
)

NOMINAL_PICKPLACE_S = 2.7
NOMINAL_STACK_S = 7.2
NOMINAL_OBSTACLE_S = 24.2
NOMINAL_MOVEBOX_S = 32.2

SAYCAN_DEGRADATION_TARGETS = ((0.2, 0.81), (0.3, 0.63))


@dataclass(frozen=True)
class Cell:
    name: str
    task: TaskSpec


@dataclass(frozen=True)
class ExperimentConfig:
    cells: tuple[Cell, ...]
    policies: tuple[PolicySpec, ...]
    seeds: tuple[int, ...] = (1, 2, 3, 4)
    episodes_per_seed: int = 12
    workers: int = 1
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        if not self.cells or not self.policies or not self.seeds:
            raise ConfigError("experiment needs cells, policies and seeds")
        if self.episodes_per_seed < 1 or self.workers < 1:
            raise ConfigError("episodes_per_seed and workers must be >= 1")


@dataclass(frozen=True)
class ResultsCell:
    cell: str
    policy: str
    detector: str
    n_episodes: int
    success_mean: float          # percent
    success_std: float           # percent, across per-seed means
    time_mean: float | None      # seconds over successful episodes
    time_std: float | None
    replan_mean: float
    check_mean: float


@dataclass
class ExperimentResult:
    cells: list[ResultsCell]
    traces: list[str] = field(default_factory=list)   # serialized, in job order


def _episode_seed(cell: Cell, seed: int, episode_index: int) -> int:
    return derive_seed("episode", cell.name, seed, episode_index)


def _run_job(args) -> tuple[int, bool, int, int, int, str]:
    index, cell, policy, seed, episode_index, sim, keep_trace = args
    trace = run_episode(
        cell.task, _episode_seed(cell, seed, episode_index), policy, sim
    )
    text = trace_to_text(trace, sim.dt) if keep_trace else ""
    return (
        index,
        trace.success,
        trace.duration_ticks,
        trace.replan_count,
        trace.check_count,
        text,
    )


def run_experiment(exp: ExperimentConfig, keep_traces: bool = False) -> ExperimentResult:
    jobs = []
    index = 0
    for cell in exp.cells:
        for policy in exp.policies:
            for seed in exp.seeds:
                for ep in range(exp.episodes_per_seed):
                    jobs.append((index, cell, policy, seed, ep, exp.sim, keep_traces))
                    index += 1

    if exp.workers == 1:
        outcomes = [_run_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=exp.workers) as pool:
            outcomes = list(pool.map(_run_job, jobs, chunksize=16))
    outcomes.sort(key=lambda o: o[0])

    per_seed = exp.episodes_per_seed
    per_policy = per_seed * len(exp.seeds)
    result = ExperimentResult(cells=[])
    if keep_traces:
        result.traces = [o[5] for o in outcomes]

    pos = 0
    for cell in exp.cells:
        for policy in exp.policies:
            block = outcomes[pos : pos + per_policy]
            pos += per_policy
            result.cells.append(_summarize_block(cell, policy, exp, block))
    return result


def _summarize_block(cell: Cell, policy: PolicySpec, exp: ExperimentConfig, block) -> ResultsCell:
    dt = exp.sim.dt
    seed_rates: list[float] = []
    seed_times: list[float] = []
    for s in range(len(exp.seeds)):
        chunk = block[s * exp.episodes_per_seed : (s + 1) * exp.episodes_per_seed]
        wins = [o for o in chunk if o[1]]
        seed_rates.append(100.0 * len(wins) / len(chunk))
        if wins:
            seed_times.append(statistics.fmean(o[2] * dt for o in wins))
    success_mean = statistics.fmean(seed_rates)
    success_std = statistics.stdev(seed_rates) if len(seed_rates) > 1 else 0.0
    time_mean: float | None = None
    time_std: float | None = None
    if success_mean >= 100.0 * exp.sim.time_report_threshold and seed_times:
        time_mean = statistics.fmean(seed_times)
        time_std = statistics.stdev(seed_times) if len(seed_times) > 1 else 0.0
    return ResultsCell(
        cell=cell.name,
        policy=policy.kind,
        detector=policy.effective_detector().name,
        n_episodes=len(block),
        success_mean=success_mean,
        success_std=success_std,
        time_mean=time_mean,
        time_std=time_std,
        replan_mean=statistics.fmean(o[3] for o in block),
        check_mean=statistics.fmean(o[4] for o in block),
    )


# -- CSV / text output ---------------------------------------------------------

_CSV_HEADER = (
    "cell,policy,detector,n_episodes,success_mean_pct,success_std_pct,"
    "time_mean_s,time_std_s,replan_mean,check_mean"
)


def results_to_csv(results: list[ResultsCell]) -> str:
    lines = [_CSV_HEADER]
    for r in results:
        time_mean = "-" if r.time_mean is None else f"{r.time_mean:.2f}"
        time_std = "-" if r.time_std is None else f"{r.time_std:.2f}"
        lines.append(
            f"{r.cell},{r.policy},{r.detector},{r.n_episodes},"
            f"{r.success_mean:.1f},{r.success_std:.1f},"
            f"{time_mean},{time_std},{r.replan_mean:.2f},{r.check_mean:.2f}"
        )
    return "\n".join(lines) + "\n"


def write_csv(results: list[ResultsCell], path: str | Path) -> None:
    Path(path).write_text(results_to_csv(results), encoding="utf-8")


def summarize(results: list[ResultsCell]) -> str:
    """Success / time grid, one row per cell, one column pair per policy."""
    policies: list[str] = []
    for r in results:
        if r.policy not in policies:
            policies.append(r.policy)
    cells: list[str] = []
    for r in results:
        if r.cell not in cells:
            cells.append(r.cell)
    by_key = {(r.cell, r.policy): r for r in results}
    width = max([len(c) for c in cells] + [24])
    header = f"{'cell':<{width}}" + "".join(f"{p:>26}" for p in policies)
    lines = [header, "-" * len(header)]
    for cell in cells:
        row = f"{cell:<{width}}"
        for p in policies:
            r = by_key.get((cell, p))
            if r is None:
                row += f"{'-':>26}"
                continue
            time = "-" if r.time_mean is None else f"{r.time_mean:.1f}s"
            row += f"{f'{r.success_mean:.0f}(±{r.success_std:.0f}) {time}':>26}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> list[ResultsCell]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _CSV_HEADER:
        raise ConfigError("not a results CSV (header mismatch)")
    out = []
    for line in lines[1:]:
        (cell, policy, detector, n, sm, ss, tm, ts, rm, cm) = line.split(",")
        out.append(
            ResultsCell(
                cell=cell,
                policy=policy,
                detector=detector,
                n_episodes=int(n),
                success_mean=float(sm),
                success_std=float(ss),
                time_mean=None if tm == "-" else float(tm),
                time_std=None if ts == "-" else float(ts),
                replan_mean=float(rm),
                check_mean=float(cm),
            )
        )
    return out


# -- named grids -----------------------------------------------------------------


def policy(spec: str) -> PolicySpec:
    """Parse "kind" or "kind:detector_model" into a PolicySpec."""
    kind, _, det = spec.partition(":")
    return PolicySpec(kind=kind, detector=get_model(det) if det else get_model("oracle"))


def arm_grid() -> tuple[Cell, ...]:
    cells = [
        Cell(f"pick_place p={p:g}", pick_place_task(drop_p=p)) for p in (0.0, 0.2, 0.3)
    ]
    cells += [
        Cell(f"stack n={n:g}", stack_task(noise_n=n)) for n in (0.0, 1.0, 2.0, 3.0)
    ]
    cells += [
        Cell(f"stack n={n:g} p=0.1", stack_task(noise_n=n, drop_p=0.1))
        for n in (0.0, 1.0, 2.0, 3.0)
    ]
    return tuple(cells)


def humanoid_grid() -> tuple[Cell, ...]:
    cells = [
        Cell(f"obstacle d={d:g}", obstacle_task(density=d)) for d in (0.0, 0.3, 0.6)
    ]
    cells += [
        Cell(f"move_box p={p:g}", move_box_task(drop_p=p)) for p in (0.0, 0.02, 0.04)
    ]
    cells += [
        Cell(
            f"prepare_food p1=0.1 p={p:g}",
            prepare_food_task(pick_fail_p1=0.1, drop_p=p),
        )
        for p in (0.0, 0.02, 0.04)
    ]
    return tuple(cells)


def quick_grid() -> tuple[Cell, ...]:
    return (
        Cell("pick_place p=0.2", pick_place_task(drop_p=0.2)),
        Cell("stack n=2 p=0.1", stack_task(noise_n=2.0, drop_p=0.1)),
    )


GRIDS = {"arm": arm_grid, "humanoid": humanoid_grid, "quick": quick_grid}


# -- calibration ------------------------------------------------------------------


def calibrate(base: SimConfig | None = None) -> tuple[SimConfig, list[str]]:
    """Fit speed and exposure knobs to the nominal-time targets.

    Speeds follow directly from the scene geometry and the four target
    durations.  The pick-place leg split (which fixes how long a carried
    block is exposed to drops) is chosen so an open-loop executive's
    analytic success at drop rates 0.2 and 0.3 lands nearest the 81% / 63%
    operating points.
    """
    cfg = base or SimConfig()
    report: list[str] = []

    def dist(a, b) -> float:
        return ((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) ** 0.5

    # Arm speed from the stack geometry and its 7.2 s target.
    s = cfg.stack_slots
    legs = [
        dist(cfg.stack_home, s[1]),
        dist(s[1], s[0]),
        dist(s[0], s[2]),
        dist(s[2], s[0]),
    ]
    dwell = 2 * cfg.arm_grasp_s + 2 * cfg.arm_release_s
    arm_speed = sum(legs) / (NOMINAL_STACK_S - dwell)
    report.append(f"arm_speed = {sum(legs):.2f} m / {NOMINAL_STACK_S - dwell:.1f} s = {arm_speed:g} m/s")

    # Pick-place split: total travel is pinned by the 2.7 s target; the
    # place-leg duration T is the drop-exposure knob.
    total_travel = NOMINAL_PICKPLACE_S - cfg.arm_grasp_s - cfg.arm_release_s
    best_t, best_err = None, None
    t = 0.6
    while t <= 2.0 + 1e-9:
        err = sum(
            ((1.0 - p) ** t - target) ** 2 for p, target in SAYCAN_DEGRADATION_TARGETS
        )
        if best_err is None or err < best_err:
            best_t, best_err = t, err
        t = round(t + cfg.dt, 10)
    place_leg = best_t - cfg.arm_release_s
    fixture_d = round(place_leg * arm_speed, 10)
    block_d = round((total_travel - place_leg) * arm_speed, 10)
    report.append(
        f"pick-place split: carry exposure {best_t:g} s -> block at {block_d:g} m, "
        f"fixture {fixture_d:g} m further"
    )

    # Walk speed from the obstacle corridor and its 24.2 s target.
    walk_speed = cfg.corridor_length_m / NOMINAL_OBSTACLE_S
    report.append(
        f"walk_speed = {cfg.corridor_length_m:g} m / {NOMINAL_OBSTACLE_S:g} s = {walk_speed:g} m/s"
    )

    # Move-box geometry consistency check against its 32.2 s target.
    walk_legs = dist(cfg.movebox_start, cfg.movebox_pickup) + dist(
        cfg.movebox_pickup, cfg.movebox_dropoff
    )
    movebox_total = walk_legs / walk_speed + cfg.walk_grasp_s + cfg.walk_release_s
    report.append(
        f"move_box nominal = {walk_legs:g} m / {walk_speed:g} m/s + dwells = {movebox_total:g} s "
        f"(target {NOMINAL_MOVEBOX_S:g})"
    )

    fitted = cfg.replace(
        arm_speed=round(arm_speed, 10),
        walk_speed=round(walk_speed, 10),
        pickplace_block=(block_d, 0.0),
        pickplace_fixture=(block_d, fixture_d),
    )
    return fitted, report
