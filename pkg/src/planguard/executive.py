"""Closed-loop execution engines and the episode trace they produce.

Five policies drive the same planner/skill/world stack:

* ``doremi``            plan, then monitor the step's active constraints every
                        check period while the skill runs; on a reported
                        violation abort immediately, feed the violation back,
                        and re-plan.
* ``saycan``            open loop: execute planned steps in order, no checks.
* ``repeat``            after each skill, query the step's postcondition once
                        and repeat the same step until reported satisfied.
* ``inner_monologue``   after each skill, query the step's constraints once
                        and feed failures back to the planner; never aborts
                        mid-skill.
* ``im_oracle``         inner_monologue with ground-truth answers.

Within a tick the order is: control and motion, disturbances, detector checks
(only at check-period boundaries while the skill is still running), then
termination (collision, goal, timeout).  A violation caused at tick t is
therefore observable by the check of the same tick.

The monitored set for a running skill is the planned constraint set minus the
skill's own postcondition (which only becomes true when the skill completes)
plus, for place/put-down steps, the hold constraint on the carried object,
which must stay true until release.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import NamedTuple

from .config import SimConfig
from .constraints import Constraint, constraint_set, Holding, render
from .detector import ORACLE, CheckRecord, DetectorModel, check_all, get_model
from .errors import ConfigError, PlannerError
from .planner import (
    ANNOTATION_ABORTED,
    ANNOTATION_COMPLETED,
    HistoryEntry,
    PlanDecision,
    PromptState,
    ScriptedPlanner,
    annotate,
    encode_feedback,
)
from .rng import derive_seed
import random

from .skills import (
    FAILED,
    FINISHED,
    Place,
    PutDown,
    RUNNING,
    postcondition,
    skill_step,
    start_skill,
)
from .world import HALT, TaskSpec, WorldState, is_task_success, new_world, step

POLICY_SAYCAN = "saycan"
POLICY_REPEAT = "repeat"
POLICY_IM = "inner_monologue"
POLICY_IM_ORACLE = "im_oracle"
POLICY_DOREMI = "doremi"
ALL_POLICIES = (
    POLICY_SAYCAN,
    POLICY_REPEAT,
    POLICY_IM,
    POLICY_IM_ORACLE,
    POLICY_DOREMI,
)

_MAX_PLANS = 10_000

SUCCESS = "success"
FAILURE = "failure"


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    detector: DetectorModel = ORACLE
    replan_latency_s: float = 0.0

    def __post_init__(self):
        if self.kind not in ALL_POLICIES:
            raise ConfigError(f"unknown policy kind: {self.kind!r}")

    def effective_detector(self) -> DetectorModel:
        # The oracle-feedback baseline ignores any configured noise model.
        return ORACLE if self.kind == POLICY_IM_ORACLE else self.detector


class TraceEvent(NamedTuple):
    tick: int
    kind: str
    payload: str


@dataclass
class EpisodeTrace:
    task: TaskSpec
    seed: int
    policy: PolicySpec
    config_digest: str
    events: list[TraceEvent] = field(default_factory=list)
    outcome: str = ""
    reason: str = ""
    duration_ticks: int = 0
    replan_count: int = 0
    check_count: int = 0
    prompt: PromptState | None = None   # final dialogue state, for transcripts

    @property
    def success(self) -> bool:
        return self.outcome == SUCCESS

    def duration_s(self, dt: float = 0.05) -> float:
        return self.duration_ticks * dt


def derive_monitored(
    decision: PlanDecision, world: WorldState
) -> tuple[Constraint, ...]:
    """Constraints actually watchable while this skill runs."""
    own = postcondition(decision.step, world)
    monitored = [c for c in decision.constraints if c != own]
    if isinstance(decision.step, (Place, PutDown)):
        obj = world.objects.get(decision.step.obj)
        if obj is not None:
            monitored.append(Holding(obj.display_name()))
    return constraint_set(monitored)


def run_episode(
    task: TaskSpec,
    seed: int,
    policy: PolicySpec,
    config: SimConfig | None = None,
    planner=None,
) -> EpisodeTrace:
    cfg = config or SimConfig()
    planner = planner or ScriptedPlanner(cfg)
    world = new_world(task, seed, cfg)
    model = policy.effective_detector()
    det_rng = random.Random(
        derive_seed("detector", task.label(), seed, policy.kind, model.name)
    )
    prompt = PromptState(instruction=task.instruction)
    trace = EpisodeTrace(
        task=task, seed=seed, policy=policy, config_digest=cfg.digest(), prompt=prompt
    )
    events = trace.events
    timeout_ticks = cfg.ticks(task.timeout_s)
    check_ticks = cfg.check_ticks
    terminal: tuple[str, str] | None = None
    plans = 0

    def emit(kind: str, payload: str = "") -> None:
        events.append(TraceEvent(world.tick, kind, payload))

    def run_disturbances(control) -> None:
        for ev in step(world, control):
            emit("disturbance", f"{ev.kind} {' '.join(ev.objects)}".rstrip())

    def check_terminal() -> tuple[str, str] | None:
        if world.collided:
            return (FAILURE, "collision")
        if is_task_success(world, task):
            return (SUCCESS, "")
        if world.tick >= timeout_ticks:
            emit("timeout")
            return (FAILURE, "timeout")
        return None

    def idle_ticks(n: int) -> tuple[str, str] | None:
        for _ in range(n):
            run_disturbances(HALT)
            t = check_terminal()
            if t is not None:
                return t
        return None

    def run_checks(constraints: tuple[Constraint, ...]) -> list[bool]:
        records: list[CheckRecord] = []
        reported = check_all(model, constraints, world, det_rng, records)
        for r in records:
            emit("check", f"{render(r.constraint)} truth={int(r.truth)} reported={int(r.reported)}")
        trace.check_count += len(records)
        return reported

    while terminal is None:
        plans += 1
        if plans > _MAX_PLANS:
            terminal = (FAILURE, "planner")
            emit("planner_error", "plan budget exhausted")
            break
        had_feedback = prompt.feedback is not None
        try:
            decision = planner.plan_next(prompt, task)
        except PlannerError as exc:
            emit("planner_error", str(exc))
            terminal = (FAILURE, "planner")
            break
        if had_feedback:
            trace.replan_count += 1
            prompt.feedback = None
            latency = cfg.ticks(policy.replan_latency_s)
            if latency:
                terminal = idle_ticks(latency)
                if terminal is not None:
                    break
        constraint_texts = tuple(render(c) for c in decision.constraints)
        emit("plan", f"{decision.step_text} | {'; '.join(constraint_texts)}")

        if decision.done:
            terminal = (
                (SUCCESS, "") if is_task_success(world, task) else (FAILURE, "goal_not_reached")
            )
            break

        exec_ = start_skill(decision.step, world)
        emit("skill_start", decision.step_text)
        if exec_.status == FAILED:
            emit("skill_end", f"failed: {exec_.reason}")
            if policy.kind == POLICY_SAYCAN:
                ann = ANNOTATION_COMPLETED
            elif policy.kind == POLICY_REPEAT:
                ann = None      # repetition handled below, entry only on accept
            else:
                ann = f"failed: {exec_.reason}"
            # A balked skill still costs one tick; keeps degenerate retry
            # loops flowing toward the timeout instead of spinning in place.
            terminal = idle_ticks(1)
            if policy.kind == POLICY_REPEAT and terminal is None:
                accepted = _repeat_accepts(decision, world, run_checks)
                if accepted:
                    ann = ANNOTATION_COMPLETED
            if ann is not None:
                prompt.history.append(
                    HistoryEntry(decision.step_text, constraint_texts, ann)
                )
            continue

        if exec_.is_instant():
            emit("skill_end", "finished")
            _after_step(
                policy, decision, constraint_texts, prompt, world, run_checks, trace
            )
            terminal = check_terminal() if world.collided else None
            continue

        monitored: tuple[Constraint, ...] = ()
        if policy.kind == POLICY_DOREMI:
            monitored = derive_monitored(decision, world)
        prev_truth: dict[Constraint, bool] = {}
        onset: dict[Constraint, int] = {}
        consec: dict[Constraint, int] = {}
        for c in monitored:
            truth = world.evaluate_predicate(c)
            prev_truth[c] = truth
            consec[c] = 0
            if not truth:
                onset[c] = world.tick
        aborted_with: list[Constraint] = []

        while exec_.status == RUNNING and terminal is None:
            control, status = skill_step(exec_, world)
            run_disturbances(control)
            if monitored:
                for c in monitored:
                    truth = world.evaluate_predicate(c)
                    if prev_truth[c] and not truth:
                        onset[c] = world.tick
                    prev_truth[c] = truth
                if status == RUNNING and world.tick % check_ticks == 0:
                    reported = run_checks(monitored)
                    for c, rep in zip(monitored, reported):
                        if rep:
                            consec[c] = 0
                            continue
                        consec[c] += 1
                        if consec[c] >= model.confirmation_k:
                            aborted_with.append(c)
                    if aborted_with:
                        for c in aborted_with:
                            emit(
                                "violation",
                                f"{render(c)} onset_tick={onset.get(c, world.tick)}",
                            )
                        emit("abort", decision.step_text)
            terminal = check_terminal()
            if aborted_with:
                break

        if exec_.status != RUNNING:
            emit("skill_end", exec_.status)
        if terminal is not None:
            break
        if aborted_with:
            violated = constraint_set(aborted_with)
            prompt.history.append(
                HistoryEntry(
                    decision.step_text,
                    constraint_texts,
                    annotate(ANNOTATION_ABORTED, violated),
                )
            )
            prompt.feedback = encode_feedback(
                list(violated), world.clock, decision.step_text
            )
            continue
        _after_step(policy, decision, constraint_texts, prompt, world, run_checks, trace)

    trace.outcome, trace.reason = terminal
    trace.duration_ticks = min(world.tick, timeout_ticks)
    emit(trace.outcome, trace.reason)
    return trace


def _repeat_accepts(decision: PlanDecision, world: WorldState, run_checks) -> bool:
    post = postcondition(decision.step, world)
    if post is None:
        return True
    return run_checks((post,))[0]


def _after_step(
    policy: PolicySpec,
    decision: PlanDecision,
    constraint_texts: tuple[str, ...],
    prompt: PromptState,
    world: WorldState,
    run_checks,
    trace: EpisodeTrace,
) -> None:
    """History bookkeeping and end-of-step feedback per policy."""
    if policy.kind == POLICY_REPEAT:
        if _repeat_accepts(decision, world, run_checks):
            prompt.history.append(
                HistoryEntry(decision.step_text, constraint_texts, ANNOTATION_COMPLETED)
            )
        return
    if policy.kind in (POLICY_IM, POLICY_IM_ORACLE) and decision.constraints:
        reported = run_checks(decision.constraints)
        violated = constraint_set(
            [c for c, rep in zip(decision.constraints, reported) if not rep]
        )
        if violated:
            prompt.history.append(
                HistoryEntry(
                    decision.step_text,
                    constraint_texts,
                    annotate(ANNOTATION_COMPLETED, violated),
                )
            )
            prompt.feedback = encode_feedback(
                list(violated), world.clock, decision.step_text
            )
            return
    prompt.history.append(
        HistoryEntry(decision.step_text, constraint_texts, ANNOTATION_COMPLETED)
    )


# -- trace serialization -------------------------------------------------------

_TRACE_VERSION = "planguard-trace v1"


def trace_to_text(trace: EpisodeTrace, dt: float = 0.05) -> str:
    lines = [
        f"# {_TRACE_VERSION}",
        f"# config_digest: {trace.config_digest}",
        f"# task: {json.dumps(dataclasses.asdict(trace.task), sort_keys=True)}",
        f"# seed: {trace.seed}",
        f"# policy: {trace.policy.kind}",
        f"# detector: {trace.policy.effective_detector().name}",
        f"# replan_latency: {trace.policy.replan_latency_s:g}",
    ]
    for ev in trace.events:
        lines.append(f"{ev.tick}\t{ev.tick * dt:.2f}\t{ev.kind}\t{ev.payload}")
    lines += [
        f"# outcome: {trace.outcome}",
        f"# reason: {trace.reason}",
        f"# duration_ticks: {trace.duration_ticks}",
        f"# replans: {trace.replan_count}",
        f"# checks: {trace.check_count}",
    ]
    return "\n".join(lines) + "\n"


def trace_from_text(text: str) -> EpisodeTrace:
    header: dict[str, str] = {}
    events: list[TraceEvent] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("# "):
            body = line[2:]
            if body == _TRACE_VERSION:
                continue
            key, _, value = body.partition(": ")
            header[key] = value
            continue
        tick, _t, kind, _, payload = _split_event_line(line)
        events.append(TraceEvent(tick, kind, payload))
    if "task" not in header:
        raise ConfigError("trace is missing its task header")
    raw_task = json.loads(header["task"])
    raw_task["stack_order"] = tuple(raw_task.get("stack_order") or ())
    raw_task["injected"] = tuple(tuple(i) for i in raw_task.get("injected") or ())
    task = TaskSpec(**raw_task)
    policy = PolicySpec(
        kind=header["policy"],
        detector=get_model(header["detector"]),
        replan_latency_s=float(header.get("replan_latency", "0")),
    )
    trace = EpisodeTrace(
        task=task,
        seed=int(header["seed"]),
        policy=policy,
        config_digest=header.get("config_digest", ""),
        events=events,
        outcome=header.get("outcome", ""),
        reason=header.get("reason", ""),
        duration_ticks=int(header.get("duration_ticks", "0")),
        replan_count=int(header.get("replans", "0")),
        check_count=int(header.get("checks", "0")),
    )
    return trace


def _split_event_line(line: str) -> tuple[int, float, str, str, str]:
    parts = line.split("\t", 3)
    if len(parts) != 4:
        raise ConfigError(f"malformed trace line: {line!r}")
    return int(parts[0]), float(parts[1]), parts[2], "", parts[3]


@dataclass(frozen=True)
class ReplayReport:
    identical: bool
    first_divergence: int | None = None
    detail: str = ""
    config_mismatch: bool = False


def replay(trace: EpisodeTrace, config: SimConfig | None = None) -> ReplayReport:
    """Re-simulate from the trace's inputs and compare event-for-event."""
    cfg = config or SimConfig()
    config_mismatch = bool(trace.config_digest) and trace.config_digest != cfg.digest()
    fresh = run_episode(trace.task, trace.seed, trace.policy, cfg)
    for i, (a, b) in enumerate(zip(trace.events, fresh.events)):
        if a != b:
            return ReplayReport(
                False,
                i,
                f"event {i}: recorded {a!r} vs replayed {b!r}",
                config_mismatch,
            )
    if len(trace.events) != len(fresh.events):
        n = min(len(trace.events), len(fresh.events))
        return ReplayReport(
            False,
            n,
            f"length mismatch: recorded {len(trace.events)} vs replayed {len(fresh.events)}",
            config_mismatch,
        )
    return ReplayReport(True, None, "identical", config_mismatch)


def lint_abort_latency(trace: EpisodeTrace, check_ticks: int) -> list[str]:
    """Oracle-immediacy check: every abort within one check period of onset."""
    problems = []
    for ev in trace.events:
        if ev.kind != "violation":
            continue
        text, _, onset_part = ev.payload.rpartition(" onset_tick=")
        latency = ev.tick - int(onset_part)
        if latency > check_ticks:
            problems.append(
                f"tick {ev.tick}: violation of {text!r} detected {latency} ticks after onset"
            )
    return problems
