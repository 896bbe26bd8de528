"""Scripted next-step planner with constraint generation.

The planner selects the next skill and the constraint set that should hold
around it, given only the task instruction and its own step history with
outcome annotations.  It never sees ground truth: its belief is rebuilt by
folding the history on every call, which makes ``plan_next`` a pure function
of (prompt, task) and keeps identical prompts giving identical decisions.

Constraint sets follow the carry-forward pattern: a pick step lists the hold
constraint first and then every support relation established so far; a place
step lists the established relations and ends with its own target relation.

Recovery rules, keyed by the violated constraint kind:

* holding violated       -> re-pick the object at its current location
* on(a, b) violated      -> re-establish a on b, then redo the interrupted
                            step (re-securing the carried object around it)
* clear-ahead violated   -> sidestep, alternating direction starting left,
                            then resume the walk
* at violated            -> re-issue the go-to

History annotations are machine-readable: ``completed``, ``aborted`` or
``failed: <reason>``, optionally followed by ``; violated: <canonical
constraint texts>`` carrying detector feedback.  Feedback is re-applied
during the fold, so consuming it never mutates hidden state.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .config import SimConfig
from .constraints import (
    At,
    ClearAhead,
    Constraint,
    Holding,
    On,
    constraint_set,
    object_id,
    parse as parse_constraint,
    render,
    render_violation,
)
from .errors import PlannerError
from .skills import (
    Done,
    GoForward,
    GoTo,
    MoveAtSpeed,
    Pick,
    Place,
    PutDown,
    Skill,
    Turn,
)
from .world import (
    FAMILY_MOVE_BOX,
    FAMILY_OBSTACLE,
    FAMILY_PICK_PLACE,
    FAMILY_PREPARE_FOOD,
    FAMILY_STACK,
    FOOD_NAMES,
    TaskSpec,
)


@dataclass(frozen=True)
class FeedbackMsg:
    violated: tuple[Constraint, ...]
    at_time_s: float
    during_step: str

    def __post_init__(self):
        if not self.violated:
            raise PlannerError("feedback must list at least one violated constraint")

    def text(self) -> str:
        return ", ".join(render_violation(c) for c in self.violated)


def encode_feedback(
    violations: list[Constraint] | tuple[Constraint, ...],
    time_s: float,
    step_text: str,
) -> FeedbackMsg:
    return FeedbackMsg(tuple(violations), time_s, step_text)


@dataclass(frozen=True)
class HistoryEntry:
    step_text: str
    constraint_texts: tuple[str, ...]
    annotation: str      # completed | aborted | failed: <reason> [; violated: ...]


@dataclass
class PromptState:
    instruction: str
    history: list[HistoryEntry] = field(default_factory=list)
    feedback: FeedbackMsg | None = None


@dataclass(frozen=True)
class PlanDecision:
    step: Skill
    step_text: str
    constraints: tuple[Constraint, ...]
    rationale: str = ""

    @property
    def done(self) -> bool:
        return isinstance(self.step, Done)


# -- step text rendering / parsing -------------------------------------------


def task_display_names(task: TaskSpec) -> dict[str, str]:
    if task.family == FAMILY_PICK_PLACE:
        return {"red": "red block", "fixture": "fixture"}
    if task.family == FAMILY_STACK:
        return {b: f"{b} block" for b in task.stack_order}
    if task.family == FAMILY_MOVE_BOX:
        return {"box": "box"}
    if task.family == FAMILY_PREPARE_FOOD:
        names = {f: f for f in FOOD_NAMES[: task.food_count]}
        names["basket"] = "basket"
        return names
    return {}


def describe_skill(skill: Skill, names: dict[str, str]) -> str:
    def disp(obj: str) -> str:
        return names.get(obj, obj)

    if isinstance(skill, Pick):
        d = disp(skill.obj)
        verb = "Pick" if d.endswith(" block") else "Pick up"
        return f"{verb} the {d}"
    if isinstance(skill, Place):
        d_obj, d_rec = disp(skill.obj), disp(skill.receptacle)
        joiner = "on" if d_rec.endswith(" block") else "in"
        return f"Place the {d_obj} {joiner} the {d_rec}"
    if isinstance(skill, PutDown):
        return f"Put down the {disp(skill.obj)}"
    if isinstance(skill, GoTo):
        return f"Go to {skill.place}"
    if isinstance(skill, GoForward):
        return f"Go forward {skill.distance:g} meters"
    if isinstance(skill, MoveAtSpeed):
        return f"Move forward at speed {skill.speed:g}"
    if isinstance(skill, Turn):
        return f"Turn {skill.direction}"
    if isinstance(skill, Done):
        return "Done"
    raise PlannerError(f"cannot describe skill {skill!r}")


_STEP_PATTERNS: tuple[tuple[re.Pattern, object], ...] = (
    (re.compile(r"^pick(?: up)? (?:the )?(?P<obj>.+)$"), "pick"),
    (
        re.compile(r"^place (?:the )?(?P<obj>.+?) (?:on|in) (?:the )?(?P<rec>.+)$"),
        "place",
    ),
    (re.compile(r"^put down (?:the )?(?P<obj>.+)$"), "put_down"),
    (re.compile(r"^go to (?:the )?(?P<place>.+)$"), "go_to"),
    (re.compile(r"^go forward (?P<dist>[0-9.]+) meters?$"), "go_forward"),
    (re.compile(r"^move forward at speed (?P<speed>[0-9.]+)$"), "move_at_speed"),
    (re.compile(r"^turn (?P<dir>left|right)$"), "turn"),
    (re.compile(r"^done\.?$"), "done"),
)


def parse_step(text: str) -> Skill:
    """Inverse of describe_skill; used for history folding and the wire."""
    norm = " ".join(text.strip().split()).lower().rstrip(".")
    for pattern, kind in _STEP_PATTERNS:
        m = pattern.match(norm)
        if not m:
            continue
        if kind == "pick":
            return Pick(object_id(m.group("obj")))
        if kind == "place":
            return Place(object_id(m.group("obj")), object_id(m.group("rec")))
        if kind == "put_down":
            return PutDown(object_id(m.group("obj")))
        if kind == "go_to":
            return GoTo(m.group("place"))
        if kind == "go_forward":
            return GoForward(float(m.group("dist")))
        if kind == "move_at_speed":
            return MoveAtSpeed(float(m.group("speed")))
        if kind == "turn":
            return Turn(m.group("dir"))
        return Done()
    raise PlannerError(f"unknown skill name: {text!r}")


# -- annotations --------------------------------------------------------------

ANNOTATION_COMPLETED = "completed"
ANNOTATION_ABORTED = "aborted"


def annotate(base: str, violated: tuple[Constraint, ...] = ()) -> str:
    if not violated:
        return base
    return base + "; violated: " + ", ".join(render(c) for c in violated)


def _split_annotation(annotation: str) -> tuple[str, tuple[Constraint, ...]]:
    base, sep, rest = annotation.partition("; violated: ")
    if not sep:
        return base, ()
    return base, tuple(parse_constraint(t) for t in rest.split(", "))


# -- belief folding ------------------------------------------------------------


@dataclass
class _Belief:
    queue: list[Skill]
    held: str | None = None
    completed_places: list[tuple[str, str]] = field(default_factory=list)
    turns: int = 0


class ScriptedPlanner:
    """Deterministic per-family rule tables standing in for a language model."""

    def __init__(self, config: SimConfig | None = None):
        self.config = config or SimConfig()
        self._check_recovery_closure()

    # One recovery rule per emittable constraint kind, verified at startup.
    _RECOVERABLE_KINDS = frozenset({"holding", "on", "clear_ahead", "at"})

    def _check_recovery_closure(self) -> None:
        emittable = {"holding", "on", "clear_ahead", "at"}
        missing = emittable - self._RECOVERABLE_KINDS
        if missing:
            raise PlannerError(f"no recovery rule for constraint kinds: {missing}")

    # -- public API -----------------------------------------------------------

    def plan_next(self, prompt: PromptState, task: TaskSpec) -> PlanDecision:
        belief = self._fold(prompt, task)
        names = task_display_names(task)
        if not belief.queue:
            return PlanDecision(Done(), "Done", (), rationale="believed goal reached")
        skill = belief.queue[0]
        constraints = self._constraints_for(skill, belief, task, names)
        return PlanDecision(
            step=skill,
            step_text=describe_skill(skill, names),
            constraints=constraints,
            rationale="scripted rule table",
        )

    # -- internals -------------------------------------------------------------

    def _nominal_queue(self, task: TaskSpec) -> list[Skill]:
        if task.family == FAMILY_PICK_PLACE:
            return [Pick("red"), Place("red", "fixture")]
        if task.family == FAMILY_STACK:
            queue: list[Skill] = []
            order = task.stack_order
            for below, above in zip(order, order[1:]):
                queue.append(Pick(above))
                queue.append(Place(above, below))
            return queue
        if task.family == FAMILY_OBSTACLE:
            return [GoForward(self.config.corridor_length_m)]
        if task.family == FAMILY_MOVE_BOX:
            return [GoTo("table_a"), Pick("box"), GoTo("table_b"), PutDown("box")]
        if task.family == FAMILY_PREPARE_FOOD:
            queue = []
            for food in FOOD_NAMES[: task.food_count]:
                queue.append(Pick(food))
                queue.append(Place(food, "basket"))
            return queue
        raise PlannerError(f"no plan rules for family {task.family!r}")

    def _fold(self, prompt: PromptState, task: TaskSpec) -> _Belief:
        belief = _Belief(queue=self._nominal_queue(task))
        for entry in prompt.history:
            skill = parse_step(entry.step_text)
            if not belief.queue or belief.queue[0] != skill:
                raise PlannerError(
                    f"no applicable rule: history step {entry.step_text!r} "
                    "does not match the believed plan"
                )
            base, violated = _split_annotation(entry.annotation)
            if base == ANNOTATION_COMPLETED:
                self._apply_effects(belief, skill)
                belief.queue.pop(0)
                if violated:
                    self._apply_feedback(belief, violated, skill, aborted=False)
            elif base == ANNOTATION_ABORTED:
                if violated:
                    self._apply_feedback(belief, violated, skill, aborted=True)
            elif base.startswith("failed"):
                reason = base.partition(":")[2].strip()
                self._apply_failure(belief, skill, reason)
            else:
                raise PlannerError(f"no applicable rule for annotation {base!r}")
        if prompt.feedback is not None and not _last_entry_has_feedback(prompt):
            during = (
                parse_step(prompt.feedback.during_step)
                if prompt.feedback.during_step
                else None
            )
            aborted = bool(belief.queue) and belief.queue[0] == during
            self._apply_feedback(belief, prompt.feedback.violated, during, aborted)
        return belief

    def _apply_effects(self, belief: _Belief, skill: Skill) -> None:
        if isinstance(skill, Pick):
            belief.held = skill.obj
        elif isinstance(skill, Place):
            belief.held = None
            pair = (skill.obj, skill.receptacle)
            if pair not in belief.completed_places:
                belief.completed_places.append(pair)
        elif isinstance(skill, PutDown):
            belief.held = None
        elif isinstance(skill, Turn):
            belief.turns += 1

    @staticmethod
    def _repair_pending(belief: _Belief, c: On) -> bool:
        target = Place(object_id(c.above), object_id(c.below))
        return target in belief.queue[:4]

    def _apply_failure(self, belief: _Belief, skill: Skill, reason: str) -> None:
        if reason == "not holding" and isinstance(skill, (Place, PutDown)):
            belief.queue.insert(0, Pick(skill.obj))
            return
        raise PlannerError(f"no applicable rule for failed step ({reason!r})")

    def _apply_feedback(
        self,
        belief: _Belief,
        violated: tuple[Constraint, ...],
        during: Skill | None,
        aborted: bool,
    ) -> None:
        ons = [c for c in violated if isinstance(c, On)]
        holdings = [c for c in violated if isinstance(c, Holding)]
        clears = [c for c in violated if isinstance(c, ClearAhead)]
        ats = [c for c in violated if isinstance(c, At)]

        for c in ats:
            belief.queue.insert(0, GoTo(c.place))
        if clears:
            direction = "left" if belief.turns % 2 == 0 else "right"
            belief.queue.insert(0, Turn(direction))
        # A violation whose repair is already queued up front is in progress;
        # re-prepending it would let repeated feedback grow the plan unboundedly.
        ons = [c for c in ons if not self._repair_pending(belief, c)]
        if ons:
            if aborted and isinstance(during, Place):
                # Re-secure the carried object, mend the broken support, then
                # redo the interrupted placement.
                head = belief.queue.pop(0)
                template: list[Skill] = [Pick(during.obj)]
                for c in ons:
                    template.append(Place(object_id(c.above), object_id(c.below)))
                template += [Pick(during.obj), head]
                belief.queue[0:0] = template
            else:
                restores: list[Skill] = []
                for c in ons:
                    restores += [
                        Pick(object_id(c.above)),
                        Place(object_id(c.above), object_id(c.below)),
                    ]
                belief.queue[0:0] = restores
        for c in holdings:
            belief.queue.insert(0, Pick(object_id(c.obj)))

    def _constraints_for(
        self,
        skill: Skill,
        belief: _Belief,
        task: TaskSpec,
        names: dict[str, str],
    ) -> tuple[Constraint, ...]:
        def disp(obj: str) -> str:
            return names.get(obj, obj)

        chain = [On(disp(a), disp(b)) for a, b in belief.completed_places]
        if isinstance(skill, Pick):
            return constraint_set([Holding(disp(skill.obj))] + chain)
        if isinstance(skill, Place):
            return constraint_set(chain + [On(disp(skill.obj), disp(skill.receptacle))])
        if isinstance(skill, GoForward) and task.family == FAMILY_OBSTACLE:
            return (ClearAhead(),)
        if isinstance(skill, (GoTo, GoForward, MoveAtSpeed, PutDown)) and belief.held:
            return (Holding(disp(belief.held)),)
        return ()


def _last_entry_has_feedback(prompt: PromptState) -> bool:
    return bool(prompt.history) and "; violated: " in prompt.history[-1].annotation


# -- transcript rendering ------------------------------------------------------


def render_prompt(prompt: PromptState) -> str:
    """Bracketed transcript of the dialogue so far (golden-file pinned)."""
    lines = [f"Task: {prompt.instruction}"]
    for i, entry in enumerate(prompt.history, 1):
        line = f"({i}) {entry.step_text}"
        if entry.constraint_texts:
            line += ", [Constraint: " + ", ".join(entry.constraint_texts) + "]"
        base, violated = _split_annotation(entry.annotation)
        if base.startswith("failed"):
            line += f", [Failed: {base.partition(':')[2].strip()}]"
        if violated:
            feedback = ", ".join(render_violation(c) for c in violated)
            line += f", [Detector feedback: {feedback}]"
        lines.append(line)
    return "\n".join(lines)
