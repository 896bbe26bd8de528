"""Parameterized low-level skill controllers.

Each controller emits one ControlInput per tick and reports its own status.
A skill's Finished status reflects the controller's viewpoint only: a place
finishes when the release motion completes even if the block toppled, and a
pick finishes even when the grasp silently failed.  The gap between Finished
and actual task progress is what the executive policies have to manage.

Travel is straight-line at the configured speed, split into equal per-tick
slices so arrival lands on an exact tick; ``nominal_duration`` and the ticks
actually consumed agree by construction when nothing disturbs the motion.
"""

from __future__ import annotations

from dataclasses import dataclass

from .constraints import At, Constraint, Holding, On
from .errors import ConfigError
from .world import ARM_FAMILIES, ControlInput, HALT, WorldState

PICKABLE_KINDS = ("block", "box", "food")


@dataclass(frozen=True)
class Pick:
    obj: str


@dataclass(frozen=True)
class Place:
    obj: str
    receptacle: str


@dataclass(frozen=True)
class PutDown:
    obj: str


@dataclass(frozen=True)
class GoTo:
    place: str


@dataclass(frozen=True)
class GoForward:
    distance: float


@dataclass(frozen=True)
class MoveAtSpeed:
    speed: float


@dataclass(frozen=True)
class Turn:
    direction: str      # "left" | "right"


@dataclass(frozen=True)
class Done:
    pass


Skill = Pick | Place | PutDown | GoTo | GoForward | MoveAtSpeed | Turn | Done

RUNNING = "running"
FINISHED = "finished"
FAILED = "failed"


def _speed(world: WorldState) -> float:
    cfg = world.config
    return cfg.arm_speed if world.task.family in ARM_FAMILIES else cfg.walk_speed


def _grasp_ticks(world: WorldState) -> int:
    cfg = world.config
    s = cfg.arm_grasp_s if world.task.family in ARM_FAMILIES else cfg.walk_grasp_s
    return cfg.ticks(s)


def _release_ticks(world: WorldState) -> int:
    cfg = world.config
    s = cfg.arm_release_s if world.task.family in ARM_FAMILIES else cfg.walk_release_s
    return cfg.ticks(s)


def travel_ticks(distance: float, speed: float, dt: float) -> int:
    if distance <= 1e-12:
        return 0
    step = speed * dt
    return int(-(-(distance - 1e-9) // step))       # ceil


@dataclass
class SkillExecution:
    skill: Skill
    started_tick: int
    status: str = RUNNING
    reason: str = ""
    planned_ticks: int = 0
    # controller internals
    _mode: str = ""                 # release_other | approach | grasp | place | put | travel
    _target: tuple[float, float] | None = None
    _travel_left: int = 0
    _dwell_left: int = 0
    _speed: float = 0.0
    _release_first: str | None = None

    def is_instant(self) -> bool:
        return self.status == RUNNING and self.planned_ticks == 0


def _dist(a: tuple[float, float], b: tuple[float, float]) -> float:
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    return (dx * dx + dy * dy) ** 0.5


def _fail(skill: Skill, tick: int, reason: str) -> SkillExecution:
    return SkillExecution(skill=skill, started_tick=tick, status=FAILED, reason=reason)


def start_skill(skill: Skill, world: WorldState) -> SkillExecution:
    """Build a Running execution, or an immediately Failed one on bad inputs."""
    cfg = world.config
    tick = world.tick
    speed = _speed(world)

    if isinstance(skill, Pick):
        obj = world.objects.get(skill.obj)
        if obj is None or obj.kind not in PICKABLE_KINDS:
            return _fail(skill, tick, "unknown target")
        exec_ = SkillExecution(skill=skill, started_tick=tick, _speed=speed)
        exec_._dwell_left = _grasp_ticks(world)
        if world.held == obj.id:
            exec_._mode = "grasp"   # re-grasp of a held object: dwell only
            exec_.planned_ticks = exec_._dwell_left
            return exec_
        extra = 0
        if world.held is not None:
            exec_._release_first = world.held
            exec_._mode = "release_other"
            extra = 1
        else:
            exec_._mode = "approach"
        exec_._target = (obj.x, obj.y)
        exec_._travel_left = travel_ticks(
            _dist(world.robot_pos(), exec_._target), speed, cfg.dt
        )
        exec_.planned_ticks = extra + exec_._travel_left + exec_._dwell_left
        return exec_

    if isinstance(skill, Place):
        obj = world.objects.get(skill.obj)
        recep = world.objects.get(skill.receptacle)
        if obj is None or recep is None:
            return _fail(skill, tick, "unknown target")
        if world.held != obj.id:
            return _fail(skill, tick, "not holding")
        exec_ = SkillExecution(skill=skill, started_tick=tick, _speed=speed, _mode="approach")
        exec_._dwell_left = _release_ticks(world)
        exec_._target = (recep.x, recep.y)
        exec_._travel_left = travel_ticks(
            _dist(world.robot_pos(), exec_._target), speed, cfg.dt
        )
        exec_.planned_ticks = exec_._travel_left + exec_._dwell_left
        return exec_

    if isinstance(skill, PutDown):
        if world.held != skill.obj:
            return _fail(skill, tick, "not holding")
        exec_ = SkillExecution(skill=skill, started_tick=tick, _mode="put")
        exec_._dwell_left = _release_ticks(world)
        exec_.planned_ticks = exec_._dwell_left
        return exec_

    if isinstance(skill, GoTo):
        if skill.place not in world.places:
            return _fail(skill, tick, "unknown target")
        exec_ = SkillExecution(skill=skill, started_tick=tick, _speed=speed, _mode="travel")
        exec_._target = world.places[skill.place]
        exec_._travel_left = travel_ticks(
            _dist(world.robot_pos(), exec_._target), speed, cfg.dt
        )
        exec_.planned_ticks = exec_._travel_left
        return exec_

    if isinstance(skill, GoForward):
        if skill.distance < 0:
            return _fail(skill, tick, "unknown target")
        hx, hy = world.heading
        exec_ = SkillExecution(skill=skill, started_tick=tick, _speed=speed, _mode="travel")
        exec_._target = (
            world.robot_x + hx * skill.distance,
            world.robot_y + hy * skill.distance,
        )
        exec_._travel_left = travel_ticks(skill.distance, speed, cfg.dt)
        exec_.planned_ticks = exec_._travel_left
        return exec_

    if isinstance(skill, MoveAtSpeed):
        if skill.speed <= 0:
            return _fail(skill, tick, "unknown target")
        hx, hy = world.heading
        distance = skill.speed * 1.0    # one second burst at the commanded speed
        exec_ = SkillExecution(
            skill=skill, started_tick=tick, _speed=skill.speed, _mode="travel"
        )
        exec_._target = (world.robot_x + hx * distance, world.robot_y + hy * distance)
        exec_._travel_left = travel_ticks(distance, skill.speed, cfg.dt)
        exec_.planned_ticks = exec_._travel_left
        return exec_

    if isinstance(skill, Turn):
        if skill.direction not in ("left", "right"):
            return _fail(skill, tick, "unknown target")
        hx, hy = world.heading
        px, py = (-hy, hx) if skill.direction == "left" else (hy, -hx)
        exec_ = SkillExecution(skill=skill, started_tick=tick, _mode="travel")
        exec_._target = (
            world.robot_x + px * world.config.sidestep_m,
            world.robot_y + py * world.config.sidestep_m,
        )
        ticks = world.config.ticks(world.config.turn_duration_s)
        exec_._travel_left = ticks
        exec_._speed = world.config.sidestep_m / world.config.turn_duration_s
        exec_.planned_ticks = ticks
        return exec_

    raise ConfigError(f"cannot start skill {skill!r}")


def _move_slice(exec_: SkillExecution, world: WorldState) -> tuple[float, float]:
    tx, ty = exec_._target
    dx = tx - world.robot_x
    dy = ty - world.robot_y
    if exec_._travel_left <= 1:
        exec_._travel_left = 0
        return dx, dy                   # snap exactly onto the target
    frac = 1.0 / exec_._travel_left
    exec_._travel_left -= 1
    return dx * frac, dy * frac


def _retarget(exec_: SkillExecution, world: WorldState, pos: tuple[float, float]) -> None:
    # Approach targets can move (a receptacle may have toppled mid-skill).
    if exec_._target != pos:
        exec_._target = pos
        exec_._travel_left = travel_ticks(
            _dist(world.robot_pos(), pos), exec_._speed, world.config.dt
        )


def skill_step(exec_: SkillExecution, world: WorldState, dt: float | None = None) -> tuple[ControlInput, str]:
    """One tick of control.  Must only be called while Running."""
    assert exec_.status == RUNNING, "skill_step on a non-running execution"
    skill = exec_.skill

    if exec_._mode == "release_other":
        exec_._mode = "approach"
        return ControlInput(action=("put", exec_._release_first)), RUNNING

    if exec_._mode == "approach":
        if isinstance(skill, Pick):
            obj = world.objects[skill.obj]
            _retarget(exec_, world, (obj.x, obj.y))
        elif isinstance(skill, Place):
            recep = world.objects[skill.receptacle]
            _retarget(exec_, world, (recep.x, recep.y))
        if exec_._travel_left > 0:
            dx, dy = _move_slice(exec_, world)
            return ControlInput(dx, dy), RUNNING
        exec_._mode = "grasp" if isinstance(skill, Pick) else "place"
        # fall through to the dwell on this same tick

    if exec_._mode in ("grasp", "place", "put"):
        exec_._dwell_left -= 1
        if exec_._dwell_left > 0:
            return HALT, RUNNING
        exec_.status = FINISHED
        if exec_._mode == "grasp":
            return ControlInput(action=("pick", skill.obj)), FINISHED
        if exec_._mode == "place":
            return ControlInput(action=("place", skill.obj, skill.receptacle)), FINISHED
        return ControlInput(action=("put", skill.obj)), FINISHED

    if exec_._mode == "travel":
        dx, dy = _move_slice(exec_, world)
        if exec_._travel_left == 0:
            exec_.status = FINISHED
            return ControlInput(dx, dy), FINISHED
        return ControlInput(dx, dy), RUNNING

    raise ConfigError(f"skill execution in unknown mode {exec_._mode!r}")


def nominal_duration(skill: Skill, world: WorldState) -> float:
    """Disturbance-free duration in seconds, from distances and speeds."""
    exec_ = start_skill(skill, world)
    if exec_.status == FAILED:
        raise ConfigError(f"{skill!r} cannot start here: {exec_.reason}")
    return exec_.planned_ticks * world.config.dt


def postcondition(skill: Skill, world: WorldState) -> Constraint | None:
    """The predicate a skill is supposed to establish, if expressible."""
    if isinstance(skill, Pick):
        return Holding(world.object(skill.obj).display_name())
    if isinstance(skill, Place):
        return On(
            world.object(skill.obj).display_name(),
            world.object(skill.receptacle).display_name(),
        )
    if isinstance(skill, GoTo):
        return At(skill.place)
    return None
