"""Ground-truth simulation of the tabletop and mobile-robot task worlds.

Discrete time: ``step`` advances exactly one tick of ``config.dt`` seconds and
applies, in order, (1) the controller's motion and grasp/release action,
(2) collision detection, (3) stochastic and scheduled disturbances.  Detector
checks and termination live in the executive, which sequences them after this
function within the same tick.

Positions are 2D metres.  For the arm families the "robot" pose is the
end-effector; for the mobile families it is the robot base.  Headings are unit
vectors and all motion here is axis-aligned or along precomputed segments, so
no trigonometry is involved and results are bit-identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

from . import rng as rnglib
from .config import SimConfig
from .constraints import At, ClearAhead, Constraint, Holding, On, object_id
from .errors import ConfigError, EvaluationError

TABLE = "table"
GRIPPER = "gripper"

FAMILY_PICK_PLACE = "pick_place"
FAMILY_STACK = "stack_in_order"
FAMILY_OBSTACLE = "obstacle_avoid"
FAMILY_MOVE_BOX = "move_box"
FAMILY_PREPARE_FOOD = "prepare_food"

ARM_FAMILIES = (FAMILY_PICK_PLACE, FAMILY_STACK)
ALL_FAMILIES = (
    FAMILY_PICK_PLACE,
    FAMILY_STACK,
    FAMILY_OBSTACLE,
    FAMILY_MOVE_BOX,
    FAMILY_PREPARE_FOOD,
)

FOOD_NAMES = ("apple", "banana", "orange", "pear", "grape")


@dataclass(frozen=True)
class TaskSpec:
    family: str
    instruction: str
    goal: str
    timeout_s: float
    drop_p: float = 0.0            # per-second probability the held object drops
    place_noise_n: float = 0.0     # uniform [0, n] cm radial placement noise
    pick_fail_p1: float = 0.0      # probability a pick attempt silently fails
    obstacle_d: float = 0.0        # obstacle density parameter
    stack_order: tuple[str, ...] = ()
    food_count: int = 0
    injected: tuple[tuple[float, str, str], ...] = ()  # (time_s, kind, target)

    def __post_init__(self):
        if self.family not in ALL_FAMILIES:
            raise ConfigError(f"unknown task family: {self.family!r}")
        for name, p in (
            ("drop_p", self.drop_p),
            ("pick_fail_p1", self.pick_fail_p1),
        ):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if self.place_noise_n < 0:
            raise ConfigError("place_noise_n must be >= 0")
        if self.obstacle_d < 0:
            raise ConfigError("obstacle_d must be >= 0")
        if self.timeout_s <= 0:
            raise ConfigError("timeout must be positive")

    def label(self) -> str:
        parts = []
        if self.family == FAMILY_PICK_PLACE:
            parts.append(f"p={self.drop_p:g}")
        elif self.family == FAMILY_STACK:
            parts.append(f"n={self.place_noise_n:g}")
            if self.drop_p:
                parts.append(f"p={self.drop_p:g}")
        elif self.family == FAMILY_OBSTACLE:
            parts.append(f"d={self.obstacle_d:g}")
        elif self.family == FAMILY_MOVE_BOX:
            parts.append(f"p={self.drop_p:g}")
        elif self.family == FAMILY_PREPARE_FOOD:
            parts.append(f"p1={self.pick_fail_p1:g}")
            parts.append(f"p={self.drop_p:g}")
        return f"{self.family}[{','.join(parts)}]"


def pick_place_task(drop_p: float = 0.0, injected=()) -> TaskSpec:
    return TaskSpec(
        family=FAMILY_PICK_PLACE,
        instruction="Put the red block in the fixture",
        goal="red block placed in the fixture",
        timeout_s=20.0,
        drop_p=drop_p,
        injected=tuple(injected),
    )


def stack_task(
    order: tuple[str, ...] = ("brown", "red", "green"),
    noise_n: float = 0.0,
    drop_p: float = 0.0,
    injected=(),
) -> TaskSpec:
    if len(order) < 2:
        raise ConfigError("stack order needs at least two blocks")
    listed = ", ".join(order[:-1]) + f", and {order[-1]}"
    return TaskSpec(
        family=FAMILY_STACK,
        instruction=f"Stack blocks in the order of {listed}",
        goal="blocks stacked bottom-up in the instruction order",
        timeout_s=20.0,
        place_noise_n=noise_n,
        drop_p=drop_p,
        stack_order=tuple(order),
        injected=tuple(injected),
    )


def obstacle_task(density: float = 0.0, injected=()) -> TaskSpec:
    return TaskSpec(
        family=FAMILY_OBSTACLE,
        instruction="Walk to the finish line",
        goal="robot past the finish line with zero collisions",
        timeout_s=120.0,
        obstacle_d=density,
        injected=tuple(injected),
    )


def move_box_task(drop_p: float = 0.0, injected=()) -> TaskSpec:
    return TaskSpec(
        family=FAMILY_MOVE_BOX,
        instruction="Move the box from table_a to table_b",
        goal="box put down at table_b",
        timeout_s=120.0,
        drop_p=drop_p,
        injected=tuple(injected),
    )


def prepare_food_task(
    pick_fail_p1: float = 0.0,
    drop_p: float = 0.0,
    count: int = 3,
    injected=(),
) -> TaskSpec:
    if not 1 <= count <= len(FOOD_NAMES):
        raise ConfigError(f"food count must be 1..{len(FOOD_NAMES)}")
    foods = FOOD_NAMES[:count]
    listed = ", ".join(foods[:-1]) + f" and {foods[-1]}" if count > 1 else foods[0]
    return TaskSpec(
        family=FAMILY_PREPARE_FOOD,
        instruction=f"Collect the {listed} into the basket",
        goal="all requested foods in the basket",
        timeout_s=120.0,
        drop_p=drop_p,
        pick_fail_p1=pick_fail_p1,
        food_count=count,
        injected=tuple(injected),
    )


TASK_BUILDERS = {
    FAMILY_PICK_PLACE: pick_place_task,
    FAMILY_STACK: stack_task,
    FAMILY_OBSTACLE: obstacle_task,
    FAMILY_MOVE_BOX: move_box_task,
    FAMILY_PREPARE_FOOD: prepare_food_task,
}


@dataclass
class ObjectState:
    id: str
    kind: str                       # block | box | food | fixture
    x: float
    y: float
    stack_height: int = 0
    supported_by: str = TABLE       # TABLE, GRIPPER, or another object id

    def display_name(self) -> str:
        return f"{self.id} block" if self.kind == "block" else self.id


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    radius: float


@dataclass(frozen=True)
class DisturbanceEvent:
    tick: int
    kind: str                       # drop | pick_fail | topple | collision
    objects: tuple[str, ...] = ()


class ControlInput(NamedTuple):
    dx: float = 0.0
    dy: float = 0.0
    # None, ("pick", obj), ("place", obj, receptacle) or ("put", obj)
    action: tuple | None = None


HALT = ControlInput()


@dataclass
class WorldState:
    config: SimConfig
    task: TaskSpec
    seed: int
    tick: int = 0
    robot_x: float = 0.0
    robot_y: float = 0.0
    heading: tuple[float, float] = (1.0, 0.0)
    held: str | None = None
    objects: dict[str, ObjectState] = field(default_factory=dict)
    obstacles: list[Obstacle] = field(default_factory=list)
    places: dict[str, tuple[float, float]] = field(default_factory=dict)
    collided: bool = False
    streams: rnglib.StreamSet | None = None
    _injected_by_tick: dict[int, list[tuple[str, str]]] = field(default_factory=dict)
    _drop_q: float = 0.0            # per-tick drop probability

    @property
    def clock(self) -> float:
        return self.tick * self.config.dt

    def robot_pos(self) -> tuple[float, float]:
        return (self.robot_x, self.robot_y)

    def object(self, obj_id: str) -> ObjectState:
        try:
            return self.objects[obj_id]
        except KeyError:
            raise EvaluationError(f"unknown object id: {obj_id!r}") from None

    # -- predicates ---------------------------------------------------------

    def evaluate_predicate(self, pred: Constraint) -> bool:
        """Ground truth for the detector; pure function of the state."""
        if isinstance(pred, Holding):
            obj = self.object(object_id(pred.obj))       # unknown id must raise
            return self.held == obj.id
        if isinstance(pred, On):
            above = self.object(object_id(pred.above))
            below = self.object(object_id(pred.below))
            return above.supported_by == below.id
        if isinstance(pred, ClearAhead):
            return not self._blocked_ahead()
        if isinstance(pred, At):
            if pred.place not in self.places:
                raise EvaluationError(f"unknown place: {pred.place!r}")
            px, py = self.places[pred.place]
            return _dist(self.robot_x, self.robot_y, px, py) <= self.config.at_tolerance_m
        raise EvaluationError(f"unknown predicate: {pred!r}")

    def _blocked_ahead(self) -> bool:
        hx, hy = self.heading
        sense = self.config.sense_range_m
        for ob in self.obstacles:
            dx = ob.x - self.robot_x
            dy = ob.y - self.robot_y
            forward = dx * hx + dy * hy
            lateral = -dx * hy + dy * hx
            if 0.0 < forward <= sense and abs(lateral) < (
                self.config.robot_radius_m + ob.radius
            ):
                return True
        return False

    # -- debug invariants ---------------------------------------------------

    def validate(self) -> None:
        held_count = 0
        for obj in self.objects.values():
            if obj.supported_by == GRIPPER:
                held_count += 1
                assert self.held == obj.id, "held field out of sync"
            elif obj.supported_by == TABLE:
                assert obj.stack_height == 0, f"{obj.id} on table with height > 0"
            else:
                parent = self.objects[obj.supported_by]
                assert obj.stack_height == parent.stack_height + 1
                off = _dist(obj.x, obj.y, parent.x, parent.y)
                assert off <= self.config.tau_topple_m + 1e-9, (
                    f"{obj.id} offset {off:.4f} beyond topple threshold"
                )
        assert held_count == (0 if self.held is None else 1)
        for obj in self.objects.values():    # support graph acyclic
            seen = set()
            cur = obj.supported_by
            while cur not in (TABLE, GRIPPER):
                assert cur not in seen, f"support cycle through {cur}"
                seen.add(cur)
                cur = self.objects[cur].supported_by


def _dist(ax: float, ay: float, bx: float, by: float) -> float:
    dx = ax - bx
    dy = ay - by
    return (dx * dx + dy * dy) ** 0.5


# -- scene construction ------------------------------------------------------


def new_world(task: TaskSpec, seed: int, config: SimConfig | None = None) -> WorldState:
    """Deterministic scene per (task, seed); identical inputs, identical state."""
    cfg = config or SimConfig()
    streams = rnglib.StreamSet("world", task.label(), seed)
    world = WorldState(config=cfg, task=task, seed=seed, streams=streams)
    world._drop_q = 1.0 - (1.0 - task.drop_p) ** cfg.dt if task.drop_p else 0.0
    for time_s, kind, target in task.injected:
        tick = cfg.ticks(time_s)
        world._injected_by_tick.setdefault(tick, []).append((kind, target))

    if task.family == FAMILY_PICK_PLACE:
        world.robot_x, world.robot_y = cfg.pickplace_home
        _add(world, ObjectState("red", "block", *cfg.pickplace_block))
        _add(world, ObjectState("fixture", "fixture", *cfg.pickplace_fixture))
        world.places["home"] = cfg.pickplace_home
    elif task.family == FAMILY_STACK:
        if len(task.stack_order) > len(cfg.stack_slots):
            raise ConfigError("not enough stack slots configured")
        world.robot_x, world.robot_y = cfg.stack_home
        for name, slot in zip(task.stack_order, cfg.stack_slots):
            _add(world, ObjectState(name, "block", *slot))
        world.places["home"] = cfg.stack_home
    elif task.family == FAMILY_OBSTACLE:
        world.robot_x, world.robot_y = 0.0, 0.0
        world.places["finish_line"] = (cfg.corridor_length_m, 0.0)
        layout = streams.stream("layout")
        mu = cfg.obstacle_rate_coeff * task.obstacle_d
        for _ in range(rnglib.poisson(layout, mu)):
            x = layout.uniform(1.0, cfg.corridor_length_m - 1.0)
            y = layout.uniform(-cfg.obstacle_lateral_max_m, cfg.obstacle_lateral_max_m)
            world.obstacles.append(Obstacle(x, y, cfg.obstacle_radius_m))
        world.obstacles.sort(key=lambda ob: ob.x)
    elif task.family == FAMILY_MOVE_BOX:
        world.robot_x, world.robot_y = cfg.movebox_start
        _add(world, ObjectState("box", "box", *cfg.movebox_pickup))
        world.places["table_a"] = cfg.movebox_pickup
        world.places["table_b"] = cfg.movebox_dropoff
    elif task.family == FAMILY_PREPARE_FOOD:
        world.robot_x, world.robot_y = 0.0, 0.0
        _add(world, ObjectState("basket", "fixture", *cfg.food_basket))
        layout = streams.stream("layout")
        placed: list[tuple[float, float]] = [cfg.food_basket]
        x0, y0, x1, y1 = cfg.food_zone
        for name in FOOD_NAMES[: task.food_count]:
            for _ in range(200):
                fx = layout.uniform(x0, x1)
                fy = layout.uniform(y0, y1)
                if all(
                    _dist(fx, fy, px, py) >= cfg.food_min_separation_m
                    for px, py in placed
                ):
                    break
            placed.append((fx, fy))
            _add(world, ObjectState(name, "food", fx, fy))
    if __debug__:
        world.validate()
    return world


def _add(world: WorldState, obj: ObjectState) -> None:
    world.objects[obj.id] = obj


# -- dynamics ----------------------------------------------------------------


def step(
    world: WorldState, control: ControlInput, dt: float | None = None
) -> list[DisturbanceEvent]:
    """Advance one tick: motion, grasp/release resolution, disturbances."""
    cfg = world.config
    if dt is not None and abs(dt - cfg.dt) > 1e-12:
        raise ConfigError(f"dt {dt} does not match configured tick {cfg.dt}")
    world.tick += 1
    events: list[DisturbanceEvent] = []

    # Phase 1: controller motion and action.
    if control.dx or control.dy:
        world.robot_x += control.dx
        world.robot_y += control.dy
        if world.held is not None:
            held = world.objects[world.held]
            held.x = world.robot_x
            held.y = world.robot_y
    if control.action is not None:
        _apply_action(world, control.action, events)

    # Phase 2: collision with obstacles is terminal for the episode.
    if world.obstacles and not world.collided:
        clearance = cfg.robot_radius_m
        for ob in world.obstacles:
            if _dist(world.robot_x, world.robot_y, ob.x, ob.y) < clearance + ob.radius:
                world.collided = True
                events.append(DisturbanceEvent(world.tick, "collision"))
                break

    # Phase 3: scheduled injections, then the per-tick drop roll.
    for kind, target in world._injected_by_tick.pop(world.tick, ()):
        if kind == "drop":
            _drop_held(world, events)
        elif kind == "topple":
            obj = world.objects.get(target)
            if obj is not None and obj.supported_by not in (TABLE, GRIPPER):
                fallen = _cascade(world, obj)
                events.append(DisturbanceEvent(world.tick, "topple", tuple(fallen)))
        else:
            raise ConfigError(f"unknown injected disturbance kind: {kind!r}")
    if world.held is not None and world._drop_q > 0.0:
        if world.streams.stream("drop").random() < world._drop_q:
            _drop_held(world, events)

    if __debug__:
        world.validate()
    return events


def _apply_action(world: WorldState, action: tuple, events: list[DisturbanceEvent]) -> None:
    cfg = world.config
    kind = action[0]
    if kind == "pick":
        obj = world.objects[action[1]]
        if world.held == obj.id:
            return                      # re-grasp of an already held object
        assert world.held is None, "pick attempted while gripper occupied"
        p1 = world.task.pick_fail_p1
        if p1 > 0.0 and world.streams.stream("pickfail").random() < p1:
            events.append(DisturbanceEvent(world.tick, "pick_fail", (obj.id,)))
            return
        fallen = [c for c in _children(world, obj.id)]
        dropped: list[str] = []
        for child in fallen:
            dropped.extend(_cascade(world, world.objects[child]))
        obj.supported_by = GRIPPER
        obj.stack_height = 0
        obj.x, obj.y = world.robot_x, world.robot_y
        world.held = obj.id
        if dropped:
            events.append(DisturbanceEvent(world.tick, "topple", tuple(dropped)))
    elif kind == "place":
        obj = world.objects[action[1]]
        receptacle = world.objects[action[2]]
        if world.held != obj.id:
            return          # object was lost mid-carry; the release grasps at air
        world.held = None
        tx, ty = receptacle.x, receptacle.y
        n_cm = world.task.place_noise_n
        if n_cm > 0.0:
            rng = world.streams.stream("place")
            radius = rng.uniform(0.0, n_cm) / 100.0
            ux, uy = rnglib.unit_direction(rng)
            tx += ux * radius
            ty += uy * radius
        obj.x, obj.y = tx, ty
        offset = _dist(tx, ty, receptacle.x, receptacle.y)
        if offset <= cfg.tau_topple_m:
            obj.supported_by = receptacle.id
            obj.stack_height = receptacle.stack_height + 1
        else:
            obj.supported_by = TABLE
            obj.stack_height = 0
            events.append(DisturbanceEvent(world.tick, "topple", (obj.id,)))
        _stabilize(world, events)
    elif kind == "put":
        obj = world.objects[action[1]]
        if world.held != obj.id:
            return
        world.held = None
        obj.x, obj.y = world.robot_x, world.robot_y
        obj.supported_by = TABLE
        obj.stack_height = 0
    else:
        raise ConfigError(f"unknown control action: {kind!r}")


def _children(world: WorldState, obj_id: str) -> list[str]:
    return sorted(o.id for o in world.objects.values() if o.supported_by == obj_id)


def _cascade(world: WorldState, obj: ObjectState) -> list[str]:
    """Drop obj and everything stacked above it straight down to the table."""
    fallen = [obj.id]
    for child in _children(world, obj.id):
        fallen.extend(_cascade(world, world.objects[child]))
    obj.supported_by = TABLE
    obj.stack_height = 0
    return fallen


def _stabilize(world: WorldState, events: list[DisturbanceEvent]) -> None:
    # Re-check every support edge after a placement; cascades are rare so a
    # simple fixpoint loop is fine.
    while True:
        fallen: list[str] = []
        for obj in sorted(world.objects.values(), key=lambda o: o.id):
            if obj.supported_by in (TABLE, GRIPPER):
                continue
            parent = world.objects[obj.supported_by]
            if _dist(obj.x, obj.y, parent.x, parent.y) > world.config.tau_topple_m:
                fallen.extend(_cascade(world, obj))
        if not fallen:
            return
        events.append(DisturbanceEvent(world.tick, "topple", tuple(fallen)))


def _drop_held(world: WorldState, events: list[DisturbanceEvent]) -> None:
    if world.held is None:
        return
    obj = world.objects[world.held]
    world.held = None
    obj.x, obj.y = world.robot_x, world.robot_y     # gripper ground projection
    obj.supported_by = TABLE
    obj.stack_height = 0
    events.append(DisturbanceEvent(world.tick, "drop", (obj.id,)))


# -- goals -------------------------------------------------------------------


def is_task_success(world: WorldState, task: TaskSpec) -> bool:
    if task.family == FAMILY_PICK_PLACE:
        return world.objects["red"].supported_by == "fixture"
    if task.family == FAMILY_STACK:
        order = task.stack_order
        return all(
            world.objects[above].supported_by == below
            for below, above in zip(order, order[1:])
        )
    if task.family == FAMILY_OBSTACLE:
        return (
            not world.collided
            and world.robot_x >= world.config.corridor_length_m - 1e-9
        )
    if task.family == FAMILY_MOVE_BOX:
        box = world.objects["box"]
        bx, by = world.places["table_b"]
        return (
            box.supported_by == TABLE
            and world.held != "box"
            and _dist(box.x, box.y, bx, by) <= world.config.dest_tolerance_m
        )
    if task.family == FAMILY_PREPARE_FOOD:
        foods = FOOD_NAMES[: task.food_count]
        return all(world.objects[f].supported_by == "basket" for f in foods)
    raise ConfigError(f"unknown task family: {task.family!r}")
