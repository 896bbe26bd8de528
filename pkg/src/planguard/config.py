"""Simulation configuration: every calibration knob in one place.

All geometry and timing defaults are calibrated so that the zero-disturbance
plans take exactly 2.7 s (pick-place), 7.2 s (stack), 24.2 s (obstacle run)
and 32.2 s (move-box) at the 0.05 s tick.  ``harness.calibrate`` re-derives
the speed and exposure values from these targets and should reproduce the
defaults below.

Config files are YAML mappings using the field names of :class:`SimConfig`.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

Point = tuple[float, float]


@dataclass(frozen=True)
class SimConfig:
    # Clock
    dt: float = 0.05                    # simulation tick (s); all times are integer ticks
    check_period_s: float = 0.2         # detector period; must be a multiple of dt
    confirmation_k: int = 1             # consecutive violated reports required to abort
    replan_latency_s: float = 0.0       # simulated seconds consumed per re-plan

    # Tabletop geometry
    tau_topple_m: float = 0.02          # max horizontal offset a stacked block survives
    block_size_m: float = 0.04
    arm_speed: float = 0.4              # end-effector travel (m/s)
    arm_grasp_s: float = 0.2
    arm_release_s: float = 0.2
    arm_timeout_s: float = 20.0

    # Mobile-robot geometry
    walk_speed: float = 0.5             # m/s
    walk_grasp_s: float = 0.5
    walk_release_s: float = 0.5
    humanoid_timeout_s: float = 120.0
    robot_radius_m: float = 0.2
    sense_range_m: float = 0.8          # ClearAhead look-ahead
    sidestep_m: float = 0.6             # lateral offset of one Turn
    turn_duration_s: float = 1.0

    # Obstacle course
    corridor_length_m: float = 12.1
    corridor_halfwidth_m: float = 1.0
    obstacle_radius_m: float = 0.25
    obstacle_lateral_max_m: float = 0.15  # blocking obstacles sit within this of centerline
    obstacle_rate_coeff: float = 1.3      # mean obstacle count = coeff * density d

    # Predicate tolerances
    at_tolerance_m: float = 0.05
    dest_tolerance_m: float = 0.3

    # Scene layouts (gripper home / object slots), chosen for the nominal times
    pickplace_home: Point = (0.0, 0.0)
    pickplace_block: Point = (0.54, 0.0)
    pickplace_fixture: Point = (0.54, 0.38)
    stack_home: Point = (0.0, 0.0)
    stack_slots: tuple[Point, ...] = (
        (0.72, 0.56),   # base block of the instruction order
        (0.72, 0.0),
        (0.08, 0.56),
        (0.08, 0.0),
        (0.40, 0.84),
    )
    movebox_start: Point = (0.0, 0.0)
    movebox_pickup: Point = (5.0, 0.0)
    movebox_dropoff: Point = (15.6, 0.0)
    food_basket: Point = (2.0, 0.0)
    food_zone: tuple[float, float, float, float] = (0.5, -1.5, 3.5, 1.5)
    food_min_separation_m: float = 0.3

    # Harness reporting
    time_report_threshold: float = 0.8  # min success rate for reporting exec time

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        ratio = self.check_period_s / self.dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("check_period_s must be a positive multiple of dt")
        if self.confirmation_k < 1:
            raise ConfigError("confirmation_k must be >= 1")

    @property
    def check_ticks(self) -> int:
        return round(self.check_period_s / self.dt)

    def ticks(self, seconds: float) -> int:
        return round(seconds / self.dt)

    def digest(self) -> str:
        """Short fingerprint embedded in traces to flag config mismatches."""
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


def _coerce(name: str, value, template):
    # YAML gives lists where the dataclass holds tuples; normalize recursively.
    if isinstance(template, tuple) and isinstance(value, (list, tuple)):
        return tuple(
            _coerce(name, v, template[0] if template else v) for v in value
        )
    return value


def load_config(path: str | Path) -> SimConfig:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    known = {f.name: f for f in dataclasses.fields(SimConfig)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    defaults = SimConfig()
    values = {
        name: _coerce(name, value, getattr(defaults, name))
        for name, value in raw.items()
    }
    return SimConfig(**values)


def save_config(config: SimConfig, path: str | Path) -> None:
    data = dataclasses.asdict(config)
    data = {k: (list(v) if isinstance(v, tuple) else v) for k, v in data.items()}
    data = {
        k: ([list(p) if isinstance(p, tuple) else p for p in v] if isinstance(v, list) else v)
        for k, v in data.items()
    }
    Path(path).write_text(
        yaml.safe_dump(data, sort_keys=True, default_flow_style=None),
        encoding="utf-8",
    )
