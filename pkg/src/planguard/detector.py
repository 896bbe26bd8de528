"""Constraint detectors: ground-truth oracle and confusion-matrix noise.

A detector model answers "is this constraint satisfied?" with a boolean.  The
oracle reports ground truth.  A noisy model reports "satisfied" with
probability ``tpr`` when the constraint truly holds and with probability
``miss`` when it is truly violated, independently per constraint per check.
Rates can differ per predicate kind; the presets derive uniform rates from
published confusion-matrix counts (positive class = constraint satisfied).

Periodic monitoring runs every ``check_period_s`` (a multiple of the tick)
while a skill is running; checks observe the post-motion, post-disturbance
state of their tick and consume no simulated time.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .constraints import Constraint, kind_of
from .errors import ConfigError
from .world import WorldState


@dataclass(frozen=True)
class Rates:
    tpr: float          # P(reported satisfied | truly satisfied)
    miss: float         # P(reported satisfied | truly violated)

    def __post_init__(self):
        if not (0.0 <= self.tpr <= 1.0 and 0.0 <= self.miss <= 1.0):
            raise ConfigError("detector rates must be in [0, 1]")


@dataclass(frozen=True)
class DetectorModel:
    name: str
    default: Rates = Rates(1.0, 0.0)
    by_kind: tuple[tuple[str, Rates], ...] = ()
    check_period_s: float = 0.2
    confirmation_k: int = 1

    def __post_init__(self):
        if self.confirmation_k < 1:
            raise ConfigError("confirmation_k must be >= 1")

    def rates_for(self, constraint: Constraint) -> Rates:
        kind = kind_of(constraint)
        for k, rates in self.by_kind:
            if k == kind:
                return rates
        return self.default

    @property
    def is_oracle(self) -> bool:
        return self.default == Rates(1.0, 0.0) and not self.by_kind


@dataclass(frozen=True)
class CheckRecord:
    tick: int
    constraint: Constraint
    truth: bool
    reported: bool


def model_from_counts(
    name: str, tp: int, fn: int, fp: int, tn: int, **kwargs
) -> DetectorModel:
    """Rates from confusion-matrix counts; positive class = satisfied."""
    if tp + fn <= 0 or fp + tn <= 0:
        raise ConfigError("confusion-matrix counts need tp+fn > 0 and fp+tn > 0")
    return DetectorModel(
        name=name, default=Rates(tp / (tp + fn), fp / (fp + tn)), **kwargs
    )


ORACLE = DetectorModel("oracle")

# Measured accuracy of the zero-shot and fine-tuned visual detectors on the
# mobile-robot tasks, as confusion-matrix counts (tp, fn, fp, tn).
_PRESET_COUNTS = {
    "obstacle_zeroshot": (120, 5, 0, 14),
    "movebox_zeroshot": (140, 0, 6, 22),
    "food_zeroshot": (78, 27, 8, 25),
    "obstacle_finetuned": (121, 4, 0, 14),
    "movebox_finetuned": (140, 0, 2, 26),
    "food_finetuned": (99, 6, 1, 32),
}

PRESETS: dict[str, DetectorModel] = {"oracle": ORACLE}
for _name, _counts in _PRESET_COUNTS.items():
    PRESETS[_name] = model_from_counts(_name, *_counts)


def get_model(name: str) -> DetectorModel:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown detector model {name!r}; known: {', '.join(sorted(PRESETS))}"
        ) from None


def check_all(
    model: DetectorModel,
    constraints: tuple[Constraint, ...],
    world: WorldState,
    rng: random.Random,
    records: list[CheckRecord] | None = None,
) -> list[bool]:
    """Answer every constraint in order; every query yields exactly one bool."""
    reported: list[bool] = []
    for c in constraints:
        truth = world.evaluate_predicate(c)
        if model.is_oracle:
            answer = truth
        else:
            rates = model.rates_for(c)
            p_yes = rates.tpr if truth else rates.miss
            answer = rng.random() < p_yes
        reported.append(answer)
        if records is not None:
            records.append(CheckRecord(world.tick, c, truth, answer))
    return reported
