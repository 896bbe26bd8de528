"""The constraint language: a small predicate grammar with stable rendering.

Canonical grammar (EBNF):

    constraint ::= holding | on | clear_ahead | at
    holding    ::= "the robot is holding " object
    on         ::= "the " object " is on the " object
    clear      ::= "no obstacle in front of the robot"
    at         ::= "the robot is at " place
    object     ::= word {" " word}          (display name, e.g. "red block")

Constraints carry display names ("red block", "box", "apple"); the matching
world object id is the display name with a trailing " block" stripped.
``parse(render(c)) == c`` for every constraint, and the parser additionally
accepts the looser phrasings that appear in planner output in the wild
("robot holds box", "no obstacles in front of the robot", "no obstacle in
the front"), normalising them to the canonical instance.

Rendering is golden-file tested: these strings are wire format, not prose.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ConstraintParseError


@dataclass(frozen=True)
class Holding:
    obj: str
    agent: str = "robot"


@dataclass(frozen=True)
class On:
    above: str
    below: str


@dataclass(frozen=True)
class ClearAhead:
    agent: str = "robot"


@dataclass(frozen=True)
class At:
    place: str
    agent: str = "robot"


Constraint = Holding | On | ClearAhead | At

_GRAMMAR_PRODUCTIONS = [
    'holding ::= "the robot is holding " object',
    'on ::= "the " object " is on the " object',
    'clear ::= "no obstacle in front of the robot"',
    'at ::= "the robot is at " place',
]

_CLEAR_ALIASES = {
    "no obstacle in front of the robot",
    "no obstacles in front of the robot",
    "no obstacle in the front",
    "no obstacles in the front",
}

_RE_HOLDING = re.compile(r"^(?:the )?robot (?:is holding|holds) (?P<obj>.+)$")
_RE_ON = re.compile(r"^(?:the )?(?P<above>.+?) is on (?:the )?(?P<below>.+)$")
_RE_ON_SHORT = re.compile(r"^(?:the )?(?P<above>.+?) on (?:the )?(?P<below>.+)$")
_RE_AT = re.compile(r"^(?:the )?robot (?:is )?at (?P<place>.+)$")


def object_id(display_name: str) -> str:
    """World object id for a constraint's display name."""
    if display_name.endswith(" block"):
        return display_name[: -len(" block")]
    return display_name


def kind_of(c: Constraint) -> str:
    return {Holding: "holding", On: "on", ClearAhead: "clear_ahead", At: "at"}[type(c)]


def render(c: Constraint) -> str:
    """Canonical text; unique per predicate instance."""
    if isinstance(c, Holding):
        return f"the {c.agent} is holding {c.obj}"
    if isinstance(c, On):
        return f"the {c.above} is on the {c.below}"
    if isinstance(c, ClearAhead):
        return f"no obstacle in front of the {c.agent}"
    if isinstance(c, At):
        return f"the {c.agent} is at {c.place}"
    raise TypeError(f"not a constraint: {c!r}")


def render_violation(c: Constraint) -> str:
    """Negated form used in detector feedback lines."""
    if isinstance(c, Holding):
        return f"the {c.agent} is not holding {c.obj}"
    if isinstance(c, On):
        return f"the {c.above} is not on the {c.below}"
    if isinstance(c, ClearAhead):
        return f"there is an obstacle in front of the {c.agent}"
    if isinstance(c, At):
        return f"the {c.agent} is not at {c.place}"
    raise TypeError(f"not a constraint: {c!r}")


def render_question(c: Constraint) -> str:
    """The exact query string sent to a detector (stable across versions)."""
    return f"Question: Is {render(c)} satisfied? Answer:"


def parse(text: str) -> Constraint:
    """Inverse of render; accepts documented aliases.

    Raises ConstraintParseError listing the grammar productions on failure.
    """
    norm = " ".join(text.strip().split()).lower().rstrip(".")
    if norm in _CLEAR_ALIASES:
        return ClearAhead()
    m = _RE_HOLDING.match(norm)
    if m:
        return Holding(m.group("obj"))
    m = _RE_AT.match(norm)
    if m and " is on " not in norm:
        return At(m.group("place"))
    m = _RE_ON.match(norm) or _RE_ON_SHORT.match(norm)
    if m and not norm.startswith("robot ") and not norm.startswith("the robot "):
        return On(m.group("above"), m.group("below"))
    raise ConstraintParseError(text, _GRAMMAR_PRODUCTIONS)


def constraint_set(constraints: list[Constraint] | tuple[Constraint, ...]) -> tuple[Constraint, ...]:
    """Ordered, duplicate-free constraint tuple (order is the check order)."""
    seen: set[Constraint] = set()
    out: list[Constraint] = []
    for c in constraints:
        if c not in seen:
            seen.add(c)
            out.append(c)
    return tuple(out)


def eval_constraint(c: Constraint, world) -> bool:
    """Ground-truth evaluation; pure, delegates to the world's oracle."""
    return world.evaluate_predicate(c)
