"""Exception hierarchy shared across the package."""


class PlanGuardError(Exception):
    """Base class for all package errors."""


class ConfigError(PlanGuardError):
    """Invalid configuration value or unknown task family."""


class ConstraintParseError(PlanGuardError):
    """Text is not in the constraint grammar."""

    def __init__(self, text: str, productions: list[str]):
        self.text = text
        self.productions = productions
        super().__init__(
            f"cannot parse {text!r}; nearest grammar productions: "
            + "; ".join(productions)
        )


class EvaluationError(PlanGuardError):
    """A predicate references an id unknown to the world (distinct from False)."""


class PlannerError(PlanGuardError):
    """The scripted planner has no applicable rule for the believed state."""


class ProtocolError(PlanGuardError):
    """Malformed request/response on the external planner/detector wire."""
