"""planguard: deterministic closed-loop skill execution with constraint monitoring."""

from .config import SimConfig, load_config, save_config
from .constraints import (
    At,
    ClearAhead,
    Constraint,
    Holding,
    On,
    eval_constraint,
    parse as parse_constraint,
    render as render_constraint,
    render_question,
)
from .detector import ORACLE, PRESETS, DetectorModel, check_all, get_model, model_from_counts
from .errors import (
    ConfigError,
    ConstraintParseError,
    EvaluationError,
    PlanGuardError,
    PlannerError,
    ProtocolError,
)
from .executive import (
    EpisodeTrace,
    PolicySpec,
    lint_abort_latency,
    replay,
    run_episode,
    trace_from_text,
    trace_to_text,
)
from .harness import (
    Cell,
    ExperimentConfig,
    calibrate,
    policy,
    results_to_csv,
    run_experiment,
    summarize,
    write_csv,
)
from .planner import (
    FeedbackMsg,
    PlanDecision,
    PromptState,
    ScriptedPlanner,
    encode_feedback,
    render_prompt,
)
from .protocol import ExternalDetector, ExternalPlanner, MockServer
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
    nominal_duration,
    skill_step,
    start_skill,
)
from .world import (
    TaskSpec,
    WorldState,
    is_task_success,
    move_box_task,
    new_world,
    obstacle_task,
    pick_place_task,
    prepare_food_task,
    stack_task,
    step,
)

__version__ = "0.1.0"
