"""Abstract MAC layer simulator with randomized agreement protocols."""

from absmac.core import (
    ConfigurationError,
    Event,
    ModelViolation,
    NodeToken,
    SchedulerContractError,
    apply_event,
    create_world,
    enabled_events,
    scheduler_view,
)
from absmac.schedulers import choose, make_policy

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "Event",
    "ModelViolation",
    "NodeToken",
    "SchedulerContractError",
    "apply_event",
    "choose",
    "create_world",
    "enabled_events",
    "make_policy",
    "scheduler_view",
]
