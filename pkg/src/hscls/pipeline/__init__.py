"""Local event-driven orchestrator: machines, executor, registry, watcher, drift."""

from .actions import ACTIONS, ActionContext, DEFAULT_CONFIG
from .drift import DriftReport, class_histogram, drift_check, kl_divergence, token_histogram
from .events import Event, enqueue_event, event_from_json, new_event
from .executor import CrashInjected, Executor, PipelineRun, SkipState, load_run
from .machines import (
    StateDef,
    StateMachineDef,
    define_inference_machine,
    define_retraining_machine,
    load_machines,
    machine_for_kind,
    machine_from_json,
    write_default_machines,
)
from .registry import ModelRegistry, RegistryEntry, RegistryError
from .watcher import Dispatcher, Watcher, serve
from .workspace import Workspace, open_workspace

__all__ = [
    "ACTIONS",
    "ActionContext",
    "CrashInjected",
    "DEFAULT_CONFIG",
    "Dispatcher",
    "DriftReport",
    "Event",
    "Executor",
    "ModelRegistry",
    "PipelineRun",
    "RegistryEntry",
    "RegistryError",
    "SkipState",
    "StateDef",
    "StateMachineDef",
    "Watcher",
    "Workspace",
    "class_histogram",
    "define_inference_machine",
    "define_retraining_machine",
    "drift_check",
    "enqueue_event",
    "event_from_json",
    "kl_divergence",
    "load_machines",
    "load_run",
    "machine_for_kind",
    "machine_from_json",
    "new_event",
    "open_workspace",
    "serve",
    "token_histogram",
    "write_default_machines",
]
