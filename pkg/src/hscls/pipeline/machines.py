"""State-machine definitions: ordered retryable states bound to action ids."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .workspace import Workspace

MACHINE_FORMAT_VERSION = 1

DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_BACKOFF_S = 2.0


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    backoff_s: float = DEFAULT_BACKOFF_S

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.backoff_s < 0:
            raise ValueError("backoff_s must be >= 0")


@dataclass(frozen=True)
class StateDef:
    name: str
    action_id: str
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    on_failure: str = "halt"  # halt | skip

    def __post_init__(self):
        if self.on_failure not in ("halt", "skip"):
            raise ValueError(f"on_failure must be halt or skip, got {self.on_failure!r}")


@dataclass(frozen=True)
class StateMachineDef:
    name: str
    trigger_kinds: tuple[str, ...]
    states: tuple[StateDef, ...]

    def __post_init__(self):
        if not self.states:
            raise ValueError("a machine needs at least one state")
        names = [s.name for s in self.states]
        if len(names) != len(set(names)):
            raise ValueError("state names must be unique")

    def validate_actions(self, known_action_ids) -> None:
        unknown = [s.action_id for s in self.states if s.action_id not in known_action_ids]
        if unknown:
            raise ValueError(f"machine {self.name!r} references unknown action ids: {unknown}")

    def to_json(self) -> str:
        doc = {
            "format_version": MACHINE_FORMAT_VERSION,
            "name": self.name,
            "trigger_kinds": list(self.trigger_kinds),
            "states": [asdict(s) for s in self.states],
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def machine_from_json(text: str, known_action_ids=None) -> StateMachineDef:
    doc = json.loads(text)
    if doc.get("format_version") != MACHINE_FORMAT_VERSION:
        raise ValueError(f"unsupported machine format_version {doc.get('format_version')!r}")
    states = tuple(
        StateDef(
            name=s["name"],
            action_id=s["action_id"],
            retry=RetryPolicy(**s.get("retry", {})),
            on_failure=s.get("on_failure", "halt"),
        )
        for s in doc["states"]
    )
    machine = StateMachineDef(name=doc["name"], trigger_kinds=tuple(doc["trigger_kinds"]), states=states)
    if known_action_ids is not None:
        machine.validate_actions(known_action_ids)
    return machine


def define_inference_machine() -> StateMachineDef:
    return StateMachineDef(
        name="inference",
        trigger_kinds=("inference_request",),
        states=tuple(
            StateDef(name=name, action_id=f"inference.{name}")
            for name in ("validate_input", "preprocess", "load_active_model", "predict", "write_results")
        ),
    )


def define_retraining_machine() -> StateMachineDef:
    return StateMachineDef(
        name="retraining",
        trigger_kinds=("retraining_request", "drift_alert"),
        states=tuple(
            StateDef(name=name, action_id=f"retraining.{name}")
            for name in (
                "validate_input",
                "preprocess",
                "tune_or_load_config",
                "train_candidates",
                "evaluate",
                "ab_test",
                "register_candidate",
                "promote_if_winner",
            )
        ),
    )


def write_default_machines(ws: Workspace) -> dict[str, Path]:
    """Persist both built-in machine definitions as JSON documents."""
    out = {}
    for machine in (define_inference_machine(), define_retraining_machine()):
        path = ws.machines_dir / f"{machine.name}.json"
        if not path.exists():
            tmp = path.with_suffix(".json.tmp")
            tmp.write_text(machine.to_json())
            tmp.replace(path)
        out[machine.name] = path
    return out


def load_machines(ws: Workspace, known_action_ids=None) -> dict[str, StateMachineDef]:
    machines = {}
    for path in sorted(ws.machines_dir.glob("*.json")):
        machine = machine_from_json(path.read_text(), known_action_ids)
        machines[machine.name] = machine
    return machines


def machine_for_kind(machines: dict[str, StateMachineDef], kind: str) -> StateMachineDef:
    for machine in machines.values():
        if kind in machine.trigger_kinds:
            return machine
    raise ValueError(f"no state machine handles event kind {kind!r}")
