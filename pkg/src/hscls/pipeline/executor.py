"""Run state machines over events with retries, persistence, and resume.

The run record is rewritten through a temp-file rename after every state
transition, so a process killed at any point leaves a readable record; on
restart, execution resumes at the first state that has not yet succeeded.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable

from .events import Event, payload_paths
from .machines import StateMachineDef
from .workspace import Workspace

RUN_FORMAT_VERSION = 1


class SkipState(Exception):
    """Raised by an action to mark its state as skipped rather than run."""


class CrashInjected(RuntimeError):
    """Raised by the test-only crash hook to simulate dying between states."""


@dataclass
class StateRecord:
    name: str
    status: str = "pending"  # pending | running | succeeded | failed | skipped
    attempts: int = 0
    started: str | None = None
    ended: str | None = None
    diagnostics: dict | str | None = None


@dataclass
class PipelineRun:
    run_id: str
    machine: str
    event_id: str
    event: dict
    states: list[StateRecord]
    terminal_status: str = "pending"  # pending | running | succeeded | failed

    def state(self, name: str) -> StateRecord:
        for s in self.states:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "format_version": RUN_FORMAT_VERSION,
            "run_id": self.run_id,
            "machine": self.machine,
            "event_id": self.event_id,
            "event": self.event,
            "terminal_status": self.terminal_status,
            "states": [
                {
                    "name": s.name,
                    "status": s.status,
                    "attempts": s.attempts,
                    "started": s.started,
                    "ended": s.ended,
                    "diagnostics": s.diagnostics,
                }
                for s in self.states
            ],
        }


def run_from_dict(doc: dict) -> PipelineRun:
    return PipelineRun(
        run_id=doc["run_id"],
        machine=doc["machine"],
        event_id=doc["event_id"],
        event=doc["event"],
        terminal_status=doc["terminal_status"],
        states=[
            StateRecord(
                name=s["name"],
                status=s["status"],
                attempts=s["attempts"],
                started=s.get("started"),
                ended=s.get("ended"),
                diagnostics=s.get("diagnostics"),
            )
            for s in doc["states"]
        ],
    )


def load_run(ws: Workspace, run_id: str) -> PipelineRun:
    path = ws.run_dir(run_id) / "run.json"
    if not path.exists():
        raise FileNotFoundError(f"no run record for {run_id!r}")
    return run_from_dict(json.loads(path.read_text()))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


class Executor:
    def __init__(
        self,
        ws: Workspace,
        actions: dict[str, Callable],
        config: dict | None = None,
        sleep_fn: Callable[[float], None] = time.sleep,
        crash_after: set[str] | None = None,
    ):
        self.ws = ws
        self.actions = actions
        self.config = dict(config or {})
        self.sleep_fn = sleep_fn
        self.crash_after = crash_after or set()

    def _persist(self, run: PipelineRun) -> None:
        run_dir = self.ws.run_dir(run.run_id)
        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / "run.json"
        tmp = run_dir / "run.json.tmp"
        tmp.write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True))
        tmp.replace(path)

    def _load_or_create(self, machine: StateMachineDef, event: Event) -> PipelineRun:
        run_id = f"run-{event.event_id}"
        path = self.ws.run_dir(run_id) / "run.json"
        if path.exists():
            run = run_from_dict(json.loads(path.read_text()))
            if run.machine != machine.name:
                raise ValueError(
                    f"run {run_id} belongs to machine {run.machine!r}, not {machine.name!r}"
                )
            return run
        return PipelineRun(
            run_id=run_id,
            machine=machine.name,
            event_id=event.event_id,
            event=json.loads(event.to_json()),
            states=[StateRecord(name=s.name) for s in machine.states],
        )

    def execute(self, machine: StateMachineDef, event: Event) -> PipelineRun:
        machine.validate_actions(self.actions)
        if event.kind not in machine.trigger_kinds:
            raise ValueError(f"machine {machine.name!r} does not handle events of kind {event.kind!r}")
        for p in payload_paths(event):
            if not p.exists():
                raise FileNotFoundError(f"event payload path missing at dispatch: {p}")

        from .actions import ActionContext

        run = self._load_or_create(machine, event)
        if run.terminal_status == "succeeded":
            return run
        run.terminal_status = "running"
        self._persist(run)

        halted = False
        for state_def in machine.states:
            record = run.state(state_def.name)
            if record.status in ("succeeded", "skipped"):
                continue
            if halted:
                break
            ctx = ActionContext(
                ws=self.ws,
                run_dir=self.ws.run_dir(run.run_id),
                event=event,
                config=self.config,
                state_name=state_def.name,
            )
            action = self.actions[state_def.action_id]
            record.status = "running"
            record.started = record.started or _now()
            # a prior crash may leave attempts from the interrupted process
            record.attempts = 0
            self._persist(run)
            while True:
                record.attempts += 1
                try:
                    diagnostics = action(ctx)
                except SkipState as skip:
                    record.status = "skipped"
                    record.diagnostics = str(skip)
                    record.ended = _now()
                    self._persist(run)
                    break
                except Exception as exc:  # noqa: BLE001 - retries must catch everything
                    record.diagnostics = f"{type(exc).__name__}: {exc}"
                    if record.attempts >= state_def.retry.max_attempts:
                        record.status = "failed"
                        record.ended = _now()
                        self._persist(run)
                        if state_def.on_failure == "halt":
                            halted = True
                        break
                    self._persist(run)
                    self.sleep_fn(state_def.retry.backoff_s * (2 ** (record.attempts - 1)))
                    continue
                record.status = "succeeded"
                record.diagnostics = diagnostics
                record.ended = _now()
                self._persist(run)
                if state_def.name in self.crash_after:
                    run.terminal_status = "running"
                    self._persist(run)
                    raise CrashInjected(f"injected crash after state {state_def.name!r}")
                break

        if all(s.status in ("succeeded", "skipped") for s in run.states):
            run.terminal_status = "succeeded"
        else:
            run.terminal_status = "failed"
        self._persist(run)
        return run
