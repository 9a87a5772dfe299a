"""Event records: the unit of work handed to a state machine."""

from __future__ import annotations

import json
import uuid
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from .workspace import EVENT_KINDS, Workspace


@dataclass(frozen=True)
class Event:
    event_id: str
    kind: str
    payload: dict
    timestamp: str
    source: str = "cli"

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not isinstance(self.payload, dict):
            raise ValueError("payload must be a JSON object")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def new_event(
    kind: str,
    payload: dict,
    source: str = "cli",
    event_id: str | None = None,
    timestamp: str | None = None,
) -> Event:
    return Event(
        event_id=event_id or uuid.uuid4().hex[:12],
        kind=kind,
        payload=payload,
        timestamp=timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        source=source,
    )


def event_from_json(text: str) -> Event:
    raw = json.loads(text)
    missing = {"event_id", "kind", "payload", "timestamp"} - raw.keys()
    if missing:
        raise ValueError(f"event JSON missing fields: {sorted(missing)}")
    return Event(
        event_id=str(raw["event_id"]),
        kind=str(raw["kind"]),
        payload=dict(raw["payload"]),
        timestamp=str(raw["timestamp"]),
        source=str(raw.get("source", "cli")),
    )


def enqueue_event(ws: Workspace, event: Event) -> Path:
    """Write the event file into its kind's queue directory (atomic rename)."""
    queue = ws.event_queue(event.kind)
    queue.mkdir(parents=True, exist_ok=True)
    path = queue / f"{event.event_id}.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(event.to_json())
    tmp.replace(path)
    return path


def payload_paths(event: Event) -> list[Path]:
    return [Path(p) for p in event.payload.get("paths", [])]
