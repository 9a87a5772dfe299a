"""Polling drop-directory watcher: stable files become events.

A file counts as fully written once its size is unchanged between two polls;
it is then moved to the directory's processed/ subfolder and one event is
enqueued. Unreadable files are quarantined to rejected/ with a reason file.
"""

from __future__ import annotations

import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

from .events import Event, enqueue_event, event_from_json, new_event
from .executor import Executor
from .machines import StateMachineDef, machine_for_kind
from .workspace import KIND_QUEUES, Workspace

DEFAULT_POLL_INTERVAL_S = 0.5

# watch subdirectory name -> event kind it produces
WATCH_KINDS = {"inference": "inference_request", "retraining": "retraining_request"}


def _unique_destination(dest_dir: Path, name: str) -> Path:
    candidate = dest_dir / name
    counter = 1
    while candidate.exists():
        candidate = dest_dir / f"{Path(name).stem}.{counter}{Path(name).suffix}"
        counter += 1
    return candidate


@dataclass
class Watcher:
    ws: Workspace
    poll_interval_s: float = DEFAULT_POLL_INTERVAL_S
    _pending_sizes: dict[Path, int] = field(default_factory=dict)

    def poll_once(self) -> list[Event]:
        """One scan over all watch directories; emits events for stable files."""
        events: list[Event] = []
        for dir_name, kind in WATCH_KINDS.items():
            watch_dir = self.ws.watch_queue(dir_name)
            if not watch_dir.is_dir():
                continue
            candidates = [
                p
                for p in watch_dir.iterdir()
                if p.is_file() and not p.name.startswith(".")
            ]
            for path in sorted(candidates, key=lambda p: (p.stat().st_mtime, p.name)):
                size = path.stat().st_size
                previous = self._pending_sizes.get(path)
                if previous is None or previous != size:
                    self._pending_sizes[path] = size
                    continue
                del self._pending_sizes[path]
                try:
                    with open(path, "rb") as fh:
                        fh.read(1)
                except OSError as exc:
                    rejected = _unique_destination(watch_dir / "rejected", path.name)
                    shutil.move(str(path), rejected)
                    rejected.with_suffix(rejected.suffix + ".reason").write_text(
                        f"unreadable: {exc}\n"
                    )
                    continue
                final = _unique_destination(watch_dir / "processed", path.name)
                shutil.move(str(path), final)
                event = new_event(kind, {"paths": [str(final)]}, source="watch_dir")
                enqueue_event(self.ws, event)
                events.append(event)
        # forget files that vanished between polls
        self._pending_sizes = {p: s for p, s in self._pending_sizes.items() if p.exists()}
        return events


class Dispatcher:
    """Drains event queues in order, executing each event exactly once."""

    def __init__(self, ws: Workspace, executor: Executor, machines: dict[str, StateMachineDef]):
        self.ws = ws
        self.executor = executor
        self.machines = machines

    def pending_event_files(self) -> list[Path]:
        files = []
        for queue_name in sorted(set(KIND_QUEUES.values())):
            queue = self.ws.events_dir / queue_name
            if queue.is_dir():
                files.extend(
                    p for p in queue.iterdir() if p.is_file() and p.suffix == ".json"
                )
        return sorted(files, key=lambda p: (p.stat().st_mtime, p.name))

    def dispatch_one(self, event_file: Path):
        text = event_file.read_text()
        try:
            event = event_from_json(text)
            machine = machine_for_kind(self.machines, event.kind)
            run = self.executor.execute(machine, event)
        except Exception as exc:
            rejected = _unique_destination(event_file.parent / "rejected", event_file.name)
            rejected.parent.mkdir(parents=True, exist_ok=True)
            shutil.move(str(event_file), rejected)
            rejected.with_suffix(rejected.suffix + ".reason").write_text(f"{exc}\n")
            raise
        processed = _unique_destination(event_file.parent / "processed", event_file.name)
        shutil.move(str(event_file), processed)
        return run

    def drain(self) -> list:
        runs = []
        for event_file in self.pending_event_files():
            try:
                runs.append(self.dispatch_one(event_file))
            except Exception:  # noqa: BLE001 - one bad event must not stop the queue
                continue
        return runs


def serve(
    ws: Workspace,
    executor: Executor,
    machines: dict[str, StateMachineDef],
    poll_interval_s: float = DEFAULT_POLL_INTERVAL_S,
    max_cycles: int | None = None,
    sleep_fn=time.sleep,
    on_run=None,
) -> int:
    """Foreground loop: watch drop dirs, enqueue events, execute runs.

    Returns the number of runs executed. `max_cycles` bounds the loop for
    scripted use; None means run until interrupted.
    """
    watcher = Watcher(ws, poll_interval_s)
    dispatcher = Dispatcher(ws, executor, machines)
    executed = 0
    cycle = 0
    try:
        while max_cycles is None or cycle < max_cycles:
            watcher.poll_once()
            for run in dispatcher.drain():
                executed += 1
                if on_run is not None:
                    on_run(run)
            cycle += 1
            if max_cycles is None or cycle < max_cycles:
                sleep_fn(poll_interval_s)
    except KeyboardInterrupt:
        pass
    return executed
