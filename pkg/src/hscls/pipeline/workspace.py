"""Workspace directory layout shared by the CLI and the orchestrator."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

EVENT_KINDS = ("inference_request", "retraining_request", "drift_alert")

# event kind -> queue subdirectory
KIND_QUEUES = {
    "inference_request": "inference",
    "retraining_request": "retraining",
    "drift_alert": "retraining",
}


@dataclass(frozen=True)
class Workspace:
    root: Path

    @property
    def corpus_dir(self) -> Path:
        return self.root / "corpus"

    @property
    def models_dir(self) -> Path:
        return self.root / "models"

    @property
    def runs_dir(self) -> Path:
        return self.root / "runs"

    @property
    def registry_dir(self) -> Path:
        return self.root / "registry"

    @property
    def machines_dir(self) -> Path:
        return self.root / "machines"

    @property
    def events_dir(self) -> Path:
        return self.root / "events"

    @property
    def watch_dir(self) -> Path:
        return self.root / "watch"

    @property
    def abtest_dir(self) -> Path:
        return self.root / "abtest"

    @property
    def tune_dir(self) -> Path:
        return self.root / "tune"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def event_queue(self, kind: str) -> Path:
        if kind not in KIND_QUEUES:
            raise ValueError(f"unknown event kind {kind!r}")
        return self.events_dir / KIND_QUEUES[kind]

    def watch_queue(self, name: str) -> Path:
        return self.watch_dir / name

    def run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def init(self) -> "Workspace":
        dirs = [
            self.corpus_dir,
            self.models_dir,
            self.runs_dir,
            self.registry_dir,
            self.machines_dir,
            self.abtest_dir,
            self.tune_dir,
            self.reports_dir,
        ]
        for name in ("inference", "retraining"):
            dirs.append(self.events_dir / name)
            dirs.append(self.events_dir / name / "processed")
            dirs.append(self.events_dir / name / "rejected")
            dirs.append(self.watch_dir / name)
            dirs.append(self.watch_dir / name / "processed")
            dirs.append(self.watch_dir / name / "rejected")
        for d in dirs:
            d.mkdir(parents=True, exist_ok=True)
        return self


def open_workspace(root: str | Path) -> Workspace:
    return Workspace(Path(root)).init()
