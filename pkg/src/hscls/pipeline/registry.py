"""Versioned model registry with a single atomically-switched active pointer."""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

from filelock import FileLock

from ..models import load_weights

REGISTRY_FORMAT_VERSION = 1


class RegistryError(RuntimeError):
    pass


@dataclass
class RegistryEntry:
    version: int
    status: str  # candidate | active | archived
    weights_file: str
    weights_sha256: str
    vocab_hash: str
    architecture: str
    class_list: list[str]
    provenance: dict
    reports: dict

    @property
    def dir_name(self) -> str:
        return f"v{self.version}"


def _file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class ModelRegistry:
    """Directory layout: registry/v<N>/weights.bin + manifest.json, plus an
    ACTIVE file holding the active version number, swapped via rename."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.root / ".registry.lock"))

    # -- reads (lock-free: every mutation is atomic at the fs level) ----------

    def versions(self) -> list[int]:
        out = []
        for p in self.root.iterdir():
            if p.is_dir() and p.name.startswith("v") and p.name[1:].isdigit():
                if (p / "manifest.json").exists():
                    out.append(int(p.name[1:]))
        return sorted(out)

    def get(self, version: int) -> RegistryEntry:
        manifest_path = self.root / f"v{version}" / "manifest.json"
        if not manifest_path.exists():
            raise RegistryError(f"registry has no version {version}")
        doc = json.loads(manifest_path.read_text())
        active = self.active_version()
        return RegistryEntry(
            version=doc["version"],
            status="active" if doc["version"] == active else doc["status"],
            weights_file=doc["weights_file"],
            weights_sha256=doc["weights_sha256"],
            vocab_hash=doc["vocab_hash"],
            architecture=doc["architecture"],
            class_list=list(doc["class_list"]),
            provenance=dict(doc["provenance"]),
            reports=dict(doc["reports"]),
        )

    def active_version(self) -> int | None:
        pointer = self.root / "ACTIVE"
        try:
            text = pointer.read_text().strip()
        except FileNotFoundError:
            return None
        if not text.isdigit():
            raise RegistryError(f"ACTIVE pointer is corrupt: {text!r}")
        return int(text)

    def active(self) -> RegistryEntry | None:
        version = self.active_version()
        return None if version is None else self.get(version)

    def weights_path(self, version: int) -> Path:
        entry = self.get(version)
        return self.root / entry.dir_name / entry.weights_file

    def vocab_path(self, version: int) -> Path | None:
        p = self.root / f"v{version}" / "vocab.tsv"
        return p if p.exists() else None

    # -- mutations -------------------------------------------------------------

    def register(
        self,
        weights_path: str | Path,
        vocab_path: str | Path | None = None,
        reports: dict[str, str | Path] | None = None,
        provenance: dict | None = None,
        declared_vocab_hash: str | None = None,
    ) -> RegistryEntry:
        """Copy a validated weights file in as the next candidate version.

        Passing the same provenance run_id twice returns the already-registered
        entry instead of creating a duplicate (crash-replay safety).
        """
        weights_path = Path(weights_path)
        weights = load_weights(weights_path)  # raises on checksum/format problems
        if declared_vocab_hash is not None and declared_vocab_hash != weights.vocab_hash:
            raise RegistryError(
                "weights were trained against a different vocabulary than declared "
                f"({weights.vocab_hash[:12]}... vs {declared_vocab_hash[:12]}...)"
            )
        provenance = dict(provenance or {})
        with self._lock:
            run_id = provenance.get("run_id")
            if run_id:
                for v in self.versions():
                    existing = self.get(v)
                    if existing.provenance.get("run_id") == run_id:
                        return existing
            version = (self.versions() or [0])[-1] + 1
            final_dir = self.root / f"v{version}"
            staging = self.root / f".staging-v{version}"
            if staging.exists():
                shutil.rmtree(staging)
            staging.mkdir()
            shutil.copyfile(weights_path, staging / "weights.bin")
            if vocab_path is not None:
                shutil.copyfile(vocab_path, staging / "vocab.tsv")
            report_names = {}
            for name, src in (reports or {}).items():
                dest = f"{name}.json" if not str(src).endswith(".csv") else f"{name}.csv"
                shutil.copyfile(src, staging / dest)
                report_names[name] = dest
            manifest = {
                "format_version": REGISTRY_FORMAT_VERSION,
                "version": version,
                "status": "candidate",
                "weights_file": "weights.bin",
                "weights_sha256": _file_sha256(staging / "weights.bin"),
                "vocab_hash": weights.vocab_hash,
                "architecture": weights.architecture,
                "class_list": weights.class_list,
                "provenance": provenance,
                "reports": report_names,
            }
            (staging / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
            staging.rename(final_dir)
            return self.get(version)

    def promote(self, version: int) -> RegistryEntry:
        """Atomically point ACTIVE at `version`; the previous active is archived."""
        with self._lock:
            entry = self.get(version)  # raises if missing
            previous = self.active_version()
            pointer = self.root / "ACTIVE"
            tmp = self.root / ".ACTIVE.tmp"
            tmp.write_text(f"{version}\n")
            tmp.replace(pointer)
            if previous is not None and previous != version:
                self._set_status(previous, "archived")
            self._set_status(version, "active")
            return self.get(version)

    def _set_status(self, version: int, status: str) -> None:
        manifest_path = self.root / f"v{version}" / "manifest.json"
        doc = json.loads(manifest_path.read_text())
        doc["status"] = status
        tmp = manifest_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(doc, indent=2, sort_keys=True))
        tmp.replace(manifest_path)
