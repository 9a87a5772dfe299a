"""End-to-end local MLOps loop in a throwaway workspace.

1. drop a labeled corpus, fire a retraining_request -> train, A/B, register,
   promote
2. drop an unlabeled file, fire an inference_request -> predictions + drift
   report against the promoted model's training distribution

Run it twice: the second retraining pass replays the same run directory and
returns immediately (every state is already recorded as succeeded).
"""

import csv
import json
import sys
import tempfile
from pathlib import Path

from hscls.corpus import CSV_HEADER, read_csv, write_csv
from hscls.pipeline.actions import ACTIONS
from hscls.pipeline.events import enqueue_event, new_event
from hscls.pipeline.executor import Executor
from hscls.pipeline.machines import load_machines, write_default_machines
from hscls.pipeline.registry import ModelRegistry
from hscls.pipeline.watcher import Dispatcher
from hscls.pipeline.workspace import open_workspace
from hscls.synth import generate_synthetic_corpus

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="hscls-demo-"))
print(f"workspace: {root}")

ws = open_workspace(root)
write_default_machines(ws)
machines = load_machines(ws, known_action_ids=ACTIONS)
config = {"epochs": 3, "ab_epochs": 2, "ab_k": 2, "vocab_size": 800, "max_len": 12,
          "test_fraction": 0.2, "valid_fraction": 0.15}
executor = Executor(ws, ACTIONS, config=config, sleep_fn=lambda s: None)
dispatcher = Dispatcher(ws, executor, machines)

corpus_csv = root / "labeled.csv"
write_csv(generate_synthetic_corpus(n_classes=3, per_class=30, noise_fraction=0.1, seed=1), corpus_csv)

event_path = enqueue_event(ws, new_event("retraining_request", {"paths": [str(corpus_csv)]},
                                         event_id="demo-retrain"))
run = dispatcher.dispatch_one(event_path)
print(f"\nretraining run {run.run_id}: {run.terminal_status}")
for state in run.states:
    print(f"  {state.name:20s} {state.status}")

verdict = json.loads((ws.run_dir(run.run_id) / "verdict.json").read_text())
print(f"A/B winner: {verdict['overall_winner']}")

registry = ModelRegistry(ws.registry_dir)
active = registry.active()
print(f"registry: versions={registry.versions()} active=v{active.version} ({active.architecture})")

# strip the labels off the held-out split and push it back through inference
test_records = read_csv(ws.run_dir(run.run_id) / "test.csv").records
incoming = root / "incoming.csv"
with open(incoming, "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(CSV_HEADER[:4])
    for r in test_records:
        w.writerow([r.record_id, r.short_description, r.medium_description, r.etim or ""])

event_path = enqueue_event(ws, new_event("inference_request", {"paths": [str(incoming)]},
                                         event_id="demo-infer"))
run = dispatcher.dispatch_one(event_path)
print(f"\ninference run {run.run_id}: {run.terminal_status}")

drift = json.loads((ws.run_dir(run.run_id) / "drift_report.json").read_text())
kl = "  ".join(f"{name}_kl={value:.4f}" for name, value in drift["divergences"].items())
print(f"drift vs {drift['reference_id']}: {kl}  triggered={drift['triggered']}")
with open(ws.run_dir(run.run_id) / "predictions.csv") as fh:
    rows = list(csv.DictReader(fh))
print(f"predictions: {len(rows)} rows; first 3:")
for row in rows[:3]:
    print(f"  {row['record_id']}: {row['predicted_hs_code']} "
          f"({row['band']}, p={float(row['confidence']):.2f})")
