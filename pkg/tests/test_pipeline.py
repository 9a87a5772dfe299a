import json
import threading
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hscls.models import TrainConfig, build_dnn, save_weights, train
from hscls.pipeline.drift import DriftReport, class_histogram, drift_check, kl_divergence, token_histogram
from hscls.pipeline.events import enqueue_event, event_from_json, new_event, payload_paths
from hscls.pipeline.executor import CrashInjected, Executor, SkipState, load_run
from hscls.pipeline.machines import (
    RetryPolicy,
    StateDef,
    StateMachineDef,
    define_inference_machine,
    define_retraining_machine,
    load_machines,
    machine_for_kind,
    machine_from_json,
    write_default_machines,
)
from hscls.pipeline.registry import ModelRegistry, RegistryError
from hscls.pipeline.watcher import Dispatcher, Watcher, serve
from hscls.pipeline.workspace import Workspace, open_workspace

from test_models import cfg_dnn, toy_seqs


@pytest.fixture
def ws(tmp_path):
    return open_workspace(tmp_path / "ws")


# --- workspace ------------------------------------------------------------------

def test_workspace_init_idempotent(tmp_path):
    a = open_workspace(tmp_path / "w")
    b = open_workspace(tmp_path / "w")
    assert a.root == b.root
    assert (a.events_dir / "inference" / "processed").is_dir()
    assert (a.watch_dir / "retraining" / "rejected").is_dir()


def test_event_queue_mapping(ws):
    assert ws.event_queue("inference_request").name == "inference"
    assert ws.event_queue("retraining_request").name == "retraining"
    assert ws.event_queue("drift_alert").name == "retraining"
    with pytest.raises(ValueError):
        ws.event_queue("nonsense")


# --- events ------------------------------------------------------------------------

def test_event_round_trip_and_validation():
    ev = new_event("inference_request", {"paths": ["/tmp/x.csv"]}, event_id="abc123")
    back = event_from_json(ev.to_json())
    assert back == ev
    assert payload_paths(back) == [Path("/tmp/x.csv")]
    with pytest.raises(ValueError, match="unknown event kind"):
        new_event("bogus_kind", {})
    with pytest.raises(ValueError, match="missing fields"):
        event_from_json(json.dumps({"event_id": "x", "kind": "drift_alert"}))


def test_enqueue_writes_into_kind_queue(ws):
    ev = new_event("drift_alert", {}, event_id="d1")
    path = enqueue_event(ws, ev)
    assert path == ws.events_dir / "retraining" / "d1.json"
    assert event_from_json(path.read_text()) == ev
    assert not list(ws.events_dir.glob("**/*.tmp"))


# --- machine definitions --------------------------------------------------------------

def test_builtin_machine_shapes():
    inf = define_inference_machine()
    ret = define_retraining_machine()
    assert [s.name for s in inf.states] == [
        "validate_input", "preprocess", "load_active_model", "predict", "write_results"]
    assert len(ret.states) == 8
    assert all(s.action_id == f"inference.{s.name}" for s in inf.states)
    assert all(s.action_id == f"retraining.{s.name}" for s in ret.states)
    assert ret.trigger_kinds == ("retraining_request", "drift_alert")


def test_machine_json_round_trip_bit_exact():
    for machine in (define_inference_machine(), define_retraining_machine()):
        text = machine.to_json()
        back = machine_from_json(text)
        assert back == machine
        assert back.to_json() == text


def test_machine_from_json_validates():
    doc = json.loads(define_inference_machine().to_json())
    doc["format_version"] = 2
    with pytest.raises(ValueError, match="format_version"):
        machine_from_json(json.dumps(doc))
    with pytest.raises(ValueError, match="unknown action ids"):
        machine_from_json(define_inference_machine().to_json(), known_action_ids={"other.action"})


def test_state_def_validation():
    with pytest.raises(ValueError):
        StateDef(name="s", action_id="a", on_failure="explode")
    with pytest.raises(ValueError):
        RetryPolicy(max_attempts=0)
    with pytest.raises(ValueError):
        StateMachineDef(name="m", trigger_kinds=("drift_alert",), states=())
    dup = (StateDef(name="s", action_id="a"), StateDef(name="s", action_id="b"))
    with pytest.raises(ValueError, match="unique"):
        StateMachineDef(name="m", trigger_kinds=("drift_alert",), states=dup)


def test_write_and_load_default_machines(ws):
    paths = write_default_machines(ws)
    before = {n: p.read_text() for n, p in paths.items()}
    write_default_machines(ws)  # idempotent: must not rewrite
    assert {n: p.read_text() for n, p in paths.items()} == before
    machines = load_machines(ws)
    assert set(machines) == {"inference", "retraining"}
    assert machine_for_kind(machines, "drift_alert").name == "retraining"
    with pytest.raises(ValueError, match="no state machine"):
        machine_for_kind(machines, "unhandled")


# --- executor over toy machines ----------------------------------------------------------

def toy_machine(*states):
    return StateMachineDef(name="toy", trigger_kinds=("inference_request",), states=tuple(states))


def make_executor(ws, actions, **kw):
    kw.setdefault("sleep_fn", lambda s: None)
    return Executor(ws, actions, **kw)


def test_happy_path_persists_run(ws):
    calls = []
    machine = toy_machine(StateDef("one", "a"), StateDef("two", "b"))
    actions = {"a": lambda ctx: calls.append("a") or {"n": 1}, "b": lambda ctx: calls.append("b") or {"n": 2}}
    ev = new_event("inference_request", {}, event_id="e1")
    run = make_executor(ws, actions).execute(machine, ev)
    assert run.run_id == "run-e1"
    assert run.terminal_status == "succeeded"
    assert [s.status for s in run.states] == ["succeeded", "succeeded"]
    assert calls == ["a", "b"]
    on_disk = load_run(ws, "run-e1")
    assert on_disk.to_dict() == run.to_dict()
    assert on_disk.state("one").diagnostics == {"n": 1}


def test_retry_backoff_then_success(ws):
    sleeps = []
    attempts = {"n": 0}

    def flaky(ctx):
        attempts["n"] += 1
        if attempts["n"] < 3:
            raise RuntimeError("transient")
        return {}

    machine = toy_machine(StateDef("s", "a", retry=RetryPolicy(max_attempts=3, backoff_s=2.0)))
    ev = new_event("inference_request", {}, event_id="e2")
    run = Executor(ws, {"a": flaky}, sleep_fn=sleeps.append).execute(machine, ev)
    assert run.terminal_status == "succeeded"
    assert run.state("s").attempts == 3
    assert sleeps == [2.0, 4.0]  # exponential doubling


def test_exhausted_retries_halt_by_default(ws):
    def boom(ctx):
        raise ValueError("permanent")

    ran_second = []
    machine = toy_machine(
        StateDef("s1", "a", retry=RetryPolicy(max_attempts=2, backoff_s=0.0)),
        StateDef("s2", "b"),
    )
    ev = new_event("inference_request", {}, event_id="e3")
    run = make_executor(ws, {"a": boom, "b": lambda ctx: ran_second.append(1) or {}}).execute(machine, ev)
    assert run.terminal_status == "failed"
    assert run.state("s1").status == "failed"
    assert run.state("s1").attempts == 2
    assert "permanent" in run.state("s1").diagnostics
    assert run.state("s2").status == "pending"
    assert not ran_second


def test_on_failure_skip_continues(ws):
    def boom(ctx):
        raise ValueError("ignored")

    machine = toy_machine(
        StateDef("s1", "a", retry=RetryPolicy(max_attempts=1, backoff_s=0.0), on_failure="skip"),
        StateDef("s2", "b"),
    )
    ev = new_event("inference_request", {}, event_id="e4")
    run = make_executor(ws, {"a": boom, "b": lambda ctx: {}}).execute(machine, ev)
    assert run.state("s1").status == "failed"
    assert run.state("s2").status == "succeeded"
    assert run.terminal_status == "failed"  # a failed state still fails the run


def test_skip_state_counts_as_success(ws):
    def skipper(ctx):
        raise SkipState("nothing to do")

    machine = toy_machine(StateDef("s1", "a"), StateDef("s2", "b"))
    ev = new_event("inference_request", {}, event_id="e5")
    run = make_executor(ws, {"a": skipper, "b": lambda ctx: {}}).execute(machine, ev)
    assert run.state("s1").status == "skipped"
    assert run.state("s1").diagnostics == "nothing to do"
    assert run.terminal_status == "succeeded"


def test_resume_skips_succeeded_and_resets_attempts(ws):
    calls = {"a": 0, "b": 0}

    def ok(ctx):
        calls["a"] += 1
        return {}

    def boom(ctx):
        calls["b"] += 1
        raise RuntimeError("down")

    machine = toy_machine(
        StateDef("s1", "a"),
        StateDef("s2", "b", retry=RetryPolicy(max_attempts=2, backoff_s=0.0)),
    )
    ev = new_event("inference_request", {}, event_id="e6")
    first = make_executor(ws, {"a": ok, "b": boom}).execute(machine, ev)
    assert first.terminal_status == "failed"
    assert first.state("s2").attempts == 2

    def fixed(ctx):
        calls["b"] += 1
        return {"ok": True}

    second = make_executor(ws, {"a": ok, "b": fixed}).execute(machine, ev)
    assert second.terminal_status == "succeeded"
    assert calls["a"] == 1  # succeeded state never re-ran
    assert second.state("s2").attempts == 1  # reset on resume, not cumulative


def test_succeeded_run_is_not_re_executed(ws):
    calls = []
    machine = toy_machine(StateDef("s", "a"))
    ev = new_event("inference_request", {}, event_id="e7")
    ex = make_executor(ws, {"a": lambda ctx: calls.append(1) or {}})
    ex.execute(machine, ev)
    again = ex.execute(machine, ev)
    assert again.terminal_status == "succeeded"
    assert calls == [1]


def test_injected_crash_persists_progress(ws):
    calls = {"a": 0, "b": 0}
    machine = toy_machine(StateDef("s1", "a"), StateDef("s2", "b"))
    actions = {
        "a": lambda ctx: calls.__setitem__("a", calls["a"] + 1) or {},
        "b": lambda ctx: calls.__setitem__("b", calls["b"] + 1) or {},
    }
    ev = new_event("inference_request", {}, event_id="e8")
    with pytest.raises(CrashInjected):
        make_executor(ws, actions, crash_after={"s1"}).execute(machine, ev)
    half = load_run(ws, "run-e8")
    assert half.state("s1").status == "succeeded"
    assert half.state("s2").status == "pending"
    assert half.terminal_status == "running"
    resumed = make_executor(ws, actions).execute(machine, ev)
    assert resumed.terminal_status == "succeeded"
    assert calls == {"a": 1, "b": 1}


def test_execute_validates_event_and_machine(ws):
    machine = toy_machine(StateDef("s", "a"))
    ex = make_executor(ws, {"a": lambda ctx: {}})
    with pytest.raises(ValueError, match="does not handle"):
        ex.execute(machine, new_event("drift_alert", {}, event_id="e9"))
    missing = new_event("inference_request", {"paths": [str(ws.root / "nope.csv")]}, event_id="e10")
    with pytest.raises(FileNotFoundError, match="payload path"):
        ex.execute(machine, missing)
    with pytest.raises(ValueError, match="unknown action ids"):
        make_executor(ws, {}).execute(machine, new_event("inference_request", {}, event_id="e11"))


def test_run_record_format(ws):
    machine = toy_machine(StateDef("s", "a"))
    ev = new_event("inference_request", {"paths": []}, event_id="e12")
    make_executor(ws, {"a": lambda ctx: {}}).execute(machine, ev)
    doc = json.loads((ws.run_dir("run-e12") / "run.json").read_text())
    assert doc["format_version"] == 1
    assert doc["event"]["event_id"] == "e12"
    assert list(doc) == sorted(doc)
    with pytest.raises(FileNotFoundError):
        load_run(ws, "run-missing")


# --- registry -------------------------------------------------------------------------------

@pytest.fixture
def weights_file(tmp_path):
    seqs = toy_seqs(20, max_len=5, n_classes=2, vocab_size=12)
    model = build_dnn(cfg_dnn(), 12, 2, 5, seed=0)
    weights, _ = train(model, seqs, seqs, TrainConfig(epochs=2, batch_size=8, seed=0),
                       vocab_hash="vh-test", class_list=["850000", "850001"])
    p = tmp_path / "weights.bin"
    save_weights(weights, p)
    return p


def test_register_and_get(ws, weights_file):
    reg = ModelRegistry(ws.registry_dir)
    assert reg.versions() == []
    assert reg.active() is None
    entry = reg.register(weights_file, provenance={"run_id": "run-x"})
    assert entry.version == 1
    assert entry.status == "candidate"
    assert entry.vocab_hash == "vh-test"
    assert entry.architecture == "dnn"
    assert reg.versions() == [1]
    assert reg.weights_path(1).read_bytes() == weights_file.read_bytes()
    assert reg.vocab_path(1) is None


def test_register_is_idempotent_per_run_id(ws, weights_file):
    reg = ModelRegistry(ws.registry_dir)
    a = reg.register(weights_file, provenance={"run_id": "r1"})
    b = reg.register(weights_file, provenance={"run_id": "r1"})
    assert (a.version, b.version) == (1, 1)
    c = reg.register(weights_file, provenance={"run_id": "r2"})
    assert c.version == 2


def test_register_rejects_wrong_declared_vocab(ws, weights_file):
    reg = ModelRegistry(ws.registry_dir)
    with pytest.raises(RegistryError, match="different vocabulary"):
        reg.register(weights_file, declared_vocab_hash="deadbeefdeadbeef")


def test_register_stores_vocab_and_reports(ws, weights_file, tmp_path):
    vocab = tmp_path / "vocab.tsv"
    vocab.write_text("0\t<pad>\n1\t<oov>\n")
    report = tmp_path / "eval.json"
    report.write_text("{}")
    reg = ModelRegistry(ws.registry_dir)
    entry = reg.register(weights_file, vocab_path=vocab, reports={"eval": report})
    assert reg.vocab_path(entry.version).read_text() == vocab.read_text()
    assert entry.reports == {"eval": "eval.json"}


def test_promote_swaps_active_and_archives(ws, weights_file):
    reg = ModelRegistry(ws.registry_dir)
    reg.register(weights_file, provenance={"run_id": "a"})
    reg.register(weights_file, provenance={"run_id": "b"})
    reg.promote(1)
    assert reg.active_version() == 1
    assert reg.get(1).status == "active"
    reg.promote(2)
    assert reg.active_version() == 2
    assert reg.get(1).status == "archived"
    assert reg.active().version == 2
    with pytest.raises(RegistryError, match="no version"):
        reg.promote(99)


def test_corrupt_active_pointer(ws, weights_file):
    reg = ModelRegistry(ws.registry_dir)
    reg.register(weights_file)
    (ws.registry_dir / "ACTIVE").write_text("banana\n")
    with pytest.raises(RegistryError, match="corrupt"):
        reg.active_version()


def test_register_rejects_corrupted_weights(ws, weights_file):
    blob = bytearray(weights_file.read_bytes())
    blob[-5] ^= 0xFF
    bad = weights_file.with_name("bad.bin")
    bad.write_bytes(bytes(blob))
    from hscls.models import ChecksumError

    with pytest.raises(ChecksumError):
        ModelRegistry(ws.registry_dir).register(bad)


def test_concurrent_promote_and_read(ws, weights_file):
    reg = ModelRegistry(ws.registry_dir)
    for run in ("a", "b", "c"):
        reg.register(weights_file, provenance={"run_id": run})
    errors = []

    def promoter(version):
        try:
            for _ in range(10):
                reg.promote(version)
        except Exception as exc:  # noqa: BLE001
            errors.append(exc)

    def reader():
        try:
            for _ in range(30):
                active = reg.active()
                if active is not None:
                    assert active.version in (1, 2, 3)
                    assert active.status == "active"
        except Exception as exc:  # noqa: BLE001
            errors.append(exc)

    threads = [threading.Thread(target=promoter, args=(v,)) for v in (1, 2, 3)]
    threads += [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert reg.active_version() in (1, 2, 3)


# --- drift -------------------------------------------------------------------------------

def test_kl_divergence_oracle():
    # 3:1 vs 1:3 over two symbols
    assert kl_divergence({"a": 3, "b": 1}, {"a": 1, "b": 3}) == pytest.approx(
        0.5493061437260685, abs=1e-7)


def test_kl_divergence_disjoint_support_is_finite():
    val = kl_divergence({"a": 2, "b": 2}, {"c": 2, "d": 2})
    assert val == pytest.approx(21.416412996589944, abs=1e-6)


def test_kl_divergence_identical_is_zero():
    assert kl_divergence({"a": 5, "b": 5}, {"a": 5, "b": 5}) == pytest.approx(0.0, abs=1e-12)


def test_kl_divergence_validation():
    with pytest.raises(ValueError, match="empty live"):
        kl_divergence({}, {"a": 1})
    with pytest.raises(ValueError, match="empty reference"):
        kl_divergence({"a": 1}, {})


@given(st.dictionaries(st.sampled_from("abcdef"), st.integers(1, 50), min_size=1),
       st.dictionaries(st.sampled_from("abcdef"), st.integers(1, 50), min_size=1))
@settings(max_examples=80)
def test_kl_divergence_nonnegative_and_finite(p, q):
    import math

    val = kl_divergence(p, q)
    assert val >= -1e-12
    assert math.isfinite(val)


def test_histograms():
    assert class_histogram(["850000", "850001", "850000"]) == {"850000": 2, "850001": 1}
    hist = token_histogram(["MCB 3-Pole!", "mcb panel"])
    assert hist["mcb"] == 2
    assert "3pole" in hist


def test_drift_check_triggers_on_threshold():
    ref = {"class": {"a": 50, "b": 50}, "tokens": {"x": 10}}
    live_same = {"class": {"a": 5, "b": 5}, "tokens": {"x": 3}}
    report = drift_check(ref, live_same, threshold=0.1)
    assert not report.triggered
    assert report.details["compared"] == ["class", "tokens"]
    live_shifted = {"class": {"a": 10, "b": 0.001}, "tokens": {"x": 3}}
    assert drift_check(ref, live_shifted, threshold=0.1).triggered


def test_drift_check_validation_and_dict():
    with pytest.raises(ValueError, match="no common"):
        drift_check({"class": {"a": 1}}, {"tokens": {"x": 1}})
    with pytest.raises(ValueError, match="empty"):
        drift_check({"class": {"a": 1}}, {"class": {}})
    report = DriftReport("ref", "live", {"class": 0.05}, 0.1, False)
    assert set(report.to_dict()) == {
        "reference_id", "live_id", "divergences", "threshold", "triggered", "details"}


# --- watcher / dispatcher ----------------------------------------------------------------

def toy_setup(ws):
    machine = toy_machine(StateDef("s", "ok"))
    executor = make_executor(ws, {"ok": lambda ctx: {}})
    return executor, {"toy": machine}


def test_watcher_requires_stable_size(ws):
    watcher = Watcher(ws, poll_interval_s=0)
    drop = ws.watch_queue("inference") / "batch.csv"
    drop.write_text("record_id\n")
    assert watcher.poll_once() == []  # first sighting only records the size
    with open(drop, "a") as fh:
        fh.write("r1\n")
    assert watcher.poll_once() == []  # grew between polls -> still unstable
    events = watcher.poll_once()
    assert len(events) == 1
    assert events[0].kind == "inference_request"
    moved = ws.watch_queue("inference") / "processed" / "batch.csv"
    assert moved.exists()
    assert payload_paths(events[0]) == [moved]
    queued = list((ws.events_dir / "inference").glob("*.json"))
    assert len(queued) == 1


def test_watcher_unique_destinations(ws):
    watcher = Watcher(ws, poll_interval_s=0)
    drop_dir = ws.watch_queue("retraining")
    for _ in range(2):
        (drop_dir / "same.csv").write_text("x")
        watcher.poll_once()
        watcher.poll_once()
    processed = sorted(p.name for p in (drop_dir / "processed").iterdir())
    assert processed == ["same.1.csv", "same.csv"]


def test_dispatcher_executes_and_archives(ws):
    executor, machines = toy_setup(ws)
    ev = new_event("inference_request", {}, event_id="ev-ok")
    path = enqueue_event(ws, ev)
    runs = Dispatcher(ws, executor, machines).drain()
    assert len(runs) == 1 and runs[0].terminal_status == "succeeded"
    assert not path.exists()
    assert (path.parent / "processed" / path.name).exists()


def test_dispatcher_quarantines_bad_events(ws):
    executor, machines = toy_setup(ws)
    bad = ws.events_dir / "inference" / "bad.json"
    bad.write_text("{not json")
    ev = new_event("inference_request", {}, event_id="ev-good")
    enqueue_event(ws, ev)
    runs = Dispatcher(ws, executor, machines).drain()
    assert len(runs) == 1  # the good event still ran
    rejected = ws.events_dir / "inference" / "rejected" / "bad.json"
    assert rejected.exists()
    assert rejected.with_suffix(".json.reason").exists()


def test_serve_picks_up_dropped_file(ws):
    executor, machines = toy_setup(ws)
    (ws.watch_queue("inference") / "drop.csv").write_text("data")
    n = serve(ws, executor, machines, max_cycles=3, sleep_fn=lambda s: None)
    assert n == 1
    run_dirs = list(ws.runs_dir.iterdir())
    assert len(run_dirs) == 1
