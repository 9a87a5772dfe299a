"""Built-in pipeline actions. Each action is a pure-ish function of its
context that writes deterministic artifacts into the run directory, so a
resumed run reproduces the same bytes as an uninterrupted one."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import models as _models
from .._seeds import derive_seed
from ..abtest import (
    NeuralLearner,
    aggregate,
    anova_by_class,
    recommend,
    run_cv,
    verdict_dict,
    write_ab_report_csv,
)
from ..corpus import (
    Dataset,
    SplitConfig,
    Vocabulary,
    build_vocabulary,
    combined_text,
    encode_dataset,
    filter_by_assurance,
    read_csv,
    read_unlabeled_csv,
    stratified_split,
    stratified_upsample,
    tokenize,
    write_csv,
)
from ..metrics import band_table, evaluate as evaluate_cm, confusion_matrix
from .drift import class_histogram, drift_check, token_histogram
from .events import Event, enqueue_event, new_event, payload_paths
from .executor import SkipState
from .registry import ModelRegistry
from .workspace import Workspace

DEFAULT_CONFIG = {
    "seed": 0,
    "max_len": 16,
    "vocab_size": 5000,
    "min_assurance": 3,
    "test_fraction": 0.05,
    "upsample": "mean",
    "epochs": 10,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "optimizer": "adam",
    "early_stop_patience": 3,
    "valid_fraction": 0.1,
    "ab_models": "dnn,text_cnn",
    "ab_k": 3,
    "ab_alpha": 0.05,
    "ab_metric": "f_beta",
    "ab_epochs": 5,
    "tuning_enabled": False,
    "tune_budget": 6,
    "tune_n_init": 4,
    "tune_epochs": 3,
    "drift_threshold": 0.1,
    "retrain_corpus": "",
    "dnn_preset": "paper_final",
    "text_cnn_preset": "prose_345",
    "tool_version": "dev",
    "config_hash": "dev",
}


@dataclass
class ActionContext:
    ws: Workspace
    run_dir: Path
    event: Event
    config: dict = field(default_factory=dict)
    state_name: str = ""

    def opt(self, key: str):
        return self.config.get(key, DEFAULT_CONFIG[key])

    def seed_for(self, label: str) -> int:
        return derive_seed(int(self.opt("seed")), f"pipeline/{label}")

    def artifact(self, name: str) -> Path:
        return self.run_dir / name


ActionFn = Callable[[ActionContext], dict]


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def _stamp(ctx: ActionContext, obj: dict) -> dict:
    obj.setdefault("tool_version", ctx.opt("tool_version"))
    obj.setdefault("config_hash", ctx.opt("config_hash"))
    return obj


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- inference ----------------------------------------------------------------

def inference_validate_input(ctx: ActionContext) -> dict:
    paths = payload_paths(ctx.event)
    if not paths:
        raise ValueError("inference event payload names no input files")
    rows = 0
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"payload path does not exist: {p}")
        rows += len(read_unlabeled_csv(p))
    return {"files": len(paths), "rows": rows}


def inference_preprocess(ctx: ActionContext) -> dict:
    records = []
    for p in payload_paths(ctx.event):
        records.extend(read_unlabeled_csv(p))
    out = ctx.artifact("normalized.csv")
    import csv as _csv

    tmp = out.with_name(out.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["record_id", "text"])
        for r in records:
            writer.writerow([r.record_id, combined_text(r)])
    tmp.replace(out)
    return {"rows": len(records)}


def inference_load_active_model(ctx: ActionContext) -> dict:
    registry = ModelRegistry(ctx.ws.registry_dir)
    entry = registry.active()
    if entry is None:
        raise RuntimeError("no active model in the registry")
    weights_path = registry.weights_path(entry.version)
    actual = _file_sha256(weights_path)
    if actual != entry.weights_sha256:
        raise RuntimeError(f"active weights file hash mismatch for v{entry.version}")
    vocab_path = registry.vocab_path(entry.version)
    if vocab_path is None:
        raise RuntimeError(f"registry v{entry.version} has no vocabulary file")
    vocab = Vocabulary.load(vocab_path)
    if vocab.content_hash() != entry.vocab_hash:
        raise RuntimeError(f"registry v{entry.version} vocabulary hash mismatch")
    _write_json(
        ctx.artifact("model_ref.json"),
        {
            "version": entry.version,
            "weights_path": str(weights_path),
            "vocab_path": str(vocab_path),
            "vocab_hash": entry.vocab_hash,
            "architecture": entry.architecture,
        },
    )
    return {"version": entry.version, "architecture": entry.architecture}


def inference_predict(ctx: ActionContext) -> dict:
    import csv as _csv

    ref = json.loads(ctx.artifact("model_ref.json").read_text())
    weights = _models.load_weights(ref["weights_path"])
    vocab = Vocabulary.load(ref["vocab_path"])
    with open(ctx.artifact("normalized.csv"), newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        if header != ["record_id", "text"]:
            raise ValueError("normalized.csv has an unexpected header")
        rows = list(reader)
    max_len = int(weights.metadata["max_len"])
    model = _models.model_from_weights(weights)
    out = []
    for start in range(0, len(rows), 256):
        chunk = rows[start : start + 256]
        ids = np.array([tokenize(text, vocab, max_len) for _, text in chunk], dtype=np.int64)
        if len(ids) == 0:
            continue
        probs = model.forward(ids, training=False)
        for (record_id, _), row in zip(chunk, probs):
            order = np.argsort(-row, kind="stable")[:3]
            conf = float(row[order[0]])
            out.append(
                {
                    "record_id": record_id,
                    "predicted_hs_code": weights.class_list[order[0]],
                    "confidence": conf,
                    "band": _models.confidence_band(conf),
                    "top_codes": [weights.class_list[i] for i in order],
                    "top_probs": [float(row[i]) for i in order],
                }
            )
    _write_json(ctx.artifact("raw_predictions.json"), out)
    return {"rows": len(out)}


def inference_write_results(ctx: ActionContext) -> dict:
    import csv as _csv

    preds = json.loads(ctx.artifact("raw_predictions.json").read_text())
    out = ctx.artifact("predictions.csv")
    tmp = out.with_name(out.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["record_id", "predicted_hs_code", "confidence", "band", "top3_codes", "top3_probs"])
        for p in preds:
            writer.writerow(
                [
                    p["record_id"],
                    p["predicted_hs_code"],
                    f"{p['confidence']:.6f}",
                    p["band"],
                    "|".join(p["top_codes"]),
                    "|".join(f"{x:.6f}" for x in p["top_probs"]),
                ]
            )
    tmp.replace(out)

    diagnostics: dict = {"rows": len(preds), "output": out.name}
    ref_path = json.loads(ctx.artifact("model_ref.json").read_text())
    version_dir = Path(ref_path["weights_path"]).parent
    reference_file = version_dir / "reference.json"
    if reference_file.exists() and preds:
        reference = json.loads(reference_file.read_text())
        with open(ctx.artifact("normalized.csv"), newline="") as fh:
            reader = _csv.reader(fh)
            next(reader)
            texts = [text for _, text in reader]
        live = {
            "class": class_histogram(p["predicted_hs_code"] for p in preds),
            "tokens": token_histogram(texts),
        }
        report = drift_check(
            {k: reference[k] for k in ("class", "tokens") if k in reference},
            live,
            threshold=float(ctx.opt("drift_threshold")),
            reference_id=f"registry-v{ref_path['version']}",
            live_id=ctx.event.event_id,
        )
        _write_json(ctx.artifact("drift_report.json"), report.to_dict())
        diagnostics["drift_triggered"] = report.triggered
        retrain_corpus = str(ctx.opt("retrain_corpus"))
        if report.triggered and retrain_corpus:
            alert = new_event(
                "drift_alert",
                {"paths": [retrain_corpus], "cause_run": ctx.run_dir.name},
                source="drift_monitor",
                event_id=f"drift-{ctx.event.event_id}",
                timestamp=ctx.event.timestamp,
            )
            enqueue_event(ctx.ws, alert)
            diagnostics["drift_alert_event"] = alert.event_id
    return diagnostics


# --- retraining -----------------------------------------------------------------

def retraining_validate_input(ctx: ActionContext) -> dict:
    paths = payload_paths(ctx.event)
    if not paths:
        raise ValueError("retraining event payload names no corpus files")
    rows = 0
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"payload path does not exist: {p}")
        rows += len(read_csv(p).records)
    return {"files": len(paths), "rows": rows}


def _load_labeled_payload(ctx: ActionContext) -> Dataset:
    from dataclasses import replace

    records = []
    seen: set[str] = set()
    for p in payload_paths(ctx.event):
        for r in read_csv(p).records:
            if r.record_id in seen and not r.upsampled:
                r = replace(r, upsampled=True)
            seen.add(r.record_id)
            records.append(r)
    return Dataset.from_records(records)


def retraining_preprocess(ctx: ActionContext) -> dict:
    data = _load_labeled_payload(ctx)
    raw_counts = data.class_counts()
    filtered = filter_by_assurance(data, int(ctx.opt("min_assurance")))
    train, test = stratified_split(
        filtered,
        SplitConfig(test_fraction=float(ctx.opt("test_fraction")), seed=ctx.seed_for("split")),
    )
    strategy = str(ctx.opt("upsample"))
    if strategy == "off":
        train_up = train
    else:
        train_up = stratified_upsample(train, strategy=strategy, seed=ctx.seed_for("upsample"))
    write_csv(train, ctx.artifact("train_raw.csv"))
    write_csv(train_up, ctx.artifact("train.csv"))
    write_csv(test, ctx.artifact("test.csv"))
    report = _stamp(
        ctx,
        {
            "class_counts": {
                "raw": raw_counts,
                "filtered": filtered.class_counts(),
                "train_before_upsample": train.class_counts(),
                "train_after_upsample": train_up.class_counts(),
                "test": test.class_counts(),
            },
            "upsample_strategy": strategy,
            "min_assurance": int(ctx.opt("min_assurance")),
            "test_fraction": float(ctx.opt("test_fraction")),
        },
    )
    _write_json(ctx.artifact("prep_report.json"), report)
    return {
        "rows_raw": len(data.records),
        "rows_train": len(train_up.records),
        "rows_test": len(test.records),
    }


def _model_kinds(ctx: ActionContext) -> list[str]:
    kinds = [k.strip() for k in str(ctx.opt("ab_models")).split(",") if k.strip()]
    if not kinds:
        raise ValueError("ab_models resolved to an empty list")
    for k in kinds:
        if k not in ("dnn", "text_cnn"):
            raise ValueError(f"unknown model kind {k!r}")
    return kinds


def _config_for_kind(ctx: ActionContext, kind: str):
    tuned_path = ctx.artifact("model_configs.json")
    if tuned_path.exists():
        tuned = json.loads(tuned_path.read_text())
        if kind in tuned:
            cfg = tuned[kind]
            return _models.DnnConfig(**cfg) if kind == "dnn" else _models.TextCnnConfig(**cfg)
    preset = str(ctx.opt(f"{kind}_preset"))
    presets = _models.DNN_PRESETS if kind == "dnn" else _models.TEXTCNN_PRESETS
    if preset not in presets:
        raise ValueError(f"unknown {kind} preset {preset!r}")
    return presets[preset]


def retraining_tune_or_load_config(ctx: ActionContext) -> dict:
    if not ctx.opt("tuning_enabled"):
        raise SkipState("tuning disabled; finalized presets will be used")
    from ..tuner import config_from_point, space_for_model, tune, write_history_csv

    train = read_csv(ctx.artifact("train_raw.csv"))
    max_len = int(ctx.opt("max_len"))
    chosen: dict[str, dict] = {}
    diagnostics: dict = {}
    for kind in _model_kinds(ctx):
        def objective(point: dict, _kind=kind) -> float:
            cfg_kwargs = config_from_point(_kind, point)
            cfg = _models.DnnConfig(**cfg_kwargs) if _kind == "dnn" else _models.TextCnnConfig(**cfg_kwargs)
            learner = NeuralLearner(
                _kind,
                cfg,
                _models.TrainConfig(
                    epochs=int(ctx.opt("tune_epochs")),
                    batch_size=int(ctx.opt("batch_size")),
                    seed=0,
                ),
                max_len=max_len,
                vocab_size=int(ctx.opt("vocab_size")),
            )
            fit_ds, valid_ds = stratified_split(
                train, SplitConfig(test_fraction=0.2, seed=ctx.seed_for(f"tune-valid-{_kind}"))
            )
            learner.fit(fit_ds, ctx.seed_for(f"tune-fit-{_kind}"))
            preds = learner.predict(valid_ds)
            hits = sum(1 for p, r in zip(preds, valid_ds.records) if p == r.hs_code)
            return hits / len(valid_ds.records)

        result = tune(
            space_for_model(kind),
            objective,
            budget=int(ctx.opt("tune_budget")),
            n_init=int(ctx.opt("tune_n_init")),
            seed=ctx.seed_for(f"tune-{kind}"),
        )
        chosen[kind] = config_from_point(kind, result.best.point)
        write_history_csv(result, space_for_model(kind), ctx.artifact(f"tune_history_{kind}.csv"))
        diagnostics[kind] = {"best_objective": result.best.objective}
    _write_json(ctx.artifact("model_configs.json"), chosen)
    return diagnostics


def retraining_train_candidates(ctx: ActionContext) -> dict:
    train_ds = read_csv(ctx.artifact("train.csv"))
    max_len = int(ctx.opt("max_len"))
    texts = [combined_text(r) for r in train_ds.records]
    vocab = build_vocabulary(texts, max_size=int(ctx.opt("vocab_size")))
    vocab.save(ctx.artifact("vocab.tsv"))
    classes = train_ds.classes()
    try:
        fit_ds, valid_ds = stratified_split(
            train_ds,
            SplitConfig(test_fraction=float(ctx.opt("valid_fraction")), seed=ctx.seed_for("valid")),
        )
    except ValueError:
        fit_ds, valid_ds = train_ds, Dataset.from_records([])
    fit_seqs = encode_dataset(fit_ds, vocab, max_len, class_list=classes)
    valid_seqs = encode_dataset(valid_ds, vocab, max_len, class_list=classes)
    candidates_dir = ctx.artifact("candidates")
    candidates_dir.mkdir(exist_ok=True)
    diagnostics = {}
    for kind in _model_kinds(ctx):
        cfg = _config_for_kind(ctx, kind)
        seed = ctx.seed_for(f"train-{kind}")
        if kind == "dnn":
            model = _models.build_dnn(cfg, len(vocab), len(classes), max_len, seed)
        else:
            model = _models.build_text_cnn(cfg, len(vocab), len(classes), max_len, seed)
        weights, history = _models.train(
            model,
            fit_seqs,
            valid_seqs,
            _models.TrainConfig(
                epochs=int(ctx.opt("epochs")),
                batch_size=int(ctx.opt("batch_size")),
                optimizer=str(ctx.opt("optimizer")),
                learning_rate=float(ctx.opt("learning_rate")),
                seed=seed,
                early_stop_patience=int(ctx.opt("early_stop_patience")),
            ),
            vocab_hash=vocab.content_hash(),
            class_list=classes,
        )
        _models.save_weights(weights, candidates_dir / f"{kind}.bin")
        diagnostics[kind] = {
            "epochs_run": len(history),
            "best_valid_accuracy": weights.metadata["best_valid_accuracy"],
        }
    return diagnostics


def retraining_evaluate(ctx: ActionContext) -> dict:
    test_ds = read_csv(ctx.artifact("test.csv"))
    vocab = Vocabulary.load(ctx.artifact("vocab.tsv"))
    diagnostics = {}
    for kind in _model_kinds(ctx):
        weights = _models.load_weights(ctx.artifact("candidates") / f"{kind}.bin")
        class_index = {c: i for i, c in enumerate(weights.class_list)}
        max_len = int(weights.metadata["max_len"])
        model = _models.model_from_weights(weights)
        true_ids, pred_ids = [], []
        records = test_ds.records
        for start in range(0, len(records), 256):
            chunk = records[start : start + 256]
            ids = np.array([tokenize(combined_text(r), vocab, max_len) for r in chunk], dtype=np.int64)
            probs = model.forward(ids, training=False)
            pred_ids.extend(int(i) for i in probs.argmax(axis=1))
            true_ids.extend(class_index[r.hs_code] for r in chunk)
        cm = confusion_matrix(pred_ids, true_ids, len(weights.class_list), weights.class_list)
        per_class = evaluate_cm(cm)
        report = _stamp(
            ctx,
            {
                "model": kind,
                "accuracy": cm.accuracy(),
                "classes": weights.class_list,
                "metrics": [
                    {
                        "label": m.label,
                        "precision": m.precision,
                        "recall": m.recall,
                        "f_beta": m.f_beta,
                        "support": m.support,
                        "degenerate": m.degenerate,
                    }
                    for m in per_class
                ],
                "band_table": band_table(per_class),
            },
        )
        _write_json(ctx.artifact(f"eval_{kind}.json"), report)
        diagnostics[kind] = {"accuracy": report["accuracy"]}
    return diagnostics


def retraining_ab_test(ctx: ActionContext) -> dict:
    train_ds = read_csv(ctx.artifact("train_raw.csv"))
    k = int(ctx.opt("ab_k"))
    alpha = float(ctx.opt("ab_alpha"))
    metric = str(ctx.opt("ab_metric"))
    results = []
    excluded = {}
    for kind in _model_kinds(ctx):
        cfg = _config_for_kind(ctx, kind)
        train_cfg = _models.TrainConfig(
            epochs=int(ctx.opt("ab_epochs")),
            batch_size=int(ctx.opt("batch_size")),
            optimizer=str(ctx.opt("optimizer")),
            learning_rate=float(ctx.opt("learning_rate")),
            seed=0,
            early_stop_patience=int(ctx.opt("early_stop_patience")),
        )

        def factory(_kind=kind, _cfg=cfg, _tc=train_cfg):
            return NeuralLearner(
                _kind,
                _cfg,
                _tc,
                max_len=int(ctx.opt("max_len")),
                vocab_size=int(ctx.opt("vocab_size")),
                valid_fraction=float(ctx.opt("valid_fraction")),
            )

        cv = run_cv(factory, kind, train_ds, k=k, seed=ctx.seed_for("ab"))
        if cv.folds:
            results.append(cv)
        else:
            excluded[kind] = [err for _, err in cv.failures][:3]
    if len(results) < 2:
        raise RuntimeError(f"A/B test needs at least two comparable models; excluded: {excluded}")
    table = aggregate(results)
    anova = anova_by_class(results, metric=metric)
    recs = recommend(table, anova, alpha=alpha, metric=metric)
    write_ab_report_csv(table, anova, recs, ctx.artifact("ab_report.csv"))
    verdict = _stamp(ctx, verdict_dict(table, anova, recs, alpha, metric))
    if excluded:
        verdict["excluded_models"] = excluded
    _write_json(ctx.artifact("verdict.json"), verdict)
    return {"overall_winner": verdict["overall_winner"], "excluded": sorted(excluded)}


def retraining_register_candidate(ctx: ActionContext) -> dict:
    verdict = json.loads(ctx.artifact("verdict.json").read_text())
    winner = verdict["overall_winner"]
    weights_path = ctx.artifact("candidates") / f"{winner}.bin"
    train_ds = read_csv(ctx.artifact("train.csv"))
    reference = {
        "class": class_histogram(r.hs_code for r in train_ds.records),
        "tokens": token_histogram(combined_text(r) for r in train_ds.records),
        "n_records": len(train_ds.records),
    }
    _write_json(ctx.artifact("reference.json"), reference)
    registry = ModelRegistry(ctx.ws.registry_dir)
    entry = registry.register(
        weights_path,
        vocab_path=ctx.artifact("vocab.tsv"),
        reports={
            "eval": ctx.artifact(f"eval_{winner}.json"),
            "verdict": ctx.artifact("verdict.json"),
            "reference": ctx.artifact("reference.json"),
        },
        provenance={
            "run_id": ctx.run_dir.name,
            "event_id": ctx.event.event_id,
            "seed": int(ctx.opt("seed")),
            "model_kind": winner,
            "train_data_sha256": _file_sha256(ctx.artifact("train.csv")),
        },
    )
    _write_json(ctx.artifact("register_result.json"), {"version": entry.version, "model": winner})
    return {"version": entry.version, "model": winner}


def retraining_promote_if_winner(ctx: ActionContext) -> dict:
    result = json.loads(ctx.artifact("register_result.json").read_text())
    registry = ModelRegistry(ctx.ws.registry_dir)
    entry = registry.promote(int(result["version"]))
    return {"promoted": entry.version, "model": result["model"]}


ACTIONS: dict[str, ActionFn] = {
    "inference.validate_input": inference_validate_input,
    "inference.preprocess": inference_preprocess,
    "inference.load_active_model": inference_load_active_model,
    "inference.predict": inference_predict,
    "inference.write_results": inference_write_results,
    "retraining.validate_input": retraining_validate_input,
    "retraining.preprocess": retraining_preprocess,
    "retraining.tune_or_load_config": retraining_tune_or_load_config,
    "retraining.train_candidates": retraining_train_candidates,
    "retraining.evaluate": retraining_evaluate,
    "retraining.ab_test": retraining_ab_test,
    "retraining.register_candidate": retraining_register_candidate,
    "retraining.promote_if_winner": retraining_promote_if_winner,
}
