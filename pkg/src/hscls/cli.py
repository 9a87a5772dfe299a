"""Operator command line: prepare, train, tune, abtest, infer, pipeline, registry, report."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import models as _models
from ._seeds import derive_seed
from .abtest import (
    NeuralLearner,
    aggregate,
    anova_by_class,
    recommend,
    run_cv,
    verdict_dict,
    write_ab_report_csv,
)
from .corpus import (
    CsvSchemaError,
    Dataset,
    SplitConfig,
    TokenSequence,
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
from .metrics import BAND_NAMES, METRIC_NAMES, band_chart_svg, band_table, confusion_matrix, evaluate
from .pipeline import (
    ACTIONS,
    Dispatcher,
    Executor,
    ModelRegistry,
    RegistryError,
    enqueue_event,
    event_from_json,
    load_machines,
    load_run,
    open_workspace,
    serve,
    write_default_machines,
)
from .pipeline.actions import DEFAULT_CONFIG

CONFIG_FILE_NAME = "hscls.toml"

# keys that name locations rather than behavior; excluded from the config hash
VOLATILE_KEYS = {"workspace", "tool_version", "config_hash"}


class UsageError(Exception):
    """Bad invocation (maps to exit code 2)."""


def parse_config_file(path: Path) -> dict[str, str]:
    """Flat key=value document; # comments and blank lines ignored."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip().strip("\"'")
    return out


def _coerce(key: str, value, template) -> object:
    if isinstance(template, bool):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes", "on"):
            return True
        if str(value).lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"config key {key!r}: expected a boolean, got {value!r}")
    if isinstance(template, int):
        return int(value)
    if isinstance(template, float):
        return float(value)
    return str(value)


def resolve_config(args: argparse.Namespace) -> dict:
    """Layered resolution: flags > environment > config file > defaults."""
    workspace = getattr(args, "workspace", None) or os.environ.get("HSCLS_WORKSPACE") or "."
    cfg: dict = dict(DEFAULT_CONFIG)
    cfg["workspace"] = str(workspace)

    file_path = Path(workspace) / CONFIG_FILE_NAME
    if file_path.exists():
        for key, value in parse_config_file(file_path).items():
            if key in DEFAULT_CONFIG:
                cfg[key] = _coerce(key, value, DEFAULT_CONFIG[key])
            else:
                raise UsageError(f"{file_path}: unknown config key {key!r}")

    if "HSCLS_SEED" in os.environ:
        cfg["seed"] = int(os.environ["HSCLS_SEED"])

    for key in DEFAULT_CONFIG:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            cfg[key] = _coerce(key, flag_value, DEFAULT_CONFIG[key])

    cfg["tool_version"] = __version__
    hashable = {k: v for k, v in sorted(cfg.items()) if k not in VOLATILE_KEYS}
    cfg["config_hash"] = hashlib.sha256(json.dumps(hashable, sort_keys=True).encode()).hexdigest()[:16]
    return cfg


def _stamp(cfg: dict, obj: dict) -> dict:
    obj["tool_version"] = cfg["tool_version"]
    obj["config_hash"] = cfg["config_hash"]
    return obj


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def _write_sidecar(cfg: dict, csv_path: Path) -> None:
    _write_json(csv_path.with_name(csv_path.name + ".meta.json"), _stamp(cfg, {"artifact": csv_path.name}))


def _print_seed(cfg: dict) -> None:
    print(f"seed: {cfg['seed']}")


# --- commands -------------------------------------------------------------------

def cmd_prepare(cfg: dict, args: argparse.Namespace) -> int:
    ws = open_workspace(cfg["workspace"])
    data = read_csv(args.input)
    raw_counts = data.class_counts()
    filtered = filter_by_assurance(data, int(cfg["min_assurance"]))
    train, test = stratified_split(
        filtered,
        SplitConfig(test_fraction=float(cfg["test_fraction"]), seed=derive_seed(cfg["seed"], "prepare/split")),
    )
    strategy = str(cfg["upsample"])
    if strategy not in ("off", "mean", "median"):
        raise UsageError(f"--upsample must be off, mean, or median, got {strategy!r}")
    train_up = (
        train
        if strategy == "off"
        else stratified_upsample(train, strategy=strategy, seed=derive_seed(cfg["seed"], "prepare/upsample"))
    )
    vocab = build_vocabulary(
        [combined_text(r) for r in train_up.records], max_size=int(cfg["vocab_size"])
    )

    train_path = ws.corpus_dir / "train.csv"
    test_path = ws.corpus_dir / "test.csv"
    vocab_path = ws.corpus_dir / "vocab.tsv"
    write_csv(train_up, train_path)
    write_csv(test, test_path)
    vocab.save(vocab_path)
    for p in (train_path, test_path):
        _write_sidecar(cfg, p)
    report = _stamp(
        cfg,
        {
            "input": str(args.input),
            "class_counts": {
                "raw": raw_counts,
                "filtered": filtered.class_counts(),
                "train_before_upsample": train.class_counts(),
                "train_after_upsample": train_up.class_counts(),
                "test": test.class_counts(),
            },
            "upsample_strategy": strategy,
            "min_assurance": int(cfg["min_assurance"]),
            "test_fraction": float(cfg["test_fraction"]),
            "vocab_size": len(vocab),
            "vocab_hash": vocab.content_hash(),
        },
    )
    _write_json(ws.corpus_dir / "prep_report.json", report)
    print(f"rows: raw={len(data.records)} filtered={len(filtered.records)} "
          f"train={len(train_up.records)} test={len(test.records)}")
    print(f"classes: {len(train_up.classes())}")
    print(f"vocabulary: {len(vocab)} tokens ({vocab.content_hash()[:12]})")
    for p in (train_path, test_path, vocab_path, ws.corpus_dir / "prep_report.json"):
        print(f"wrote {p}")
    return 0


def _model_config(cfg: dict, args: argparse.Namespace):
    kind = args.model
    preset_flag = getattr(args, "preset", None)
    presets = _models.DNN_PRESETS if kind == "dnn" else _models.TEXTCNN_PRESETS
    preset = preset_flag or str(cfg[f"{kind}_preset"])
    if preset not in presets:
        raise UsageError(
            f"--preset {preset!r} is not available for model {kind!r} "
            f"(choose from {sorted(presets)})"
        )
    model_cfg = presets[preset]
    config_file = getattr(args, "config", None)
    if config_file:
        overrides = json.loads(Path(config_file).read_text())
        merged = {**asdict(model_cfg), **overrides}
        model_cfg = _models.DnnConfig(**merged) if kind == "dnn" else _models.TextCnnConfig(**merged)
    return model_cfg


def _evaluate_weights(weights: _models.ModelWeights, vocab: Vocabulary, test: Dataset) -> dict:
    class_index = {c: i for i, c in enumerate(weights.class_list)}
    unknown = sorted({r.hs_code for r in test.records} - set(class_index))
    if unknown:
        raise ValueError(f"test set contains classes the model was not trained on: {unknown[:5]}")
    model = _models.model_from_weights(weights)
    max_len = int(weights.metadata["max_len"])
    true_ids, pred_ids = [], []
    for start in range(0, len(test.records), 256):
        chunk = test.records[start : start + 256]
        ids = np.array([tokenize(combined_text(r), vocab, max_len) for r in chunk], dtype=np.int64)
        probs = model.forward(ids, training=False)
        pred_ids.extend(int(i) for i in probs.argmax(axis=1))
        true_ids.extend(class_index[r.hs_code] for r in chunk)
    cm = confusion_matrix(pred_ids, true_ids, len(weights.class_list), weights.class_list)
    per_class = evaluate(cm)
    return {
        "model": weights.architecture,
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
    }


def cmd_train(cfg: dict, args: argparse.Namespace) -> int:
    ws = open_workspace(cfg["workspace"])
    vocab_path = Path(args.vocab) if args.vocab else ws.corpus_dir / "vocab.tsv"
    if not vocab_path.exists():
        raise FileNotFoundError(
            f"vocabulary not found at {vocab_path}; run `hscls prepare` first or pass --vocab"
        )
    vocab = Vocabulary.load(vocab_path)
    train_ds = read_csv(args.train_csv)
    classes = train_ds.classes()
    model_cfg = _model_config(cfg, args)
    max_len = int(cfg["max_len"])
    seed = derive_seed(cfg["seed"], f"train/{args.model}")

    if args.model == "dnn":
        plan = _models.dnn_layer_plan(model_cfg)
        print(f"layer plan: {plan}")
        model = _models.build_dnn(model_cfg, len(vocab), len(classes), max_len, seed)
    else:
        model = _models.build_text_cnn(model_cfg, len(vocab), len(classes), max_len, seed)

    try:
        fit_ds, valid_ds = stratified_split(
            train_ds,
            SplitConfig(test_fraction=float(cfg["valid_fraction"]), seed=derive_seed(cfg["seed"], "train/valid")),
        )
    except ValueError:
        fit_ds, valid_ds = train_ds, Dataset.from_records([])
    fit_seqs = encode_dataset(fit_ds, vocab, max_len, class_list=classes)
    valid_seqs = encode_dataset(valid_ds, vocab, max_len, class_list=classes)
    weights, history = _models.train(
        model,
        fit_seqs,
        valid_seqs,
        _models.TrainConfig(
            epochs=int(cfg["epochs"]),
            batch_size=int(cfg["batch_size"]),
            optimizer=str(cfg["optimizer"]),
            learning_rate=float(cfg["learning_rate"]),
            seed=seed,
            early_stop_patience=int(cfg["early_stop_patience"]),
        ),
        vocab_hash=vocab.content_hash(),
        class_list=classes,
    )
    weights.metadata["tool_version"] = cfg["tool_version"]
    weights.metadata["config_hash"] = cfg["config_hash"]

    out = Path(args.out) if args.out else ws.models_dir / f"{args.model}.bin"
    out.parent.mkdir(parents=True, exist_ok=True)
    _models.save_weights(weights, out)
    shutil.copyfile(vocab_path, Path(str(out) + ".vocab.tsv"))
    history_path = Path(str(out) + ".history.csv")
    import csv as _csv

    with open(history_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "valid_accuracy"])
        for h in history:
            writer.writerow([h["epoch"], f"{h['train_loss']:.6f}", f"{h['valid_accuracy']:.6f}"])
    _write_sidecar(cfg, history_path)

    last = history[-1]
    print(f"epochs run: {len(history)} (final loss {last['train_loss']:.4f}, "
          f"valid accuracy {last['valid_accuracy']:.4f})")
    print(f"wrote {out}")
    print(f"wrote {history_path}")

    if args.eval_csv:
        test_ds = read_csv(args.eval_csv)
        report = _stamp(cfg, _evaluate_weights(weights, vocab, test_ds))
        eval_path = Path(str(out) + ".eval.json")
        _write_json(eval_path, report)
        print(f"test accuracy: {report['accuracy']:.4f}")
        print(f"wrote {eval_path}")
    return 0


def cmd_tune(cfg: dict, args: argparse.Namespace) -> int:
    from .tuner import config_from_point, space_for_model, tune, write_history_csv

    if args.budget < args.n_init:
        raise UsageError(f"--budget ({args.budget}) must be >= --n-init ({args.n_init})")
    ws = open_workspace(cfg["workspace"])
    train_ds = read_csv(args.train_csv)
    max_len = int(cfg["max_len"])
    seed = cfg["seed"]

    def objective(point: dict) -> float:
        kwargs = config_from_point(args.model, point)
        model_cfg = _models.DnnConfig(**kwargs) if args.model == "dnn" else _models.TextCnnConfig(**kwargs)
        learner = NeuralLearner(
            args.model,
            model_cfg,
            _models.TrainConfig(epochs=int(cfg["tune_epochs"]), batch_size=int(cfg["batch_size"]), seed=0),
            max_len=max_len,
            vocab_size=int(cfg["vocab_size"]),
        )
        fit_ds, valid_ds = stratified_split(
            train_ds, SplitConfig(test_fraction=0.2, seed=derive_seed(seed, "tune/valid"))
        )
        learner.fit(fit_ds, derive_seed(seed, "tune/fit"))
        preds = learner.predict(valid_ds)
        return sum(1 for p, r in zip(preds, valid_ds.records) if p == r.hs_code) / len(valid_ds.records)

    space = space_for_model(args.model)
    result = tune(space, objective, budget=args.budget, n_init=args.n_init, seed=derive_seed(seed, "tune"))
    best_path = ws.tune_dir / f"{args.model}_best.json"
    history_path = ws.tune_dir / f"{args.model}_history.csv"
    _write_json(
        best_path,
        _stamp(
            cfg,
            {
                "model": args.model,
                "best_point": result.best.point,
                "best_config": config_from_point(args.model, result.best.point),
                "objective": result.best.objective,
                "budget": args.budget,
                "n_init": args.n_init,
            },
        ),
    )
    write_history_csv(result, space, history_path)
    _write_sidecar(cfg, history_path)
    print(f"best objective: {result.best.objective:.4f}")
    print(f"best config: {json.dumps(config_from_point(args.model, result.best.point), sort_keys=True)}")
    print(f"wrote {best_path}")
    print(f"wrote {history_path}")
    return 0


def cmd_abtest(cfg: dict, args: argparse.Namespace) -> int:
    ws = open_workspace(cfg["workspace"])
    kinds = [k.strip() for k in args.models.split(",") if k.strip()]
    if len(kinds) < 2:
        raise UsageError("--models needs at least two comma-separated model kinds")
    for kind in kinds:
        if kind not in ("dnn", "text_cnn"):
            raise UsageError(f"unknown model kind {kind!r}")
    train_ds = read_csv(args.train_csv)
    results, excluded = [], {}
    for kind in kinds:
        presets = _models.DNN_PRESETS if kind == "dnn" else _models.TEXTCNN_PRESETS
        model_cfg = presets[str(cfg[f"{kind}_preset"])]
        train_cfg = _models.TrainConfig(
            epochs=int(cfg["ab_epochs"]),
            batch_size=int(cfg["batch_size"]),
            optimizer=str(cfg["optimizer"]),
            learning_rate=float(cfg["learning_rate"]),
            seed=0,
            early_stop_patience=int(cfg["early_stop_patience"]),
        )

        def factory(_kind=kind, _cfg=model_cfg, _tc=train_cfg):
            return NeuralLearner(
                _kind, _cfg, _tc, max_len=int(cfg["max_len"]), vocab_size=int(cfg["vocab_size"])
            )

        cv = run_cv(factory, kind, train_ds, k=args.k, seed=derive_seed(cfg["seed"], "abtest"))
        if cv.folds:
            results.append(cv)
        else:
            excluded[kind] = [err for _, err in cv.failures][:3]
        if cv.failures:
            print(f"{kind}: {len(cv.failures)} of {args.k} folds failed", file=sys.stderr)
    if len(results) < 2:
        raise RuntimeError(f"fewer than two models completed any fold; excluded: {excluded}")
    table = aggregate(results)
    anova = anova_by_class(results, metric=args.metric)
    recs = recommend(table, anova, alpha=args.alpha, metric=args.metric)
    report_path = ws.abtest_dir / "ab_report.csv"
    verdict_path = ws.abtest_dir / "verdict.json"
    write_ab_report_csv(table, anova, recs, report_path)
    _write_sidecar(cfg, report_path)
    verdict = _stamp(cfg, verdict_dict(table, anova, recs, args.alpha, args.metric))
    if excluded:
        verdict["excluded_models"] = excluded
    _write_json(verdict_path, verdict)
    significant = sum(1 for r in recs if r.significant)
    print(f"per-class winners: { {m: sum(1 for r in recs if r.winner == m) for m in table.models} }")
    print(f"significant at alpha={args.alpha}: {significant}/{len(recs)} classes")
    print(f"overall winner: {verdict['overall_winner']}")
    print(f"wrote {report_path}")
    print(f"wrote {verdict_path}")
    return 0


def cmd_infer(cfg: dict, args: argparse.Namespace) -> int:
    ws = open_workspace(cfg["workspace"])
    if bool(args.weights) == bool(args.use_active):
        raise UsageError("pass exactly one of --weights PATH or --use-active")
    if args.use_active:
        registry = ModelRegistry(ws.registry_dir)
        entry = registry.active()
        if entry is None:
            raise RuntimeError("registry has no active model; train and promote one first")
        weights_path = registry.weights_path(entry.version)
        vocab_path = registry.vocab_path(entry.version)
        if vocab_path is None:
            raise RuntimeError(f"registry v{entry.version} carries no vocabulary file")
    else:
        weights_path = Path(args.weights)
        sibling = Path(str(weights_path) + ".vocab.tsv")
        if args.vocab:
            vocab_path = Path(args.vocab)
        elif sibling.exists():
            vocab_path = sibling
        else:
            vocab_path = ws.corpus_dir / "vocab.tsv"
    weights = _models.load_weights(weights_path)
    vocab = Vocabulary.load(vocab_path)
    if vocab.content_hash() != weights.vocab_hash:
        raise _models.VocabularyMismatchError(
            f"vocabulary at {vocab_path} does not match the weights "
            f"({vocab.content_hash()[:12]} vs {weights.vocab_hash[:12]})"
        )
    data = read_unlabeled_csv(args.input)
    max_len = int(weights.metadata["max_len"])
    seqs = [
        TokenSequence(tuple(tokenize(combined_text(r), vocab, max_len)), 0, r.record_id)
        for r in data
    ]
    predictions = _models.predict(weights, seqs, vocab_hash=vocab.content_hash())
    out = Path(args.out) if args.out else ws.root / (Path(args.input).stem + "_predictions.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    import csv as _csv

    with open(out, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["record_id", "predicted_hs_code", "confidence", "band", "top3_codes", "top3_probs"])
        for p in predictions:
            writer.writerow(
                [
                    p.record_id,
                    p.code,
                    f"{p.confidence:.6f}",
                    p.band,
                    "|".join(p.top_codes),
                    "|".join(f"{x:.6f}" for x in p.top_probs),
                ]
            )
    _write_sidecar(cfg, out)
    print(f"predicted {len(predictions)} rows")
    print(f"wrote {out}")
    return 0


def cmd_pipeline(cfg: dict, args: argparse.Namespace) -> int:
    ws = open_workspace(cfg["workspace"])
    write_default_machines(ws)
    machines = load_machines(ws, known_action_ids=ACTIONS)
    executor = Executor(ws, ACTIONS, config=cfg)
    if args.pipeline_cmd == "start":
        print(f"watching {ws.watch_dir} (poll every {args.poll_interval}s; Ctrl-C to stop)")
        count = serve(
            ws,
            executor,
            machines,
            poll_interval_s=args.poll_interval,
            max_cycles=args.max_cycles,
            on_run=lambda run: print(f"run {run.run_id}: {run.terminal_status}"),
        )
        print(f"executed {count} runs")
        return 0
    if args.pipeline_cmd == "status":
        run = load_run(ws, args.run_id)
        print(json.dumps(run.to_dict(), indent=2, sort_keys=True))
        return 0
    if args.pipeline_cmd == "emit-event":
        event = event_from_json(Path(args.event_file).read_text())
        event_path = enqueue_event(ws, event)
        dispatcher = Dispatcher(ws, executor, machines)
        run = dispatcher.dispatch_one(event_path)
        print(f"run {run.run_id}: {run.terminal_status}")
        for s in run.states:
            print(f"  {s.name}: {s.status} (attempts={s.attempts})")
        return 0 if run.terminal_status == "succeeded" else 1
    raise UsageError(f"unknown pipeline subcommand {args.pipeline_cmd!r}")


def cmd_registry(cfg: dict, args: argparse.Namespace) -> int:
    ws = open_workspace(cfg["workspace"])
    registry = ModelRegistry(ws.registry_dir)
    if args.registry_cmd == "list":
        versions = registry.versions()
        if not versions:
            print("registry is empty")
            return 0
        for v in versions:
            entry = registry.get(v)
            print(f"v{entry.version}  {entry.status:9s}  {entry.architecture:8s}  "
                  f"classes={len(entry.class_list)}  vocab={entry.vocab_hash[:12]}")
        return 0
    if args.registry_cmd == "promote":
        entry = registry.promote(args.version)
        print(f"active: v{entry.version} ({entry.architecture})")
        return 0
    if args.registry_cmd == "show-active":
        entry = registry.active()
        print("none" if entry is None else f"v{entry.version} ({entry.architecture})")
        return 0
    raise UsageError(f"unknown registry subcommand {args.registry_cmd!r}")


BAND_CSV_HEADERS = {"high": ">=0.90", "medium": "[0.80,0.90)", "low": "<0.80"}


def cmd_report(cfg: dict, args: argparse.Namespace) -> int:
    ws = open_workspace(cfg["workspace"])
    if bool(args.eval) == bool(args.run):
        raise UsageError("pass exactly one of --eval PATH or --run RUN_ID")
    if args.eval:
        eval_files = [Path(args.eval)]
    else:
        run_dir = ws.run_dir(args.run)
        if not run_dir.is_dir():
            raise FileNotFoundError(f"no run directory for {args.run!r}")
        eval_files = sorted(run_dir.glob("eval_*.json"))
        if not eval_files:
            raise FileNotFoundError(f"run {args.run!r} has no evaluation reports")
    out_dir = Path(args.out_dir) if args.out_dir else ws.reports_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    import csv as _csv

    for eval_file in eval_files:
        if not eval_file.exists():
            raise FileNotFoundError(f"evaluation report not found: {eval_file}")
        doc = json.loads(eval_file.read_text())
        stem = eval_file.stem
        table = doc["band_table"]
        if args.format == "csv":
            metrics_path = out_dir / f"{stem}_per_class.csv"
            with open(metrics_path, "w", newline="") as fh:
                writer = _csv.writer(fh)
                writer.writerow(["label", "precision", "recall", "f_beta", "support", "degenerate"])
                for m in doc["metrics"]:
                    writer.writerow(
                        [
                            m["label"],
                            f"{m['precision']:.6f}",
                            f"{m['recall']:.6f}",
                            f"{m['f_beta']:.6f}",
                            m["support"],
                            int(m["degenerate"]),
                        ]
                    )
            _write_sidecar(cfg, metrics_path)
            bands_path = out_dir / f"{stem}_bands.csv"
            with open(bands_path, "w", newline="") as fh:
                writer = _csv.writer(fh)
                writer.writerow(["metric", *(BAND_CSV_HEADERS[b] for b in BAND_NAMES)])
                for metric in METRIC_NAMES:
                    writer.writerow([metric, *(table[metric][b] for b in BAND_NAMES)])
            _write_sidecar(cfg, bands_path)
            print(f"wrote {metrics_path}")
            print(f"wrote {bands_path}")
        else:
            for metric in METRIC_NAMES:
                svg = band_chart_svg({metric: table[metric]}, title=f"{doc.get('model', stem)}: {metric} bands")
                svg_path = out_dir / f"{stem}_bands_{metric}.svg"
                svg_path.write_text(svg + "\n")
                print(f"wrote {svg_path}")
    return 0


# --- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hscls",
        description="HS-code text classification toolkit and local MLOps pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workspace", help="workspace root (default: $HSCLS_WORKSPACE or .)")
    common.add_argument("--seed", type=int, help="master seed (default: $HSCLS_SEED or 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="filter, split, upsample, build vocabulary")
    p.add_argument("input")
    p.add_argument("--min-assurance", dest="min_assurance", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--upsample", choices=["off", "mean", "median"])
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="train one model and write its weights")
    p.add_argument("train_csv")
    p.add_argument("--model", choices=["dnn", "text_cnn"], required=True)
    p.add_argument("--preset")
    p.add_argument("--config", help="JSON file overriding preset hyperparameters")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--valid-fraction", dest="valid_fraction", type=float)
    p.add_argument("--vocab", help="vocabulary file (default: <workspace>/corpus/vocab.tsv)")
    p.add_argument("--out", help="weights output path (default: <workspace>/models/<model>.bin)")
    p.add_argument("--eval-csv", dest="eval_csv", help="optional test CSV; writes an eval JSON")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("tune", parents=[common], help="Bayesian hyperparameter search")
    p.add_argument("train_csv")
    p.add_argument("--model", choices=["dnn", "text_cnn"], required=True)
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--n-init", dest="n_init", type=int, default=8)
    p.add_argument("--tune-epochs", dest="tune_epochs", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("abtest", parents=[common], help="cross-validated model comparison")
    p.add_argument("train_csv")
    p.add_argument("--models", default="dnn,text_cnn")
    p.add_argument("--k", type=int, default=37)
    p.add_argument("--metric", choices=["precision", "recall", "f_beta"], default="f_beta")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--ab-epochs", dest="ab_epochs", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.set_defaults(fn=cmd_abtest)

    p = sub.add_parser("infer", parents=[common], help="batch predictions from saved weights")
    p.add_argument("input")
    p.add_argument("--weights")
    p.add_argument("--use-active", dest="use_active", action="store_true")
    p.add_argument("--vocab")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("pipeline", parents=[common], help="run the event-driven orchestrator")
    psub = p.add_subparsers(dest="pipeline_cmd", required=True)
    ps = psub.add_parser("start", parents=[common], help="watch drop dirs and execute events")
    ps.add_argument("--poll-interval", dest="poll_interval", type=float, default=0.5)
    ps.add_argument("--max-cycles", dest="max_cycles", type=int, default=None)
    ps.set_defaults(fn=cmd_pipeline)
    ps = psub.add_parser("status", parents=[common], help="show one run record")
    ps.add_argument("run_id")
    ps.set_defaults(fn=cmd_pipeline)
    ps = psub.add_parser("emit-event", parents=[common], help="inject an event file and execute it")
    ps.add_argument("event_file")
    ps.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("registry", parents=[common], help="inspect and promote model versions")
    rsub = p.add_subparsers(dest="registry_cmd", required=True)
    rs = rsub.add_parser("list", parents=[common])
    rs.set_defaults(fn=cmd_registry)
    rs = rsub.add_parser("promote", parents=[common])
    rs.add_argument("version", type=int)
    rs.set_defaults(fn=cmd_registry)
    rs = rsub.add_parser("show-active", parents=[common])
    rs.set_defaults(fn=cmd_registry)

    p = sub.add_parser("report", parents=[common], help="render band tables and charts")
    p.add_argument("--eval", help="evaluation report JSON")
    p.add_argument("--run", help="run id holding eval_*.json reports")
    p.add_argument("--format", choices=["csv", "svg"], default="csv")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        _print_seed(cfg)
        return args.fn(cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CsvSchemaError, FileNotFoundError, RegistryError, _models.WeightsIOError,
            _models.VocabularyMismatchError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
