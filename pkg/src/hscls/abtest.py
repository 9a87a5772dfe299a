"""Model comparison: stratified k-fold CV, logit transform, one-way ANOVA, winners."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from ._seeds import derive_seed
from .corpus import Dataset, build_vocabulary, combined_text, encode_dataset, stratified_split, tokenize
from .metrics import confusion_matrix, f_beta, precision_recall
from . import models as _models

LOGIT_EPS = 1e-6
BETA_CF_TOL = 1e-12
BETA_CF_MAX_ITER = 500

HYPOTHESIS_NOTE = (
    "null hypothesis: group means are equal; the null is rejected when p < alpha"
)


# --- special functions --------------------------------------------------------

def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Modified Lentz evaluation of the incomplete-beta continued fraction."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, BETA_CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETA_CF_TOL:
            return h
    raise RuntimeError(f"incomplete beta continued fraction did not converge for a={a} b={b} x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) via the continued-fraction expansion, accurate to ~1e-12."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be within [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def f_distribution_sf(f_stat: float, df1: int, df2: int) -> float:
    """P(F > f_stat) for the F(df1, df2) distribution."""
    if f_stat < 0:
        raise ValueError("F statistic must be non-negative")
    if math.isinf(f_stat):
        return 0.0
    x = df2 / (df2 + df1 * f_stat)
    return regularized_incomplete_beta(df2 / 2.0, df1 / 2.0, x)


def gaussian_transform(samples: Sequence[float], eps: float = LOGIT_EPS) -> np.ndarray:
    """Clamp [0,1] samples into [eps, 1-eps], then apply the logit."""
    arr = np.clip(np.asarray(samples, dtype=np.float64), eps, 1.0 - eps)
    return np.log(arr / (1.0 - arr))


@dataclass
class AnovaResult:
    f_statistic: float
    p_value: float
    df_between: int
    df_within: int
    group_sizes: list[int]
    class_label: str | None = None
    metric: str | None = None


def one_way_anova(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """F = (SSB/df1)/(SSW/df2); p from the regularized incomplete beta.

    Degenerate inputs: zero within-variance with spread between groups gives
    (inf, 0); zero variance everywhere gives (0, 1).
    """
    if len(groups) < 2:
        raise ValueError("ANOVA needs at least two groups")
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if any(len(a) < 2 for a in arrays):
        raise ValueError("every group needs at least two samples")
    sizes = [len(a) for a in arrays]
    n = sum(sizes)
    g = len(arrays)
    grand = float(np.concatenate(arrays).mean())
    ssb = float(sum(len(a) * (a.mean() - grand) ** 2 for a in arrays))
    ssw = float(sum(((a - a.mean()) ** 2).sum() for a in arrays))
    df1, df2 = g - 1, n - g
    if ssw == 0.0:
        if ssb > 0.0:
            return AnovaResult(math.inf, 0.0, df1, df2, sizes)
        return AnovaResult(0.0, 1.0, df1, df2, sizes)
    f_stat = (ssb / df1) / (ssw / df2)
    return AnovaResult(f_stat, f_distribution_sf(f_stat, df1, df2), df1, df2, sizes)


# --- cross-validation ---------------------------------------------------------

class Learner(Protocol):
    def fit(self, train: Dataset, seed: int) -> None: ...

    def predict(self, test: Dataset) -> list[str]: ...


@dataclass
class FoldResult:
    model: str
    fold: int
    classes: list[str]
    precision: np.ndarray  # length C
    recall: np.ndarray  # length C
    support: np.ndarray  # length C, true-member counts in the eval fold
    accuracy: float


@dataclass
class ModelCvResult:
    model: str
    classes: list[str]
    folds: list[FoldResult]
    failures: list[tuple[int, str]] = field(default_factory=list)

    def metric_samples(self, class_idx: int, metric: str) -> list[float]:
        """Per-fold values for one class, restricted to folds where it appears."""
        out = []
        for fr in self.folds:
            if fr.support[class_idx] == 0:
                continue
            if metric == "precision":
                out.append(float(fr.precision[class_idx]))
            elif metric == "recall":
                out.append(float(fr.recall[class_idx]))
            elif metric == "f_beta":
                out.append(f_beta(float(fr.precision[class_idx]), float(fr.recall[class_idx])))
            else:
                raise ValueError(f"unknown metric {metric!r}")
        return out


def k_fold_split(data: Dataset, k: int = 37, seed: int = 0) -> list[list[int]]:
    """Stratified partition into k folds of record indices.

    Per class, shuffled indices are dealt round-robin starting at a seeded
    offset, so fold sizes per class differ by at most one. Classes with fewer
    than k records simply appear in fewer folds.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if len(data.records) < k:
        raise ValueError(f"cannot cut {len(data.records)} records into {k} folds")
    rng = np.random.default_rng(derive_seed(seed, "kfold"))
    folds: list[list[int]] = [[] for _ in range(k)]
    by_class: dict[str, list[int]] = {}
    for i, rec in enumerate(data.records):
        by_class.setdefault(rec.hs_code, []).append(i)
    for code in sorted(by_class):
        idx = np.array(by_class[code])
        rng.shuffle(idx)
        offset = int(rng.integers(k))
        for j, rec_idx in enumerate(idx):
            folds[(offset + j) % k].append(int(rec_idx))
    return [sorted(f) for f in folds]


def run_cv(
    factory: Callable[[], Learner],
    model_name: str,
    data: Dataset,
    k: int = 37,
    seed: int = 0,
) -> ModelCvResult:
    """Train on k-1 folds, score on the held-out fold, for every fold.

    A fold whose training or prediction raises is recorded as a failure and
    excluded from the results.
    """
    classes = data.classes()
    class_index = {c: i for i, c in enumerate(classes)}
    folds = k_fold_split(data, k, seed)
    result = ModelCvResult(model=model_name, classes=classes, folds=[])
    all_indices = set(range(len(data.records)))
    for fold_i, eval_idx in enumerate(folds):
        train_idx = sorted(all_indices.difference(eval_idx))
        train_ds = data.subset(train_idx)
        eval_ds = data.subset(eval_idx)
        learner = factory()
        try:
            learner.fit(train_ds, derive_seed(seed, f"{model_name}-fold-{fold_i}"))
            predicted = learner.predict(eval_ds)
        except Exception as exc:  # noqa: BLE001 - fold failures must not abort the study
            result.failures.append((fold_i, str(exc)))
            continue
        if len(predicted) != len(eval_ds.records):
            result.failures.append((fold_i, "learner returned wrong number of predictions"))
            continue
        true_ids = [class_index[r.hs_code] for r in eval_ds.records]
        pred_ids = [class_index.get(p, -1) for p in predicted]
        if any(p < 0 for p in pred_ids):
            result.failures.append((fold_i, "learner predicted a code outside the dataset classes"))
            continue
        cm = confusion_matrix(pred_ids, true_ids, len(classes), classes)
        precision, recall, _ = precision_recall(cm)
        support = cm.counts.sum(axis=1)
        result.folds.append(
            FoldResult(
                model=model_name,
                fold=fold_i,
                classes=classes,
                precision=precision,
                recall=recall,
                support=support,
                accuracy=cm.accuracy(),
            )
        )
    return result


@dataclass
class MetricTable:
    models: list[str]
    classes: list[str]
    # (model, class_label, metric, statistic) -> float; statistic in {mean, median}
    values: dict[tuple[str, str, str, str], float]
    fold_counts: dict[tuple[str, str], int]
    accuracies: dict[str, float]


def aggregate(cv_results: Sequence[ModelCvResult]) -> MetricTable:
    """Mean and median of per-fold metric values, per model and class."""
    if not cv_results:
        raise ValueError("no cross-validation results to aggregate")
    classes = cv_results[0].classes
    for r in cv_results:
        if r.classes != classes:
            raise ValueError("cross-validation results cover different class lists")
    values: dict[tuple[str, str, str, str], float] = {}
    fold_counts: dict[tuple[str, str], int] = {}
    accuracies: dict[str, float] = {}
    for r in cv_results:
        if not r.folds:
            raise ValueError(f"model {r.model!r} has no successful folds")
        accuracies[r.model] = float(np.mean([fr.accuracy for fr in r.folds]))
        for ci, label in enumerate(classes):
            fold_counts[(r.model, label)] = sum(1 for fr in r.folds if fr.support[ci] > 0)
            for metric in ("precision", "recall", "f_beta"):
                samples = r.metric_samples(ci, metric)
                if samples:
                    values[(r.model, label, metric, "mean")] = float(np.mean(samples))
                    values[(r.model, label, metric, "median")] = float(np.median(samples))
                else:
                    values[(r.model, label, metric, "mean")] = 0.0
                    values[(r.model, label, metric, "median")] = 0.0
    return MetricTable(
        models=[r.model for r in cv_results],
        classes=classes,
        values=values,
        fold_counts=fold_counts,
        accuracies=accuracies,
    )


def anova_by_class(
    cv_results: Sequence[ModelCvResult], metric: str = "f_beta"
) -> dict[str, AnovaResult | None]:
    """Per-class one-way ANOVA across models on logit-transformed fold metrics.

    Classes without at least two samples per model get None (not comparable).
    """
    classes = cv_results[0].classes
    out: dict[str, AnovaResult | None] = {}
    for ci, label in enumerate(classes):
        groups = [r.metric_samples(ci, metric) for r in cv_results]
        if any(len(g) < 2 for g in groups):
            out[label] = None
            continue
        transformed = [gaussian_transform(g) for g in groups]
        res = one_way_anova(transformed)
        res.class_label = label
        res.metric = metric
        out[label] = res
    return out


@dataclass
class Recommendation:
    class_label: str
    winner: str
    value: float
    significant: bool
    p_value: float | None
    alpha: float


def recommend(
    table: MetricTable,
    anova: dict[str, AnovaResult | None],
    alpha: float = 0.05,
    statistic: str = "mean",
    metric: str = "f_beta",
) -> list[Recommendation]:
    """Per class: argmax of the chosen aggregate; significance from the ANOVA p.

    Exact ties break toward higher aggregate recall, then lexicographic name.
    """
    if statistic not in ("mean", "median"):
        raise ValueError(f"unknown statistic {statistic!r}")
    recs = []
    for label in table.classes:
        def sort_key(model: str):
            return (
                -table.values[(model, label, metric, statistic)],
                -table.values[(model, label, "recall", statistic)],
                model,
            )

        winner = min(table.models, key=sort_key)
        res = anova.get(label)
        p = res.p_value if res is not None else None
        recs.append(
            Recommendation(
                class_label=label,
                winner=winner,
                value=table.values[(winner, label, metric, statistic)],
                significant=(p is not None and p < alpha),
                p_value=p,
                alpha=alpha,
            )
        )
    return recs


def overall_winner(recs: Sequence[Recommendation], table: MetricTable) -> str:
    """Majority of per-class winners; ties go to the higher mean accuracy."""
    tally: dict[str, int] = {m: 0 for m in table.models}
    for r in recs:
        tally[r.winner] += 1
    top = max(tally.values())
    tied = [m for m, c in tally.items() if c == top]
    if len(tied) == 1:
        return tied[0]
    return max(tied, key=lambda m: (table.accuracies.get(m, 0.0), m))


def write_ab_report_csv(
    table: MetricTable,
    anova: dict[str, AnovaResult | None],
    recs: Sequence[Recommendation],
    path: str | Path,
    statistic: str = "mean",
) -> None:
    rec_by_class = {r.class_label: r for r in recs}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["class"]
        for m in table.models:
            for metric in ("precision", "recall", "f_beta"):
                header.append(f"{m}_{statistic}_{metric}")
            header.append(f"{m}_folds")
        header.extend(["F", "p", "winner", "significant"])
        writer.writerow(header)
        for label in table.classes:
            row: list = [label]
            for m in table.models:
                for metric in ("precision", "recall", "f_beta"):
                    row.append(f"{table.values[(m, label, metric, statistic)]:.6f}")
                row.append(table.fold_counts[(m, label)])
            res = anova.get(label)
            if res is None:
                row.extend(["", ""])
            else:
                row.append("inf" if math.isinf(res.f_statistic) else f"{res.f_statistic:.6f}")
                row.append(f"{res.p_value:.6g}")
            rec = rec_by_class[label]
            row.extend([rec.winner, int(rec.significant)])
            writer.writerow(row)


def verdict_dict(
    table: MetricTable,
    anova: dict[str, AnovaResult | None],
    recs: Sequence[Recommendation],
    alpha: float,
    metric: str,
    statistic: str = "mean",
) -> dict:
    """Machine-readable verdict consumed by the pipeline promotion step."""
    return {
        "alpha": alpha,
        "metric": metric,
        "statistic": statistic,
        "hypothesis_note": HYPOTHESIS_NOTE,
        "models": table.models,
        "mean_accuracy": table.accuracies,
        "per_class": {
            r.class_label: {
                "winner": r.winner,
                "value": r.value,
                "significant": r.significant,
                "p_value": r.p_value,
            }
            for r in recs
        },
        "overall_winner": overall_winner(recs, table),
    }


# --- neural adapter -----------------------------------------------------------

class NeuralLearner:
    """Learner wrapper that owns its fold-local vocabulary and token encoding."""

    def __init__(
        self,
        model_kind: str,
        model_cfg,
        train_cfg: _models.TrainConfig,
        max_len: int = 16,
        vocab_size: int = 5000,
        valid_fraction: float = 0.1,
    ):
        self.model_kind = model_kind
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.max_len = max_len
        self.vocab_size = vocab_size
        self.valid_fraction = valid_fraction
        self.weights: _models.ModelWeights | None = None
        self.vocab = None

    def fit(self, train: Dataset, seed: int) -> None:
        from .corpus import SplitConfig

        texts = [combined_text(r) for r in train.records]
        self.vocab = build_vocabulary(texts, max_size=self.vocab_size)
        self.classes = train.classes()
        try:
            fit_ds, valid_ds = stratified_split(
                train, SplitConfig(test_fraction=self.valid_fraction, seed=derive_seed(seed, "valid"))
            )
        except ValueError:
            fit_ds, valid_ds = train, Dataset.from_records([])
        fit_seqs = encode_dataset(fit_ds, self.vocab, self.max_len, class_list=self.classes)
        valid_seqs = encode_dataset(valid_ds, self.vocab, self.max_len, class_list=self.classes)
        cfg = self.model_cfg
        if self.model_kind == "dnn":
            model = _models.build_dnn(cfg, len(self.vocab), len(self.classes), self.max_len, seed)
        elif self.model_kind == "text_cnn":
            model = _models.build_text_cnn(cfg, len(self.vocab), len(self.classes), self.max_len, seed)
        else:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        train_cfg = _models.TrainConfig(
            epochs=self.train_cfg.epochs,
            batch_size=self.train_cfg.batch_size,
            optimizer=self.train_cfg.optimizer,
            learning_rate=self.train_cfg.learning_rate,
            seed=seed,
            early_stop_patience=self.train_cfg.early_stop_patience,
        )
        self.weights, _ = _models.train(
            model, fit_seqs, valid_seqs, train_cfg, vocab_hash=self.vocab.content_hash(), class_list=self.classes
        )

    def predict(self, test: Dataset) -> list[str]:
        if self.weights is None or self.vocab is None:
            raise RuntimeError("predict called before fit")
        model = _models.model_from_weights(self.weights)
        ids = np.array(
            [tokenize(combined_text(r), self.vocab, self.max_len) for r in test.records], dtype=np.int64
        )
        out = []
        for start in range(0, len(ids), 256):
            probs = model.forward(ids[start : start + 256], training=False)
            out.extend(self.classes[int(i)] for i in probs.argmax(axis=1))
        return out
