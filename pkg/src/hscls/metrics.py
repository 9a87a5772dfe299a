"""Evaluation metrics: confusion matrices, precision/recall, F-beta, band tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_BETA = 1.2
BAND_EDGES = (0.80, 0.90)
BAND_NAMES = ("high", "medium", "low")
METRIC_NAMES = ("precision", "recall", "f_beta")


@dataclass
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f_beta: float
    support: int
    degenerate: bool  # no predictions and/or no true members for this class


class ConfusionMatrix:
    """counts[i, j] = number of items with true class i predicted as class j."""

    def __init__(self, n_classes: int, classes: Sequence[str] | None = None):
        if n_classes < 1:
            raise ValueError("need at least one class")
        if classes is not None and len(classes) != n_classes:
            raise ValueError("class name list does not match n_classes")
        self.classes = list(classes) if classes is not None else [str(i) for i in range(n_classes)]
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def add(self, true_id: int, predicted_id: int, n: int = 1) -> None:
        self.counts[true_id, predicted_id] += n

    def accuracy(self) -> float:
        total = self.counts.sum()
        if total == 0:
            raise ValueError("empty confusion matrix has no accuracy")
        return float(np.trace(self.counts) / total)

    def support(self, true_id: int) -> int:
        return int(self.counts[true_id].sum())


def confusion_matrix(
    preds: Sequence[int], labels: Sequence[int], n_classes: int, classes: Sequence[str] | None = None
) -> ConfusionMatrix:
    if len(preds) != len(labels):
        raise ValueError(f"got {len(preds)} predictions for {len(labels)} labels")
    cm = ConfusionMatrix(n_classes, classes)
    for t, p in zip(labels, preds):
        if not (0 <= t < n_classes and 0 <= p < n_classes):
            raise ValueError(f"class id out of range: true={t} predicted={p}")
        cm.add(t, p)
    return cm


def precision_recall(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class precision and recall; 0/0 maps to 0.0 and sets the degenerate flag."""
    tp = np.diag(cm.counts).astype(np.float64)
    predicted = cm.counts.sum(axis=0).astype(np.float64)
    actual = cm.counts.sum(axis=1).astype(np.float64)
    degenerate = (predicted == 0) | (actual == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 0.0)
        recall = np.where(actual > 0, tp / np.maximum(actual, 1), 0.0)
    return precision, recall, degenerate


def f_beta(precision: float, recall: float, beta: float = DEFAULT_BETA) -> float:
    """Weighted harmonic mean (1 + b^2) * p * r / (b^2 * p + r); 0 when both are 0."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    denom = beta * beta * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + beta * beta) * precision * recall / denom


def evaluate(cm: ConfusionMatrix, beta: float = DEFAULT_BETA) -> list[ClassMetrics]:
    precision, recall, degenerate = precision_recall(cm)
    return [
        ClassMetrics(
            label=cm.classes[i],
            precision=float(precision[i]),
            recall=float(recall[i]),
            f_beta=f_beta(float(precision[i]), float(recall[i]), beta),
            support=cm.support(i),
            degenerate=bool(degenerate[i]),
        )
        for i in range(cm.n_classes)
    ]


def band_of(value: float, thresholds: tuple[float, float] = BAND_EDGES) -> str:
    """>= 0.90 is high, [0.80, 0.90) is medium, below 0.80 is low."""
    if value >= thresholds[1]:
        return "high"
    if value >= thresholds[0]:
        return "medium"
    return "low"


def band_table(
    metrics: Sequence[ClassMetrics], thresholds: tuple[float, float] = BAND_EDGES
) -> dict[str, dict[str, int]]:
    """Counts of classes per quality band, for each of precision/recall/f_beta."""
    table = {name: {band: 0 for band in BAND_NAMES} for name in METRIC_NAMES}
    for m in metrics:
        for name in METRIC_NAMES:
            table[name][band_of(getattr(m, name), thresholds)] += 1
    return table


def band_labels(
    metrics: Sequence[ClassMetrics], which: str = "f_beta", thresholds: tuple[float, float] = BAND_EDGES
) -> dict[str, list[str]]:
    """Class labels grouped by band for one metric (helper for reports)."""
    if which not in METRIC_NAMES:
        raise ValueError(f"unknown metric {which!r}")
    groups: dict[str, list[str]] = {band: [] for band in BAND_NAMES}
    for m in metrics:
        groups[band_of(getattr(m, which), thresholds)].append(m.label)
    return groups


def write_metrics_csv(metrics: Sequence[ClassMetrics], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "precision", "recall", "f_beta", "support", "degenerate"])
        for m in metrics:
            writer.writerow(
                [m.label, f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.f_beta:.6f}", m.support, int(m.degenerate)]
            )


def band_chart_svg(table: dict[str, dict[str, int]], title: str = "Per-class score bands") -> str:
    """Grouped bar chart of band counts per metric, as a standalone SVG string."""
    colors = {"high": "#2e7d32", "medium": "#f9a825", "low": "#c62828"}
    bar_w, gap, group_gap = 34, 6, 30
    chart_h, pad_left, pad_top, pad_bottom = 220, 46, 34, 46
    group_w = len(BAND_NAMES) * (bar_w + gap) + group_gap
    total_w = pad_left + len(table) * group_w + 20
    total_h = pad_top + chart_h + pad_bottom
    peak = max(1, max(count for bands in table.values() for count in bands.values()))

    def y_of(v: float) -> float:
        return pad_top + chart_h * (1.0 - v / peak)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" '
        f'font-family="monospace" font-size="11">',
        f'<rect width="{total_w}" height="{total_h}" fill="white"/>',
        f'<text x="{pad_left}" y="18" font-size="13">{title}</text>',
    ]
    ticks = sorted({0, peak // 2, peak})
    for t in ticks:
        y = y_of(t)
        parts.append(
            f'<line x1="{pad_left}" y1="{y:.1f}" x2="{total_w - 10}" y2="{y:.1f}" stroke="#ddd"/>'
        )
        parts.append(f'<text x="10" y="{y + 4:.1f}">{t}</text>')
    for gi, (metric, bands) in enumerate(table.items()):
        gx = pad_left + gi * group_w
        for bi, band in enumerate(BAND_NAMES):
            x = gx + bi * (bar_w + gap)
            count = bands[band]
            parts.append(
                f'<rect x="{x}" y="{y_of(count):.1f}" width="{bar_w}" '
                f'height="{pad_top + chart_h - y_of(count):.1f}" fill="{colors[band]}"/>'
            )
            parts.append(f'<text x="{x + 2}" y="{y_of(count) - 4:.1f}">{count}</text>')
        parts.append(
            f'<text x="{gx}" y="{pad_top + chart_h + 16}">{metric}</text>'
        )
    legend_y = pad_top + chart_h + 34
    lx = pad_left
    for band in BAND_NAMES:
        parts.append(f'<rect x="{lx}" y="{legend_y - 10}" width="12" height="12" fill="{colors[band]}"/>')
        parts.append(f'<text x="{lx + 16}" y="{legend_y}">{band}</text>')
        lx += 110
    parts.append("</svg>")
    return "\n".join(parts)
