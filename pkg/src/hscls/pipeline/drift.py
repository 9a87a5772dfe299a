"""Input-drift monitoring via smoothed KL divergence on class/token histograms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..corpus import DEFAULT_STOPWORDS, normalize_text

SMOOTHING_EPS = 1e-9
DEFAULT_THRESHOLD = 0.1  # nats


@dataclass
class DriftReport:
    reference_id: str
    live_id: str
    divergences: dict[str, float]
    threshold: float
    triggered: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "reference_id": self.reference_id,
            "live_id": self.live_id,
            "divergences": self.divergences,
            "threshold": self.threshold,
            "triggered": self.triggered,
            "details": self.details,
        }


def class_histogram(codes: Iterable[str]) -> dict[str, int]:
    hist: dict[str, int] = {}
    for c in codes:
        hist[c] = hist.get(c, 0) + 1
    return hist


def token_histogram(texts: Iterable[str], stopwords=DEFAULT_STOPWORDS) -> dict[str, int]:
    hist: dict[str, int] = {}
    for text in texts:
        for tok in normalize_text(text, stopwords).split():
            hist[tok] = hist.get(tok, 0) + 1
    return hist


def kl_divergence(
    p_counts: Mapping[str, float], q_counts: Mapping[str, float], eps: float = SMOOTHING_EPS
) -> float:
    """D(P || Q) over the union support with add-eps smoothing and renormalization."""
    if not p_counts:
        raise ValueError("empty live histogram")
    if not q_counts:
        raise ValueError("empty reference histogram")
    support = sorted(set(p_counts) | set(q_counts))
    p = [float(p_counts.get(k, 0)) + eps for k in support]
    q = [float(q_counts.get(k, 0)) + eps for k in support]
    p_total, q_total = sum(p), sum(q)
    return sum((pi / p_total) * math.log((pi / p_total) / (qi / q_total)) for pi, qi in zip(p, q))


def drift_check(
    reference: Mapping[str, Mapping[str, float]],
    live: Mapping[str, Mapping[str, float]],
    threshold: float = DEFAULT_THRESHOLD,
    reference_id: str = "reference",
    live_id: str = "live",
) -> DriftReport:
    """Compare live class/token histograms against a training-time reference.

    `reference` and `live` map distribution names (e.g. "class", "tokens") to
    histograms; only names present in both are compared.
    """
    names = sorted(set(reference) & set(live))
    if not names:
        raise ValueError("no common distributions between reference and live windows")
    divergences = {}
    for name in names:
        if not live[name]:
            raise ValueError(f"live window has an empty {name!r} histogram")
        divergences[name] = kl_divergence(live[name], reference[name])
    triggered = any(v > threshold for v in divergences.values())
    return DriftReport(
        reference_id=reference_id,
        live_id=live_id,
        divergences=divergences,
        threshold=threshold,
        triggered=triggered,
        details={"compared": names},
    )
