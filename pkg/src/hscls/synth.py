"""Synthetic labeled corpus with class-specific keyword vocabularies.

Each class owns a small keyword set; a configurable fraction of tokens is
drawn from a shared noise pool so the classes overlap but stay separable.
"""

from __future__ import annotations

import string

import numpy as np

from ._seeds import derive_seed
from .corpus import Dataset, RawRecord

KEYWORDS_PER_CLASS = 8
NOISE_POOL_SIZE = 40


def class_keywords(class_idx: int) -> list[str]:
    return [f"kw{class_idx}{letter}" for letter in string.ascii_lowercase[:KEYWORDS_PER_CLASS]]


def noise_tokens() -> list[str]:
    return [f"noise{i:02d}" for i in range(NOISE_POOL_SIZE)]


def generate_synthetic_corpus(
    n_classes: int = 10,
    per_class: int = 200,
    noise_fraction: float = 0.2,
    seed: int = 0,
) -> Dataset:
    """10x200 by default: codes 850000..850009, ids syn-000000 onward."""
    if n_classes < 2 or per_class < 1:
        raise ValueError("need at least 2 classes and 1 record per class")
    if not 0.0 <= noise_fraction < 1.0:
        raise ValueError("noise_fraction must be in [0, 1)")
    rng = np.random.default_rng(derive_seed(seed, "synth"))
    noise = noise_tokens()
    records = []
    counter = 0
    for ci in range(n_classes):
        code = f"{850000 + ci:06d}"
        keywords = class_keywords(ci)
        for _ in range(per_class):
            n_tokens = int(rng.integers(8, 13))
            tokens = [
                noise[int(rng.integers(len(noise)))]
                if rng.uniform() < noise_fraction
                else keywords[int(rng.integers(len(keywords)))]
                for _ in range(n_tokens)
            ]
            cut = n_tokens // 2
            records.append(
                RawRecord(
                    record_id=f"syn-{counter:06d}",
                    short_description=" ".join(tokens[:cut]),
                    medium_description=" ".join(tokens[cut:]),
                    etim=f"ec{ci:04d}",
                    hs_code=code,
                    assurance_level=3 if counter % 2 == 0 else 4,
                )
            )
            counter += 1
    return Dataset.from_records(records)
