import numpy as np
import pytest

from hscls.corpus import Dataset, RawRecord


def make_record(i: int, code: str, text: str = "", assurance: int = 4, upsampled: bool = False) -> RawRecord:
    return RawRecord(
        record_id=f"r{i:05d}",
        short_description=text or f"widget type {i % 7}",
        medium_description=f"general purpose widget number {i}",
        etim="ec0001" if i % 3 else None,
        hs_code=code,
        assurance_level=assurance,
        upsampled=upsampled,
    )


def make_dataset(counts: dict[str, int], assurance: int = 4) -> Dataset:
    """Dataset with the given per-class record counts, deterministic contents."""
    records = []
    i = 0
    for code in sorted(counts):
        for _ in range(counts[code]):
            records.append(make_record(i, code, assurance=assurance))
            i += 1
    return Dataset.from_records(records)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
