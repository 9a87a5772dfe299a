import pytest

from hscls.synth import class_keywords, generate_synthetic_corpus, noise_tokens


def test_default_shape_and_codes():
    ds = generate_synthetic_corpus()
    assert len(ds) == 2000
    assert ds.classes() == [f"{850000 + i:06d}" for i in range(10)]
    assert all(v == 200 for v in ds.class_counts().values())


def test_keywords_are_class_specific():
    assert class_keywords(0) == ["kw0a", "kw0b", "kw0c", "kw0d", "kw0e", "kw0f", "kw0g", "kw0h"]
    assert set(class_keywords(3)).isdisjoint(class_keywords(7))
    assert len(noise_tokens()) == 40


def test_noise_fraction_roughly_respected():
    ds = generate_synthetic_corpus(n_classes=4, per_class=100, noise_fraction=0.2, seed=1)
    noise_pool = set(noise_tokens())
    total = noisy = 0
    for r in ds.records:
        for tok in (r.short_description + " " + r.medium_description).split():
            total += 1
            noisy += tok in noise_pool
    assert 0.15 < noisy / total < 0.25


def test_zero_noise_means_no_shared_tokens():
    ds = generate_synthetic_corpus(n_classes=3, per_class=30, noise_fraction=0.0, seed=2)
    noise_pool = set(noise_tokens())
    for r in ds.records:
        assert noise_pool.isdisjoint((r.short_description + " " + r.medium_description).split())


def test_deterministic_and_seed_sensitive():
    a = generate_synthetic_corpus(n_classes=3, per_class=10, seed=9)
    b = generate_synthetic_corpus(n_classes=3, per_class=10, seed=9)
    c = generate_synthetic_corpus(n_classes=3, per_class=10, seed=10)
    assert [r.short_description for r in a.records] == [r.short_description for r in b.records]
    assert [r.short_description for r in a.records] != [r.short_description for r in c.records]


def test_assurance_alternates_and_etim_set():
    ds = generate_synthetic_corpus(n_classes=2, per_class=4, seed=0)
    assert [r.assurance_level for r in ds.records] == [3, 4] * 4
    assert {r.etim for r in ds.records} == {"ec0000", "ec0001"}


def test_validation():
    with pytest.raises(ValueError):
        generate_synthetic_corpus(n_classes=1)
    with pytest.raises(ValueError):
        generate_synthetic_corpus(noise_fraction=1.0)
