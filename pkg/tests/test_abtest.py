import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hscls.abtest import (
    AnovaResult,
    ModelCvResult,
    NeuralLearner,
    aggregate,
    anova_by_class,
    f_distribution_sf,
    gaussian_transform,
    k_fold_split,
    one_way_anova,
    overall_winner,
    recommend,
    regularized_incomplete_beta,
    run_cv,
    verdict_dict,
    write_ab_report_csv,
)
from hscls.corpus import Dataset

from conftest import make_dataset


# --- incomplete beta ---------------------------------------------------------------
# oracle values frozen from an independent special-function implementation

BETAINC_ORACLES = [
    (0.5, 1.0, 1 / 17, 0.24253562503633297),
    (2.5, 3.5, 0.3, 0.29675298929566646),
    (1.0, 1.0, 0.42, 0.42),
    (8.0, 2.0, 0.9, 0.7748409780000002),
    (0.5, 0.5, 0.5, 0.5000000000000001),
    (5.0, 0.5, 0.99, 0.7571581091015623),
]


@pytest.mark.parametrize("a,b,x,expected", BETAINC_ORACLES)
def test_regularized_incomplete_beta_oracles(a, b, x, expected):
    assert regularized_incomplete_beta(a, b, x) == pytest.approx(expected, abs=1e-12)


def test_incomplete_beta_edges_and_validation():
    assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
    assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        regularized_incomplete_beta(0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        regularized_incomplete_beta(1.0, 1.0, 1.5)


def test_incomplete_beta_symmetry_identity():
    # I_x(a, b) + I_{1-x}(b, a) = 1
    for a, b, x in [(2.0, 5.0, 0.3), (0.5, 0.5, 0.2), (4.0, 1.5, 0.77)]:
        total = regularized_incomplete_beta(a, b, x) + regularized_incomplete_beta(b, a, 1 - x)
        assert total == pytest.approx(1.0, abs=1e-12)


@given(st.floats(min_value=0.001, max_value=0.999))
@settings(max_examples=50)
def test_incomplete_beta_monotone_in_x(x):
    a, b = 3.0, 2.0
    assert regularized_incomplete_beta(a, b, x) <= regularized_incomplete_beta(a, b, min(x + 1e-3, 1.0)) + 1e-12


def test_f_sf_oracles():
    assert f_distribution_sf(32.0, 1, 2) == pytest.approx(0.029857499854668124, abs=1e-12)
    assert f_distribution_sf(3.5, 2, 12) == pytest.approx(0.06346961596914294, abs=1e-12)
    assert f_distribution_sf(1.0, 5, 5) == pytest.approx(0.5, abs=1e-12)
    assert f_distribution_sf(0.0, 3, 9) == 1.0
    assert f_distribution_sf(math.inf, 3, 9) == 0.0


def test_f_sf_monotone_in_f():
    ps = [f_distribution_sf(f, 4, 20) for f in [0.1, 0.5, 1.0, 2.0, 5.0, 20.0]]
    assert ps == sorted(ps, reverse=True)


# --- gaussian (logit) transform -----------------------------------------------------

def test_gaussian_transform_oracles():
    np.testing.assert_allclose(gaussian_transform([0.9]), [2.1972245773362196], atol=1e-12)
    np.testing.assert_allclose(gaussian_transform([0.5]), [0.0], atol=1e-12)
    np.testing.assert_allclose(gaussian_transform([1.0]), [13.815509557963773], atol=1e-9)
    np.testing.assert_allclose(gaussian_transform([0.0]), [-13.815509557963773], atol=1e-9)


def test_gaussian_transform_finite_on_extremes():
    out = gaussian_transform([0.0, 1.0, 0.5, 1e-9])
    assert np.isfinite(out).all()


# --- one-way anova -------------------------------------------------------------------

def test_anova_textbook_fixture():
    res = one_way_anova([[1.0, 2.0], [5.0, 6.0]])
    assert res.f_statistic == pytest.approx(32.0, abs=1e-12)
    assert res.p_value == pytest.approx(0.029857499854668124, abs=1e-9)
    assert res.df_between == 1 and res.df_within == 2


def test_anova_three_group_fixture():
    res = one_way_anova([[2.0, 3.0, 4.0], [4.0, 5.0, 6.0], [8.0, 9.0, 10.0]])
    assert res.f_statistic == pytest.approx(28.0, abs=1e-10)
    assert res.p_value == pytest.approx(0.0009063139874458729, abs=1e-12)


def test_anova_identical_groups():
    res = one_way_anova([[3.0, 3.0, 3.0], [3.0, 3.0, 3.0]])
    assert res.f_statistic == 0.0
    assert res.p_value == 1.0


def test_anova_zero_within_variance_with_separation():
    res = one_way_anova([[1.0, 1.0], [2.0, 2.0]])
    assert math.isinf(res.f_statistic)
    assert res.p_value == 0.0


def test_anova_affine_invariance():
    groups = [[0.61, 0.72, 0.55], [0.81, 0.79, 0.90]]
    scaled = [[5 * v + 3 for v in g] for g in groups]
    a, b = one_way_anova(groups), one_way_anova(scaled)
    assert a.f_statistic == pytest.approx(b.f_statistic, rel=1e-9)
    assert a.p_value == pytest.approx(b.p_value, rel=1e-9)


def test_anova_validation():
    with pytest.raises(ValueError, match="two groups"):
        one_way_anova([[1.0, 2.0]])
    with pytest.raises(ValueError, match="two samples"):
        one_way_anova([[1.0], [2.0, 3.0]])


def test_anova_p_decreases_as_separation_grows():
    base = [1.0, 2.0, 3.0]
    ps = [one_way_anova([base, [v + shift for v in base]]).p_value for shift in (0.5, 1.0, 2.0, 4.0)]
    assert ps == sorted(ps, reverse=True)


def test_anova_null_pvalues_are_uniform():
    # under H0 the p-value must be U(0,1); check with a KS statistic
    rng = np.random.default_rng(0)
    reps = 2000
    ps = np.empty(reps)
    for i in range(reps):
        ps[i] = one_way_anova([rng.normal(size=6), rng.normal(size=6)]).p_value
    ps.sort()
    grid = (np.arange(1, reps + 1)) / reps
    ks = np.max(np.maximum(np.abs(grid - ps), np.abs(ps - (np.arange(reps) / reps))))
    assert ks < 0.04


# --- k-fold split -----------------------------------------------------------------------

def test_k_fold_is_a_partition():
    ds = make_dataset({"850000": 40, "850001": 25, "850002": 9})
    folds = k_fold_split(ds, k=5, seed=0)
    flat = [i for f in folds for i in f]
    assert sorted(flat) == list(range(len(ds)))


def test_k_fold_per_class_balance():
    ds = make_dataset({"850000": 40, "850001": 25})
    folds = k_fold_split(ds, k=5, seed=1)
    for code in ds.classes():
        per_fold = [sum(1 for i in f if ds.records[i].hs_code == code) for f in folds]
        assert max(per_fold) - min(per_fold) <= 1


def test_k_fold_small_class_spreads_over_subset_of_folds():
    ds = make_dataset({"850000": 50, "850001": 3})
    folds = k_fold_split(ds, k=10, seed=2)
    hit = sum(1 for f in folds if any(ds.records[i].hs_code == "850001" for i in f))
    assert hit == 3


def test_k_fold_deterministic_and_seed_sensitive():
    ds = make_dataset({"850000": 30, "850001": 30})
    assert k_fold_split(ds, 6, seed=4) == k_fold_split(ds, 6, seed=4)
    assert k_fold_split(ds, 6, seed=4) != k_fold_split(ds, 6, seed=5)


def test_k_fold_validation():
    ds = make_dataset({"850000": 4})
    with pytest.raises(ValueError):
        k_fold_split(ds, k=1)
    with pytest.raises(ValueError):
        k_fold_split(ds, k=10)


# --- run_cv with a deterministic fake learner ----------------------------------------------

class MajorityLearner:
    """Predicts the most frequent training class; cheap and deterministic."""

    def fit(self, train: Dataset, seed: int) -> None:
        counts = train.class_counts()
        self.code = min(counts, key=lambda c: (-counts[c], c))

    def predict(self, test: Dataset) -> list[str]:
        return [self.code] * len(test.records)


class OracleLearner:
    def fit(self, train, seed):
        pass

    def predict(self, test):
        return [r.hs_code for r in test.records]


class BrokenLearner:
    def fit(self, train, seed):
        raise RuntimeError("training exploded")

    def predict(self, test):
        return []


def test_run_cv_shape_with_abundant_classes():
    # every class has >= k members, so every class appears in every fold
    ds = make_dataset({f"8500{i:02d}": 8 for i in range(4)})
    cv = run_cv(MajorityLearner, "maj", ds, k=4, seed=0)
    assert len(cv.folds) == 4
    assert not cv.failures
    total = sum((fr.support > 0).sum() for fr in cv.folds)
    assert total == 4 * 4  # classes x folds appearances


def test_run_cv_oracle_learner_is_perfect():
    ds = make_dataset({"850000": 10, "850001": 10})
    cv = run_cv(OracleLearner, "oracle", ds, k=5, seed=1)
    for fr in cv.folds:
        assert fr.accuracy == 1.0
        np.testing.assert_allclose(fr.recall[fr.support > 0], 1.0)


def test_run_cv_records_failures_and_continues():
    ds = make_dataset({"850000": 10, "850001": 10})
    cv = run_cv(BrokenLearner, "broken", ds, k=4, seed=0)
    assert cv.folds == []
    assert len(cv.failures) == 4
    assert "exploded" in cv.failures[0][1]


def test_run_cv_rejects_out_of_class_predictions():
    class Alien:
        def fit(self, train, seed):
            pass

        def predict(self, test):
            return ["999999"] * len(test.records)

    ds = make_dataset({"850000": 6, "850001": 6})
    cv = run_cv(Alien, "alien", ds, k=3, seed=0)
    assert len(cv.failures) == 3
    assert "outside" in cv.failures[0][1]


def test_run_cv_rejects_wrong_prediction_count():
    class OffByOne:
        def fit(self, train, seed):
            pass

        def predict(self, test):
            return [test.records[0].hs_code] * (len(test.records) - 1)

    ds = make_dataset({"850000": 6, "850001": 6})
    cv = run_cv(OffByOne, "off", ds, k=3, seed=0)
    assert all("wrong number" in msg for _, msg in cv.failures)


def test_metric_samples_skip_absent_folds():
    ds = make_dataset({"850000": 40, "850001": 3})
    cv = run_cv(OracleLearner, "oracle", ds, k=8, seed=3)
    rare_idx = cv.classes.index("850001")
    assert len(cv.metric_samples(rare_idx, "recall")) == 3  # only 3 folds contain it
    with pytest.raises(ValueError):
        cv.metric_samples(0, "accuracy")


# --- aggregation / recommendation --------------------------------------------------------

def two_model_results():
    ds = make_dataset({"850000": 12, "850001": 12})
    good = run_cv(OracleLearner, "good", ds, k=4, seed=0)
    maj = run_cv(MajorityLearner, "maj", ds, k=4, seed=0)
    return ds, good, maj


def test_aggregate_mean_and_median():
    _, good, maj = two_model_results()
    table = aggregate([good, maj])
    assert table.models == ["good", "maj"]
    assert table.values[("good", "850000", "recall", "mean")] == pytest.approx(1.0)
    assert table.values[("good", "850000", "recall", "median")] == pytest.approx(1.0)
    assert table.accuracies["good"] == pytest.approx(1.0)
    assert table.fold_counts[("good", "850000")] == 4


def test_aggregate_validation():
    _, good, maj = two_model_results()
    with pytest.raises(ValueError):
        aggregate([])
    empty = ModelCvResult(model="none", classes=good.classes, folds=[])
    with pytest.raises(ValueError, match="no successful folds"):
        aggregate([good, empty])
    other = ModelCvResult(model="o", classes=["111111"], folds=good.folds)
    with pytest.raises(ValueError, match="different class lists"):
        aggregate([good, other])


def test_anova_by_class_and_recommend():
    _, good, maj = two_model_results()
    table = aggregate([good, maj])
    anova = anova_by_class([good, maj], metric="recall")
    recs = recommend(table, anova, alpha=0.05, metric="recall")
    by_class = {r.class_label: r for r in recs}
    # the majority learner always predicts 850000, so 850001 recall separates them
    assert by_class["850001"].winner == "good"
    assert anova["850001"] is not None
    assert overall_winner(recs, table) == "good"


def test_recommend_tie_breaks_lexicographically():
    table_values = {}
    for m in ("alpha", "beta"):
        for metric in ("precision", "recall", "f_beta"):
            for stat in ("mean", "median"):
                table_values[(m, "850000", metric, stat)] = 0.5
    from hscls.abtest import MetricTable

    table = MetricTable(models=["beta", "alpha"], classes=["850000"], values=table_values,
                        fold_counts={("alpha", "850000"): 3, ("beta", "850000"): 3},
                        accuracies={"alpha": 0.5, "beta": 0.5})
    recs = recommend(table, {"850000": None})
    assert recs[0].winner == "alpha"
    assert recs[0].significant is False and recs[0].p_value is None


def test_verdict_dict_and_report_csv(tmp_path):
    _, good, maj = two_model_results()
    table = aggregate([good, maj])
    anova = anova_by_class([good, maj], metric="f_beta")
    recs = recommend(table, anova)
    verdict = verdict_dict(table, anova, recs, alpha=0.05, metric="f_beta")
    assert verdict["overall_winner"] == "good"
    assert set(verdict["per_class"]) == {"850000", "850001"}
    p = tmp_path / "ab.csv"
    write_ab_report_csv(table, anova, recs, p)
    lines = p.read_text().strip().splitlines()
    assert lines[0].split(",")[:2] == ["class", "good_mean_precision"]
    assert len(lines) == 3


def test_anova_by_class_none_when_not_comparable():
    ds = make_dataset({"850000": 40, "850001": 1})
    good = run_cv(OracleLearner, "good", ds, k=8, seed=0)
    maj = run_cv(MajorityLearner, "maj", ds, k=8, seed=0)
    anova = anova_by_class([good, maj])
    assert anova["850001"] is None  # its single record lands in one fold only
    assert anova["850000"] is not None


# --- neural adapter ------------------------------------------------------------------------

def test_neural_learner_end_to_end_fold():
    from hscls.models import TrainConfig
    from hscls.synth import generate_synthetic_corpus

    ds = generate_synthetic_corpus(n_classes=3, per_class=20, noise_fraction=0.1, seed=0)
    learner = NeuralLearner("dnn",
                            __import__("hscls.models", fromlist=["DnnConfig"]).DnnConfig(
                                initial_neurons=8, neuron_pct=1.0, neuron_shrink=0.5,
                                dropout=0.0, embedding_dim=8, n_layer_cap=2),
                            TrainConfig(epochs=12, batch_size=8, seed=0, learning_rate=1e-2),
                            max_len=12, vocab_size=200)
    learner.fit(ds, seed=5)
    preds = learner.predict(ds)
    assert len(preds) == len(ds.records)
    assert set(preds) <= set(ds.classes())
    accuracy = sum(p == r.hs_code for p, r in zip(preds, ds.records)) / len(preds)
    assert accuracy > 0.8


def test_neural_learner_predict_before_fit():
    from hscls.models import DnnConfig, TrainConfig

    learner = NeuralLearner("dnn", DnnConfig(), TrainConfig(epochs=1))
    with pytest.raises(RuntimeError, match="before fit"):
        learner.predict(make_dataset({"850000": 2}))
