import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drugfusion.metrics import MetricsError, SingleClass, auprc, auroc, evaluate, f1_at

from _oracles import counting_f1, pairwise_auroc, threshold_sweep_auprc


def test_perfect_ranking():
    assert auroc([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0


def test_inverted_ranking():
    assert auroc([0.4, 0.6], [1, 0]) == 0.0


def test_constant_scores_give_half():
    assert auroc([0.3, 0.3, 0.3, 0.3], [1, 0, 1, 0]) == 0.5


def test_auprc_constant_scores_equal_prevalence():
    labels = [1, 0, 0, 0, 1, 0, 0, 0, 0, 0]
    assert auprc([0.7] * 10, labels) == pytest.approx(0.2)


def test_f1_example():
    # threshold 0.5: TP=2, FP=1, FN=1
    report = f1_at([0.9, 0.8, 0.7, 0.1], [1, 1, 0, 1], threshold=0.5)
    assert report.precision == pytest.approx(2 / 3)
    assert report.recall == pytest.approx(2 / 3)
    assert report.f1 == pytest.approx(2 / 3)
    assert report.n_pos == 3
    assert report.n_neg == 1
    assert report.threshold == 0.5


def test_f1_zero_conventions():
    nothing_predicted = f1_at([0.1, 0.2], [1, 0], threshold=0.9)
    assert nothing_predicted.precision == 0.0
    assert nothing_predicted.recall == 0.0
    assert nothing_predicted.f1 == 0.0

    no_positives = f1_at([0.9, 0.8], [0, 0], threshold=0.5)
    assert no_positives.recall == 0.0
    assert no_positives.f1 == 0.0


def test_f1_tolerates_single_class_and_skips_ranking_fields():
    report = f1_at([0.9, 0.8], [1, 1])
    assert report.f1 == 1.0
    assert report.auroc is None
    assert report.auprc is None


def test_single_class_raises_for_ranking_metrics():
    with pytest.raises(SingleClass):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(SingleClass):
        auroc([0.1, 0.2], [0, 0])
    with pytest.raises(SingleClass):
        auprc([0.1, 0.2], [0, 0])
    with pytest.raises(SingleClass):
        evaluate([0.1, 0.2], [0, 0])


def test_input_validation():
    with pytest.raises(MetricsError):
        auroc([0.5], [1, 0])
    with pytest.raises(MetricsError):
        auroc([], [])
    with pytest.raises(MetricsError):
        auroc([0.5, 0.1], [1, 2])
    with pytest.raises(MetricsError):
        auroc([np.nan, 0.1], [1, 0])


def test_evaluate_fills_every_field():
    report = evaluate([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0])
    assert report.auroc == 1.0
    assert report.auprc == 1.0
    assert report.f1 == 1.0
    d = report.to_dict()
    assert set(d) == {"f1", "precision", "recall", "n_pos", "n_neg",
                      "threshold", "auroc", "auprc"}


def _random_instance(rng, tied):
    n = int(rng.integers(2, 120))
    labels = rng.integers(0, 2, size=n)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    if tied:
        scores = rng.integers(0, 5, size=n) / 4.0
    else:
        scores = rng.random(n)
    return scores, labels


def test_auroc_matches_pairwise_oracle():
    rng = np.random.default_rng(2024)
    for trial in range(200):
        scores, labels = _random_instance(rng, tied=trial % 2 == 0)
        fast = auroc(scores, labels)
        slow = pairwise_auroc(scores, labels)
        assert abs(fast - slow) < 1e-12, (trial, fast, slow)


def test_auprc_matches_threshold_oracle():
    rng = np.random.default_rng(2025)
    for trial in range(200):
        scores, labels = _random_instance(rng, tied=trial % 2 == 0)
        if labels.sum() == 0:
            continue
        fast = auprc(scores, labels)
        slow = threshold_sweep_auprc(scores, labels)
        assert abs(fast - slow) < 1e-9, (trial, fast, slow)


def test_f1_matches_counting_oracle():
    rng = np.random.default_rng(2026)
    for _ in range(100):
        scores, labels = _random_instance(rng, tied=False)
        threshold = float(rng.random())
        report = f1_at(scores, labels, threshold)
        f1, precision, recall = counting_f1(scores, labels, threshold)
        assert report.f1 == pytest.approx(f1)
        assert report.precision == pytest.approx(precision)
        assert report.recall == pytest.approx(recall)


@settings(max_examples=150, deadline=None)
@given(
    # sixteenths in [-20, 20]: coarse enough that the transforms below stay
    # strictly monotone in float64 instead of collapsing neighbors into ties
    st.lists(st.integers(min_value=-320, max_value=320), min_size=2, max_size=60),
    st.data(),
)
def test_ranking_invariances(score_ints, data):
    n = len(score_ints)
    labels = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    if sum(labels) in (0, n):
        labels[0] = 1 - labels[0]
    scores = np.asarray(score_ints, dtype=np.float64) / 16.0
    labels = np.asarray(labels)

    base = auroc(scores, labels)
    # strictly monotone transforms leave the ranking unchanged
    assert auroc(3.0 * scores + 2.0, labels) == pytest.approx(base, abs=1e-12)
    assert auroc(1.0 / (1.0 + np.exp(-scores)), labels) == pytest.approx(base, abs=1e-9)
    # negating scores complements the metric
    assert auroc(-scores, labels) == pytest.approx(1.0 - base, abs=1e-12)

    ap = auprc(scores, labels)
    assert auprc(3.0 * scores + 2.0, labels) == pytest.approx(ap, abs=1e-12)
    assert 0.0 <= ap <= 1.0
