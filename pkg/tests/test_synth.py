import json

import numpy as np
import numpy.testing as npt
import pytest

from drugfusion.cohort import TASKS, ingest_labels, ingest_prescriptions, ingest_timeseries
from drugfusion.resolver import DrugQuery, ResolutionCache, ResolvedDrug, resolve
from drugfusion.smiles import parse
from drugfusion.synth import (
    DEFAULT_BASE_RATES,
    DEFAULT_RISK,
    DEFAULT_VOCAB,
    SynthConfig,
    SynthError,
    generate,
    write_cohort,
)


def test_vocab_parses_and_risk_is_a_subset():
    for smiles in DEFAULT_VOCAB:
        parse(smiles)
    assert set(DEFAULT_RISK) <= set(DEFAULT_VOCAB)
    assert len(DEFAULT_VOCAB) == 24
    assert len(DEFAULT_RISK) == 5


def test_generate_shapes():
    cfg = SynthConfig(n_patients=40, n_features=3, seed=1)
    cohort = generate(cfg)
    assert len(cohort.patient_ids) == 40
    assert cohort.timeseries.shape == (40, 24, 3)
    assert set(cohort.labels) == set(TASKS)
    assert all(v.shape == (40,) for v in cohort.labels.values())
    assert all(1 <= len(d) <= cfg.max_drugs for d in cohort.drug_indices)
    assert cohort.risky.sum() == len(DEFAULT_RISK)


def test_generate_is_deterministic():
    cfg = SynthConfig(n_patients=30, n_features=4, seed=77)
    a = generate(cfg)
    b = generate(cfg)
    npt.assert_array_equal(a.timeseries, b.timeseries)
    assert a.drug_indices == b.drug_indices
    for task in TASKS:
        npt.assert_array_equal(a.labels[task], b.labels[task])

    c = generate(SynthConfig(n_patients=30, n_features=4, seed=78))
    assert not np.array_equal(a.timeseries, c.timeseries)


def test_base_rates_are_hit_in_expectation():
    cohort = generate(SynthConfig(n_patients=8000, n_features=4, seed=3))
    for task, target in DEFAULT_BASE_RATES.items():
        rate = cohort.labels[task].mean()
        assert abs(rate - target) < 0.02, (task, rate, target)


def test_zero_signal_detaches_labels_from_risk():
    cohort = generate(SynthConfig(n_patients=6000, n_features=3, seed=5,
                                  signal_strength=0.0))
    risky = set(np.flatnonzero(cohort.risky))
    counts = np.array([sum(i in risky for i in row) for row in cohort.drug_indices])
    y = cohort.labels["mort_hosp"]
    # point-biserial correlation should be indistinguishable from noise
    corr = np.corrcoef(counts, y)[0, 1]
    assert abs(corr) < 0.05


def test_strong_signal_raises_rates_for_risky_patients():
    cohort = generate(SynthConfig(n_patients=6000, n_features=3, seed=6,
                                  signal_strength=3.0))
    risky = set(np.flatnonzero(cohort.risky))
    counts = np.array([sum(i in risky for i in row) for row in cohort.drug_indices])
    y = cohort.labels["mort_hosp"]
    high = y[counts >= 2].mean()
    low = y[counts == 0].mean()
    assert high > low + 0.1


def test_modality_weights_move_the_signal():
    n = 6000
    drugs_only = generate(SynthConfig(n_patients=n, n_features=3, seed=8,
                                      signal_strength=3.0,
                                      trend_weight=0.0, risk_weight=1.0))
    risky = set(np.flatnonzero(drugs_only.risky))
    counts = np.array([sum(i in risky for i in row) for row in drugs_only.drug_indices])
    y = drugs_only.labels["mort_hosp"]
    assert np.corrcoef(counts, y)[0, 1] > 0.15

    trend_only = generate(SynthConfig(n_patients=n, n_features=3, seed=8,
                                      signal_strength=3.0,
                                      trend_weight=1.0, risk_weight=0.0))
    risky = set(np.flatnonzero(trend_only.risky))
    counts = np.array([sum(i in risky for i in row) for row in trend_only.drug_indices])
    assert abs(np.corrcoef(counts, trend_only.labels["mort_hosp"])[0, 1]) < 0.05


def test_config_validation():
    with pytest.raises(SynthError):
        SynthConfig(n_patients=0, n_features=3, seed=1).validate()
    with pytest.raises(SynthError):
        SynthConfig(n_patients=5, n_features=0, seed=1).validate()
    with pytest.raises(SynthError):
        SynthConfig(n_patients=5, n_features=3, seed=1, signal_strength=-1).validate()
    with pytest.raises(SynthError):
        SynthConfig(n_patients=5, n_features=3, seed=1, trend_weight=-0.5).validate()
    with pytest.raises(SynthError):
        SynthConfig(n_patients=5, n_features=3, seed=1,
                    trend_weight=0.0, risk_weight=0.0).validate()
    with pytest.raises(SynthError):
        SynthConfig(n_patients=5, n_features=3, seed=1, max_drugs=0).validate()


def test_write_cohort_round_trips_through_ingest(tmp_path):
    cohort = generate(SynthConfig(n_patients=25, n_features=3, seed=10))
    paths = write_cohort(cohort, tmp_path)

    ts = ingest_timeseries(paths["timeseries"])
    assert set(ts) == set(cohort.patient_ids)
    npt.assert_allclose(ts["p000000"], cohort.timeseries[0], rtol=0, atol=1e-15)

    labels = ingest_labels(paths["labels"])
    for i, pid in enumerate(cohort.patient_ids):
        for task in TASKS:
            assert labels[pid][task] == int(cohort.labels[task][i])

    rows = ingest_prescriptions(paths["prescriptions"])
    by_pid = {}
    for row in rows:
        by_pid.setdefault(row["patient_id"], []).append(row)
    assert set(by_pid) == set(cohort.patient_ids)

    generator = json.loads(paths["generator"].read_text())
    assert generator["n_patients"] == 25
    assert generator["seed"] == 10
    assert set(generator["positive_rates"]) == set(TASKS)


def test_written_cache_resolves_every_prescription_offline(tmp_path):
    cohort = generate(SynthConfig(n_patients=15, n_features=2, seed=11))
    paths = write_cohort(cohort, tmp_path)
    cache = ResolutionCache(paths["cache"])
    rows = ingest_prescriptions(paths["prescriptions"])
    for row in rows:
        query = DrugQuery(drug_name=row["drug_name"],
                          generic_name=row["generic_name"], ndc=row["ndc"])
        out = resolve(query, cache, clients=None, offline=True)
        assert isinstance(out, ResolvedDrug), row
        parse(out.smiles)
