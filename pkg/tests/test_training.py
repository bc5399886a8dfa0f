import csv
import json

import numpy as np
import numpy.testing as npt
import pytest

from drugfusion.cohort import TASKS, assemble_records, featurize, stratified_split
from drugfusion.fingerprints import EcfpProvider
from drugfusion.synth import DEFAULT_VOCAB, SynthConfig, generate
from drugfusion.training import (
    DataError,
    DivergenceError,
    ModelConfig,
    TrainerError,
    evaluate_trained,
    resolve_class_weights,
    run_repetitions,
    save_history,
    save_metrics,
    save_summary,
    save_trained,
    train,
)


def tiny_setup(mode="baseline", n=60, seed=0, data_seed=0, **overrides):
    cohort = generate(SynthConfig(n_patients=n, n_features=4, seed=data_seed))
    pids = cohort.patient_ids
    ts = {pid: cohort.timeseries[i] for i, pid in enumerate(pids)}
    labels = {pid: {t: int(cohort.labels[t][i]) for t in TASKS}
              for i, pid in enumerate(pids)}
    drugs = {pid: [DEFAULT_VOCAB[j] for j in cohort.drug_indices[i]]
             for i, pid in enumerate(pids)}
    records, _ = assemble_records(ts, drugs, labels)
    split = stratified_split(labels, seed=data_seed)
    provider = None if mode == "baseline" else EcfpProvider(radius=2, nbits=32)
    arrays = featurize(records, split, provider=provider, n_drugs=8, embed_width=32)

    settings = dict(task="los_3", mode=mode, hidden=4, conv_filters=(2, 3), kernel=2,
                    fc=(8, 4), dropout=0.0, l2=0.0, batch=16, epochs=4, patience=10,
                    n_drugs=8, k=32, seed=seed, lr=5e-3)
    settings.update(overrides)
    return ModelConfig(**settings), arrays, split


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def test_config_defaults_match_reference_settings():
    cfg = ModelConfig(task="mort_hosp")
    assert cfg.hidden == 128
    assert cfg.conv_filters == (32, 64, 128)
    assert cfg.kernel == 3
    assert cfg.fc == (1024, 512, 256)
    assert cfg.dropout == 0.3
    assert cfg.l2 == 0.05
    assert cfg.lr == 1e-3
    assert cfg.decay == 1e-2
    assert cfg.batch == 32
    assert cfg.epochs == 100
    assert cfg.n_drugs == 64
    assert cfg.k == 1024
    assert cfg.class_weight == "auto"


def test_config_validation():
    with pytest.raises(TrainerError):
        ModelConfig(task="mortality").validate()
    with pytest.raises(TrainerError):
        ModelConfig(task="los_3", mode="ensemble").validate()
    with pytest.raises(TrainerError):
        ModelConfig(task="los_3", batch=0).validate()
    with pytest.raises(TrainerError):
        ModelConfig(task="los_3", dropout=1.5).validate()
    with pytest.raises(TrainerError):
        ModelConfig(task="los_3", patience=-1).validate()


def test_config_dict_round_trip():
    cfg = ModelConfig(task="los_7", mode="multimodal", conv_filters=(2, 3), fc=(8,))
    back = ModelConfig.from_dict(cfg.to_dict())
    assert back == cfg
    assert isinstance(back.conv_filters, tuple)
    assert isinstance(back.fc, tuple)


def test_config_from_dict_rejects_unknown_fields():
    with pytest.raises(TrainerError):
        ModelConfig.from_dict({"task": "los_3", "optimizer": "sgd"})


def test_class_weight_policy():
    labels = np.array([1] * 10 + [0] * 90)
    icu = resolve_class_weights(ModelConfig(task="mort_icu"), labels)
    assert (icu.w_neg, icu.w_pos) == (1.0, 5.0)

    other = resolve_class_weights(ModelConfig(task="mort_hosp"), labels)
    assert other.w_pos == pytest.approx(5.0)
    assert other.w_neg == pytest.approx(100 / 180)

    off = resolve_class_weights(ModelConfig(task="mort_icu", class_weight="none"), labels)
    assert (off.w_pos, off.w_neg) == (1.0, 1.0)

    forced = resolve_class_weights(
        ModelConfig(task="los_3", class_weight="ratio", class_ratio=(1.0, 3.0)), labels)
    assert (forced.w_neg, forced.w_pos) == (1.0, 3.0)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def test_training_is_deterministic_per_seed():
    cfg, arrays, split = tiny_setup()
    a = train(cfg, arrays, split)
    b = train(cfg, arrays, split)
    assert [h.train_loss for h in a.history] == [h.train_loss for h in b.history]
    for name in a.weights:
        npt.assert_array_equal(a.weights[name], b.weights[name])

    c = train(ModelConfig(**{**cfg.to_dict(), "seed": cfg.seed + 1}), arrays, split)
    assert any(not np.array_equal(a.weights[n], c.weights[n]) for n in a.weights)


def test_history_records_and_loss_decreases():
    cfg, arrays, split = tiny_setup(epochs=6)
    trained = train(cfg, arrays, split)
    assert len(trained.history) == trained.stopped_epoch
    assert [h.epoch for h in trained.history] == list(range(1, trained.stopped_epoch + 1))
    assert trained.history[-1].train_loss < trained.history[0].train_loss
    for record in trained.history:
        assert np.isfinite(record.val_loss)


def test_best_epoch_tracks_minimum_val_loss():
    cfg, arrays, split = tiny_setup(epochs=30, patience=4)
    trained = train(cfg, arrays, split)
    vals = [h.val_loss for h in trained.history]
    assert trained.best_val_loss == min(vals)
    assert trained.best_epoch == vals.index(min(vals)) + 1


@pytest.mark.parametrize("patience", [0, 2, 5])
def test_early_stop_fires_exactly_patience_epochs_after_best(patience):
    cfg, arrays, split = tiny_setup(epochs=80, patience=patience, seed=1)
    trained = train(cfg, arrays, split)
    assert trained.stopped_epoch < cfg.epochs, "expected an early stop on this problem"
    # improvement is strict, so every epoch past the best was non-improving
    assert trained.stopped_epoch - trained.best_epoch == max(patience, 1)


def test_multimodal_training_runs_and_differs_from_baseline():
    cfg, arrays, split = tiny_setup(mode="multimodal", epochs=3)
    trained = train(cfg, arrays, split)
    assert trained.stopped_epoch == 3
    assert any(name.startswith("conv") for name in trained.weights)


def test_drug_mode_requires_drug_arrays():
    cfg, arrays, split = tiny_setup(mode="baseline")
    cfg_drugs = ModelConfig(**{**cfg.to_dict(), "mode": "multimodal"})
    with pytest.raises(DataError):
        train(cfg_drugs, arrays, split)  # featurized without a provider


def test_embedding_width_must_match_config():
    cfg, arrays, split = tiny_setup(mode="multimodal", k=64)
    with pytest.raises(DataError):
        train(cfg, arrays, split)


def test_divergence_raises_instead_of_returning_nans():
    cfg, arrays, split = tiny_setup(mode="multimodal", lr=1e20, epochs=2)
    with np.errstate(all="ignore"):
        with pytest.raises(DivergenceError):
            train(cfg, arrays, split)


def test_restored_weights_match_saved_best():
    cfg, arrays, split = tiny_setup(epochs=30, patience=3, seed=2)
    trained = train(cfg, arrays, split)
    for name, value in trained.model.params().items():
        npt.assert_array_equal(value, trained.weights[name])


# ---------------------------------------------------------------------------
# Evaluation and repetitions
# ---------------------------------------------------------------------------

def test_evaluate_trained_on_each_part():
    cfg, arrays, split = tiny_setup(epochs=4)
    trained = train(cfg, arrays, split)
    for part in ("train", "val", "test"):
        report = evaluate_trained(trained, arrays, split, on=part)
        assert 0.0 <= report.auroc <= 1.0
        assert report.n_pos + report.n_neg == len(getattr(split, part))
    with pytest.raises(TrainerError):
        evaluate_trained(trained, arrays, split, on="holdout")


def test_run_repetitions_aggregates_metrics():
    cfg, arrays, split = tiny_setup(epochs=2)
    summary, models = run_repetitions(cfg, arrays, split, n=3, keep_models=True)
    assert summary.n == 3
    assert len(models) == 3
    assert len(summary.per_run) == 3
    assert [run["seed"] for run in summary.per_run] == [cfg.seed, cfg.seed + 1, cfg.seed + 2]
    assert {"auroc", "auprc", "f1"} <= set(summary.mean)
    for metric in summary.mean:
        values = [run[metric] for run in summary.per_run]
        assert summary.mean[metric] == pytest.approx(float(np.mean(values)))
        assert summary.std[metric] == pytest.approx(float(np.std(values, ddof=1)))
    assert summary.std_defined


def test_single_repetition_reports_zero_std():
    cfg, arrays, split = tiny_setup(epochs=2)
    summary, _ = run_repetitions(cfg, arrays, split, n=1)
    assert not summary.std_defined
    assert all(v == 0.0 for v in summary.std.values())


def test_repetitions_are_deterministic():
    cfg, arrays, split = tiny_setup(epochs=2)
    a, _ = run_repetitions(cfg, arrays, split, n=2)
    b, _ = run_repetitions(cfg, arrays, split, n=2)
    assert a == b


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def test_save_history_layout(tmp_path):
    cfg, arrays, split = tiny_setup(epochs=3)
    trained = train(cfg, arrays, split)
    path = tmp_path / "history.csv"
    save_history(path, trained.history)
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", "train_loss", "val_loss", "val_auroc"]
    assert len(rows) == len(trained.history)
    assert float(rows[0]["train_loss"]) == trained.history[0].train_loss


def test_save_metrics_and_summary(tmp_path):
    cfg, arrays, split = tiny_setup(epochs=2)
    trained = train(cfg, arrays, split)
    report = evaluate_trained(trained, arrays, split, on="test")

    metrics_path = tmp_path / "metrics.json"
    save_metrics(metrics_path, report, cfg, extra={"provider": "ecfp"})
    payload = json.loads(metrics_path.read_text())
    assert payload["task"] == "los_3"
    assert payload["mode"] == "baseline"
    assert payload["provider"] == "ecfp"
    assert payload["auroc"] == report.auroc

    summary, _ = run_repetitions(cfg, arrays, split, n=2)
    summary_path = tmp_path / "summary.json"
    save_summary(summary_path, summary)
    data = json.loads(summary_path.read_text())
    assert data["n"] == 2
    assert {"auroc", "auprc", "f1"} <= set(data["mean"])


def test_save_trained_writes_weights_history_and_metrics(tmp_path):
    cfg, arrays, split = tiny_setup(epochs=2)
    trained = train(cfg, arrays, split)
    report = evaluate_trained(trained, arrays, split, on="test")
    out = save_trained(tmp_path / "run", trained, report)
    assert (out / "weights.bin").exists()
    assert (out / "weights.json").exists()
    assert (out / "history.csv").exists()
    assert (out / "metrics.json").exists()
