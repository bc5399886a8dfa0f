"""End-to-end runs of every subcommand through main(argv) in temp dirs."""

import csv
import json

import numpy as np
import pytest
import requests

from drugfusion import __version__
from drugfusion.cli import main
from drugfusion.resolver import ClientSet, FdaNdcClient, PubChemClient
from drugfusion.smiles import parse

BASELINE_CONFIG = {
    "task": "los_3", "mode": "baseline", "hidden": 4,
    "dropout": 0.0, "l2": 0.0, "lr": 0.005,
    "batch": 16, "epochs": 3, "patience": 10, "seed": 3,
}

MULTIMODAL_CONFIG = {
    "task": "los_3", "mode": "multimodal", "hidden": 4,
    "conv_filters": [2, 3], "kernel": 2, "fc": [8, 4],
    "dropout": 0.0, "l2": 0.0, "lr": 0.005,
    "batch": 16, "epochs": 3, "patience": 10,
    "n_drugs": 6, "k": 16, "seed": 3,
}


def write_config(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Synth cohort plus offline resolution, shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    cohort = root / "cohort"
    code = main(["synth", "--patients", "60", "--features", "4", "--seed", "7",
                 "--out-dir", str(cohort)])
    assert code == 0
    resolve_dir = root / "resolve"
    code = main(["resolve", str(cohort / "prescriptions.csv"),
                 "--cache", str(cohort / "cache.jsonl"), "--offline",
                 "--out-dir", str(resolve_dir)])
    assert code == 0
    return {
        "root": root,
        "cohort": cohort,
        "timeseries": str(cohort / "timeseries.csv"),
        "labels": str(cohort / "labels.csv"),
        "resolve_dir": resolve_dir,
        "resolved": str(resolve_dir / "resolved.csv"),
    }


@pytest.fixture(scope="module")
def train_runs(work):
    """One baseline run (2 reps) and one multimodal run (1 rep)."""
    root = work["root"]
    base_dir = root / "train_base"
    base_config = write_config(root / "base.json", BASELINE_CONFIG)
    code = main(["train", "--config", base_config, "--repetitions", "2",
                 "--out-dir", str(base_dir),
                 "--timeseries", work["timeseries"], "--labels", work["labels"]])
    assert code == 0

    multi_dir = root / "train_multi"
    multi_config = write_config(root / "multi.json", MULTIMODAL_CONFIG)
    code = main(["train", "--config", multi_config, "--out-dir", str(multi_dir),
                 "--timeseries", work["timeseries"], "--labels", work["labels"],
                 "--resolved", work["resolved"]])
    assert code == 0
    return {"base": base_dir, "base_config": base_config,
            "multi": multi_dir, "multi_config": multi_config}


# ---------------------------------------------------------------------------
# synth / resolve / embed
# ---------------------------------------------------------------------------


def test_synth_writes_cohort_and_manifest(work):
    cohort = work["cohort"]
    for name in ("timeseries.csv", "prescriptions.csv", "labels.csv",
                 "cache.jsonl", "generator.json", "manifest.json"):
        assert (cohort / name).exists(), name
    manifest = json.loads((cohort / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["seed"] == 7
    assert manifest["versions"]["drugfusion"] == __version__
    assert manifest["started"].endswith("Z") and manifest["finished"].endswith("Z")


def test_resolve_offline_outputs(work):
    with (work["resolve_dir"] / "resolved.csv").open(newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["patient_id", "order_index", "smiles", "cid", "resolution_path"]
    assert len(rows) > 1
    for row in rows[1:]:
        parse(row[2])
        assert int(row[3]) > 0
        assert row[4] in ("generic_name", "drug_name", "ndc")

    with (work["resolve_dir"] / "unresolved.csv").open(newline="") as handle:
        un_rows = list(csv.reader(handle))
    assert un_rows == [["patient_id", "order_index", "drug_name",
                        "generic_name", "ndc", "reason"]]
    manifest = json.loads((work["resolve_dir"] / "manifest.json").read_text())
    assert manifest["command"] == "resolve"
    assert manifest["seed"] is None


def test_resolve_prints_row_counts(work, tmp_path, capsys):
    code = main(["resolve", str(work["cohort"] / "prescriptions.csv"),
                 "--cache", str(work["cohort"] / "cache.jsonl"), "--offline",
                 "--out-dir", str(tmp_path / "again")])
    assert code == 0
    out = capsys.readouterr().out
    assert "resolved" in out and "0 unresolved" in out


def test_embed_ecfp_table(work, tmp_path):
    out = tmp_path / "drugs" / "table.tsv"
    code = main(["embed", work["resolved"], "--nbits", "16", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "smiles\t" + "\t".join(f"v{i}" for i in range(16))
    smiles_in_table = {line.split("\t")[0] for line in lines[1:]}
    with open(work["resolved"], newline="") as handle:
        resolved_smiles = {row["smiles"] for row in csv.DictReader(handle)}
    assert smiles_in_table == resolved_smiles
    assert (out.parent / "manifest.json").exists()


def test_embed_table_provider_round_trip(work, tmp_path):
    first = tmp_path / "first.tsv"
    main(["embed", work["resolved"], "--nbits", "16", "--out", str(first)])
    second = tmp_path / "second.tsv"
    code = main(["embed", work["resolved"], "--provider", "table",
                 "--table", str(first), "--out", str(second)])
    assert code == 0
    assert second.read_bytes() == first.read_bytes()


def test_embed_table_provider_needs_table(work, tmp_path, capsys):
    code = main(["embed", work["resolved"], "--provider", "table",
                 "--out", str(tmp_path / "t.tsv")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def test_train_run_directory_layout(train_runs):
    base = train_runs["base"]
    assert (base / "split.json").exists()
    assert (base / "manifest.json").exists()
    summary = json.loads((base / "summary.json").read_text())
    assert summary["task"] == "los_3"
    assert summary["mode"] == "baseline"
    assert summary["n"] == 2
    assert "provider" not in summary
    assert summary["std_defined"] is True

    for i, rep in enumerate(("rep_000", "rep_001")):
        rep_dir = base / rep
        for name in ("weights.bin", "weights.json", "history.csv",
                     "metrics.json", "config.json"):
            assert (rep_dir / name).exists(), f"{rep}/{name}"
        metrics = json.loads((rep_dir / "metrics.json").read_text())
        assert metrics["split"] == "test"
        assert metrics["seed"] == BASELINE_CONFIG["seed"] + i
        assert 0.0 <= metrics["auroc"] <= 1.0
        config = json.loads((rep_dir / "config.json").read_text())
        assert config["seed"] == BASELINE_CONFIG["seed"] + i


def test_train_multimodal_records_provider(train_runs):
    summary = json.loads((train_runs["multi"] / "summary.json").read_text())
    assert summary["mode"] == "multimodal"
    assert summary["provider"] == "ecfp"
    metrics = json.loads((train_runs["multi"] / "rep_000" / "metrics.json").read_text())
    assert metrics["provider"] == "ecfp"


def test_train_rerun_is_byte_identical(work, train_runs, tmp_path):
    again = tmp_path / "again"
    code = main(["train", "--config", train_runs["base_config"],
                 "--repetitions", "2", "--out-dir", str(again),
                 "--timeseries", work["timeseries"], "--labels", work["labels"]])
    assert code == 0
    base = train_runs["base"]
    for name in ("split.json", "summary.json", "rep_000/weights.bin",
                 "rep_000/metrics.json", "rep_001/weights.bin",
                 "rep_001/metrics.json"):
        assert (again / name).read_bytes() == (base / name).read_bytes(), name
    # Manifests differ only in their timestamps.
    first = json.loads((base / "manifest.json").read_text())
    second = json.loads((again / "manifest.json").read_text())
    for key in ("started", "finished", "out_dir"):
        first.pop(key), second.pop(key)
    assert first == second


def test_train_multimodal_requires_resolved(work, tmp_path, capsys):
    config = write_config(tmp_path / "m.json", MULTIMODAL_CONFIG)
    code = main(["train", "--config", config, "--out-dir", str(tmp_path / "out"),
                 "--timeseries", work["timeseries"], "--labels", work["labels"]])
    assert code == 2
    assert "requires --resolved" in capsys.readouterr().err


def test_train_missing_config_file(work, tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "nope.json"),
                 "--out-dir", str(tmp_path / "out"),
                 "--timeseries", work["timeseries"], "--labels", work["labels"]])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_train_rejects_unknown_config_field(work, tmp_path, capsys):
    config = write_config(tmp_path / "bad.json",
                          dict(BASELINE_CONFIG, learning_rate=0.1))
    code = main(["train", "--config", config, "--out-dir", str(tmp_path / "out"),
                 "--timeseries", work["timeseries"], "--labels", work["labels"]])
    assert code == 2
    assert "learning_rate" in capsys.readouterr().err


def test_train_bad_timeseries_schema(work, tmp_path, capsys):
    bad = tmp_path / "ts.csv"
    bad.write_text("patient,hour,f_0\np1,0,1.0\n")
    config = write_config(tmp_path / "c.json", BASELINE_CONFIG)
    code = main(["train", "--config", config, "--out-dir", str(tmp_path / "out"),
                 "--timeseries", str(bad), "--labels", work["labels"]])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_train_divergence_exit_code(work, tmp_path, capsys):
    config = write_config(tmp_path / "hot.json",
                          dict(MULTIMODAL_CONFIG, lr=1e20, epochs=2))
    with np.errstate(all="ignore"):
        code = main(["train", "--config", config, "--out-dir", str(tmp_path / "out"),
                     "--timeseries", work["timeseries"], "--labels", work["labels"],
                     "--resolved", work["resolved"]])
    assert code == 4
    assert "numeric" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def test_evaluate_writes_split_metrics(work, train_runs, capsys):
    rep = train_runs["base"] / "rep_000"
    code = main(["evaluate", str(rep), "--on", "val",
                 "--timeseries", work["timeseries"], "--labels", work["labels"],
                 "--split", str(train_runs["base"] / "split.json")])
    assert code == 0
    out_path = rep / "metrics_val.json"
    assert out_path.exists()
    payload = json.loads(out_path.read_text())
    assert payload["split"] == "val"
    assert payload["task"] == "los_3"
    assert 0.0 <= payload["auroc"] <= 1.0
    assert "evaluated" in capsys.readouterr().out


def test_evaluate_test_split_matches_training_metrics(work, train_runs, tmp_path):
    rep = train_runs["base"] / "rep_000"
    out = tmp_path / "metrics.json"
    code = main(["evaluate", str(rep), "--on", "test", "--out", str(out),
                 "--timeseries", work["timeseries"], "--labels", work["labels"],
                 "--split", str(train_runs["base"] / "split.json")])
    assert code == 0
    recomputed = json.loads(out.read_text())
    saved = json.loads((rep / "metrics.json").read_text())
    for key in ("auroc", "auprc", "f1", "n_pos", "n_neg"):
        assert recomputed[key] == saved[key], key


def test_evaluate_train_split_warns(work, train_runs, tmp_path, capsys):
    rep = train_runs["base"] / "rep_000"
    out = tmp_path / "train_metrics.json"
    code = main(["evaluate", str(rep), "--on", "train", "--out", str(out),
                 "--timeseries", work["timeseries"], "--labels", work["labels"],
                 "--split", str(train_runs["base"] / "split.json")])
    assert code == 0
    assert "training split" in capsys.readouterr().err
    assert json.loads(out.read_text())["train_split_warning"] is True


def test_evaluate_needs_config_json(work, tmp_path, capsys):
    empty = tmp_path / "not_a_rep"
    empty.mkdir()
    code = main(["evaluate", str(empty),
                 "--timeseries", work["timeseries"], "--labels", work["labels"]])
    assert code == 2
    assert "config.json" in capsys.readouterr().err


def test_evaluate_rejects_unknown_split_name(work, train_runs, capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["evaluate", str(train_runs["base"] / "rep_000"), "--on", "holdout",
              "--timeseries", work["timeseries"], "--labels", work["labels"]])
    assert excinfo.value.code == 2
    assert "invalid choice" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def test_report_renders_tables_and_figures(train_runs, tmp_path, capsys):
    out_dir = tmp_path / "report"
    code = main(["report", str(train_runs["base"]), str(train_runs["multi"]),
                 "--out-dir", str(out_dir)])
    assert code == 0
    assert "figures" in capsys.readouterr().out

    with (out_dir / "report.csv").open(newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert [(r["task"], r["model"]) for r in rows] == [
        ("los_3", "baseline"), ("los_3", "multimodal-ecfp"),
    ]
    assert rows[0]["n"] == "2" and rows[1]["n"] == "1"
    assert rows[1]["std_defined"] == "0"

    text = (out_dir / "report.txt").read_text()
    assert "AUROC" in text and "multimodal-ecfp" in text
    assert "single run" in text

    figures = sorted(p.name for p in (out_dir / "figures").glob("*.png"))
    assert figures == ["metric_auprc.png", "metric_auroc.png",
                       "metric_f1.png", "val_loss.png"]
    assert (out_dir / "manifest.json").exists()


def test_report_rejects_duplicate_runs(train_runs, tmp_path, capsys):
    code = main(["report", str(train_runs["base"]), str(train_runs["base"]),
                 "--out-dir", str(tmp_path / "out")])
    assert code == 2
    assert "duplicate" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# top-level behavior
# ---------------------------------------------------------------------------


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_unknown_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["frobnicate"])
    assert excinfo.value.code == 2


def test_network_failure_exit_code(tmp_path, monkeypatch, capsys):
    class DownSession:
        def get(self, url, timeout=None):
            raise requests.ConnectionError("no route to host")

    def down_clients(cls, rate=5.0):
        kwargs = dict(session=DownSession(), sleep=lambda s: None, clock=lambda: 0.0)
        return ClientSet(pubchem=PubChemClient(**kwargs), fda=FdaNdcClient(**kwargs))

    monkeypatch.setattr(ClientSet, "live", classmethod(down_clients))
    prescriptions = tmp_path / "rx.csv"
    prescriptions.write_text(
        "patient_id,order_index,drug_name,generic_name,ndc\n"
        "p1,0,Mystery Drug,Mysteryol,\n"
    )
    code = main(["resolve", str(prescriptions),
                 "--cache", str(tmp_path / "cache.jsonl"),
                 "--out-dir", str(tmp_path / "out")])
    assert code == 3
    assert "network" in capsys.readouterr().err
