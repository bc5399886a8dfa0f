"""Command-line pipeline: resolve, embed, synth, train, evaluate, report.

Every artifact-producing command writes a ``manifest.json`` next to its
outputs recording the command, inputs, seed, timestamps, and versions.
Timestamps are the only non-deterministic artifact content; everything
else is byte-stable for a fixed seed.

Exit codes: 0 success, 2 usage or schema errors, 3 network policy
failures, 4 numeric failures (training divergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .cohort import (
    CohortError,
    assemble_records,
    featurize,
    ingest_labels,
    ingest_prescriptions,
    ingest_resolved,
    ingest_timeseries,
    load_split,
    save_split,
    stratified_split,
)
from .fingerprints import (
    EcfpProvider,
    FingerprintError,
    TableProvider,
    UnknownSmiles,
    write_embedding_table,
)
from .metrics import MetricsError
from .models import ConfigError
from .nn import NnError, load_weights
from .report import ReportError, write_report
from .resolver import (
    ClientSet,
    DrugQuery,
    NetworkError,
    ResolutionCache,
    ResolvedDrug,
    ResolverError,
    resolve,
)
from .smiles import SmilesError
from .synth import SynthConfig, SynthError, generate, write_cohort
from .models import build_model
from .training import (
    DivergenceError,
    ModelConfig,
    TrainedModel,
    TrainerError,
    evaluate_trained,
    run_repetitions,
    save_metrics,
    save_summary,
    save_trained,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NETWORK = 3
EXIT_NUMERIC = 4

_USAGE_ERRORS = (
    CohortError,
    TrainerError,
    SynthError,
    SmilesError,
    FingerprintError,
    MetricsError,
    ConfigError,
    NnError,
    ReportError,
    ResolverError,
    json.JSONDecodeError,
    FileNotFoundError,
    NotADirectoryError,
    IsADirectoryError,
    PermissionError,
)


@dataclass
class RunManifest:
    command: str
    inputs: dict
    out_dir: str
    seed: Optional[int]
    started: str
    finished: str

    def write(self, out_dir: Path) -> Path:
        payload = {
            "command": self.command,
            "inputs": self.inputs,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "started": self.started,
            "finished": self.finished,
            "versions": {
                "drugfusion": __version__,
                "python": sys.version.split()[0],
                "numpy": np.__version__,
            },
        }
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        return path


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class _Manifest:
    """Collects manifest fields over a command's lifetime."""

    def __init__(self, command: str, inputs: dict, out_dir: Path, seed: Optional[int]):
        self.manifest = RunManifest(
            command=command,
            inputs={k: str(v) for k, v in inputs.items() if v is not None},
            out_dir=str(out_dir),
            seed=seed,
            started=_utc_now(),
            finished="",
        )
        self.out_dir = out_dir

    def finish(self) -> None:
        self.manifest.finished = _utc_now()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.manifest.write(self.out_dir)


# ---------------------------------------------------------------------------
# resolve
# ---------------------------------------------------------------------------


def cmd_resolve(args) -> int:
    out_dir = Path(args.out_dir)
    manifest = _Manifest(
        "resolve",
        {"prescriptions": args.prescriptions, "cache": args.cache},
        out_dir,
        seed=None,
    )
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = ingest_prescriptions(args.prescriptions)
    cache = ResolutionCache(args.cache)
    clients = None if args.offline else ClientSet.live(rate=args.rate)

    resolved_path = out_dir / "resolved.csv"
    unresolved_path = out_dir / "unresolved.csv"
    n_resolved = 0
    n_unresolved = 0
    with resolved_path.open("w", newline="") as res_handle, \
            unresolved_path.open("w", newline="") as un_handle:
        res_writer = csv.writer(res_handle, lineterminator="\n")
        un_writer = csv.writer(un_handle, lineterminator="\n")
        res_writer.writerow(["patient_id", "order_index", "smiles", "cid", "resolution_path"])
        un_writer.writerow(
            ["patient_id", "order_index", "drug_name", "generic_name", "ndc", "reason"]
        )
        for row in rows:
            query = DrugQuery(
                drug_name=row["drug_name"],
                generic_name=row["generic_name"],
                ndc=row["ndc"],
            )
            outcome = resolve(query, cache, clients=clients, offline=args.offline)
            if isinstance(outcome, ResolvedDrug):
                res_writer.writerow(
                    [row["patient_id"], row["order_index"], outcome.smiles,
                     outcome.cid, outcome.resolution_path]
                )
                n_resolved += 1
            else:
                un_writer.writerow(
                    [row["patient_id"], row["order_index"], row["drug_name"],
                     row["generic_name"], row["ndc"], outcome.reason]
                )
                n_unresolved += 1

    manifest.finish()
    print(f"resolved {n_resolved} rows, {n_unresolved} unresolved -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# embed
# ---------------------------------------------------------------------------


def _make_provider(name: str, radius: int, nbits: int, table: Optional[str]):
    if name == "ecfp":
        return EcfpProvider(radius=radius, nbits=nbits)
    if name == "table":
        if not table:
            raise TrainerError("--provider table requires --table PATH")
        return TableProvider(table)
    raise TrainerError(f"unknown provider {name!r}")


def cmd_embed(args) -> int:
    out_path = Path(args.out)
    out_dir = out_path.parent
    manifest = _Manifest(
        "embed",
        {"resolved": args.resolved, "provider": args.provider, "table": args.table},
        out_dir,
        seed=None,
    )
    provider = _make_provider(args.provider, args.radius, args.nbits, args.table)

    by_patient = ingest_resolved(args.resolved)
    unique = sorted({smiles for drugs in by_patient.values() for smiles in drugs})
    table = {smiles: provider.embed(smiles) for smiles in unique}
    out_dir.mkdir(parents=True, exist_ok=True)
    write_embedding_table(out_path, table)
    manifest.finish()
    print(f"embedded {len(table)} molecules ({provider.kind}, width {provider.width}) -> {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    manifest = _Manifest("synth", {}, out_dir, seed=args.seed)
    config = SynthConfig(
        n_patients=args.patients,
        n_features=args.features,
        seed=args.seed,
        signal_strength=args.signal,
        max_drugs=args.max_drugs,
        trend_weight=args.trend_weight,
        risk_weight=args.risk_weight,
    )
    cohort = generate(config)
    paths = write_cohort(cohort, out_dir)
    manifest.finish()
    names = ", ".join(sorted(p.name for p in paths.values()))
    print(f"wrote {config.n_patients} patients to {out_dir} ({names})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_config(path: str) -> ModelConfig:
    text = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        raw = tomllib.loads(text.decode())
    else:
        raw = json.loads(text.decode())
    if not isinstance(raw, dict):
        raise TrainerError(f"{path}: config must be a table/object")
    return ModelConfig.from_dict(raw)


def _load_cohort(args, config: ModelConfig):
    timeseries = ingest_timeseries(args.timeseries)
    labels = ingest_labels(args.labels)
    needs_drugs = config.mode in ("multimodal", "drugs")
    if needs_drugs and not args.resolved:
        raise TrainerError(f"mode {config.mode!r} requires --resolved")
    drugs = ingest_resolved(args.resolved) if args.resolved else {
        pid: [] for pid in timeseries
    }
    if not args.resolved:
        # Baseline runs without prescriptions: keep every labeled patient.
        records, excluded = assemble_records(timeseries, drugs, labels, require_drugs=False)
    else:
        records, excluded = assemble_records(timeseries, drugs, labels)
    if not records:
        raise CohortError("no patients left after assembling the cohort")

    if args.split:
        split = load_split(args.split)
    else:
        split = stratified_split(
            {r.patient_id: r.labels for r in records}, seed=config.seed
        )

    provider = None
    if needs_drugs:
        provider = _make_provider(args.provider, args.radius, config.k, args.table)
    arrays = featurize(
        records, split, provider=provider, n_drugs=config.n_drugs, embed_width=config.k
    )
    return arrays, split, excluded


def _provider_label(args, config: ModelConfig) -> Optional[str]:
    if config.mode in ("multimodal", "drugs"):
        return args.provider
    return None


def cmd_train(args) -> int:
    config = _load_config(args.config)
    out_dir = Path(args.out_dir)
    manifest = _Manifest(
        "train",
        {
            "config": args.config,
            "timeseries": args.timeseries,
            "resolved": args.resolved,
            "labels": args.labels,
            "split": args.split,
            "provider": _provider_label(args, config),
            "table": args.table,
        },
        out_dir,
        seed=config.seed,
    )
    arrays, split, excluded = _load_cohort(args, config)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not args.split:
        save_split(split, out_dir / "split.json")

    label = _provider_label(args, config)
    extra = {"provider": label} if label else None

    summary, runs = run_repetitions(
        config, arrays, split, n=args.repetitions, keep_models=True
    )
    for i, trained in enumerate(runs):
        rep_dir = out_dir / f"rep_{i:03d}"
        report = evaluate_trained(trained, arrays, split)
        save_trained(rep_dir, trained, report=report,
                     extra=dict(extra or {}, split="test", seed=trained.config.seed))
        (rep_dir / "config.json").write_text(
            json.dumps(trained.config.to_dict(), sort_keys=True, indent=2) + "\n"
        )
    save_summary(out_dir / "summary.json", summary, extra=extra)
    manifest.finish()

    mean_auroc = summary.mean.get("auroc")
    shown = "n/a" if mean_auroc is None else f"{mean_auroc:.4f}"
    print(
        f"trained {config.task}/{config.mode} x{args.repetitions}: "
        f"test AUROC mean {shown} -> {out_dir}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run_dir)
    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise TrainerError(f"{run_dir}: no config.json (expected a rep_* directory)")
    config = ModelConfig.from_dict(json.loads(config_path.read_text()))

    out_path = Path(args.out) if args.out else run_dir / f"metrics_{args.on}.json"
    manifest = _Manifest(
        "evaluate",
        {"run_dir": args.run_dir, "timeseries": args.timeseries,
         "resolved": args.resolved, "labels": args.labels, "split": args.split,
         "on": args.on},
        out_path.parent,
        seed=config.seed,
    )

    architecture, params = load_weights(run_dir)
    model = build_model(architecture, rng=np.random.default_rng(0))
    model.load_params(params)

    arrays, split, _ = _load_cohort(args, config)
    trained = TrainedModel(
        config=config, model=model, history=[], best_epoch=0,
        best_val_loss=float("nan"), stopped_epoch=0,
    )
    report = evaluate_trained(trained, arrays, split, on=args.on)
    extra = {"split": args.on}
    label = _provider_label(args, config)
    if label:
        extra["provider"] = label
    if args.on == "train":
        extra["train_split_warning"] = True
        print("warning: evaluating on the training split", file=sys.stderr)
    save_metrics(out_path, report, config, extra=extra)
    manifest.finish()
    shown = "n/a" if report.auroc is None else f"{report.auroc:.4f}"
    print(f"evaluated {config.task}/{config.mode} on {args.on}: AUROC {shown} -> {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(args) -> int:
    out_dir = Path(args.out_dir)
    manifest = _Manifest(
        "report", {"runs": ",".join(args.run_dirs)}, out_dir, seed=None
    )
    result = write_report(args.run_dirs, out_dir)
    manifest.finish()
    n_figures = len(result["figures"])
    print(
        f"report over {len(args.run_dirs)} runs -> {result['csv']}, "
        f"{result['text']}, {n_figures} figures"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_cohort_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--timeseries", required=True, help="time-series CSV")
    parser.add_argument("--labels", required=True, help="labels CSV")
    parser.add_argument("--resolved", help="resolved drugs CSV")
    parser.add_argument("--split", help="existing split JSON (default: derive from seed)")
    parser.add_argument("--provider", choices=("ecfp", "table"), default="ecfp",
                        help="drug embedding provider (default ecfp)")
    parser.add_argument("--radius", type=int, default=2, help="ECFP radius (default 2)")
    parser.add_argument("--table", help="embedding table TSV for --provider table")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drugfusion",
        description="Multimodal clinical outcome models over time series and drug structures.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    p_resolve = commands.add_parser("resolve", help="resolve prescriptions to SMILES")
    p_resolve.add_argument("prescriptions", help="prescriptions CSV")
    p_resolve.add_argument("--cache", required=True, help="JSON-lines resolution cache")
    p_resolve.add_argument("--offline", action="store_true",
                           help="never touch the network; cache only")
    p_resolve.add_argument("--rate", type=float, default=5.0,
                           help="max requests per second per service (default 5)")
    p_resolve.add_argument("--out-dir", required=True, help="output directory")
    p_resolve.set_defaults(func=cmd_resolve)

    p_embed = commands.add_parser("embed", help="embed resolved drugs to vectors")
    p_embed.add_argument("resolved", help="resolved drugs CSV")
    p_embed.add_argument("--provider", choices=("ecfp", "table"), default="ecfp")
    p_embed.add_argument("--radius", type=int, default=2)
    p_embed.add_argument("--nbits", type=int, default=1024)
    p_embed.add_argument("--table", help="embedding table TSV for --provider table")
    p_embed.add_argument("--out", required=True, help="output TSV path")
    p_embed.set_defaults(func=cmd_embed)

    p_synth = commands.add_parser("synth", help="generate a synthetic cohort")
    p_synth.add_argument("--patients", type=int, required=True)
    p_synth.add_argument("--features", type=int, required=True)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--signal", type=float, default=2.0,
                         help="label signal strength (0 = pure noise labels)")
    p_synth.add_argument("--max-drugs", type=int, default=8)
    p_synth.add_argument("--trend-weight", type=float, default=1.0,
                         help="time-series share of the label signal")
    p_synth.add_argument("--risk-weight", type=float, default=1.0,
                         help="drug share of the label signal")
    p_synth.add_argument("--out-dir", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_train = commands.add_parser("train", help="train one model config")
    p_train.add_argument("--config", required=True, help="ModelConfig JSON or TOML")
    p_train.add_argument("--repetitions", type=int, default=1,
                         help="seeded repetitions (default 1)")
    p_train.add_argument("--out-dir", required=True)
    _add_cohort_arguments(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = commands.add_parser("evaluate", help="evaluate saved weights on a split")
    p_eval.add_argument("run_dir", help="rep_* directory with weights and config.json")
    p_eval.add_argument("--on", choices=("train", "val", "test"), default="test")
    p_eval.add_argument("--out", help="metrics JSON path (default inside run_dir)")
    _add_cohort_arguments(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_report = commands.add_parser("report", help="aggregate runs into tables and figures")
    p_report.add_argument("run_dirs", nargs="+", help="run directories with summary.json")
    p_report.add_argument("--out-dir", required=True)
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NetworkError as exc:
        print(f"error: network: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except DivergenceError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
