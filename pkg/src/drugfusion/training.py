"""Training protocol: mini-batch Adam with early stopping and repetitions.

One model is trained per task. Mini-batches of 32 are drawn in a fresh
seeded shuffle each epoch, the loss is class-weighted binary cross-entropy
plus an L2 penalty on the dense weight matrices, and validation loss is
monitored for early stopping with best-weights restoration. ``history``
records the data term of the training loss (the penalty is optimized but
not reported) alongside validation loss and validation AUROC.

All randomness in one run flows from a single seed, split into separate
init / shuffle / dropout streams. Repetitions use consecutive seeds and
are aggregated as mean and sample standard deviation per metric.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cohort import TASKS, ClassWeights, CohortArrays, CohortSplit, class_weights
from .metrics import MetricsReport, SingleClass, auroc, evaluate
from .models import BaselineModel, DrugsOnlyModel, MultimodalModel, predict
from .nn import Adam, save_weights, weighted_bce

__all__ = [
    "TrainerError",
    "DataError",
    "DivergenceError",
    "ModelConfig",
    "EpochRecord",
    "TrainedModel",
    "RepetitionSummary",
    "MODES",
    "build_model_for",
    "resolve_class_weights",
    "train",
    "evaluate_trained",
    "run_repetitions",
    "save_history",
    "save_metrics",
    "save_summary",
    "save_trained",
]

MODES = ("baseline", "multimodal", "drugs")


class TrainerError(ValueError):
    """Base class for trainer configuration and data errors."""


class DataError(TrainerError):
    """Raised when the cohort arrays cannot support the requested run."""


class DivergenceError(RuntimeError):
    """Raised when the training or validation loss stops being finite."""


@dataclass
class ModelConfig:
    """One training run: task, architecture, and optimization settings."""

    task: str
    mode: str = "baseline"
    hidden: int = 128
    conv_filters: tuple[int, ...] = (32, 64, 128)
    kernel: int = 3
    fc: tuple[int, ...] = (1024, 512, 256)
    dropout: float = 0.3
    l2: float = 0.05
    lr: float = 1e-3
    decay: float = 1e-2
    batch: int = 32
    epochs: int = 100
    patience: int = 10
    n_drugs: int = 64
    k: int = 1024
    seed: int = 0
    class_weight: str = "auto"  # auto | balanced | none | ratio
    class_ratio: Optional[tuple[float, float]] = None  # (neg, pos) for ratio
    dtype: str = "float32"

    def validate(self) -> None:
        if self.task not in TASKS:
            raise TrainerError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.mode not in MODES:
            raise TrainerError(f"mode must be one of {MODES}, got {self.mode!r}")
        positive = {
            "hidden": self.hidden,
            "kernel": self.kernel,
            "lr": self.lr,
            "batch": self.batch,
            "epochs": self.epochs,
            "n_drugs": self.n_drugs,
            "k": self.k,
        }
        for name, value in positive.items():
            if value <= 0:
                raise TrainerError(f"{name} must be positive, got {value}")
        for name, value in (("l2", self.l2), ("decay", self.decay),
                            ("patience", self.patience)):
            if value < 0:
                raise TrainerError(f"{name} must be >= 0, got {value}")
        if not 0.0 <= self.dropout < 1.0:
            raise TrainerError(f"dropout must be in [0, 1), got {self.dropout}")
        if not self.conv_filters or not self.fc:
            raise TrainerError("conv_filters and fc must be non-empty")
        if self.class_weight not in ("auto", "balanced", "none", "ratio"):
            raise TrainerError(f"unknown class_weight scheme {self.class_weight!r}")
        if self.class_weight == "ratio" and self.class_ratio is None:
            raise TrainerError("class_weight=ratio needs class_ratio=(neg, pos)")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["conv_filters"] = list(self.conv_filters)
        out["fc"] = list(self.fc)
        if self.class_ratio is not None:
            out["class_ratio"] = list(self.class_ratio)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise TrainerError(f"unknown config fields: {sorted(unknown)}")
        if "task" not in raw:
            raise TrainerError("config is missing required field 'task'")
        data = dict(raw)
        for name in ("conv_filters", "fc", "class_ratio"):
            if data.get(name) is not None:
                data[name] = tuple(data[name])
        config = cls(**data)
        config.validate()
        return config


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_auroc: float  # NaN when the validation split is single-class


@dataclass
class TrainedModel:
    config: ModelConfig
    model: object
    history: list[EpochRecord]
    best_epoch: int
    best_val_loss: float
    stopped_epoch: int
    weights: Optional[dict[str, np.ndarray]] = None  # best-epoch snapshot


@dataclass
class RepetitionSummary:
    n: int
    task: str
    mode: str
    mean: dict[str, float]
    std: dict[str, float]
    std_defined: bool
    per_run: list[dict]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "task": self.task,
            "mode": self.mode,
            "mean": self.mean,
            "std": self.std,
            "std_defined": self.std_defined,
            "per_run": self.per_run,
        }


# ---------------------------------------------------------------------------
# Model construction
# ---------------------------------------------------------------------------


def build_model_for(config: ModelConfig, n_features: int, rng: np.random.Generator):
    if config.mode == "baseline":
        return BaselineModel(
            n_features=n_features, hidden=config.hidden, rng=rng, dtype=config.dtype
        )
    if config.mode == "multimodal":
        return MultimodalModel(
            n_features=n_features,
            hidden=config.hidden,
            n_drugs=config.n_drugs,
            drug_width=config.k,
            conv_filters=config.conv_filters,
            kernel_size=config.kernel,
            fc_sizes=config.fc,
            dropout=config.dropout,
            rng=rng,
            dtype=config.dtype,
        )
    return DrugsOnlyModel(
        n_drugs=config.n_drugs,
        drug_width=config.k,
        conv_filters=config.conv_filters,
        kernel_size=config.kernel,
        fc_sizes=config.fc,
        dropout=config.dropout,
        rng=rng,
        dtype=config.dtype,
    )


def resolve_class_weights(config: ModelConfig, labels: np.ndarray) -> ClassWeights:
    """Apply the per-task weighting policy.

    ``auto`` uses balanced weights everywhere except mort_icu, which gets a
    fixed 1:5 negative:positive ratio.
    """
    scheme = config.class_weight
    if scheme == "auto":
        if config.task == "mort_icu":
            return class_weights(labels, scheme="ratio", ratio=(1.0, 5.0))
        return class_weights(labels, scheme="balanced")
    if scheme == "ratio":
        return class_weights(labels, scheme="ratio", ratio=config.class_ratio)
    return class_weights(labels, scheme=scheme)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _split_indices(arrays: CohortArrays, split: CohortSplit) -> dict[str, np.ndarray]:
    index = arrays.index_of()
    missing = [
        pid for pid in (*split.train, *split.val, *split.test) if pid not in index
    ]
    if missing:
        raise DataError(f"split references patients missing from arrays, e.g. {missing[0]!r}")
    return {
        "train": np.array([index[pid] for pid in sorted(split.train)], dtype=np.int64),
        "val": np.array([index[pid] for pid in sorted(split.val)], dtype=np.int64),
        "test": np.array([index[pid] for pid in sorted(split.test)], dtype=np.int64),
    }


def _needs_drugs(mode: str) -> bool:
    return mode in ("multimodal", "drugs")


def _batch_inputs(arrays: CohortArrays, rows: np.ndarray, mode: str, dtype):
    x_ts = arrays.x_ts[rows].astype(dtype, copy=False)
    if not _needs_drugs(mode):
        return x_ts, None
    return x_ts, arrays.drug_tensor(rows, dtype=dtype)


def _eval_loss(model, arrays: CohortArrays, rows: np.ndarray, labels: np.ndarray,
               weights: ClassWeights, mode: str, dtype, batch: int) -> tuple[float, np.ndarray]:
    """Eval-mode probabilities and weighted BCE over the given rows."""
    probs = np.empty(rows.size, dtype=np.float64)
    for start in range(0, rows.size, batch):
        chunk = rows[start:start + batch]
        x_ts, x_drug = _batch_inputs(arrays, chunk, mode, dtype)
        if mode == "baseline":
            p = model.forward(x_ts, train=False)
        else:
            p = model.forward(x_ts, x_drug, train=False)
        probs[start:start + chunk.size] = p
    loss, _ = weighted_bce(probs, labels.astype(np.float64), weights.w_pos, weights.w_neg)
    return float(loss), probs


def train(config: ModelConfig, arrays: CohortArrays, split: CohortSplit) -> TrainedModel:
    """Run one seeded training to early stop; returns the best-epoch model.

    Raises:
        DataError: missing drug arrays for a drug-using mode, or labels
            with a single class where weighting needs both.
        DivergenceError: non-finite training or validation loss.
    """
    config.validate()
    if _needs_drugs(config.mode) and arrays.drug_rows is None:
        raise DataError("config uses the drug branch but the cohort has no drug arrays")
    if _needs_drugs(config.mode) and arrays.vocab_vectors.shape[1] != config.k:
        raise DataError(
            f"drug vectors have width {arrays.vocab_vectors.shape[1]}, config k={config.k}"
        )
    if _needs_drugs(config.mode) and arrays.drug_rows.shape[1] != config.n_drugs:
        raise DataError(
            f"drug rows have {arrays.drug_rows.shape[1]} slots, config n_drugs={config.n_drugs}"
        )

    rows = _split_indices(arrays, split)
    y = arrays.labels[config.task]
    y_train = y[rows["train"]]
    y_val = y[rows["val"]]

    init_ss, shuffle_ss, dropout_ss = np.random.SeedSequence(config.seed).spawn(3)
    init_rng = np.random.default_rng(init_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    model = build_model_for(config, arrays.n_features, init_rng)
    weights = resolve_class_weights(config, y_train)
    optimizer = Adam(model.params(), lr=config.lr, decay=config.decay)
    dtype = np.dtype(config.dtype)

    history: list[EpochRecord] = []
    best_val = math.inf
    best_epoch = 0
    best_params: Optional[dict[str, np.ndarray]] = None
    bad_epochs = 0
    stopped_epoch = 0

    n_train = rows["train"].size
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n_train)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n_train, config.batch):
            batch_rows = rows["train"][order[start:start + config.batch]]
            x_ts, x_drug = _batch_inputs(arrays, batch_rows, config.mode, dtype)
            y_batch = y[batch_rows].astype(np.float64)

            if config.mode == "baseline":
                p = model.forward(x_ts, train=True, dropout_rng=dropout_rng)
            else:
                p = model.forward(x_ts, x_drug, train=True, dropout_rng=dropout_rng)
            loss, dp = weighted_bce(p, y_batch, weights.w_pos, weights.w_neg)
            if not math.isfinite(loss):
                raise DivergenceError(f"epoch {epoch}: non-finite training loss")

            model.zero_grads()
            model.backward(dp)
            if config.l2 > 0.0:
                for W, gW in zip(model.l2_matrices(), model.l2_matrix_grads()):
                    gW += (2.0 * config.l2) * W
            optimizer.step(model.grads())

            epoch_loss += float(loss)
            n_batches += 1

        train_loss = epoch_loss / max(n_batches, 1)
        val_loss, val_probs = _eval_loss(
            model, arrays, rows["val"], y_val, weights, config.mode, dtype, config.batch * 8
        )
        if not math.isfinite(val_loss):
            raise DivergenceError(f"epoch {epoch}: non-finite validation loss")
        try:
            val_roc = auroc(val_probs, y_val)
        except SingleClass:
            val_roc = float("nan")
        history.append(EpochRecord(epoch, train_loss, val_loss, val_roc))
        stopped_epoch = epoch

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params().items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= max(config.patience, 1):
                break

    if best_params is not None:
        model.load_params(best_params)

    return TrainedModel(
        config=config,
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        stopped_epoch=stopped_epoch,
        weights=best_params,
    )


def evaluate_trained(trained: TrainedModel, arrays: CohortArrays, split: CohortSplit,
                     on: str = "test", threshold: float = 0.5) -> MetricsReport:
    parts = _split_indices(arrays, split)
    if on not in parts:
        raise TrainerError(f"on must be one of {sorted(parts)}, got {on!r}")
    rows = parts[on]
    config = trained.config
    x_ts, x_drug = _batch_inputs(arrays, rows, config.mode, np.dtype(config.dtype))
    probs = predict(trained.model, x_ts, x_drug)
    return evaluate(probs, arrays.labels[config.task][rows], threshold=threshold)


# ---------------------------------------------------------------------------
# Repetitions
# ---------------------------------------------------------------------------


def run_repetitions(
    config: ModelConfig,
    arrays: CohortArrays,
    split: CohortSplit,
    n: int = 10,
    keep_models: bool = False,
) -> tuple[RepetitionSummary, list[TrainedModel]]:
    """Train ``n`` times with seeds seed..seed+n-1; aggregate test metrics.

    The sample standard deviation uses ddof=1; with n=1 it is reported as
    0.0 and flagged via ``std_defined=False``.
    """
    if n < 1:
        raise TrainerError(f"n must be >= 1, got {n}")
    runs: list[TrainedModel] = []
    reports: list[MetricsReport] = []
    for i in range(n):
        rep_config = replace(config, seed=config.seed + i)
        trained = train(rep_config, arrays, split)
        reports.append(evaluate_trained(trained, arrays, split))
        if keep_models:
            runs.append(trained)
        else:
            trained.model = None
            trained.weights = None
            runs.append(trained)

    tracked = ("auroc", "auprc", "f1", "precision", "recall")
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for name in tracked:
        values = [getattr(r, name) for r in reports]
        if any(v is None for v in values):
            continue
        values = np.array(values, dtype=np.float64)
        mean[name] = float(values.mean())
        std[name] = float(values.std(ddof=1)) if n > 1 else 0.0
    summary = RepetitionSummary(
        n=n,
        task=config.task,
        mode=config.mode,
        mean=mean,
        std=std,
        std_defined=n > 1,
        per_run=[
            {"seed": config.seed + i, **reports[i].to_dict()} for i in range(n)
        ],
    )
    return summary, runs


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_history(path: str | Path, history: Sequence[EpochRecord]) -> None:
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "val_auroc"])
        for record in history:
            writer.writerow(
                [
                    record.epoch,
                    repr(record.train_loss),
                    repr(record.val_loss),
                    repr(record.val_auroc),
                ]
            )


def save_metrics(path: str | Path, report: MetricsReport, config: ModelConfig,
                 extra: Optional[dict] = None) -> None:
    payload = report.to_dict()
    payload["task"] = config.task
    payload["mode"] = config.mode
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def save_summary(path: str | Path, summary: RepetitionSummary,
                 extra: Optional[dict] = None) -> None:
    payload = summary.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def save_trained(out_dir: str | Path, trained: TrainedModel,
                 report: Optional[MetricsReport] = None,
                 extra: Optional[dict] = None) -> Path:
    """Write the weight container, history.csv, and optional metrics.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_weights(out_dir, trained.model.architecture(), trained.model.params())
    save_history(out_dir / "history.csv", trained.history)
    if report is not None:
        save_metrics(out_dir / "metrics.json", report, trained.config, extra=extra)
    return out_dir
