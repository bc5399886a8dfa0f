"""Cohort ingestion, featurization, splitting, and class weighting.

File formats (all headered CSV):
  * time series: ``patient_id,hour,f_0..f_{F-1}`` with exactly hours 0..23
    per patient,
  * prescriptions: ``patient_id,order_index,drug_name,generic_name,ndc``,
  * resolved drugs: ``patient_id,order_index,smiles,cid,resolution_path``,
  * labels: ``patient_id,mort_hosp,mort_icu,los_3,los_7`` with 0/1 values.

Splits are serialized as JSON ``{seed, train, val, test}`` with sorted
patient-id arrays.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "TASKS",
    "HOURS",
    "CohortError",
    "SchemaError",
    "MissingHour",
    "DuplicateHour",
    "RaggedRow",
    "SingleClass",
    "PatientRecord",
    "CohortSplit",
    "ClassWeights",
    "DrugMatrix",
    "ingest_timeseries",
    "ingest_labels",
    "ingest_prescriptions",
    "ingest_resolved",
    "assemble_records",
    "standardize",
    "build_drug_matrix",
    "stratified_split",
    "save_split",
    "load_split",
    "class_weights",
    "CohortArrays",
    "featurize",
]

TASKS = ("mort_hosp", "mort_icu", "los_3", "los_7")
HOURS = 24


class CohortError(ValueError):
    """Base class for cohort data errors."""


class SchemaError(CohortError):
    """Raised when a file header does not match the expected schema."""


class MissingHour(CohortError):
    def __init__(self, patient_id: str, hour: int):
        self.patient_id = patient_id
        self.hour = hour
        super().__init__(f"patient {patient_id}: missing hour {hour}")


class DuplicateHour(CohortError):
    def __init__(self, patient_id: str, hour: int):
        self.patient_id = patient_id
        self.hour = hour
        super().__init__(f"patient {patient_id}: duplicate hour {hour}")


class RaggedRow(CohortError):
    def __init__(self, path, lineno: int, expected: int, found: int):
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: expected {expected} columns, found {found}")


class SingleClass(CohortError):
    """Raised when class weights are requested for a one-class label vector."""


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def _read_rows(path: str | Path, expected_header: list[str] | None = None):
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if expected_header is not None and header != expected_header:
            raise SchemaError(
                f"{path}: header {header!r} does not match expected {expected_header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRow(path, lineno, len(header), len(row))
            yield lineno, row
    return


def ingest_timeseries(path: str | Path) -> dict[str, np.ndarray]:
    """Load per-patient (24, F) matrices; F is inferred from the header."""
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "patient_id" or header[1] != "hour":
            raise SchemaError(f"{path}: header must start with patient_id,hour,f_0,...")
        n_features = len(header) - 2
        expected = [f"f_{i}" for i in range(n_features)]
        if header[2:] != expected:
            raise SchemaError(f"{path}: feature columns must be f_0..f_{n_features - 1}")

        data: dict[str, np.ndarray] = {}
        seen: dict[str, np.ndarray] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRow(path, lineno, len(header), len(row))
            pid = row[0]
            try:
                hour = int(row[1])
            except ValueError:
                raise CohortError(f"{path}:{lineno}: hour {row[1]!r} is not an integer") from None
            if not 0 <= hour < HOURS:
                raise CohortError(f"{path}:{lineno}: hour {hour} outside 0..{HOURS - 1}")
            if pid not in data:
                data[pid] = np.full((HOURS, n_features), np.nan, dtype=np.float64)
                seen[pid] = np.zeros(HOURS, dtype=bool)
            if seen[pid][hour]:
                raise DuplicateHour(pid, hour)
            seen[pid][hour] = True
            try:
                data[pid][hour, :] = [float(x) for x in row[2:]]
            except ValueError as exc:
                raise CohortError(f"{path}:{lineno}: {exc}") from None

    for pid, mask in seen.items():
        if not mask.all():
            raise MissingHour(pid, int(np.flatnonzero(~mask)[0]))
    return data


def ingest_labels(path: str | Path) -> dict[str, dict[str, int]]:
    header = ["patient_id"] + list(TASKS)
    labels: dict[str, dict[str, int]] = {}
    for lineno, row in _read_rows(path, header):
        pid = row[0]
        if pid in labels:
            raise CohortError(f"{path}: duplicate patient {pid} at line {lineno}")
        values = {}
        for task, text in zip(TASKS, row[1:]):
            if text not in ("0", "1"):
                raise CohortError(f"{path}:{lineno}: label {task} must be 0 or 1, got {text!r}")
            values[task] = int(text)
        labels[pid] = values
    return labels


def ingest_prescriptions(path: str | Path) -> list[dict]:
    """Raw prescription rows in file order."""
    header = ["patient_id", "order_index", "drug_name", "generic_name", "ndc"]
    rows = []
    for lineno, row in _read_rows(path, header):
        try:
            order_index = int(row[1])
        except ValueError:
            raise CohortError(f"{path}:{lineno}: order_index {row[1]!r} is not an integer") from None
        rows.append(
            {
                "patient_id": row[0],
                "order_index": order_index,
                "drug_name": row[2],
                "generic_name": row[3],
                "ndc": row[4],
            }
        )
    return rows


def ingest_resolved(path: str | Path) -> dict[str, list[str]]:
    """Per-patient SMILES lists ordered by order_index."""
    header = ["patient_id", "order_index", "smiles", "cid", "resolution_path"]
    per_patient: dict[str, list[tuple[int, str]]] = {}
    for lineno, row in _read_rows(path, header):
        try:
            order_index = int(row[1])
        except ValueError:
            raise CohortError(f"{path}:{lineno}: order_index {row[1]!r} is not an integer") from None
        per_patient.setdefault(row[0], []).append((order_index, row[2]))
    return {
        pid: [smiles for _, smiles in sorted(entries)]
        for pid, entries in per_patient.items()
    }


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class PatientRecord:
    """One patient: a full (24, F) matrix, a drug SMILES list, labels."""

    patient_id: str
    timeseries: np.ndarray
    drugs: list[str]
    labels: dict[str, int]


def assemble_records(
    timeseries: Mapping[str, np.ndarray],
    drugs: Mapping[str, list[str]],
    labels: Mapping[str, dict[str, int]],
    require_drugs: bool = True,
) -> tuple[list[PatientRecord], dict[str, int]]:
    """Join the three modalities on patient id.

    Patients missing any modality, or whose drug list is empty, are
    excluded; the second return value counts exclusions by reason.
    ``require_drugs=False`` keeps drug-less patients (for models that
    never read the drug branch).
    """
    excluded = {"no_timeseries": 0, "no_drugs": 0, "no_labels": 0}
    records = []
    for pid in sorted(timeseries):
        if pid not in labels:
            excluded["no_labels"] += 1
            continue
        drug_list = drugs.get(pid, [])
        if not drug_list and require_drugs:
            excluded["no_drugs"] += 1
            continue
        records.append(
            PatientRecord(
                patient_id=pid,
                timeseries=timeseries[pid],
                drugs=list(drug_list),
                labels=dict(labels[pid]),
            )
        )
    for pid in labels:
        if pid not in timeseries:
            excluded["no_timeseries"] += 1
    return records, excluded


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


def standardize(
    data: Mapping[str, np.ndarray], train_ids: Iterable[str]
) -> tuple[dict[str, np.ndarray], np.ndarray, np.ndarray]:
    """Z-score every feature using statistics from the training rows only.

    Features with zero variance on the training rows are centered but not
    scaled. Returns the transformed copies plus the (mean, std) vectors.
    """
    train_ids = list(train_ids)
    if not train_ids:
        raise CohortError("empty training set")
    stacked = np.concatenate([data[pid] for pid in train_ids], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    scale = np.where(std == 0.0, 1.0, std)
    transformed = {pid: (matrix - mean) / scale for pid, matrix in data.items()}
    return transformed, mean, std


# ---------------------------------------------------------------------------
# Drug matrices
# ---------------------------------------------------------------------------


@dataclass
class DrugMatrix:
    """A patient's stacked drug embeddings, truncated or zero-padded."""

    values: np.ndarray
    n: int
    k: int
    actual_count: int


def build_drug_matrix(drugs: Sequence[str], provider, n: int = 64, k: int = 1024) -> DrugMatrix:
    """Stack per-drug embeddings in prescription order into an (n, k) matrix.

    Drugs beyond ``n`` are dropped; missing rows stay zero.
    """
    if n < 1 or k < 1:
        raise CohortError("n and k must be >= 1")
    values = np.zeros((n, k), dtype=np.float64)
    kept = list(drugs)[:n]
    for row, smiles in enumerate(kept):
        vector = provider.embed(smiles)
        if vector.shape != (k,):
            raise CohortError(
                f"provider returned width {vector.shape} for {smiles!r}, expected ({k},)"
            )
        values[row, :] = vector
    return DrugMatrix(values=values, n=n, k=k, actual_count=len(kept))


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass
class CohortSplit:
    seed: int
    train: list[str]
    val: list[str]
    test: list[str]

    def sets(self) -> tuple[set, set, set]:
        return set(self.train), set(self.val), set(self.test)


def stratified_split(
    labels: Mapping[str, dict[str, int]],
    seed: int,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
) -> CohortSplit:
    """Split patient ids stratified by the composite of all four labels.

    Patients are grouped by their 4-bit label combination; each group is
    shuffled with the seeded generator and apportioned by floor(ratio *
    group size) for val and test, with the remainder going to train. The
    input iteration order never affects the result.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise CohortError(f"ratios must be three non-negatives summing to 1, got {ratios}")
    if not labels:
        raise CohortError("no patients to split")

    groups: dict[tuple, list[str]] = {}
    for pid in sorted(labels):
        key = tuple(labels[pid][task] for task in TASKS)
        groups.setdefault(key, []).append(pid)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    train: list[str] = []
    val: list[str] = []
    test: list[str] = []
    for key in sorted(groups):
        members = groups[key]
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        n_val = math.floor(ratios[1] * len(members))
        n_test = math.floor(ratios[2] * len(members))
        n_train = len(members) - n_val - n_test
        train.extend(shuffled[:n_train])
        val.extend(shuffled[n_train : n_train + n_val])
        test.extend(shuffled[n_train + n_val :])

    return CohortSplit(seed=seed, train=sorted(train), val=sorted(val), test=sorted(test))


def save_split(split: CohortSplit, path: str | Path) -> None:
    payload = {
        "seed": split.seed,
        "train": sorted(split.train),
        "val": sorted(split.val),
        "test": sorted(split.test),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_split(path: str | Path) -> CohortSplit:
    payload = json.loads(Path(path).read_text())
    try:
        split = CohortSplit(
            seed=int(payload["seed"]),
            train=list(payload["train"]),
            val=list(payload["val"]),
            test=list(payload["test"]),
        )
    except KeyError as exc:
        raise SchemaError(f"{path}: split file is missing {exc}") from None
    train, val, test = split.sets()
    if train & val or train & test or val & test:
        raise CohortError(f"{path}: split sets overlap")
    return split


# ---------------------------------------------------------------------------
# Class weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassWeights:
    w_pos: float
    w_neg: float
    scheme: str


def class_weights(labels: Sequence[int] | np.ndarray, scheme: str = "balanced",
                  ratio: tuple[float, float] | None = None) -> ClassWeights:
    """Per-class loss weights.

    ``balanced`` gives w_c = N / (2 * N_c); ``ratio`` takes an explicit
    (negative, positive) pair; ``none`` returns unit weights.
    """
    labels = np.asarray(labels).ravel()
    if scheme == "none":
        return ClassWeights(w_pos=1.0, w_neg=1.0, scheme="none")
    if scheme == "ratio":
        if ratio is None or len(ratio) != 2 or ratio[0] <= 0 or ratio[1] <= 0:
            raise CohortError(f"ratio scheme needs a positive (neg, pos) pair, got {ratio}")
        return ClassWeights(w_pos=float(ratio[1]), w_neg=float(ratio[0]), scheme="ratio")
    if scheme != "balanced":
        raise CohortError(f"unknown class weight scheme {scheme!r}")
    n = labels.size
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("balanced weights need both classes present")
    return ClassWeights(w_pos=n / (2.0 * n_pos), w_neg=n / (2.0 * n_neg), scheme="balanced")


# ---------------------------------------------------------------------------
# Trainer-facing arrays
# ---------------------------------------------------------------------------


@dataclass
class CohortArrays:
    """Dense arrays for training, with drug matrices stored as a vocabulary.

    ``drug_rows[i]`` indexes ``vocab_vectors`` for each drug slot of patient
    ``i``; the final vocabulary row is all zeros and acts as padding.
    """

    ids: list[str]
    x_ts: np.ndarray
    labels: dict[str, np.ndarray]
    mean: np.ndarray
    std: np.ndarray
    drug_rows: Optional[np.ndarray] = None
    vocab_vectors: Optional[np.ndarray] = None
    vocab: Optional[list[str]] = None

    @property
    def n_features(self) -> int:
        return self.x_ts.shape[2]

    def index_of(self) -> dict[str, int]:
        return {pid: i for i, pid in enumerate(self.ids)}

    def drug_tensor(self, indices: np.ndarray, dtype=np.float32) -> np.ndarray:
        """Materialize (B, n, k) drug matrices for the given patient rows."""
        if self.drug_rows is None:
            raise CohortError("cohort was featurized without drugs")
        return self.vocab_vectors.astype(dtype, copy=False)[self.drug_rows[indices]]


def featurize(
    records: Sequence[PatientRecord],
    split: CohortSplit,
    provider=None,
    n_drugs: int = 64,
    embed_width: int = 1024,
) -> CohortArrays:
    """Standardize time series and, when a provider is given, embed drugs.

    Standardization statistics come from the split's training patients
    only. Drug matrices are stored as vocabulary indices so a cohort of
    thousands of patients does not materialize thousands of (n, k) blocks.
    """
    by_id = {r.patient_id: r for r in records}
    missing = [pid for pid in split.train + split.val + split.test if pid not in by_id]
    if missing:
        raise CohortError(f"split references unknown patients, e.g. {missing[0]!r}")

    ids = sorted(by_id)
    raw = {pid: by_id[pid].timeseries for pid in ids}
    transformed, mean, std = standardize(raw, split.train)
    x_ts = np.stack([transformed[pid] for pid in ids], axis=0)

    labels = {
        task: np.array([by_id[pid].labels[task] for pid in ids], dtype=np.int64)
        for task in TASKS
    }

    drug_rows = None
    vocab_vectors = None
    vocab = None
    if provider is not None:
        vocab = sorted({s for pid in ids for s in by_id[pid].drugs[:n_drugs]})
        vectors = np.zeros((len(vocab) + 1, embed_width), dtype=np.float64)
        for row, smiles in enumerate(vocab):
            vector = provider.embed(smiles)
            if vector.shape != (embed_width,):
                raise CohortError(
                    f"provider width {vector.shape} does not match embed_width {embed_width}"
                )
            vectors[row, :] = vector
        index = {smiles: row for row, smiles in enumerate(vocab)}
        pad = len(vocab)
        drug_rows = np.full((len(ids), n_drugs), pad, dtype=np.int32)
        for i, pid in enumerate(ids):
            for slot, smiles in enumerate(by_id[pid].drugs[:n_drugs]):
                drug_rows[i, slot] = index[smiles]
        vocab_vectors = vectors

    return CohortArrays(
        ids=ids,
        x_ts=x_ts,
        labels=labels,
        mean=mean,
        std=std,
        drug_rows=drug_rows,
        vocab_vectors=vocab_vectors,
        vocab=vocab,
    )
