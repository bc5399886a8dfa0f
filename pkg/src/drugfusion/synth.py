"""Synthetic cohort generation with signal split across both modalities.

Each patient gets a latent severity score built from two standardized
parts: a linear trend planted in one time-series feature, and the count of
prescribed drugs that carry designated risk substructures. Outcome
probabilities are logistic in that score, with per-task intercepts solved
so the expected positive rate matches the configured base rate. With
``signal_strength`` 0 the labels are independent of every feature.

Risk is defined at the substructure level: the designated risk molecules
contribute circular-fingerprint identifiers that no other vocabulary
molecule produces, and a drug counts as risky when it carries any of those
identifiers. Both the time-series path and the drug path therefore carry
real, learnable signal.

Generation is deterministic: the same config writes byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cohort import HOURS, TASKS
from .fingerprints import morgan_identifiers
from .smiles import parse

__all__ = [
    "SynthConfig",
    "SynthCohort",
    "DEFAULT_VOCAB",
    "DEFAULT_RISK",
    "DEFAULT_BASE_RATES",
    "generate",
    "write_cohort",
]

# A small formulary of parseable drug structures. The risk subset carries
# halogenated and fused-ring scaffolds absent from the rest, so their
# fingerprints are separable from the benign set.
DEFAULT_VOCAB: tuple[str, ...] = (
    "CC(=O)NC1=CC=C(O)C=C1",                            # acetaminophen
    "CC(=O)OC1=CC=CC=C1C(=O)O",                         # aspirin
    "CC(C)CC1=CC=C(C=C1)C(C)C(=O)O",                    # ibuprofen
    "CN1C=NC2=C1C(=O)N(C)C(=O)N2C",                     # caffeine
    "CN1CCCC1C1=CN=CC=C1",                              # nicotine
    "CCN(CC)CC(=O)NC1=C(C)C=CC=C1C",                    # lidocaine
    "CC(C)NCC(O)COC1=CC=C(CCOC)C=C1",                   # metoprolol
    "NCCC1=CC(O)=C(O)C=C1",                             # dopamine
    "NCC(O)C1=CC(O)=C(O)C=C1",                          # norepinephrine
    "CNCC(O)C1=CC(O)=CC=C1",                            # phenylephrine
    "CC(C)C1=CC=CC(C(C)C)=C1O",                         # propofol
    "OCC1OC(O)C(O)C(O)C1O",                             # dextrose
    "CN(C)C(=N)NC(=N)N",                                # metformin
    "OC1C(O)C(O)C(OC1OS(=O)(=O)O)C(=O)O",               # sulfated uronate
    "[K+].[Cl-]",                                       # potassium chloride
    "[Na+].OC([O-])=O",                                 # sodium bicarbonate
    "[Mg+2].[O-]S(=O)(=O)[O-]",                         # magnesium sulfate
    "CC(=O)CC(C1=CC=CC=C1)C1=C(O)C2=CC=CC=C2OC1=O",     # warfarin
    "C1=COC(=C1)CNC1=CC(=C(C=C1C(=O)O)S(=O)(=O)N)Cl",   # furosemide-like
    "CC1=NC=CN1CC1CCC2=C(C1=O)C1=CC=CC=C1N2C",          # ondansetron-like
    "CCC(=O)N(C1CCN(CCC2=CC=CC=C2)CC1)C1=CC=CC=C1",     # fentanyl
    "OC1(CCN(CCCC(=O)C2=CC=C(F)C=C2)CC1)C1=CC=C(Cl)C=C1",  # haloperidol
    "CN1C2=CC=C(C=C2C(=NCC1=O)C1=CC=CC=C1)Cl",          # diazepam
    "C1=CC=C(C(=C1)C1=NC(C(=O)NC2=C1C=C(C=C2)Cl)O)Cl",  # lorazepam-like
)

DEFAULT_RISK: tuple[str, ...] = (
    "OC1(CCN(CCCC(=O)C2=CC=C(F)C=C2)CC1)C1=CC=C(Cl)C=C1",
    "CN1C2=CC=C(C=C2C(=NCC1=O)C1=CC=CC=C1)Cl",
    "C1=CC=C(C(=C1)C1=NC(C(=O)NC2=C1C=C(C=C2)Cl)O)Cl",
    "CCC(=O)N(C1CCN(CCC2=CC=CC=C2)CC1)C1=CC=CC=C1",
    "C1=COC(=C1)CNC1=CC(=C(C=C1C(=O)O)S(=O)(=O)N)Cl",
)

DEFAULT_BASE_RATES: dict[str, float] = {
    "mort_hosp": 0.13,
    "mort_icu": 0.09,
    "los_3": 0.43,
    "los_7": 0.08,
}

_TREND_AMPLITUDE = 1.0
_TREND_NOISE = 0.5


class SynthError(ValueError):
    """Raised for unusable generator configurations."""


@dataclass
class SynthConfig:
    n_patients: int
    n_features: int
    seed: int
    signal_strength: float = 2.0
    vocab: tuple[str, ...] = DEFAULT_VOCAB
    risk: tuple[str, ...] = DEFAULT_RISK
    base_rates: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_BASE_RATES))
    max_drugs: int = 8
    trend_feature: int = 0
    # Relative weight of each modality in the severity score. (1, 0) plants
    # the signal only in the time series; (0, 1) only in the drugs.
    trend_weight: float = 1.0
    risk_weight: float = 1.0

    def validate(self) -> None:
        if self.n_patients < 2:
            raise SynthError("n_patients must be >= 2")
        if self.n_features < 1:
            raise SynthError("n_features must be >= 1")
        if not 0 <= self.trend_feature < self.n_features:
            raise SynthError("trend_feature outside the feature range")
        if self.signal_strength < 0:
            raise SynthError("signal_strength must be >= 0")
        if self.trend_weight < 0 or self.risk_weight < 0:
            raise SynthError("modality weights must be >= 0")
        if self.trend_weight == 0 and self.risk_weight == 0:
            raise SynthError("at least one modality weight must be positive")
        if not set(self.risk) <= set(self.vocab):
            raise SynthError("risk molecules must be part of the vocabulary")
        if not 1 <= self.max_drugs <= len(self.vocab):
            raise SynthError("max_drugs must be in 1..len(vocab)")
        if set(self.base_rates) != set(TASKS):
            raise SynthError(f"base_rates must cover exactly {TASKS}")
        for task, rate in self.base_rates.items():
            if not 0.01 <= rate <= 0.99:
                raise SynthError(f"base rate for {task} must be in [0.01, 0.99]")


@dataclass
class SynthCohort:
    config: SynthConfig
    patient_ids: list[str]
    timeseries: np.ndarray  # (N, 24, F)
    drug_indices: list[list[int]]  # vocabulary indices per patient
    labels: dict[str, np.ndarray]
    intercepts: dict[str, float]
    risky: np.ndarray  # bool per vocabulary entry


def _risky_vocab(vocab: tuple[str, ...], risk: tuple[str, ...]) -> np.ndarray:
    """Mark vocabulary entries carrying identifiers unique to the risk set."""
    id_sets = [set(morgan_identifiers(parse(s), radius=2).values()) for s in vocab]
    risk_positions = {i for i, s in enumerate(vocab) if s in set(risk)}
    risk_ids = set()
    for i in risk_positions:
        risk_ids |= id_sets[i]
    for i, ids in enumerate(id_sets):
        if i not in risk_positions:
            risk_ids -= ids
    if not risk_ids:
        raise SynthError("risk molecules share every substructure with the benign set")
    return np.array([bool(ids & risk_ids) for ids in id_sets], dtype=bool)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _solve_intercept(eta: np.ndarray, target: float) -> float:
    """Find b with mean(sigmoid(b + eta)) == target by bisection."""
    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(_sigmoid(mid + eta).mean()) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _standardized(values: np.ndarray) -> np.ndarray:
    std = values.std()
    if std == 0.0:
        return values - values.mean()
    return (values - values.mean()) / std


def generate(config: SynthConfig) -> SynthCohort:
    """Generate a cohort in memory; see the module docstring for the model."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n = config.n_patients
    n_features = config.n_features

    patient_ids = [f"p{i:06d}" for i in range(n)]

    # Latent trend per patient plus noise everywhere.
    trend = rng.standard_normal(n)
    series = rng.standard_normal((n, HOURS, n_features))
    series[:, :, config.trend_feature] *= _TREND_NOISE
    hours = (np.arange(HOURS) - (HOURS - 1) / 2.0) / ((HOURS - 1) / 2.0)
    series[:, :, config.trend_feature] += _TREND_AMPLITUDE * trend[:, None] * hours[None, :]

    # Prescriptions: 1..max_drugs distinct vocabulary entries per patient.
    risky = _risky_vocab(config.vocab, config.risk)
    counts = rng.integers(1, config.max_drugs + 1, size=n)
    drug_indices: list[list[int]] = []
    risk_counts = np.empty(n, dtype=np.float64)
    for i in range(n):
        chosen = rng.choice(len(config.vocab), size=int(counts[i]), replace=False)
        drug_indices.append([int(j) for j in chosen])
        risk_counts[i] = risky[chosen].sum()

    # Severity: weighted blend of time-series trend and drug risk burden,
    # normalized so signal_strength means the same thing at any mix.
    norm = math.sqrt(config.trend_weight**2 + config.risk_weight**2)
    eta = (
        config.trend_weight * _standardized(trend)
        + config.risk_weight * _standardized(risk_counts)
    ) / norm
    scaled = config.signal_strength * eta

    labels: dict[str, np.ndarray] = {}
    intercepts: dict[str, float] = {}
    for task in TASKS:
        intercept = _solve_intercept(scaled, config.base_rates[task])
        probabilities = _sigmoid(intercept + scaled)
        labels[task] = (rng.random(n) < probabilities).astype(np.int64)
        intercepts[task] = intercept

    return SynthCohort(
        config=config,
        patient_ids=patient_ids,
        timeseries=series,
        drug_indices=drug_indices,
        labels=labels,
        intercepts=intercepts,
        risky=risky,
    )


def _drug_display_name(index: int) -> str:
    return f"Synthamol {index:03d}"


def _drug_generic_name(index: int) -> str:
    # Parenthetical suffixes exercise name normalization downstream.
    return f"Synthamol {index:03d} (IV)"


def _drug_ndc(index: int) -> str:
    return f"{90000000000 + index:011d}"


def write_cohort(cohort: SynthCohort, out_dir: str | Path) -> dict[str, Path]:
    """Write the cohort files plus a warmed resolver cache.

    Produces ``timeseries.csv``, ``prescriptions.csv``, ``labels.csv``,
    ``cache.jsonl`` (so the prescriptions resolve fully offline), and
    ``generator.json`` with the planted-model parameters.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = cohort.config

    ts_path = out_dir / "timeseries.csv"
    with ts_path.open("w", newline="") as handle:
        header = "patient_id,hour," + ",".join(f"f_{i}" for i in range(config.n_features))
        handle.write(header + "\n")
        for i, pid in enumerate(cohort.patient_ids):
            for hour in range(HOURS):
                values = ",".join(repr(float(v)) for v in cohort.timeseries[i, hour, :])
                handle.write(f"{pid},{hour},{values}\n")

    rx_path = out_dir / "prescriptions.csv"
    with rx_path.open("w", newline="") as handle:
        handle.write("patient_id,order_index,drug_name,generic_name,ndc\n")
        for i, pid in enumerate(cohort.patient_ids):
            for order, vocab_index in enumerate(cohort.drug_indices[i]):
                handle.write(
                    f"{pid},{order},{_drug_display_name(vocab_index)},"
                    f"{_drug_generic_name(vocab_index)},{_drug_ndc(vocab_index)}\n"
                )

    labels_path = out_dir / "labels.csv"
    with labels_path.open("w", newline="") as handle:
        handle.write("patient_id," + ",".join(TASKS) + "\n")
        for i, pid in enumerate(cohort.patient_ids):
            row = ",".join(str(int(cohort.labels[task][i])) for task in TASKS)
            handle.write(f"{pid},{row}\n")

    cache_path = out_dir / "cache.jsonl"
    with cache_path.open("w") as handle:
        for index, smiles in enumerate(config.vocab):
            name_entry = {
                "key": f"synthamol {index:03d}",
                "kind": "name",
                "cid": 900000 + index,
                "smiles": smiles,
                "resolved": True,
                "ts": 0,
            }
            ndc_entry = dict(name_entry, key=_drug_ndc(index), kind="ndc")
            handle.write(json.dumps(name_entry, sort_keys=True) + "\n")
            handle.write(json.dumps(ndc_entry, sort_keys=True) + "\n")

    info_path = out_dir / "generator.json"
    info = {
        "n_patients": config.n_patients,
        "n_features": config.n_features,
        "seed": config.seed,
        "signal_strength": config.signal_strength,
        "max_drugs": config.max_drugs,
        "trend_feature": config.trend_feature,
        "trend_weight": config.trend_weight,
        "risk_weight": config.risk_weight,
        "base_rates": config.base_rates,
        "intercepts": cohort.intercepts,
        "positive_rates": {
            task: float(values.mean()) for task, values in cohort.labels.items()
        },
        "risky_vocab": [bool(x) for x in cohort.risky],
        "vocab_size": len(config.vocab),
    }
    info_path.write_text(json.dumps(info, sort_keys=True, indent=2) + "\n")

    return {
        "timeseries": ts_path,
        "prescriptions": rx_path,
        "labels": labels_path,
        "cache": cache_path,
        "generator": info_path,
    }
