"""Circular molecular fingerprints and drug embedding providers.

The fingerprint here is a Morgan-style bit vector: per-atom invariants are
hashed, iteratively combined with neighbor identifiers for a configurable
radius, deduplicated by covered atom set, and folded modulo the vector
width. Identifiers come from a fixed 64-bit hash (constants below), so the
same molecule folds to the same bits in every process on every platform.
Bit-level compatibility with any other fingerprint software is explicitly
not a goal.

Embedding providers hand out one float vector per SMILES string: either a
computed fingerprint or a row of a precomputed table loaded from a TSV.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .smiles import BondOrder, Molecule, parse

__all__ = [
    "BitFingerprint",
    "FingerprintError",
    "LengthMismatch",
    "TableFormatError",
    "UnknownSmiles",
    "atom_invariants",
    "morgan_identifiers",
    "ecfp",
    "fold",
    "tanimoto",
    "EcfpProvider",
    "TableProvider",
    "load_embedding_table",
    "write_embedding_table",
]


class FingerprintError(ValueError):
    """Base class for fingerprint and embedding errors."""


class LengthMismatch(FingerprintError):
    """Raised when two fingerprints of different widths are compared."""


class TableFormatError(FingerprintError):
    """Raised for malformed embedding-table files."""


class UnknownSmiles(KeyError):
    """Raised when a table provider has no row for the requested SMILES."""


# ---------------------------------------------------------------------------
# Hashing
#
# FNV-1a over a length-prefixed field encoding, finished with the splitmix64
# mixer. Each field is one 64-bit two's-complement little-endian word. The
# constants are fixed; nothing here depends on process state.
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB


def _mix64(h: int) -> int:
    h &= _MASK64
    h ^= h >> 30
    h = (h * _MIX_A) & _MASK64
    h ^= h >> 27
    h = (h * _MIX_B) & _MASK64
    h ^= h >> 31
    return h


def hash_fields(fields: Iterable[int]) -> int:
    """Hash a sequence of integers to a stable 64-bit identifier."""
    values = list(fields)
    h = _FNV_OFFSET
    for value in (len(values), *values):
        word = value & _MASK64
        for _ in range(8):
            h ^= word & 0xFF
            h = (h * _FNV_PRIME) & _MASK64
            word >>= 8
    return _mix64(h)


# ---------------------------------------------------------------------------
# Fingerprints
# ---------------------------------------------------------------------------


@dataclass
class BitFingerprint:
    """A folded binary fingerprint."""

    bits: np.ndarray
    nbits: int
    radius: Optional[int] = None

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.shape != (self.nbits,):
            raise FingerprintError(
                f"bit array of shape {self.bits.shape} does not match nbits={self.nbits}"
            )

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    def on_bits(self) -> list[int]:
        return np.flatnonzero(self.bits).tolist()

    def to_floats(self, dtype=np.float64) -> np.ndarray:
        return self.bits.astype(dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitFingerprint):
            return NotImplemented
        return self.nbits == other.nbits and bool(np.array_equal(self.bits, other.bits))


def atom_invariants(molecule: Molecule) -> list[int]:
    """Initial per-atom identifiers.

    Each atom hashes the tuple (atomic number, heavy-neighbor degree, total
    hydrogen count, formal charge, ring flag, aromatic flag). Atom input
    order never enters the hash, so relabeled spellings of the same graph
    produce the same multiset of invariants.
    """
    degree = [0] * len(molecule.atoms)
    for bond in molecule.bonds:
        degree[bond.a] += 1
        degree[bond.b] += 1
    out = []
    for idx, atom in enumerate(molecule.atoms):
        out.append(
            hash_fields(
                (
                    atom.element,
                    degree[idx],
                    atom.total_h,
                    atom.formal_charge,
                    int(atom.in_ring),
                    int(atom.aromatic),
                )
            )
        )
    return out


def _bond_code(order: BondOrder) -> int:
    # Aromatic bonds keep their own code (4) rather than mapping onto 1 or 2.
    return int(order)


def morgan_identifiers(molecule: Molecule, radius: int = 2) -> dict[frozenset, int]:
    """Environment identifiers keyed by the atom set each one covers.

    Every (atom, r) pair for r in 0..radius emits an identifier covering the
    ball of bond-radius r around the atom; environments covering an atom set
    already seen keep only the numerically smallest identifier.
    """
    if radius < 0:
        raise FingerprintError("radius must be >= 0")

    ids = atom_invariants(molecule)
    n = len(ids)
    adjacency: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for bond in molecule.bonds:
        code = _bond_code(bond.order)
        adjacency[bond.a].append((bond.b, code))
        adjacency[bond.b].append((bond.a, code))

    cover = [frozenset((i,)) for i in range(n)]
    best: dict[frozenset, int] = {}

    def consider(atom_set: frozenset, identifier: int) -> None:
        current = best.get(atom_set)
        if current is None or identifier < current:
            best[atom_set] = identifier

    for i in range(n):
        consider(cover[i], ids[i])

    for r in range(1, radius + 1):
        new_ids = []
        new_cover = []
        for i in range(n):
            pairs = sorted((code, ids[j]) for j, code in adjacency[i])
            fields = [r, ids[i]]
            for code, neighbor_id in pairs:
                fields.append(code)
                fields.append(neighbor_id)
            new_ids.append(hash_fields(fields))
            ball = set(cover[i])
            for j, _ in adjacency[i]:
                ball |= cover[j]
            new_cover.append(frozenset(ball))
        ids = new_ids
        cover = new_cover
        for i in range(n):
            consider(cover[i], ids[i])

    return best


def fold(identifiers: Iterable[int], nbits: int, radius: Optional[int] = None) -> BitFingerprint:
    """Fold integer identifiers into an ``nbits``-wide bit vector."""
    if nbits <= 0:
        raise FingerprintError("nbits must be positive")
    bits = np.zeros(nbits, dtype=bool)
    for identifier in identifiers:
        bits[identifier % nbits] = True
    return BitFingerprint(bits=bits, nbits=nbits, radius=radius)


def ecfp(molecule: Molecule, radius: int = 2, nbits: int = 1024) -> BitFingerprint:
    """Folded circular fingerprint of ``molecule``."""
    identifiers = set(morgan_identifiers(molecule, radius).values())
    return fold(identifiers, nbits, radius=radius)


def tanimoto(a: BitFingerprint, b: BitFingerprint) -> float:
    """Tanimoto similarity; 0.0 when both fingerprints are empty."""
    if a.nbits != b.nbits:
        raise LengthMismatch(f"fingerprint widths differ: {a.nbits} vs {b.nbits}")
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(a.bits, b.bits).sum())
    return inter / union


# ---------------------------------------------------------------------------
# Embedding providers
# ---------------------------------------------------------------------------


class EcfpProvider:
    """Embeds SMILES strings as computed fingerprint vectors."""

    kind = "ecfp"

    def __init__(self, radius: int = 2, nbits: int = 1024):
        if radius < 0 or nbits <= 0:
            raise FingerprintError("radius must be >= 0 and nbits positive")
        self.radius = radius
        self.nbits = nbits
        self._cache: dict[str, np.ndarray] = {}

    @property
    def width(self) -> int:
        return self.nbits

    def embed(self, smiles: str) -> np.ndarray:
        """Float {0.0, 1.0} vector of length ``nbits``; parse errors propagate."""
        cached = self._cache.get(smiles)
        if cached is None:
            fp = ecfp(parse(smiles), radius=self.radius, nbits=self.nbits)
            cached = fp.to_floats()
            cached.setflags(write=False)
            self._cache[smiles] = cached
        return cached


class TableProvider:
    """Embeds SMILES strings by lookup in a precomputed table."""

    kind = "table"

    def __init__(self, table: Mapping[str, np.ndarray] | str | Path):
        if isinstance(table, (str, Path)):
            table = load_embedding_table(table)
        if not table:
            raise TableFormatError("embedding table is empty")
        widths = {len(v) for v in table.values()}
        if len(widths) != 1:
            raise TableFormatError(f"inconsistent vector widths: {sorted(widths)}")
        self._width = widths.pop()
        self._rows: dict[str, np.ndarray] = {}
        for key, value in table.items():
            row = np.asarray(value, dtype=np.float64)
            if not np.all(np.isfinite(row)):
                raise TableFormatError(f"non-finite embedding value for {key!r}")
            row.setflags(write=False)
            self._rows[key] = row

    @property
    def width(self) -> int:
        return self._width

    def embed(self, smiles: str) -> np.ndarray:
        try:
            return self._rows[smiles]
        except KeyError:
            raise UnknownSmiles(smiles) from None


def load_embedding_table(path: str | Path) -> dict[str, np.ndarray]:
    """Load a TSV embedding table.

    The header must be ``smiles`` followed by ``v0..v{k-1}``; duplicate
    SMILES keys and non-finite values are rejected.
    """
    path = Path(path)
    rows: dict[str, np.ndarray] = {}
    with path.open(newline="") as handle:
        reader = csv.reader(handle, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise TableFormatError(f"{path}: empty embedding table") from None
        if not header or header[0] != "smiles":
            raise TableFormatError(f"{path}: first column must be 'smiles'")
        k = len(header) - 1
        if k <= 0:
            raise TableFormatError(f"{path}: no value columns")
        expected = [f"v{i}" for i in range(k)]
        if header[1:] != expected:
            raise TableFormatError(f"{path}: value columns must be v0..v{k - 1}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != k + 1:
                raise TableFormatError(f"{path}:{lineno}: expected {k + 1} columns, found {len(row)}")
            key = row[0]
            if key in rows:
                raise TableFormatError(f"{path}:{lineno}: duplicate SMILES key {key!r}")
            try:
                values = np.array([float(x) for x in row[1:]], dtype=np.float64)
            except ValueError as exc:
                raise TableFormatError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(values)):
                raise TableFormatError(f"{path}:{lineno}: non-finite value")
            rows[key] = values
    return rows


def write_embedding_table(path: str | Path, rows: Mapping[str, np.ndarray]) -> None:
    """Write a TSV embedding table readable by :func:`load_embedding_table`."""
    rows = dict(rows)
    if not rows:
        raise TableFormatError("refusing to write an empty embedding table")
    widths = {len(v) for v in rows.values()}
    if len(widths) != 1:
        raise TableFormatError(f"inconsistent vector widths: {sorted(widths)}")
    k = widths.pop()
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(["smiles"] + [f"v{i}" for i in range(k)])
        for key in rows:
            values = np.asarray(rows[key], dtype=np.float64)
            if not np.all(np.isfinite(values)):
                raise TableFormatError(f"non-finite embedding value for {key!r}")
            writer.writerow([key] + [repr(float(x)) for x in values])
