"""SMILES parsing into annotated molecular graphs.

The dialect covered here is the pragmatic subset found in database-issued
canonical SMILES: organic-subset atoms, aromatic lowercase atoms, bracket
atoms with isotope / explicit-hydrogen / charge fields, branches, ring
closures (digits 1-9 and two-digit %nn), and dot-separated fragments.
Stereo markers (``/ \\ @ @@``) are accepted and discarded. Aromaticity is
taken from lowercase notation exactly as written; there is no perception
pass, no kekulization, and no canonical output form.

Every syntax problem raises a subclass of :class:`SmilesError`, so callers
can treat "string in, molecule or structured error out" as the whole
contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterator, Optional, Union

__all__ = [
    "SmilesError",
    "EmptyInput",
    "UnknownToken",
    "UnterminatedBracket",
    "UnclosedRing",
    "UnbalancedParenthesis",
    "InvalidCharge",
    "BondOrder",
    "Atom",
    "Bond",
    "Molecule",
    "tokenize",
    "parse",
    "assign_implicit_hydrogens",
    "write_smiles",
]


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class SmilesError(ValueError):
    """Base class for every SMILES syntax or structure error."""

    def __init__(self, message: str, position: Optional[int] = None):
        self.position = position
        if position is not None:
            message = f"{message} (position {position})"
        super().__init__(message)


class EmptyInput(SmilesError):
    """Raised for an empty or whitespace-only input string."""


class UnknownToken(SmilesError):
    """Raised when a character cannot start any supported token."""


class UnterminatedBracket(SmilesError):
    """Raised when a ``[`` has no matching ``]``."""


class UnclosedRing(SmilesError):
    """Raised when a ring-closure index is opened but never closed."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"ring closure {index} was never closed")


class UnbalancedParenthesis(SmilesError):
    """Raised when branch parentheses do not balance."""


class InvalidCharge(SmilesError):
    """Raised for malformed charge fields inside a bracket atom."""


# ---------------------------------------------------------------------------
# Elements
# ---------------------------------------------------------------------------

ATOMIC_NUMBERS: dict[str, int] = {
    "H": 1, "He": 2, "Li": 3, "Be": 4, "B": 5, "C": 6, "N": 7, "O": 8,
    "F": 9, "Ne": 10, "Na": 11, "Mg": 12, "Al": 13, "Si": 14, "P": 15,
    "S": 16, "Cl": 17, "Ar": 18, "K": 19, "Ca": 20, "Sc": 21, "Ti": 22,
    "V": 23, "Cr": 24, "Mn": 25, "Fe": 26, "Co": 27, "Ni": 28, "Cu": 29,
    "Zn": 30, "Ga": 31, "Ge": 32, "As": 33, "Se": 34, "Br": 35, "Kr": 36,
    "Rb": 37, "Sr": 38, "Y": 39, "Zr": 40, "Nb": 41, "Mo": 42, "Tc": 43,
    "Ru": 44, "Rh": 45, "Pd": 46, "Ag": 47, "Cd": 48, "In": 49, "Sn": 50,
    "Sb": 51, "Te": 52, "I": 53, "Xe": 54, "Cs": 55, "Ba": 56, "La": 57,
    "Ce": 58, "Pr": 59, "Nd": 60, "Pm": 61, "Sm": 62, "Eu": 63, "Gd": 64,
    "Tb": 65, "Dy": 66, "Ho": 67, "Er": 68, "Tm": 69, "Yb": 70, "Lu": 71,
    "Hf": 72, "Ta": 73, "W": 74, "Re": 75, "Os": 76, "Ir": 77, "Pt": 78,
    "Au": 79, "Hg": 80, "Tl": 81, "Pb": 82, "Bi": 83, "Po": 84, "At": 85,
    "Rn": 86, "Fr": 87, "Ra": 88, "Ac": 89, "Th": 90, "Pa": 91, "U": 92,
    "Np": 93, "Pu": 94, "Am": 95, "Cm": 96, "Bk": 97, "Cf": 98, "Es": 99,
    "Fm": 100, "Md": 101, "No": 102, "Lr": 103, "Rf": 104, "Db": 105,
    "Sg": 106, "Bh": 107, "Hs": 108, "Mt": 109, "Ds": 110, "Rg": 111,
    "Cn": 112, "Nh": 113, "Fl": 114, "Mc": 115, "Lv": 116, "Ts": 117,
    "Og": 118,
}

ELEMENT_SYMBOLS: dict[int, str] = {v: k for k, v in ATOMIC_NUMBERS.items()}

# Atoms that may be written bare, with the valence used to infer hydrogens.
DEFAULT_VALENCE: dict[int, int] = {
    5: 3,   # B
    6: 4,   # C
    7: 3,   # N
    8: 2,   # O
    9: 1,   # F
    15: 3,  # P
    16: 2,  # S
    17: 1,  # Cl
    35: 1,  # Br
    53: 1,  # I
}

_ORGANIC_TWO = ("Cl", "Br")
_ORGANIC_ONE = set("BCNOPSFI")
_AROMATIC_ORGANIC = set("bcnops")
_BOND_SYMBOLS = set("-=#:/\\")


class BondOrder(IntEnum):
    """Bond orders; AROMATIC carries its own code rather than 1 or 2."""

    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> float:
        """Contribution of one bond of this order to an atom's valence."""
        return 1.5 if self is BondOrder.AROMATIC else float(int(self))


# ---------------------------------------------------------------------------
# Graph types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    """One heavy atom (or bracket hydrogen) in the molecular graph.

    ``explicit_h`` is None for atoms written bare; for bracket atoms it is
    authoritative and ``implicit_h`` stays 0.
    """

    element: int
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h: Optional[int] = None
    implicit_h: int = 0
    isotope: Optional[int] = None
    in_ring: bool = False

    @property
    def symbol(self) -> str:
        return ELEMENT_SYMBOLS[self.element]

    @property
    def total_h(self) -> int:
        """Hydrogen count: explicit when bracketed, implicit otherwise."""
        return self.explicit_h if self.explicit_h is not None else self.implicit_h


@dataclass(frozen=True)
class Bond:
    """Undirected bond between atom indices ``a`` and ``b`` (a != b)."""

    a: int
    b: int
    order: BondOrder

    def other(self, idx: int) -> int:
        return self.b if idx == self.a else self.a


@dataclass
class Molecule:
    """A parsed molecular graph; dot fragments share one Molecule."""

    atoms: list[Atom]
    bonds: list[Bond]
    source: str = ""

    def neighbors(self, idx: int) -> list[tuple[int, Bond]]:
        out = []
        for bond in self.bonds:
            if bond.a == idx:
                out.append((bond.b, bond))
            elif bond.b == idx:
                out.append((bond.a, bond))
        return out

    def adjacency(self) -> list[list[tuple[int, Bond]]]:
        adj: list[list[tuple[int, Bond]]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            adj[bond.a].append((bond.b, bond))
            adj[bond.b].append((bond.a, bond))
        return adj

    def heavy_degree(self, idx: int) -> int:
        return sum(1 for b in self.bonds if idx in (b.a, b.b))


# ---------------------------------------------------------------------------
# Tokens
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AtomToken:
    position: int
    element: int
    aromatic: bool
    bracket: bool = False
    isotope: Optional[int] = None
    hcount: Optional[int] = None
    charge: int = 0


@dataclass(frozen=True)
class BondToken:
    position: int
    symbol: str


@dataclass(frozen=True)
class BranchOpenToken:
    position: int


@dataclass(frozen=True)
class BranchCloseToken:
    position: int


@dataclass(frozen=True)
class RingToken:
    position: int
    index: int


@dataclass(frozen=True)
class DotToken:
    position: int


Token = Union[
    AtomToken, BondToken, BranchOpenToken, BranchCloseToken, RingToken, DotToken
]


class _Scanner:
    """Character cursor over the input string."""

    __slots__ = ("text", "pos")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self) -> str:
        ch = self.text[self.pos]
        self.pos += 1
        return ch

    def digits(self) -> str:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        return self.text[start : self.pos]


def _scan_bracket_atom(sc: _Scanner, start: int) -> AtomToken:
    """Scan the inside of a bracket atom; ``sc`` sits just after ``[``."""
    isotope: Optional[int] = None
    digits = sc.digits()
    if digits:
        isotope = int(digits)

    if not sc.peek():
        raise UnterminatedBracket("unterminated bracket atom", start)

    # Element symbol: longest match wins for two-letter symbols.
    element: Optional[int] = None
    aromatic = False
    ch = sc.peek()
    if ch.islower():
        if ch in _AROMATIC_ORGANIC:
            element = ATOMIC_NUMBERS[ch.upper()]
            aromatic = True
            sc.take()
        else:
            raise UnknownToken(f"unknown aromatic element {ch!r}", sc.pos)
    elif ch.isupper():
        two = sc.text[sc.pos : sc.pos + 2]
        if len(two) == 2 and two[1].islower() and two in ATOMIC_NUMBERS:
            element = ATOMIC_NUMBERS[two]
            sc.pos += 2
        elif ch in ATOMIC_NUMBERS:
            element = ATOMIC_NUMBERS[ch]
            sc.take()
        else:
            raise UnknownToken(f"unknown element symbol {ch!r}", sc.pos)
    else:
        raise UnknownToken(f"expected element symbol, found {ch!r}", sc.pos)

    hcount: Optional[int] = None
    charge = 0
    saw_charge = False
    while True:
        ch = sc.peek()
        if ch == "":
            raise UnterminatedBracket("unterminated bracket atom", start)
        if ch == "]":
            sc.take()
            break
        if ch == "@":
            # Chirality markers are accepted and discarded.
            sc.take()
            if sc.peek() == "@":
                sc.take()
            continue
        if ch == "H":
            if hcount is not None:
                raise UnknownToken("duplicate hydrogen count", sc.pos)
            sc.take()
            digits = sc.digits()
            hcount = int(digits) if digits else 1
            continue
        if ch in "+-":
            if saw_charge:
                raise InvalidCharge("more than one charge field", sc.pos)
            saw_charge = True
            sign = 1 if ch == "+" else -1
            sc.take()
            digits = sc.digits()
            if digits:
                charge = sign * int(digits)
            else:
                count = 1
                while sc.peek() == ch:
                    sc.take()
                    count += 1
                if sc.peek().isdigit():
                    raise InvalidCharge("mixed repeated signs and digits", sc.pos)
                charge = sign * count
            if sc.peek() in "+-":
                raise InvalidCharge("conflicting charge signs", sc.pos)
            continue
        raise UnknownToken(f"unsupported bracket field {ch!r}", sc.pos)

    return AtomToken(
        position=start,
        element=element,
        aromatic=aromatic,
        bracket=True,
        isotope=isotope,
        hcount=hcount if hcount is not None else 0,
        charge=charge,
    )


def tokenize(smiles: str) -> list[Token]:
    """Split a SMILES string into tokens.

    Raises:
        EmptyInput: for an empty string.
        UnknownToken: for any character outside the supported subset,
            with the offending position attached.
        UnterminatedBracket: when a bracket atom never closes.
        InvalidCharge: for malformed bracket charges.
    """
    if smiles == "":
        raise EmptyInput("empty SMILES string")

    sc = _Scanner(smiles)
    tokens: list[Token] = []
    while sc.pos < len(sc.text):
        start = sc.pos
        ch = sc.peek()

        two = sc.text[start : start + 2]
        if two in _ORGANIC_TWO:
            sc.pos += 2
            tokens.append(AtomToken(start, ATOMIC_NUMBERS[two], aromatic=False))
        elif ch in _ORGANIC_ONE:
            sc.take()
            tokens.append(AtomToken(start, ATOMIC_NUMBERS[ch], aromatic=False))
        elif ch in _AROMATIC_ORGANIC:
            sc.take()
            tokens.append(AtomToken(start, ATOMIC_NUMBERS[ch.upper()], aromatic=True))
        elif ch == "[":
            sc.take()
            tokens.append(_scan_bracket_atom(sc, start))
        elif ch in _BOND_SYMBOLS:
            sc.take()
            tokens.append(BondToken(start, ch))
        elif ch == "(":
            sc.take()
            tokens.append(BranchOpenToken(start))
        elif ch == ")":
            sc.take()
            tokens.append(BranchCloseToken(start))
        elif ch == ".":
            sc.take()
            tokens.append(DotToken(start))
        elif ch.isdigit() and ch != "0":
            sc.take()
            tokens.append(RingToken(start, int(ch)))
        elif ch == "%":
            sc.take()
            pair = sc.text[sc.pos : sc.pos + 2]
            if len(pair) != 2 or not pair.isdigit():
                raise UnknownToken("% must be followed by two digits", start)
            sc.pos += 2
            tokens.append(RingToken(start, int(pair)))
        else:
            raise UnknownToken(f"unexpected character {ch!r}", start)
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _resolve_order(symbol: Optional[str], a: Atom, b: Atom) -> BondOrder:
    """Bond order from an explicit symbol, or inferred when absent."""
    if symbol is None:
        if a.aromatic and b.aromatic:
            return BondOrder.AROMATIC
        return BondOrder.SINGLE
    if symbol in ("-", "/", "\\"):
        return BondOrder.SINGLE
    if symbol == "=":
        return BondOrder.DOUBLE
    if symbol == "#":
        return BondOrder.TRIPLE
    if symbol == ":":
        return BondOrder.AROMATIC
    raise UnknownToken(f"unsupported bond symbol {symbol!r}")


@dataclass
class _RingOpening:
    atom: int
    bond_symbol: Optional[str]
    position: int


def parse(smiles: str) -> Molecule:
    """Parse a SMILES string into a :class:`Molecule`.

    Dot-separated fragments stay in the returned molecule as disconnected
    components. Implicit hydrogen counts and ring-membership flags are
    filled in before returning.
    """
    tokens = tokenize(smiles)

    atoms: list[Atom] = []
    bonds: list[Bond] = []
    seen_pairs: set[frozenset[int]] = set()
    prev_atom: Optional[int] = None
    pending_bond: Optional[str] = None
    pending_pos = 0
    branch_stack: list[Optional[int]] = []
    open_rings: dict[int, _RingOpening] = {}

    def add_bond(a: int, b: int, symbol: Optional[str], position: int) -> None:
        if a == b:
            raise SmilesError("atom bonded to itself", position)
        pair = frozenset((a, b))
        if pair in seen_pairs:
            raise SmilesError("duplicate bond between the same atoms", position)
        seen_pairs.add(pair)
        bonds.append(Bond(a, b, _resolve_order(symbol, atoms[a], atoms[b])))

    for tok in tokens:
        if isinstance(tok, AtomToken):
            atom = Atom(
                element=tok.element,
                aromatic=tok.aromatic,
                formal_charge=tok.charge,
                explicit_h=tok.hcount if tok.bracket else None,
                isotope=tok.isotope,
            )
            atoms.append(atom)
            idx = len(atoms) - 1
            if prev_atom is not None:
                add_bond(prev_atom, idx, pending_bond, tok.position)
            elif pending_bond is not None:
                raise SmilesError("bond with no preceding atom", pending_pos)
            prev_atom = idx
            pending_bond = None
        elif isinstance(tok, BondToken):
            if pending_bond is not None:
                raise SmilesError("two bond symbols in a row", tok.position)
            if prev_atom is None:
                raise SmilesError("bond with no preceding atom", tok.position)
            pending_bond = tok.symbol
            pending_pos = tok.position
        elif isinstance(tok, RingToken):
            if prev_atom is None:
                raise SmilesError("ring closure before any atom", tok.position)
            opening = open_rings.pop(tok.index, None)
            if opening is None:
                open_rings[tok.index] = _RingOpening(prev_atom, pending_bond, tok.position)
            else:
                if opening.atom == prev_atom:
                    raise SmilesError("ring closure to the same atom", tok.position)
                symbol = pending_bond
                if symbol is None:
                    symbol = opening.bond_symbol
                elif opening.bond_symbol is not None and opening.bond_symbol != symbol:
                    raise SmilesError("conflicting ring-closure bond symbols", tok.position)
                add_bond(opening.atom, prev_atom, symbol, tok.position)
            pending_bond = None
        elif isinstance(tok, BranchOpenToken):
            if prev_atom is None:
                raise SmilesError("branch with no preceding atom", tok.position)
            if pending_bond is not None:
                raise SmilesError("bond symbol before a branch opening", tok.position)
            branch_stack.append(prev_atom)
        elif isinstance(tok, BranchCloseToken):
            if not branch_stack:
                raise UnbalancedParenthesis("unmatched ')'", tok.position)
            if pending_bond is not None:
                raise SmilesError("dangling bond at branch close", tok.position)
            prev_atom = branch_stack.pop()
        elif isinstance(tok, DotToken):
            if pending_bond is not None:
                raise SmilesError("bond symbol before a dot separator", tok.position)
            if branch_stack:
                raise UnbalancedParenthesis("dot inside an open branch", tok.position)
            prev_atom = None

    if pending_bond is not None:
        raise SmilesError("dangling bond at end of input", pending_pos)
    if branch_stack:
        raise UnbalancedParenthesis("unclosed '('", len(smiles))
    if open_rings:
        raise UnclosedRing(sorted(open_rings)[0])

    molecule = Molecule(atoms=atoms, bonds=bonds, source=smiles)
    _mark_rings(molecule)
    return assign_implicit_hydrogens(molecule)


def _mark_rings(molecule: Molecule) -> None:
    """Set ``in_ring`` on atoms that lie on at least one cycle.

    Bridge edges are found with an iterative lowlink walk; every non-bridge
    edge belongs to a cycle, and an atom is in a ring exactly when it has an
    incident non-bridge edge.
    """
    n = len(molecule.atoms)
    if n == 0:
        return
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for ei, bond in enumerate(molecule.bonds):
        adj[bond.a].append((bond.b, ei))
        adj[bond.b].append((bond.a, ei))

    disc = [-1] * n
    low = [0] * n
    is_bridge = [False] * len(molecule.bonds)
    timer = 0

    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack: list[tuple[int, int, Iterator[tuple[int, int]]]] = [
            (root, -1, iter(adj[root]))
        ]
        while stack:
            v, parent_edge, it = stack[-1]
            descended = False
            for w, ei in it:
                if ei == parent_edge:
                    continue
                if disc[w] == -1:
                    disc[w] = low[w] = timer
                    timer += 1
                    stack.append((w, ei, iter(adj[w])))
                    descended = True
                    break
                low[v] = min(low[v], disc[w])
            if descended:
                continue
            stack.pop()
            if stack:
                parent = stack[-1][0]
                low[parent] = min(low[parent], low[v])
                if low[v] > disc[parent]:
                    is_bridge[parent_edge] = True

    ring_atoms = set()
    for ei, bond in enumerate(molecule.bonds):
        if not is_bridge[ei]:
            ring_atoms.add(bond.a)
            ring_atoms.add(bond.b)
    for idx in ring_atoms:
        molecule.atoms[idx] = replace(molecule.atoms[idx], in_ring=True)


def assign_implicit_hydrogens(molecule: Molecule) -> Molecule:
    """Fill in implicit hydrogen counts; idempotent.

    Bare organic-subset atoms get ``max(0, floor(default valence minus the
    sum of bond orders))`` with aromatic bonds counting 1.5. Bracket atoms
    keep ``implicit_h == 0`` because their explicit count is authoritative,
    and elements without a default valence get 0.
    """
    order_sum = [0.0] * len(molecule.atoms)
    for bond in molecule.bonds:
        order_sum[bond.a] += bond.order.valence
        order_sum[bond.b] += bond.order.valence

    new_atoms = []
    for idx, atom in enumerate(molecule.atoms):
        if atom.explicit_h is not None:
            new_atoms.append(replace(atom, implicit_h=0))
            continue
        valence = DEFAULT_VALENCE.get(atom.element)
        if valence is None:
            new_atoms.append(replace(atom, implicit_h=0))
            continue
        deficit = valence - order_sum[idx]
        new_atoms.append(replace(atom, implicit_h=max(0, math.floor(deficit))))
    molecule.atoms = new_atoms
    return molecule


# ---------------------------------------------------------------------------
# Writer (non-canonical; used for randomized respelling)
# ---------------------------------------------------------------------------

_ORGANIC_BARE = {5, 6, 7, 8, 9, 15, 16, 17, 35, 53}
_AROMATIC_ELEMENTS = {5, 6, 7, 8, 15, 16}


def _atom_text(atom: Atom) -> str:
    needs_bracket = (
        atom.explicit_h is not None
        or atom.formal_charge != 0
        or atom.isotope is not None
        or atom.element not in _ORGANIC_BARE
        or (atom.aromatic and atom.element not in _AROMATIC_ELEMENTS)
    )
    symbol = atom.symbol.lower() if atom.aromatic else atom.symbol
    if not needs_bracket:
        return symbol
    parts = ["["]
    if atom.isotope is not None:
        parts.append(str(atom.isotope))
    parts.append(symbol)
    h = atom.explicit_h or 0
    if h == 1:
        parts.append("H")
    elif h > 1:
        parts.append(f"H{h}")
    charge = atom.formal_charge
    if charge == 1:
        parts.append("+")
    elif charge == -1:
        parts.append("-")
    elif charge > 1:
        parts.append(f"+{charge}")
    elif charge < -1:
        parts.append(f"-{-charge}")
    parts.append("]")
    return "".join(parts)


def _bond_text(bond: Bond, a: Atom, b: Atom) -> str:
    if bond.order is BondOrder.SINGLE:
        return "-" if (a.aromatic and b.aromatic) else ""
    if bond.order is BondOrder.AROMATIC:
        return "" if (a.aromatic and b.aromatic) else ":"
    if bond.order is BondOrder.DOUBLE:
        return "="
    return "#"


def write_smiles(molecule: Molecule, rng=None) -> str:
    """Write a (non-canonical) SMILES string for ``molecule``.

    With ``rng`` (a ``random.Random`` or ``numpy.random.Generator`` with a
    ``shuffle`` method plus integer sampling), the traversal root and the
    neighbor visit order are randomized, producing an alternative spelling
    of the same graph. Without it the traversal is deterministic.

    Parsing the result yields a graph isomorphic to the input: same atom
    attribute multiset and same bond multiset under the relabeling.
    """
    n = len(molecule.atoms)
    if n == 0:
        raise EmptyInput("cannot write an empty molecule")

    adj: list[list[tuple[int, Bond]]] = molecule.adjacency()
    if rng is not None:
        for lst in adj:
            _shuffle(rng, lst)

    visited = [False] * n
    fragments: list[str] = []

    for start in range(n):
        if visited[start]:
            continue
        component = _component_atoms(adj, start)
        root = component[_randbelow(rng, len(component))] if rng is not None else component[0]

        # Pass 1: classify edges into tree and ring-closure sets.
        tree_children: dict[int, list[tuple[int, Bond]]] = {i: [] for i in component}
        ring_marks: dict[int, list[tuple[int, Bond, bool]]] = {i: [] for i in component}
        seen = {root}
        consumed: set[int] = set()
        edge_ids = {id(b): k for k, b in enumerate(molecule.bonds)}
        next_digit = 1
        order_stack: list[tuple[int, Iterator[tuple[int, Bond]]]] = [(root, iter(adj[root]))]
        while order_stack:
            v, it = order_stack[-1]
            advanced = False
            for w, bond in it:
                eid = edge_ids[id(bond)]
                if eid in consumed:
                    continue
                if w not in seen:
                    consumed.add(eid)
                    seen.add(w)
                    tree_children[v].append((w, bond))
                    order_stack.append((w, iter(adj[w])))
                    advanced = True
                    break
                # Ring closure: w was reached earlier, so w opens the digit.
                consumed.add(eid)
                if next_digit > 99:
                    raise SmilesError("more than 99 ring closures in one molecule")
                digit = next_digit
                next_digit += 1
                ring_marks[w].append((digit, bond, True))
                ring_marks[v].append((digit, bond, False))
            if not advanced:
                order_stack.pop()

        # Pass 2: emit text along the same tree.
        out: list[str] = []

        def emit(v: int) -> None:
            out.append(_atom_text(molecule.atoms[v]))
            for digit, bond, opener in ring_marks[v]:
                if not opener:
                    other = bond.other(v)
                    out.append(_bond_text(bond, molecule.atoms[v], molecule.atoms[other]))
                out.append(str(digit) if digit <= 9 else f"%{digit:02d}")
            children = tree_children[v]
            for i, (w, bond) in enumerate(children):
                last = i == len(children) - 1
                text = _bond_text(bond, molecule.atoms[v], molecule.atoms[w])
                if not last:
                    out.append("(")
                out.append(text)
                emit(w)
                if not last:
                    out.append(")")

        emit(root)
        for idx in component:
            visited[idx] = True
        fragments.append("".join(out))

    return ".".join(fragments)


def _component_atoms(adj, start: int) -> list[int]:
    seen = {start}
    queue = [start]
    while queue:
        v = queue.pop()
        for w, _ in adj[v]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return sorted(seen)


def _shuffle(rng, items: list) -> None:
    if hasattr(rng, "shuffle"):
        rng.shuffle(items)


def _randbelow(rng, n: int) -> int:
    if hasattr(rng, "integers"):
        return int(rng.integers(0, n))
    return rng.randrange(n)
