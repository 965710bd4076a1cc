"""Molecule records and the readers that produce them.

Supports a practical SMILES subset, V2000 MOL blocks and the JSON-lines
dataset format.  Chiral tags follow the convention used by most toolkits:
the tag is stated relative to the order in which the atom's bonds appear in
``MoleculeRecord.bonds``, so reordering atoms without reordering bonds keeps
the tag meaningful.
"""

from __future__ import annotations

import enum
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .spectra import PeakSet, SpectrumError, validate_spectrum

log = logging.getLogger(__name__)

ELEMENTS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I"
).split()
ATOMIC_NUMBER = {sym: z for z, sym in enumerate(ELEMENTS, start=1)}

ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("se", "as", "b", "c", "n", "o", "p", "s")
DEFAULT_VALENCE = {"B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5),
                   "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,)}
AROMATIC_VALENCE = {"B": 2, "C": 3, "N": 2, "O": 2, "P": 2, "S": 2}


class ParseError(ValueError):
    """Raised for malformed molecule text; carries a line number or character offset."""

    def __init__(self, message: str, *, line: Optional[int] = None, offset: Optional[int] = None):
        self.line = line
        self.offset = offset
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message}, {', '.join(where)}" if where else message)
        self.message = message


class ChiralTag(str, enum.Enum):
    NONE = "none"
    CLOCKWISE = "clockwise"
    COUNTERCLOCKWISE = "counterclockwise"

    def flipped(self) -> "ChiralTag":
        if self is ChiralTag.CLOCKWISE:
            return ChiralTag.COUNTERCLOCKWISE
        if self is ChiralTag.COUNTERCLOCKWISE:
            return ChiralTag.CLOCKWISE
        return self


class BondOrder(str, enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"
    TRIPLE = "triple"
    AROMATIC = "aromatic"


BOND_VALENCE = {BondOrder.SINGLE: 1, BondOrder.DOUBLE: 2, BondOrder.TRIPLE: 3, BondOrder.AROMATIC: 1}
SMILES_BOND = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}
MOL_BOND = {1: BondOrder.SINGLE, 2: BondOrder.DOUBLE, 3: BondOrder.TRIPLE, 4: BondOrder.AROMATIC}


@dataclass(frozen=True)
class Atom:
    element: str
    atomic_number: int
    formal_charge: int = 0
    chiral_tag: ChiralTag = ChiralTag.NONE
    coords: Optional[tuple[float, float, float]] = None
    aromatic: bool = False


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: BondOrder = BondOrder.SINGLE

    def other(self, k: int) -> int:
        return self.j if k == self.i else self.i


@dataclass(frozen=True)
class MoleculeRecord:
    id: str
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    source_smiles: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "bonds", tuple(self.bonds))
        self.validate()

    def validate(self) -> None:
        n = len(self.atoms)
        seen = set()
        for b in self.bonds:
            if not (0 <= b.i < n and 0 <= b.j < n):
                raise ValueError(f"bond ({b.i}, {b.j}) references a missing atom")
            if b.i == b.j:
                raise ValueError(f"self bond on atom {b.i}")
            key = frozenset((b.i, b.j))
            if key in seen:
                raise ValueError(f"duplicate bond ({b.i}, {b.j})")
            seen.add(key)
        with_coords = sum(a.coords is not None for a in self.atoms)
        if with_coords not in (0, n):
            raise ValueError("either all atoms or no atoms carry coordinates")
        degree = self.degrees()
        for k, a in enumerate(self.atoms):
            if a.chiral_tag is not ChiralTag.NONE and degree[k] < 3:
                raise ValueError(f"chiral atom {k} has fewer than 3 neighbours")

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def has_coords(self) -> bool:
        return bool(self.atoms) and self.atoms[0].coords is not None

    def coords(self) -> np.ndarray:
        if not self.has_coords:
            raise ValueError(f"molecule {self.id!r} has no coordinates")
        return np.array([a.coords for a in self.atoms], dtype=np.float64)

    def with_coords(self, xyz) -> "MoleculeRecord":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(len(self.atoms), 3)
        atoms = tuple(replace(a, coords=tuple(float(c) for c in row)) for a, row in zip(self.atoms, xyz))
        return replace(self, atoms=atoms)

    def without_coords(self) -> "MoleculeRecord":
        return replace(self, atoms=tuple(replace(a, coords=None) for a in self.atoms))

    def degrees(self) -> list[int]:
        deg = [0] * len(self.atoms)
        for b in self.bonds:
            deg[b.i] += 1
            deg[b.j] += 1
        return deg

    def neighbors(self, k: int) -> list[int]:
        """Neighbours of atom ``k`` in bond-list order (the chiral-tag reference order)."""
        return [b.other(k) for b in self.bonds if k in (b.i, b.j)]

    def permuted(self, perm: Sequence[int]) -> "MoleculeRecord":
        """Relabel atoms so that old atom ``k`` becomes new atom ``perm[k]``.

        Bond-list order is kept, so chiral tags keep their meaning.
        """
        n = len(self.atoms)
        if sorted(perm) != list(range(n)):
            raise ValueError("not a permutation")
        atoms: list[Optional[Atom]] = [None] * n
        for old, new in enumerate(perm):
            atoms[new] = self.atoms[old]
        bonds = tuple(Bond(perm[b.i], perm[b.j], b.order) for b in self.bonds)
        return replace(self, atoms=tuple(atoms), bonds=bonds)

    def disjoint_union(self, other: "MoleculeRecord", id: Optional[str] = None) -> "MoleculeRecord":
        off = len(self.atoms)
        bonds = self.bonds + tuple(Bond(b.i + off, b.j + off, b.order) for b in other.bonds)
        return MoleculeRecord(id or f"{self.id}+{other.id}", self.atoms + other.atoms, bonds)


def _perm_is_odd(seq: Sequence[int], ref: Sequence[int]) -> bool:
    pos = {v: k for k, v in enumerate(ref)}
    p = [pos[v] for v in seq]
    seen = [False] * len(p)
    swaps = 0
    for start in range(len(p)):
        length = 0
        k = start
        while not seen[k]:
            seen[k] = True
            k = p[k]
            length += 1
        if length:
            swaps += length - 1
    return swaps % 2 == 1


def _tag_relative_to(tag: ChiralTag, order: Sequence[int], record_order: Sequence[int]) -> ChiralTag:
    """Re-express a tag given w.r.t. ``order`` as one w.r.t. ``record_order``."""
    if tag is ChiralTag.NONE:
        return tag
    return tag.flipped() if _perm_is_odd(order, record_order) else tag


# --------------------------------------------------------------------- SMILES


@dataclass
class _PAtom:
    element: str
    aromatic: bool
    bracket: bool
    charge: int = 0
    hcount: int = 0
    chiral: ChiralTag = ChiralTag.NONE
    slots: list = field(default_factory=list)
    offset: int = 0


def _read_ring_number(s: str, i: int) -> tuple[int, int]:
    if s[i] == "%":
        digits = s[i + 1:i + 3]
        if len(digits) != 2 or not digits.isdigit():
            raise ParseError("malformed %nn ring bond", offset=i)
        return int(digits), i + 3
    return int(s[i]), i + 1


def _parse_bracket(s: str, i: int) -> tuple[_PAtom, int]:
    start = i
    end = s.find("]", i)
    if end < 0:
        raise ParseError("unclosed bracket atom", offset=start)
    body = s[i + 1:end]
    k = 0
    if body[:1].isdigit():
        raise ParseError("isotopes are not supported", offset=start + 1)
    element = aromatic = None
    for sym in AROMATIC_BRACKET:
        if body.startswith(sym):
            element, aromatic = sym.capitalize(), True
            k = len(sym)
            break
    if element is None:
        two, one = body[:2], body[:1]
        if len(two) == 2 and two[1].islower() and two in ATOMIC_NUMBER:
            element, k = two, 2
        elif one in ATOMIC_NUMBER:
            element, k = one, 1
        else:
            raise ParseError(f"unsupported element in [{body}]", offset=start + 1)
        aromatic = False
    atom = _PAtom(element, aromatic, bracket=True, offset=start)
    if body[k:k + 2] == "@@":
        atom.chiral, k = ChiralTag.CLOCKWISE, k + 2
    elif body[k:k + 1] == "@":
        atom.chiral, k = ChiralTag.COUNTERCLOCKWISE, k + 1
    if body[k:k + 1] == "H":
        k += 1
        if body[k:k + 1].isdigit():
            atom.hcount = int(body[k])
            k += 1
        else:
            atom.hcount = 1
    if body[k:k + 1] in ("+", "-"):
        sign = 1 if body[k] == "+" else -1
        k += 1
        if body[k:k + 1].isdigit():
            mag = int(body[k])
            k += 1
        else:
            mag = 1
            while body[k:k + 1] == body[k - 1]:
                mag += 1
                k += 1
        atom.charge = sign * mag
    if k != len(body):
        raise ParseError(f"unexpected {body[k]!r} in bracket atom", offset=start + 1 + k)
    return atom, end + 1


def parse_smiles(text: str, id: Optional[str] = None) -> MoleculeRecord:
    """Parse a SMILES string into a connectivity-only record with explicit hydrogens."""
    s = text.strip()
    if not s:
        raise ParseError("empty SMILES", offset=0)
    atoms: list[_PAtom] = []
    bonds: list[list] = []  # [i, j, order]
    bonded: set[frozenset] = set()
    stack: list[Optional[int]] = []
    rings: dict[int, tuple[int, Optional[BondOrder], int, int]] = {}
    prev: Optional[int] = None
    pending: Optional[BondOrder] = None
    pending_at = 0

    def add_bond(a: int, b: int, order: Optional[BondOrder], at: int) -> None:
        if a == b:
            raise ParseError("ring bond to itself", offset=at)
        key = frozenset((a, b))
        if key in bonded:
            raise ParseError("duplicate bond", offset=at)
        if order is None:
            both = atoms[a].aromatic and atoms[b].aromatic
            order = BondOrder.AROMATIC if both else BondOrder.SINGLE
        bonded.add(key)
        bonds.append([a, b, order])

    i = 0
    while i < len(s):
        c = s[i]
        if c == "(":
            if prev is None:
                raise ParseError("branch without a preceding atom", offset=i)
            stack.append(prev)
            i += 1
        elif c == ")":
            if not stack:
                raise ParseError("unbalanced parentheses", offset=i)
            if pending is not None:
                raise ParseError("dangling bond symbol", offset=pending_at)
            prev = stack.pop()
            i += 1
        elif c in SMILES_BOND:
            if pending is not None or prev is None:
                raise ParseError(f"unexpected bond symbol {c!r}", offset=i)
            pending, pending_at = SMILES_BOND[c], i
            i += 1
        elif c == ".":
            if pending is not None or prev is None:
                raise ParseError("unexpected '.'", offset=i)
            prev = None
            i += 1
        elif c.isdigit() or c == "%":
            if prev is None:
                raise ParseError("ring bond without a preceding atom", offset=i)
            num, nxt = _read_ring_number(s, i)
            if num in rings:
                other, order, _, slot = rings.pop(num)
                if pending is not None and order is not None and pending != order:
                    raise ParseError(f"conflicting bond orders on ring bond {num}", offset=i)
                add_bond(other, prev, pending or order, i)
                atoms[other].slots[slot] = prev
                atoms[prev].slots.append(other)
            else:
                rings[num] = (prev, pending, i, len(atoms[prev].slots))
                atoms[prev].slots.append(None)
            pending = None
            i = nxt
        else:
            if c == "[":
                atom, nxt = _parse_bracket(s, i)
            else:
                atom = None
                for sym in ORGANIC_SUBSET:
                    if s.startswith(sym, i):
                        atom, nxt = _PAtom(sym, False, bracket=False, offset=i), i + len(sym)
                        break
                if atom is None and c in AROMATIC_ORGANIC:
                    atom, nxt = _PAtom(c.upper(), True, bracket=False, offset=i), i + 1
                if atom is None:
                    raise ParseError(f"unsupported character {c!r}", offset=i)
            idx = len(atoms)
            atoms.append(atom)
            if prev is not None:
                add_bond(prev, idx, pending, i)
                atoms[prev].slots.append(idx)
                atom.slots.append(prev)
            pending = None
            atom.slots.extend(("H",) * atom.hcount)
            prev = idx
            i = nxt
    if stack:
        raise ParseError("unbalanced parentheses", offset=len(s))
    if rings:
        num = min(rings, key=lambda n: rings[n][2])
        raise ParseError(f"unmatched ring bond {num}", offset=rings[num][2])
    if pending is not None:
        raise ParseError("dangling bond symbol", offset=pending_at)

    # implicit hydrogens for organic-subset atoms
    bond_sum = [0] * len(atoms)
    for a, b, order in bonds:
        bond_sum[a] += BOND_VALENCE[order]
        bond_sum[b] += BOND_VALENCE[order]
    for k, a in enumerate(atoms):
        if a.bracket:
            continue
        if a.aromatic:
            a.hcount = max(0, AROMATIC_VALENCE[a.element] - bond_sum[k])
        else:
            allowed = [v for v in DEFAULT_VALENCE[a.element] if v >= bond_sum[k]]
            a.hcount = allowed[0] - bond_sum[k] if allowed else 0

    out_atoms = [Atom(a.element, ATOMIC_NUMBER[a.element], a.charge, a.chiral, None, a.aromatic)
                 for a in atoms]
    out_bonds = [Bond(a, b, o) for a, b, o in bonds]
    for k, a in enumerate(atoms):
        h_slots = iter(range(len(a.slots)))
        for _ in range(a.hcount):
            h = len(out_atoms)
            out_atoms.append(Atom("H", 1))
            out_bonds.append(Bond(k, h, BondOrder.SINGLE))
            if a.bracket:
                slot = next(j for j in h_slots if a.slots[j] == "H")
                a.slots[slot] = h
            else:
                a.slots.append(h)

    for k, a in enumerate(atoms):
        if a.chiral is ChiralTag.NONE:
            continue
        if len(a.slots) < 3:
            raise ParseError("chiral atom with fewer than 3 neighbours", offset=a.offset)
        record_order = [b.other(k) for b in out_bonds if k in (b.i, b.j)]
        tag = _tag_relative_to(a.chiral, a.slots, record_order)
        out_atoms[k] = replace(out_atoms[k], chiral_tag=tag)

    return MoleculeRecord(id if id is not None else s, tuple(out_atoms), tuple(out_bonds), source_smiles=s)


_WRITE_BOND = {BondOrder.SINGLE: "-", BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ":"}


def write_smiles(record: MoleculeRecord, return_order: bool = False):
    """Write every atom (hydrogens included) as an explicit bracket atom.

    With ``return_order=True`` also returns the record atom index of each
    atom in the written string, which is the atom order ``parse_smiles``
    gives back.
    """
    n = len(record.atoms)
    adj: list[list[tuple[int, Bond]]] = [[] for _ in range(n)]
    for b in record.bonds:
        adj[b.i].append((b.j, b))
        adj[b.j].append((b.i, b))

    visited = [False] * n
    parent = [-1] * n
    children: list[list[int]] = [[] for _ in range(n)]
    ring_edges: list[tuple[int, int, Bond]] = []
    ring_bonds: set[int] = set()
    preorder: list[int] = []
    tree_bonds: set[int] = set()
    roots = []
    for root in range(n):
        if visited[root]:
            continue
        roots.append(root)
        stack = [(root, iter(adj[root]))]
        visited[root] = True
        preorder.append(root)
        while stack:
            u, it = stack[-1]
            for v, b in it:
                if id(b) in tree_bonds or v == parent[u]:
                    continue
                if visited[v]:
                    if id(b) not in ring_bonds:
                        ring_bonds.add(id(b))
                        ring_edges.append((v, u, b))  # v opens, u closes
                    continue
                visited[v] = True
                parent[v] = u
                tree_bonds.add(id(b))
                children[u].append(v)
                preorder.append(v)
                stack.append((v, iter(adj[v])))
                break
            else:
                stack.pop()

    # ring digits, allocated in emission (preorder) order
    rank = {u: k for k, u in enumerate(preorder)}
    events: list[list[tuple[int, int, Bond]]] = [[] for _ in range(n)]  # (partner, edge idx, bond)
    for e, (opener, closer, b) in enumerate(ring_edges):
        events[opener].append((closer, e, b))
        events[closer].append((opener, e, b))
    digit_of: dict[int, int] = {}
    free: list[int] = []
    next_digit = 1
    ring_tokens: list[list[tuple[int, str]]] = [[] for _ in range(n)]
    for u in preorder:
        for partner, e, b in sorted(events[u], key=lambda t: (rank[t[0]] > rank[u], t[1])):
            if rank[partner] < rank[u]:
                d = digit_of.pop(e)
                ring_tokens[u].append((partner, _WRITE_BOND[b.order] + (f"%{d:02d}" if d > 9 else str(d))))
                free.append(d)
                free.sort()
            else:
                if free:
                    d = free.pop(0)
                else:
                    d, next_digit = next_digit, next_digit + 1
                digit_of[e] = d
                ring_tokens[u].append((partner, _WRITE_BOND[b.order] + (f"%{d:02d}" if d > 9 else str(d))))

    bond_between = {frozenset((b.i, b.j)): b for b in record.bonds}

    def atom_token(u: int) -> str:
        a = record.atoms[u]
        sym = a.element.lower() if a.aromatic and a.element.lower() in AROMATIC_BRACKET else a.element
        chir = ""
        if a.chiral_tag is not ChiralTag.NONE:
            out_order = ([parent[u]] if parent[u] >= 0 else []) + [p for p, _ in ring_tokens[u]] + children[u]
            tag = _tag_relative_to(a.chiral_tag, record.neighbors(u), out_order)
            chir = "@" if tag is ChiralTag.COUNTERCLOCKWISE else "@@"
        q = a.formal_charge
        charge = "" if q == 0 else ("+" if q > 0 else "-") + (str(abs(q)) if abs(q) > 1 else "")
        return f"[{sym}{chir}{charge}]"

    out: list[str] = []
    order: list[int] = []

    def emit(u: int) -> None:
        order.append(u)
        out.append(atom_token(u))
        out.extend(tok for _, tok in ring_tokens[u])
        kids = children[u]
        for k, v in enumerate(kids):
            bond = _WRITE_BOND[bond_between[frozenset((u, v))].order]
            if k < len(kids) - 1:
                out.append("(" + bond)
                emit(v)
                out.append(")")
            else:
                out.append(bond)
                emit(v)

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * n + 100))
    try:
        for k, root in enumerate(roots):
            if k:
                out.append(".")
            emit(root)
    finally:
        sys.setrecursionlimit(limit)
    smiles = "".join(out)
    return (smiles, order) if return_order else smiles


# ---------------------------------------------------------------------- MOL

_MOL_CHARGE = {0: 0, 1: 3, 2: 2, 3: 1, 4: 0, 5: -1, 6: -2, 7: -3}
_MOL_CHARGE_INV = {3: 1, 2: 2, 1: 3, 0: 0, -1: 5, -2: 6, -3: 7}


def _int_field(line: str, a: int, b: int, lineno: int, what: str) -> int:
    try:
        return int(line[a:b])
    except ValueError:
        raise ParseError(f"malformed {what}", line=lineno) from None


def parse_molblock(text: str, id: Optional[str] = None) -> MoleculeRecord:
    """Parse a V2000 MOL block.  Coordinates are kept verbatim (Angstrom)."""
    lines = text.splitlines()
    if len(lines) < 4:
        raise ParseError("missing counts line", line=len(lines) + 1)
    counts = lines[3]
    if "V3000" in counts:
        raise ParseError("V3000 blocks are not supported", line=4)
    n_atoms = _int_field(counts, 0, 3, 4, "counts line")
    n_bonds = _int_field(counts, 3, 6, 4, "counts line")
    if n_atoms < 0 or n_bonds < 0:
        raise ParseError("malformed counts line", line=4)
    if len(lines) < 4 + n_atoms + n_bonds:
        raise ParseError("block ends before the declared atoms and bonds", line=len(lines) + 1)

    elements, charges, parities, xyz = [], [], [], []
    for k in range(n_atoms):
        lineno = 5 + k
        parts = lines[4 + k].split()
        if len(parts) < 4:
            raise ParseError("malformed atom line", line=lineno)
        try:
            xyz.append(tuple(float(v) for v in parts[:3]))
        except ValueError:
            raise ParseError("malformed atom coordinates", line=lineno) from None
        sym = parts[3]
        if sym not in ATOMIC_NUMBER:
            raise ParseError(f"unknown element symbol {sym!r}", line=lineno)
        elements.append(sym)
        try:
            code = int(parts[5]) if len(parts) > 5 else 0
            parity = int(parts[6]) if len(parts) > 6 else 0
        except ValueError:
            raise ParseError("malformed atom line", line=lineno) from None
        if code not in _MOL_CHARGE:
            raise ParseError(f"invalid charge code {code}", line=lineno)
        charges.append(_MOL_CHARGE[code])
        parities.append(parity)

    bonds: list[Bond] = []
    seen = set()
    for k in range(n_bonds):
        lineno = 5 + n_atoms + k
        line = lines[4 + n_atoms + k]
        try:
            i, j, t = int(line[0:3]), int(line[3:6]), int(line[6:9])
        except ValueError:
            parts = line.split()
            try:
                i, j, t = (int(v) for v in parts[:3])
            except ValueError:
                raise ParseError("malformed bond line", line=lineno) from None
        if not (1 <= i <= n_atoms and 1 <= j <= n_atoms):
            raise ParseError("atom index out of range", line=lineno)
        if i == j:
            raise ParseError("bond from an atom to itself", line=lineno)
        if t not in MOL_BOND:
            raise ParseError(f"unsupported bond type {t}", line=lineno)
        key = frozenset((i, j))
        if key in seen:
            raise ParseError("duplicate bond", line=lineno)
        seen.add(key)
        bonds.append(Bond(i - 1, j - 1, MOL_BOND[t]))

    ended = False
    chg_seen = False
    for k in range(4 + n_atoms + n_bonds, len(lines)):
        line, lineno = lines[k], k + 1
        if line.startswith("M  END"):
            ended = True
            break
        if line.startswith("M  CHG"):
            if not chg_seen:
                charges = [0] * n_atoms
                chg_seen = True
            parts = line.split()
            try:
                cnt = int(parts[2])
                pairs = [(int(parts[3 + 2 * m]), int(parts[4 + 2 * m])) for m in range(cnt)]
            except (ValueError, IndexError):
                raise ParseError("malformed M  CHG line", line=lineno) from None
            for a, q in pairs:
                if not 1 <= a <= n_atoms:
                    raise ParseError("atom index out of range", line=lineno)
                charges[a - 1] = q
    if not ended:
        raise ParseError("missing 'M  END'", line=len(lines) + 1)

    aromatic = [False] * n_atoms
    for b in bonds:
        if b.order is BondOrder.AROMATIC:
            aromatic[b.i] = aromatic[b.j] = True
    atoms = [Atom(e, ATOMIC_NUMBER[e], q, ChiralTag.NONE, c, ar)
             for e, q, c, ar in zip(elements, charges, xyz, aromatic)]
    # parity 1: with the highest-numbered neighbour pointing away, the others run clockwise
    # in increasing index order; equivalent to '@@' over ascending neighbour indices
    for k, parity in enumerate(parities):
        if parity not in (1, 2):
            continue
        nbrs = [b.other(k) for b in bonds if k in (b.i, b.j)]
        if len(nbrs) < 3:
            raise ParseError("stereo parity on an atom with fewer than 3 neighbours", line=5 + k)
        tag = ChiralTag.CLOCKWISE if parity == 1 else ChiralTag.COUNTERCLOCKWISE
        atoms[k] = replace(atoms[k], chiral_tag=_tag_relative_to(tag, sorted(nbrs), nbrs))
    name = id if id is not None else lines[0].strip()
    try:
        return MoleculeRecord(name, tuple(atoms), tuple(bonds))
    except ValueError as exc:
        raise ParseError(str(exc), line=4) from None


def write_molblock(record: MoleculeRecord) -> str:
    """Serialize a record with coordinates as a V2000 MOL block."""
    xyz = record.coords()
    code = {BondOrder.SINGLE: 1, BondOrder.DOUBLE: 2, BondOrder.TRIPLE: 3, BondOrder.AROMATIC: 4}
    out = [record.id, "  ecd-peakformer 3D", "",
           f"{len(record.atoms):3d}{len(record.bonds):3d}  0  0  0  0  0  0  0  0999 V2000"]
    for k, (a, (x, y, z)) in enumerate(zip(record.atoms, xyz)):
        parity = 0
        if a.chiral_tag is not ChiralTag.NONE:
            nbrs = record.neighbors(k)
            tag = _tag_relative_to(a.chiral_tag, nbrs, sorted(nbrs))
            parity = 1 if tag is ChiralTag.CLOCKWISE else 2
        q = _MOL_CHARGE_INV.get(a.formal_charge, 0)
        out.append(f"{x:10.4f}{y:10.4f}{z:10.4f} {a.element:<3} 0{q:3d}{parity:3d}  0  0  0  0  0  0  0  0  0")
    for b in record.bonds:
        out.append(f"{b.i + 1:3d}{b.j + 1:3d}{code[b.order]:3d}  0")
    charged = [(k + 1, a.formal_charge) for k, a in enumerate(record.atoms) if a.formal_charge]
    for start in range(0, len(charged), 8):
        chunk = charged[start:start + 8]
        out.append(f"M  CHG{len(chunk):3d}" + "".join(f"{k:4d}{q:4d}" for k, q in chunk))
    out.append("M  END")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------------ dataset


class DatasetError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class DatasetEntry:
    record: MoleculeRecord
    spectrum: Optional[np.ndarray] = None
    peaks: Optional[PeakSet] = None
    smiles: Optional[str] = None
    molblock: Optional[str] = None

    @property
    def id(self) -> str:
        return self.record.id

    def to_json(self) -> dict:
        d: dict = {"id": self.record.id}
        if self.smiles is not None:
            d["smiles"] = self.smiles
        if self.molblock is not None:
            d["molblock"] = self.molblock
        if self.spectrum is not None:
            d["spectrum"] = [float(v) for v in self.spectrum]
        if self.peaks is not None:
            d["peaks"] = self.peaks.to_list()
        return d

    def to_json_line(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False)


def entry_from_json(obj: dict) -> DatasetEntry:
    if not isinstance(obj, dict):
        raise DatasetError("line is not a JSON object")
    mol_id = obj.get("id")
    if not isinstance(mol_id, str) or not mol_id:
        raise DatasetError("missing id")
    smiles, molblock = obj.get("smiles"), obj.get("molblock")
    if molblock is not None:
        record = parse_molblock(molblock, id=mol_id)
    elif smiles is not None:
        record = parse_smiles(smiles, id=mol_id)
    else:
        raise DatasetError("neither smiles nor molblock given")
    spectrum = validate_spectrum(obj["spectrum"]) if obj.get("spectrum") is not None else None
    peaks = PeakSet.from_list(obj["peaks"]) if obj.get("peaks") is not None else None
    return DatasetEntry(record, spectrum, peaks, smiles, molblock)


class DatasetReader:
    """Iterate a JSON-lines dataset.

    In strict mode the first bad line raises :class:`DatasetError`; otherwise
    bad lines are skipped and listed in ``errors`` as ``(line, message)``.
    """

    def __init__(self, path, strict: bool = True):
        self.path = Path(path)
        self.strict = strict
        self.errors: list[tuple[int, str]] = []
        self.n_read = 0

    def __iter__(self) -> Iterator[DatasetEntry]:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    try:
                        obj = json.loads(raw)
                    except json.JSONDecodeError as exc:
                        raise DatasetError(f"invalid JSON ({exc.msg})") from None
                    entry = entry_from_json(obj)
                except (DatasetError, ParseError, SpectrumError) as exc:
                    msg = getattr(exc, "message", str(exc))
                    if isinstance(exc, ParseError):
                        msg = str(exc)
                    if self.strict:
                        raise DatasetError(msg, line=lineno) from exc
                    log.warning("skipping line %d: %s", lineno, msg)
                    self.errors.append((lineno, msg))
                    continue
                self.n_read += 1
                yield entry


def read_dataset(path, strict: bool = True) -> DatasetReader:
    return DatasetReader(path, strict=strict)


def write_dataset(entries, path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(e.to_json_line() + "\n")
            n += 1
    return n


def parse_file(path) -> MoleculeRecord:
    """Parse a ``.mol`` file or a one-molecule ``.smi`` file.

    SMILES errors are re-raised with the line number added to the offset.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".mol", ".sdf"):
        return parse_molblock(text, id=path.stem)
    lines = [(k, ln.strip()) for k, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not lines:
        raise ParseError("no SMILES found", line=1)
    if len(lines) > 1:
        raise ParseError("expected one SMILES per file", line=lines[1][0])
    lineno, smi = lines[0]
    smi = smi.split()[0]
    try:
        return parse_smiles(smi, id=path.stem)
    except ParseError as exc:
        raise ParseError(exc.message, line=lineno, offset=exc.offset) from None
