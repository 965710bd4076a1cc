"""Atom-bond and bond-angle graphs with categorical features.

Feature vocabularies are deliberately small and closed:

========  =====================================================
atom      element class (12 elements + other), degree 0..6,
          formal charge -2..+2, chiral tag (3), aromatic flag
bond      order class (4), ring flag, length bin (20 over 0.5-3 A)
angle     angle bin (16 over [0, pi])
========  =====================================================
"""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.optimize import minimize

from .chemio import BondOrder, ChiralTag, MoleculeRecord

ELEMENT_VOCAB = ("H", "B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Br", "I")
ELEMENT_INDEX = {e: k for k, e in enumerate(ELEMENT_VOCAB)}
N_ELEMENT = len(ELEMENT_VOCAB) + 1
MAX_DEGREE = 6
N_DEGREE = MAX_DEGREE + 1
N_CHARGE = 5
N_CHIRAL = 3
N_AROMATIC = 2
ATOM_VOCAB_SIZES = (N_ELEMENT, N_DEGREE, N_CHARGE, N_CHIRAL, N_AROMATIC)

BOND_ORDERS = (BondOrder.SINGLE, BondOrder.DOUBLE, BondOrder.TRIPLE, BondOrder.AROMATIC)
N_LENGTH_BINS = 20
LENGTH_RANGE = (0.5, 3.0)
BOND_VOCAB_SIZES = (len(BOND_ORDERS), 2, N_LENGTH_BINS)

N_ANGLE_BINS = 16

CHIRAL_INDEX = {ChiralTag.NONE: 0, ChiralTag.CLOCKWISE: 1, ChiralTag.COUNTERCLOCKWISE: 2}

REFERENCE_LENGTH = {BondOrder.SINGLE: 1.5, BondOrder.DOUBLE: 1.34, BondOrder.TRIPLE: 1.2,
                    BondOrder.AROMATIC: 1.4}
TETRAHEDRAL = np.deg2rad(109.5)
TRIGONAL = np.deg2rad(120.0)
REPULSION_RADIUS = 2.0
REPULSION_WEIGHT = 1.0


class GeometryError(ValueError):
    pass


class EmbeddingError(RuntimeError):
    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message} (gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


# ---------------------------------------------------------------- embedding


def _angle_triples(record: MoleculeRecord) -> list[tuple[int, int, int]]:
    """``(end_a, centre, end_b)`` for every pair of bonds sharing an atom."""
    out = []
    for c in range(len(record.atoms)):
        nb = record.neighbors(c)
        for x in range(len(nb)):
            for y in range(x + 1, len(nb)):
                out.append((nb[x], c, nb[y]))
    return out


class HarmonicEmbedder:
    """Energy model used to place atoms when only connectivity is known.

    ``E = sum_bonds (d - L0)^2 + sum_angles (theta - theta0)^2
    + w * sum_far_pairs max(0, r_rep - d)^2``
    """

    def __init__(self, record: MoleculeRecord, angle_targets=None, length_targets=None):
        n = len(record.atoms)
        self.n = n
        self.bonds = np.array([(b.i, b.j) for b in record.bonds], dtype=np.int64).reshape(-1, 2)
        self.lengths = (np.asarray(length_targets, dtype=np.float64) if length_targets is not None
                        else np.array([REFERENCE_LENGTH[b.order] for b in record.bonds]))
        triples = _angle_triples(record)
        self.triples = np.array(triples, dtype=np.int64).reshape(-1, 3)
        deg = record.degrees()
        if angle_targets is not None:
            self.theta0 = np.broadcast_to(np.asarray(angle_targets, dtype=np.float64),
                                          (len(triples),)).copy()
        else:
            self.theta0 = np.array([TETRAHEDRAL if deg[c] <= 4 else TRIGONAL for _, c, _ in triples])
        close = {frozenset(p) for p in self.bonds.tolist()}
        close |= {frozenset((a, b)) for a, _, b in triples}
        far = [(i, j) for i in range(n) for j in range(i + 1, n) if frozenset((i, j)) not in close]
        self.far = np.array(far, dtype=np.int64).reshape(-1, 2)

    def energy_and_grad(self, flat: np.ndarray) -> tuple[float, np.ndarray]:
        x = flat.reshape(self.n, 3)
        g = np.zeros_like(x)
        e = 0.0
        if len(self.bonds):
            i, j = self.bonds.T
            v = x[i] - x[j]
            d = np.linalg.norm(v, axis=1)
            r = d - self.lengths
            e += float(np.sum(r ** 2))
            f = (2 * r / np.maximum(d, 1e-12))[:, None] * v
            np.add.at(g, i, f)
            np.add.at(g, j, -f)
        if len(self.triples):
            a, c, b = self.triples.T
            u = x[a] - x[c]
            w = x[b] - x[c]
            nu = np.maximum(np.linalg.norm(u, axis=1), 1e-12)
            nw = np.maximum(np.linalg.norm(w, axis=1), 1e-12)
            uh, wh = u / nu[:, None], w / nw[:, None]
            cos = np.clip(np.sum(uh * wh, axis=1), -1.0, 1.0)
            theta = np.arccos(cos)
            r = theta - self.theta0
            e += float(np.sum(r ** 2))
            sin = np.maximum(np.sqrt(1.0 - cos ** 2), 1e-8)
            coef = (2 * r / sin)[:, None]
            ga = -coef * (wh - cos[:, None] * uh) / nu[:, None]
            gb = -coef * (uh - cos[:, None] * wh) / nw[:, None]
            np.add.at(g, a, ga)
            np.add.at(g, b, gb)
            np.add.at(g, c, -(ga + gb))
        if len(self.far):
            i, j = self.far.T
            v = x[i] - x[j]
            d = np.linalg.norm(v, axis=1)
            pen = np.maximum(REPULSION_RADIUS - d, 0.0)
            hit = pen > 0
            if np.any(hit):
                e += REPULSION_WEIGHT * float(np.sum(pen[hit] ** 2))
                f = (-2 * REPULSION_WEIGHT * pen[hit] / np.maximum(d[hit], 1e-12))[:, None] * v[hit]
                np.add.at(g, i[hit], f)
                np.add.at(g, j[hit], -f)
        return e, g.ravel()

    def minimize(self, seed: int, max_iter: int = 5000, tol: float = 1e-4) -> tuple[np.ndarray, float]:
        rng = np.random.default_rng(seed)
        scale = 1.5 * max(self.n, 1) ** (1.0 / 3.0)
        x0 = rng.uniform(-scale, scale, size=(self.n, 3)).ravel()
        res = minimize(self.energy_and_grad, x0, jac=True, method="L-BFGS-B",
                       options={"maxiter": max_iter, "maxfun": 4 * max_iter,
                                "gtol": 1e-10, "ftol": 1e-16, "maxcor": 20})
        x = res.x
        energy, grad = self.energy_and_grad(x)
        gnorm = float(np.linalg.norm(grad))
        if gnorm >= tol:
            # restart L-BFGS from the current point; its history can stall near a flat minimum
            for _ in range(3):
                res = minimize(self.energy_and_grad, x, jac=True, method="L-BFGS-B",
                               options={"maxiter": max_iter, "gtol": 1e-12, "ftol": 0.0})
                x = res.x
                energy, grad = self.energy_and_grad(x)
                gnorm = float(np.linalg.norm(grad))
                if gnorm < tol:
                    break
        if gnorm >= tol:
            raise EmbeddingError("coordinate embedding did not converge", gnorm)
        return x.reshape(self.n, 3), energy


def embed_coordinates(record: MoleculeRecord, seed: int = 0, max_iter: int = 5000) -> MoleculeRecord:
    """Return a copy of ``record`` with 3D coordinates from the harmonic embedder."""
    if len(record.atoms) == 0:
        return record
    if len(record.atoms) == 1:
        return record.with_coords(np.zeros((1, 3)))
    xyz, _ = HarmonicEmbedder(record).minimize(seed, max_iter=max_iter)
    xyz = xyz - xyz.mean(axis=0)
    return record.with_coords(xyz)


# ------------------------------------------------------------------- graphs


@dataclass(frozen=True)
class Angle:
    bond_a: int
    bond_b: int
    atom: int
    angle: float


def compute_angles(record: MoleculeRecord) -> list[Angle]:
    """One angle per unordered pair of bonds sharing an atom, in radians."""
    xyz = record.coords()
    incident: list[list[int]] = [[] for _ in record.atoms]
    for k, b in enumerate(record.bonds):
        incident[b.i].append(k)
        incident[b.j].append(k)
    vec = {}
    for k, b in enumerate(record.bonds):
        v = xyz[b.j] - xyz[b.i]
        if not np.linalg.norm(v) > 0:
            raise GeometryError(f"zero-length bond {k} ({b.i}-{b.j})")
        vec[k] = v
    out = []
    for c, bs in enumerate(incident):
        for x in range(len(bs)):
            for y in range(x + 1, len(bs)):
                ka, kb = bs[x], bs[y]
                a = vec[ka] if record.bonds[ka].i == c else -vec[ka]
                b = vec[kb] if record.bonds[kb].i == c else -vec[kb]
                cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
                out.append(Angle(ka, kb, c, float(np.arccos(np.clip(cos, -1.0, 1.0)))))
    return out


def length_bin(length):
    lo, hi = LENGTH_RANGE
    idx = np.floor((np.asarray(length, dtype=np.float64) - lo) / ((hi - lo) / N_LENGTH_BINS))
    return np.clip(idx, 0, N_LENGTH_BINS - 1).astype(np.int64)


def angle_bin(angle):
    idx = np.floor(np.asarray(angle, dtype=np.float64) / (np.pi / N_ANGLE_BINS))
    return np.clip(idx, 0, N_ANGLE_BINS - 1).astype(np.int64)


@dataclass(frozen=True)
class AtomBondGraph:
    atom_features: np.ndarray    # (n_atoms, 5) int
    bond_features: np.ndarray    # (n_bonds, 3) int: order, ring, length bin
    bond_lengths: np.ndarray     # (n_bonds,) Angstrom
    edges: np.ndarray            # (n_bonds, 2) int
    adjacency: tuple[tuple[tuple[int, int], ...], ...]
    components: np.ndarray       # (n_atoms,) connected-component id

    @property
    def n_atoms(self) -> int:
        return self.atom_features.shape[0]

    @property
    def n_bonds(self) -> int:
        return self.edges.shape[0]

    def bond_id(self, u: int, v: int) -> int:
        for w, k in self.adjacency[u]:
            if w == v:
                return k
        raise KeyError((u, v))


@dataclass(frozen=True)
class BondAngleGraph:
    n_nodes: int
    angle_edges: np.ndarray      # (n_angles, 3) int: bond_a, bond_b, shared atom
    angles: np.ndarray           # (n_angles,) radians
    angle_bins: np.ndarray       # (n_angles,) int

    @property
    def n_angles(self) -> int:
        return self.angle_edges.shape[0]


def ring_bonds(record: MoleculeRecord) -> np.ndarray:
    """Flag bonds lying on any cycle (i.e. bonds that are not bridges)."""
    g = nx.Graph()
    g.add_nodes_from(range(len(record.atoms)))
    g.add_edges_from((b.i, b.j) for b in record.bonds)
    bridges = {frozenset(e) for e in nx.bridges(g)}
    return np.array([frozenset((b.i, b.j)) not in bridges for b in record.bonds], dtype=bool)


def build_graphs(record: MoleculeRecord) -> tuple[AtomBondGraph, BondAngleGraph]:
    if not record.has_coords and len(record.atoms):
        raise GeometryError(f"molecule {record.id!r} has no coordinates; embed them first")
    n = len(record.atoms)
    deg = record.degrees()
    atom_feat = np.zeros((n, 5), dtype=np.int64)
    for k, a in enumerate(record.atoms):
        atom_feat[k] = (
            ELEMENT_INDEX.get(a.element, N_ELEMENT - 1),
            min(deg[k], MAX_DEGREE),
            int(np.clip(a.formal_charge, -2, 2)) + 2,
            CHIRAL_INDEX[a.chiral_tag],
            int(a.aromatic),
        )
    m = len(record.bonds)
    edges = np.array([(b.i, b.j) for b in record.bonds], dtype=np.int64).reshape(m, 2)
    if m:
        xyz = record.coords()
        lengths = np.linalg.norm(xyz[edges[:, 0]] - xyz[edges[:, 1]], axis=1)
    else:
        lengths = np.zeros(0)
    bond_feat = np.zeros((m, 3), dtype=np.int64)
    if m:
        bond_feat[:, 0] = [BOND_ORDERS.index(b.order) for b in record.bonds]
        bond_feat[:, 1] = ring_bonds(record)
        bond_feat[:, 2] = length_bin(lengths)
    adjacency: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k, b in enumerate(record.bonds):
        adjacency[b.i].append((b.j, k))
        adjacency[b.j].append((b.i, k))

    comp = np.zeros(n, dtype=np.int64)
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(edges.tolist())
    for cid, nodes in enumerate(sorted(nx.connected_components(g), key=min)):
        comp[list(nodes)] = cid

    angles = compute_angles(record) if m else []
    ang_edges = np.array([(a.bond_a, a.bond_b, a.atom) for a in angles], dtype=np.int64).reshape(-1, 3)
    ang_vals = np.array([a.angle for a in angles], dtype=np.float64)
    G = AtomBondGraph(atom_feat, bond_feat, lengths, edges,
                      tuple(tuple(x) for x in adjacency), comp)
    H = BondAngleGraph(m, ang_edges, ang_vals, angle_bin(ang_vals))
    return G, H


def featurize(record: MoleculeRecord, seed: int = 0) -> tuple[AtomBondGraph, BondAngleGraph]:
    """Embed coordinates if the record lacks them, then build both graphs."""
    if not record.has_coords:
        record = embed_coordinates(record, seed=seed)
    return build_graphs(record)
