"""Geometry-aware graph encoder.

Each iteration first updates bond representations from neighbouring bonds
and the angle between them (bond-angle graph), then atom representations
from neighbouring atoms and the connecting bond (atom-bond graph).  The
molecule vector is the sum of the final atom representations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .molgraph import ATOM_VOCAB_SIZES, BOND_VOCAB_SIZES, N_ANGLE_BINS, AtomBondGraph, BondAngleGraph

DTYPE = torch.float64


class NumericError(ArithmeticError):
    pass


@dataclass
class GraphBatch:
    """Several molecules' graphs concatenated with index offsets."""

    atom_features: torch.Tensor   # (N, 5)
    bond_features: torch.Tensor   # (M, 3)
    # directed atom messages: dst <- src over bond
    ab_dst: torch.Tensor
    ab_src: torch.Tensor
    ab_bond: torch.Tensor
    # directed bond messages: dst <- src across an angle
    ba_dst: torch.Tensor
    ba_src: torch.Tensor
    ba_angle: torch.Tensor
    atom_mol: torch.Tensor        # (N,) molecule of each atom
    atom_comp: torch.Tensor       # (N,) global component id
    comp_mol: torch.Tensor        # (C,) molecule of each component
    atom_rank: torch.Tensor       # (N,) position of the atom inside its molecule
    n_atoms: list[int]

    @property
    def n_molecules(self) -> int:
        return len(self.n_atoms)

    @classmethod
    def from_graphs(cls, graphs: Sequence[tuple[AtomBondGraph, BondAngleGraph]]) -> "GraphBatch":
        atom_f, bond_f = [], []
        ab_dst, ab_src, ab_bond = [], [], []
        ba_dst, ba_src, ba_angle = [], [], []
        atom_mol, atom_comp, comp_mol, atom_rank, n_atoms = [], [], [], [], []
        a_off = b_off = c_off = 0
        for m, (G, H) in enumerate(graphs):
            n, nb = G.n_atoms, G.n_bonds
            atom_f.append(G.atom_features)
            bond_f.append(G.bond_features)
            if nb:
                u, v = G.edges[:, 0] + a_off, G.edges[:, 1] + a_off
                k = np.arange(nb) + b_off
                ab_dst += [u, v]
                ab_src += [v, u]
                ab_bond += [k, k]
            if H.n_angles:
                x, y = H.angle_edges[:, 0] + b_off, H.angle_edges[:, 1] + b_off
                ba_dst += [x, y]
                ba_src += [y, x]
                ba_angle += [H.angle_bins, H.angle_bins]
            n_comp = int(G.components.max()) + 1 if n else 0
            atom_mol.append(np.full(n, m))
            atom_comp.append(G.components + c_off)
            comp_mol.append(np.full(n_comp, m))
            atom_rank.append(np.arange(n))
            n_atoms.append(n)
            a_off += n
            b_off += nb
            c_off += n_comp

        def cat(parts, width=None):
            if not parts:
                shape = (0,) if width is None else (0, width)
                return torch.zeros(shape, dtype=torch.long)
            return torch.as_tensor(np.concatenate(parts), dtype=torch.long)

        return cls(cat(atom_f, 5), cat(bond_f, 3), cat(ab_dst), cat(ab_src), cat(ab_bond),
                   cat(ba_dst), cat(ba_src), cat(ba_angle), cat(atom_mol), cat(atom_comp),
                   cat(comp_mol), cat(atom_rank), n_atoms)


@dataclass
class EncodedBatch:
    h_graph: torch.Tensor      # (B, d)
    atom_reps: torch.Tensor    # (N, d)
    bond_reps: torch.Tensor    # (M, d)
    atom_mol: torch.Tensor
    atom_rank: torch.Tensor
    n_atoms: list[int]

    def molecule(self, b: int) -> "EncodedMolecule":
        return EncodedMolecule(self.h_graph[b], self.atom_reps[self.atom_mol == b], None)


@dataclass
class EncodedMolecule:
    h_graph: torch.Tensor
    atom_reps: torch.Tensor
    bond_reps: torch.Tensor | None


def mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.ReLU(), nn.Linear(d_hidden, d_out))


class GeoGNNEncoder(nn.Module):
    def __init__(self, dim: int = 128, n_iterations: int = 5):
        super().__init__()
        self.dim = dim
        self.n_iterations = n_iterations
        self.atom_embeddings = nn.ModuleList(nn.Embedding(n, dim) for n in ATOM_VOCAB_SIZES)
        self.bond_embeddings = nn.ModuleList(nn.Embedding(n, dim) for n in BOND_VOCAB_SIZES)
        self.angle_embedding = nn.Embedding(N_ANGLE_BINS, dim)
        self.bond_angle_mlps = nn.ModuleList(mlp(3 * dim, dim, dim) for _ in range(n_iterations))
        self.atom_bond_mlps = nn.ModuleList(mlp(3 * dim, dim, dim) for _ in range(n_iterations))
        # self-loop matrices, one per stage, shared across iterations
        self.bond_self = nn.Linear(dim, dim, bias=False)
        self.atom_self = nn.Linear(dim, dim, bias=False)

    def init_representations(self, batch: GraphBatch) -> tuple[torch.Tensor, torch.Tensor]:
        h_atom = sum(emb(batch.atom_features[:, i]) for i, emb in enumerate(self.atom_embeddings))
        h_bond = sum(emb(batch.bond_features[:, i]) for i, emb in enumerate(self.bond_embeddings))
        return h_atom, h_bond

    def bond_angle_step(self, h_bond: torch.Tensor, batch: GraphBatch, k: int) -> torch.Tensor:
        msg_in = torch.cat([h_bond[batch.ba_dst], h_bond[batch.ba_src],
                            self.angle_embedding(batch.ba_angle)], dim=1)
        msg = self.bond_angle_mlps[k](msg_in)
        agg = torch.zeros_like(h_bond).index_add(0, batch.ba_dst, msg)
        return self.bond_self(h_bond) + agg

    def atom_bond_step(self, h_atom: torch.Tensor, h_bond: torch.Tensor, batch: GraphBatch,
                       k: int) -> torch.Tensor:
        msg_in = torch.cat([h_atom[batch.ab_dst], h_atom[batch.ab_src], h_bond[batch.ab_bond]], dim=1)
        msg = self.atom_bond_mlps[k](msg_in)
        agg = torch.zeros_like(h_atom).index_add(0, batch.ab_dst, msg)
        return self.atom_self(h_atom) + agg

    def pool(self, h_atom: torch.Tensor, batch: GraphBatch) -> torch.Tensor:
        # per-component sums first: a molecule made of disjoint parts gets exactly the sum of the parts
        n_comp = len(batch.comp_mol)
        comp = torch.zeros(n_comp, self.dim, dtype=h_atom.dtype).index_add(0, batch.atom_comp, h_atom)
        out = torch.zeros(batch.n_molecules, self.dim, dtype=h_atom.dtype)
        return out.index_add(0, batch.comp_mol, comp)

    def forward(self, batch: GraphBatch) -> EncodedBatch:
        h_atom, h_bond = self.init_representations(batch)
        for k in range(self.n_iterations):
            h_bond = self.bond_angle_step(h_bond, batch, k)
            h_atom = self.atom_bond_step(h_atom, h_bond, batch, k)
            if not (torch.isfinite(h_atom).all() and torch.isfinite(h_bond).all()):
                raise NumericError(f"non-finite representation at encoder iteration {k + 1}")
        return EncodedBatch(self.pool(h_atom, batch), h_atom, h_bond, batch.atom_mol,
                            batch.atom_rank, list(batch.n_atoms))


def init_parameters(module: nn.Module, seed: int, dim: int) -> None:
    """Uniform(+/-1/sqrt(dim)) matrices, zero biases, N(0, 0.02) embeddings and query tokens."""
    gen = torch.Generator().manual_seed(seed)
    bound = 1.0 / math.sqrt(dim)
    with torch.no_grad():
        for name, p in sorted(module.named_parameters()):
            if isinstance(_owner(module, name), nn.LayerNorm):
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif isinstance(_owner(module, name), nn.Embedding) or name.endswith("query_embeddings"):
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.02)
            elif name.endswith("bias"):
                p.zero_()
            else:
                p.copy_((torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 - 1) * bound)


def _owner(module: nn.Module, param_name: str) -> nn.Module:
    path = param_name.split(".")[:-1]
    for part in path:
        module = getattr(module, part)
    return module


def encode(graphs: tuple[AtomBondGraph, BondAngleGraph], encoder: GeoGNNEncoder) -> EncodedMolecule:
    """Encode a single molecule."""
    out = encoder(GraphBatch.from_graphs([graphs]))
    return EncodedMolecule(out.h_graph[0], out.atom_reps, out.bond_reps)
