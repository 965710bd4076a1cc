"""Peak-query transformer, prediction heads, peak-focused loss and decoding.

The token sequence for one molecule is ``[Q_1..Q_n, h_G, h_u1..h_uM]``.
Query tokens carry learned embeddings and no other positional signal, so
outputs do not depend on the order of atom tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoder import EncodedBatch, mlp
from .spectra import GRID_START_NM, INTENSITY_LIMIT, MAX_PEAKS, N_GRID, Peak, PeakSet

N_NUMBER_CLASSES = MAX_PEAKS + 1
N_POSITION_BINS = N_GRID
HEIGHT_SCALE = INTENSITY_LIMIT


class LabelError(ValueError):
    pass


class EncoderLayer(nn.Module):
    """Pre-LayerNorm transformer encoder layer with a key-padding mask."""

    def __init__(self, dim: int, n_heads: int, dropout: float = 0.1):
        super().__init__()
        if dim % n_heads:
            raise ValueError(f"dim {dim} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.norm_attn = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff_in = nn.Linear(dim, 4 * dim)
        self.ff_out = nn.Linear(4 * dim, dim)
        self.act = nn.ReLU()
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad: torch.Tensor) -> torch.Tensor:
        B, L, D = x.shape
        q, k, v = self.qkv(self.norm_attn(x)).split(D, dim=-1)
        q, k, v = (t.view(B, L, self.n_heads, self.head_dim).transpose(1, 2) for t in (q, k, v))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(pad[:, None, None, :], float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(B, L, D)
        x = x + self.dropout(self.proj(out))
        h = self.ff_out(self.dropout(self.act(self.ff_in(self.norm_ff(x)))))
        return x + self.dropout(h)


@dataclass
class PeakPrediction:
    """Unnormalised logits, batched over molecules."""

    number_logits: torch.Tensor     # (B, C_num)
    position_logits: torch.Tensor   # (B, n_queries, C_pos)
    symbol_logits: torch.Tensor     # (B, n_queries, 2); class 1 is the positive symbol
    height: torch.Tensor            # (B, n_queries) mdeg

    def __len__(self) -> int:
        return self.number_logits.shape[0]

    def select(self, idx) -> "PeakPrediction":
        return PeakPrediction(self.number_logits[idx], self.position_logits[idx],
                              self.symbol_logits[idx], self.height[idx])


class PeakQueryTransformer(nn.Module):
    def __init__(self, dim: int = 128, n_queries: int = 10, n_layers: int = 4, n_heads: int = 4,
                 dropout: float = 0.1, n_number_classes: int = N_NUMBER_CLASSES,
                 n_position_bins: int = N_POSITION_BINS):
        super().__init__()
        if n_queries < n_number_classes - 1:
            raise ValueError(f"{n_queries} query tokens cannot express {n_number_classes - 1} peaks")
        self.dim = dim
        self.n_queries = n_queries
        self.query_embeddings = nn.Parameter(torch.zeros(n_queries, dim))
        self.layers = nn.ModuleList(EncoderLayer(dim, n_heads, dropout) for _ in range(n_layers))
        self.norm = nn.LayerNorm(dim)
        self.number_head = mlp(dim, dim, n_number_classes)
        self.position_head = mlp(dim, dim, n_position_bins)
        self.symbol_head = mlp(dim, dim, 2)
        self.height_head = mlp(dim, dim, 1)

    def tokens(self, enc: EncodedBatch) -> tuple[torch.Tensor, torch.Tensor]:
        if any(n == 0 for n in enc.n_atoms):
            raise ValueError("cannot build a token sequence for a molecule without atoms")
        B, nq = len(enc.n_atoms), self.n_queries
        L = nq + 1 + max(enc.n_atoms)
        x = torch.zeros(B, L, self.dim, dtype=enc.h_graph.dtype)
        x = x.index_put((torch.arange(B)[:, None], torch.arange(nq)[None, :]),
                        self.query_embeddings.unsqueeze(0).expand(B, nq, self.dim))
        x = x.index_put((torch.arange(B), torch.full((B,), nq)), enc.h_graph)
        x = x.index_put((enc.atom_mol, enc.atom_rank + nq + 1), enc.atom_reps)
        lengths = torch.as_tensor(enc.n_atoms) + nq + 1
        pad = torch.arange(L)[None, :] >= lengths[:, None]
        return x, pad

    def forward(self, enc: EncodedBatch) -> PeakPrediction:
        x, pad = self.tokens(enc)
        for layer in self.layers:
            x = layer(x, pad)
        x = self.norm(x)
        q = x[:, :self.n_queries]
        g = x[:, self.n_queries]
        return PeakPrediction(
            number_logits=self.number_head(g),
            position_logits=self.position_head(q),
            symbol_logits=self.symbol_head(q),
            height=HEIGHT_SCALE * self.height_head(q).squeeze(-1),
        )


def position_to_bin(position_nm) -> np.ndarray:
    """1-nm classes: bin ``b`` covers ``[80 + b, 81 + b)``."""
    idx = np.floor(np.asarray(position_nm, dtype=np.float64) - GRID_START_NM)
    return np.clip(idx, 0, N_POSITION_BINS - 1).astype(np.int64)


def bin_to_position(b) -> np.ndarray:
    return GRID_START_NM + np.asarray(b, dtype=np.float64)


@dataclass
class LossTerms:
    total: torch.Tensor
    number: torch.Tensor
    position: torch.Tensor
    symbol: torch.Tensor
    height: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("total", "number", "position", "symbol", "height")}


@dataclass(frozen=True)
class LossWeights:
    number: float = 1.0
    position: float = 1.0
    symbol: float = 2.0
    height: float = 0.1


@dataclass
class PeakTargets:
    counts: torch.Tensor          # (B,)
    mol_index: torch.Tensor       # (T,) molecule of each supervised token
    token_index: torch.Tensor     # (T,) query token used
    position_bins: torch.Tensor   # (T,)
    symbol_classes: torch.Tensor  # (T,)
    heights: torch.Tensor         # (T,)


def make_targets(targets: Sequence[PeakSet], n_queries: int) -> PeakTargets:
    counts, mol, tok, pos, sym, hgt = [], [], [], [], [], []
    for b, ps in enumerate(targets):
        if len(ps) > n_queries or len(ps) > MAX_PEAKS:
            raise LabelError(f"{len(ps)} peaks exceed the {min(n_queries, MAX_PEAKS)} representable")
        counts.append(len(ps))
        for j, p in enumerate(ps):
            mol.append(b)
            tok.append(j)
            pos.append(int(position_to_bin(p.position_nm)))
            sym.append(1 if p.symbol > 0 else 0)
            hgt.append(p.height_mdeg)
    lt = lambda v: torch.as_tensor(v, dtype=torch.long)
    return PeakTargets(lt(counts), lt(mol), lt(tok), lt(pos), lt(sym),
                       torch.as_tensor(hgt, dtype=torch.float64))


def peak_loss(pred: PeakPrediction, targets: Sequence[PeakSet] | PeakTargets,
              weights: LossWeights = LossWeights()) -> LossTerms:
    """Cross-entropy on peak count, per-token position class and symbol, plus a height term.

    Token ``j`` of a molecule is supervised by its ``j``-th peak in wavelength
    order; tokens beyond the peak count are unsupervised.  Count loss is
    averaged over molecules, the per-token terms over all supervised tokens.
    """
    if not isinstance(targets, PeakTargets):
        targets = make_targets(targets, pred.position_logits.shape[1])
    number = F.cross_entropy(pred.number_logits, targets.counts)
    if len(targets.mol_index):
        idx = (targets.mol_index, targets.token_index)
        position = F.cross_entropy(pred.position_logits[idx], targets.position_bins)
        symbol = F.cross_entropy(pred.symbol_logits[idx], targets.symbol_classes)
        height = torch.mean(((pred.height[idx] - targets.heights) / HEIGHT_SCALE) ** 2)
    else:
        position = symbol = height = pred.number_logits.sum() * 0.0
    total = (weights.number * number + weights.position * position
             + weights.symbol * symbol + weights.height * height)
    return LossTerms(total, number, position, symbol, height)


def decode(pred: PeakPrediction) -> list[PeakSet]:
    """Turn logits into peak sets: count from the number head, then the first tokens."""
    num = pred.number_logits.detach().cpu().numpy()
    pos = pred.position_logits.detach().cpu().numpy()
    sym = pred.symbol_logits.detach().cpu().numpy()
    hgt = pred.height.detach().cpu().numpy()
    out = []
    for b in range(num.shape[0]):
        n = min(int(np.argmax(num[b])), pos.shape[1])
        peaks: dict[float, Peak] = {}
        for j in range(n):
            position = float(bin_to_position(np.argmax(pos[b, j])))
            if position in peaks:
                continue  # an earlier token already claimed this position
            s = 1 if int(np.argmax(sym[b, j])) == 1 else -1
            peaks[position] = Peak(position, s, s * min(abs(float(hgt[b, j])), INTENSITY_LIMIT))
        out.append(PeakSet(tuple(peaks[p] for p in sorted(peaks))))
    return out
