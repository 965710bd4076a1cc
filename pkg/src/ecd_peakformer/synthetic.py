"""Desk-scale synthetic dataset with learnable structure.

Each molecule is a single stereocentre ``[C@H](R1)(R2)R3`` (or ``@@``) with
three distinct substituents.  Its peaks are a deterministic function of what
the encoder can see: the heavy-atom count fixes the peak count, a hash of the
element counts fixes position offsets, heights and the sign pattern, and the
centre's chiral tag fixes the overall sign.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from itertools import combinations

import numpy as np

from .chemio import ChiralTag, DatasetEntry, MoleculeRecord, parse_smiles
from .spectra import Peak, PeakSet, render

SUBSTITUENTS = (
    "C", "CC", "CCC", "O", "N", "F", "Cl", "Br", "I", "S",
    "C(=O)O", "C#N", "OC", "CO", "C=C", "c1ccccc1",
)


def element_signature(record: MoleculeRecord) -> str:
    counts = Counter(a.element for a in record.atoms)
    return ",".join(f"{el}:{counts[el]}" for el in sorted(counts))


def _centre_sign(record: MoleculeRecord) -> int:
    tags = [a.chiral_tag for a in record.atoms if a.chiral_tag is not ChiralTag.NONE]
    if not tags:
        return 1
    return 1 if tags[0] is ChiralTag.COUNTERCLOCKWISE else -1


def synthetic_peaks(record: MoleculeRecord) -> PeakSet:
    """1 to 4 peaks 90 nm apart, derived from atom counts and chirality."""
    digest = hashlib.sha256(element_signature(record).encode()).digest()
    n_heavy = sum(a.element != "H" for a in record.atoms)
    n = min(4, max(1, n_heavy - 3))
    sign = _centre_sign(record)
    peaks = []
    for j in range(n):
        position = 100.0 + 90.0 * j + digest[1 + j] % 10
        pattern = 1 if (digest[5] >> j) & 1 else -1
        height = 40.0 + float(digest[9 + j] % 121)
        s = sign * pattern
        peaks.append(Peak(position, s, s * height))
    return PeakSet(tuple(peaks))


def synthetic_smiles(n: int, seed: int = 0) -> list[str]:
    """``n`` distinct single-stereocentre SMILES, drawn without replacement."""
    pool = [(trio, tag) for trio in combinations(SUBSTITUENTS, 3) for tag in ("@", "@@")]
    if n > len(pool):
        raise ValueError(f"at most {len(pool)} synthetic molecules are available")
    pick = np.random.default_rng(seed).choice(len(pool), size=n, replace=False)
    out = []
    for k in pick:
        (r1, r2, r3), tag = pool[k]
        out.append(f"[C{tag}H]({r1})({r2}){r3}")
    return out


def synthetic_dataset(n: int = 50, seed: int = 0, mode: str = "amplitude",
                      sigma0_nm: float = 10.0) -> list[DatasetEntry]:
    entries = []
    for k, smi in enumerate(synthetic_smiles(n, seed)):
        record = parse_smiles(smi, id=f"syn-{seed}-{k:04d}")
        peaks = synthetic_peaks(record)
        entries.append(DatasetEntry(record, render(peaks, mode, sigma0_nm), peaks, smiles=smi))
    return entries
