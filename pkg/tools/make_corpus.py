"""Regenerate tests/data/corpus with RDKit as the independent reference.

RDKit is needed only to run this script, not by the package or the tests:
the expected counts it produces are frozen into ``expected.json``.
"""

import json
from collections import Counter
from pathlib import Path

from rdkit import Chem
from rdkit.Chem import AllChem

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "corpus"

SMILES = [
    "C", "CC", "CCO", "N[C@H](C)C(=O)O", "N[C@@H](C)C(=O)O", "c1ccccc1", "c1ccncc1",
    "c1ccoc1", "c1ccsc1", "c1cc[nH]c1", "O=C=O", "C#N", "CC(C)(C)Br", "FC(F)(F)Cl",
    "C[C@@H](O)CC", "C[C@H](N)c1ccccc1", "OC[C@H]1OC(O)[C@H](O)[C@@H](O)[C@@H]1O",
    "C1CC1", "C1CCCCC1", "C%10CCCC%10", "[NH4+]", "[O-]C(=O)C", "CC(=O)[O-].[Na+]",
    "C[S](=O)C", "P(=O)(O)(O)O", "B(O)(O)O", "ClC(Cl)Cl", "IC", "C=CC=C", "CC#CC",
    "[C@@H](F)(Cl)Br", "F[C@H](Cl)Br", "N1CC[C@H]1C(=O)O", "CC(C)C[C@H](N)C(=O)O",
    "c1ccc2ccccc2c1", "O[C@@H]1CCCC[C@H]1O", "C[N+](C)(C)C", "[2H]C",
]
# "[2H]C" carries an isotope, which the supported subset leaves out; it is dropped below.
SMILES = [s for s in SMILES if "[2H]" not in s]

MOL_SMILES = [
    "C", "CC", "CCO", "N[C@H](C)C(=O)O", "N[C@@H](C)C(=O)O", "c1ccccc1", "CC(=O)O",
    "C[C@@H](O)CC", "C1CC1", "C[N+](C)(C)C", "CC(=O)[O-]", "ClC(Cl)Cl", "C#N", "C=CC=C",
    "F[C@H](Cl)Br", "OCC(O)CO", "c1ccncc1", "CS(=O)C", "BrCCBr", "NC(=O)N", "CC(C)O",
    "O=C1CCCC1",
]

MALFORMED_SMILES = {
    "unclosed_ring.smi": "C1CC",
    "unbalanced_open.smi": "CC(C",
    "unbalanced_close.smi": "CC)C",
    "unknown_element.smi": "C[Xx]C",
    "bad_bracket.smi": "C[CH",
    "wildcard.smi": "C*C",
    "isotope.smi": "[13CH4]",
    "dangling_bond.smi": "CC=",
}


def molblock_cases(good: str) -> dict[str, str]:
    """Corrupt a valid block in ways a V2000 reader must reject."""
    lines = good.splitlines()
    n_atoms = int(lines[3][0:3])
    first_bond = 4 + n_atoms
    cases = {}
    bad = list(lines)
    bad[3] = "abc" + bad[3][3:]
    cases["bad_counts.mol"] = bad
    bad = list(lines)
    bad[first_bond] = f"{1:3d}{n_atoms + 1:3d}  1  0"
    cases["bond_out_of_range.mol"] = bad
    bad = list(lines)
    bad[4] = bad[4][:31] + "Qq " + bad[4][34:]
    cases["unknown_element.mol"] = bad
    bad = list(lines)
    cases["truncated_atoms.mol"] = bad[:4 + n_atoms - 1]
    bad = [l for l in lines if not l.startswith("M  END")]
    cases["missing_end.mol"] = bad
    bad = list(lines)
    bad[4] = "    1.0000    x.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0"
    cases["bad_coordinate.mol"] = bad
    bad = list(lines)
    bad[first_bond] = bad[first_bond][:6] + "  9" + bad[first_bond][9:]
    cases["bad_bond_order.mol"] = bad
    cases["empty.mol"] = []
    return {k: "\n".join(v) + "\n" for k, v in cases.items()}


def _odd(seq) -> bool:
    return sum(a > b for k, a in enumerate(seq) for b in seq[k + 1:]) % 2 == 1


def _tags(mol) -> dict[str, str]:
    """Chiral tags re-expressed relative to ascending neighbour index.

    Toolkits store tags relative to their own bond order, which differs around
    ring closures; ascending neighbour order is a toolkit-neutral reference.
    """
    names = {Chem.ChiralType.CHI_TETRAHEDRAL_CW: "clockwise",
             Chem.ChiralType.CHI_TETRAHEDRAL_CCW: "counterclockwise"}
    flip = {"clockwise": "counterclockwise", "counterclockwise": "clockwise"}
    out = {}
    for a in mol.GetAtoms():
        if a.GetChiralTag() not in names:
            continue
        nbrs = [b.GetOtherAtomIdx(a.GetIdx()) for b in a.GetBonds()]
        tag = names[a.GetChiralTag()]
        out[str(a.GetIdx())] = flip[tag] if _odd(nbrs) else tag
    return out


def formula(mol) -> dict[str, int]:
    return dict(sorted(Counter(a.GetSymbol() for a in mol.GetAtoms()).items()))


def main():
    valid = OUT / "valid"
    malformed = OUT / "malformed"
    for d in (valid, malformed):
        d.mkdir(parents=True, exist_ok=True)
        for f in d.iterdir():
            f.unlink()
    expected = {}
    for k, smi in enumerate(SMILES):
        name = f"smiles_{k:02d}.smi"
        (valid / name).write_text(smi + "\n")
        mol = Chem.AddHs(Chem.MolFromSmiles(smi))
        expected[name] = {
            "atoms": mol.GetNumAtoms(),
            "bonds": mol.GetNumBonds(),
            "formula": formula(mol),
            "chiral_centers": sum(a.GetChiralTag() != Chem.ChiralType.CHI_UNSPECIFIED for a in mol.GetAtoms()),
            "formal_charge": Chem.GetFormalCharge(mol),
            "chiral_tags": _tags(mol),
        }
    for k, smi in enumerate(MOL_SMILES):
        name = f"mol_{k:02d}.mol"
        mol = Chem.AddHs(Chem.MolFromSmiles(smi))
        AllChem.EmbedMolecule(mol, randomSeed=0xF00D)
        Chem.AssignStereochemistryFrom3D(mol)
        block = Chem.MolToMolBlock(mol, kekulize=True)
        (valid / name).write_text(block)
        conf = mol.GetConformer()
        b0 = mol.GetBondWithIdx(0)
        p, q = conf.GetAtomPosition(b0.GetBeginAtomIdx()), conf.GetAtomPosition(b0.GetEndAtomIdx())
        expected[name] = {
            "atoms": mol.GetNumAtoms(),
            "bonds": mol.GetNumBonds(),
            "formula": formula(mol),
            "formal_charge": Chem.GetFormalCharge(mol),
            "first_bond": [b0.GetBeginAtomIdx(), b0.GetEndAtomIdx()],
            "first_bond_length": round((p - q).Length(), 4),
            "chiral_tags": _tags(Chem.MolFromMolBlock(block, removeHs=False)),
        }
    for name, text in MALFORMED_SMILES.items():
        (malformed / name).write_text(text + "\n")
    base = Chem.MolToMolBlock(Chem.AddHs(Chem.MolFromSmiles("CCO")), kekulize=True)
    for name, text in molblock_cases(base).items():
        (malformed / name).write_text(text)
    (OUT / "expected.json").write_text(json.dumps(expected, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
