"""
Regenerate tests/data/corpus_golden.csv from tests/data/corpus.smi with RDKit.

RDKit is only needed to run this script, not by the package. Molecules are
read without sanitization so that bond orders are taken as written (a
Kekule ring stays single/double), which is the contract of the parser.
"""

import csv
import sys
from pathlib import Path

from rdkit import Chem, RDLogger

RDLogger.DisableLog("rdApp.*")

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"
NAMES = {Chem.BondType.SINGLE: "single", Chem.BondType.DOUBLE: "double",
         Chem.BondType.TRIPLE: "triple", Chem.BondType.AROMATIC: "aromatic"}


def counts(smiles):
    mol = Chem.MolFromSmiles(smiles, sanitize=False)
    if mol is None:
        raise ValueError(f"RDKit rejected {smiles!r}")
    heavy = {a.GetIdx() for a in mol.GetAtoms() if a.GetAtomicNum() != 1}
    tally = dict.fromkeys(NAMES.values(), 0)
    for b in mol.GetBonds():
        if b.GetBeginAtomIdx() in heavy and b.GetEndAtomIdx() in heavy:
            tally[NAMES[b.GetBondType()]] += 1
    return len(heavy), tally


def main(out=DATA / "corpus_golden.csv"):
    rows = []
    for line in (DATA / "corpus.smi").read_text().split():
        n_atoms, tally = counts(line)
        rows.append([line, n_atoms, sum(tally.values()), *tally.values()])
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", "n_atoms", "n_bonds", *NAMES.values()])
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {out}")


if __name__ == "__main__":
    main(*sys.argv[1:])
