"""Regenerate crates/core/data/corpus.smi.

Builds small drug-like molecules by decorating common ring scaffolds with
substituents and linkers, keeps those with at most 20 heavy atoms, and writes
~1000 unique isomeric SMILES. Requires RDKit; the output is checked in so the
Rust workspace never needs it.
"""
import random
import sys

from rdkit import Chem
from rdkit import RDLogger

RDLogger.DisableLog("rdApp.*")

SCAFFOLDS = [
    "c1ccccc1", "c1ccncc1", "c1cncnc1", "c1ccsc1", "c1ccoc1", "c1cc[nH]c1",
    "c1c[nH]cn1", "c1cscn1", "C1CCCCC1", "C1CCCC1", "C1CCNCC1", "C1CNCCN1",
    "C1COCCN1", "C1CCOC1", "c1ccc2ccccc2c1", "c1ccc2[nH]ccc2c1", "C1CC1",
    "c1ccc2occc2c1", "c1cnc2ccccc2c1",
]
SUBSTITUENTS = [
    "*C", "*CC", "*C(C)C", "*O", "*OC", "*N", "*N(C)C", "*F", "*Cl", "*Br",
    "*C(F)(F)F", "*C#N", "*C(=O)O", "*C(=O)OC", "*C(=O)N", "*C(C)=O",
    "*[N+](=O)[O-]", "*S(C)(=O)=O", "*NC(C)=O", "*OCC", "*C=O", "*CO", "*CN",
    "*S(N)(=O)=O", "*C(=O)NC", "*[C@@H](C)N", "*[C@H](C)O", "*[C@H](N)C(=O)O",
    "*C=C", "*C#C", "*SC", "*I",
]
LINKERS = ["*-*", "*C*", "*CC*", "*O*", "*N*", "*C(=O)N*", "*S*", "*C(=O)*", "*OC*"]


def attach(mol, atom_idx, frag_smiles):
    frag = Chem.MolFromSmiles(frag_smiles)
    star = [a.GetIdx() for a in frag.GetAtoms() if a.GetAtomicNum() == 0][0]
    anchor = frag.GetAtomWithIdx(star).GetNeighbors()[0].GetIdx()
    combo = Chem.RWMol(Chem.CombineMols(mol, frag))
    off = mol.GetNumAtoms()
    combo.AddBond(atom_idx, anchor + off, Chem.BondType.SINGLE)
    combo.RemoveAtom(star + off)
    out = combo.GetMol()
    Chem.SanitizeMol(out)
    return out


def open_sites(mol):
    return [a.GetIdx() for a in mol.GetAtoms() if a.GetTotalNumHs() > 0 and a.GetAtomicNum() == 6]


def decorate(rng, mol, n):
    for _ in range(n):
        sites = open_sites(mol)
        if not sites:
            break
        mol = attach(mol, rng.choice(sites), rng.choice(SUBSTITUENTS))
    return mol


def link(rng):
    a = Chem.MolFromSmiles(rng.choice(SCAFFOLDS))
    b = Chem.MolFromSmiles(rng.choice(SCAFFOLDS))
    linker = rng.choice(LINKERS)
    sa = rng.choice(open_sites(a))
    sb = rng.choice(open_sites(b))
    # build "*<linker>-<b>" as a substituent string rooted at the b attachment
    rw = Chem.RWMol(b)
    star = rw.AddAtom(Chem.Atom(0))
    if linker == "*-*":
        rw.AddBond(sb, star, Chem.BondType.SINGLE)
    else:
        lk = Chem.MolFromSmiles(linker)
        stars = [x.GetIdx() for x in lk.GetAtoms() if x.GetAtomicNum() == 0]
        combo = Chem.RWMol(Chem.CombineMols(rw, lk))
        off = rw.GetNumAtoms()
        end = combo.GetAtomWithIdx(stars[1] + off).GetNeighbors()[0].GetIdx()
        combo.AddBond(sb, end, Chem.BondType.SINGLE)
        combo.RemoveAtom(stars[1] + off)
        combo.RemoveAtom(star)
        rw = combo
    sub = Chem.MolToSmiles(rw.GetMol(), rootedAtAtom=[a.GetIdx() for a in rw.GetAtoms() if a.GetAtomicNum() == 0][0])
    return attach(a, sa, sub)


def main(n_target=1000, seed=7):
    rng = random.Random(seed)
    seen = set()
    out = []
    tries = 0
    while len(out) < n_target and tries < 200000:
        tries += 1
        try:
            if rng.random() < 0.7:
                mol = decorate(rng, Chem.MolFromSmiles(rng.choice(SCAFFOLDS)), rng.choice([1, 1, 2, 2, 3]))
            else:
                mol = decorate(rng, link(rng), rng.choice([0, 0, 1]))
        except Exception:
            continue
        if mol is None or mol.GetNumHeavyAtoms() > 20 or mol.GetNumHeavyAtoms() < 4:
            continue
        smi = Chem.MolToSmiles(mol)
        if smi in seen or len(smi) > 48:
            continue
        seen.add(smi)
        out.append(smi)
    sys.stdout.write("# Drug-like fragment corpus: one SMILES per line, <= 20 heavy atoms.\n")
    sys.stdout.write("# Generated by tools/gen_corpus.py (seed 7).\n")
    for s in out:
        sys.stdout.write(s + "\n")


if __name__ == "__main__":
    main()
