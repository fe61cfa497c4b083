"""
SMILES ingestion: parsing, featurization, dataset splits and padded batches.

Graphs are heavy-atom only. Bond types index the relation axis of the
adjacency tensor as single=0, double=1, triple=2, aromatic=3.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .exceptions import SmilesParseError, SplitError

logger = logging.getLogger(__name__)

SINGLE, DOUBLE, TRIPLE, AROMATIC = 0, 1, 2, 3
BOND_TYPES = ("single", "double", "triple", "aromatic")
N_BOND_TYPES = 4

_BOND_SYMBOLS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC,
                 "/": SINGLE, "\\": SINGLE}
_AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
_BRACKET_AROMATIC = ("se", "as", "te", "si", "b", "c", "n", "o", "p", "s")

UNK = "UNK"
DEFAULT_VOCAB = ("C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B", "Si", "Se", UNK)


@dataclass
class MolGraph:
    """Heavy-atom molecular graph with typed, undirected bonds."""

    atoms: List[str]
    bonds: List[Tuple[int, int, int]] = field(default_factory=list)
    smiles: Optional[str] = None

    @property
    def n_atoms(self):
        return len(self.atoms)

    @property
    def n_bonds(self):
        return len(self.bonds)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from((i, {"symbol": s}) for i, s in enumerate(self.atoms))
        g.add_edges_from((i, j, {"bond": r}) for i, j, r in self.bonds)
        return g

    def permuted(self, perm: Sequence[int]) -> "MolGraph":
        """Relabel atoms so that new atom ``k`` is old atom ``perm[k]``."""
        inverse = np.argsort(perm)
        atoms = [self.atoms[p] for p in perm]
        bonds = [(int(inverse[i]), int(inverse[j]), r) for i, j, r in self.bonds]
        return MolGraph(atoms, bonds, self.smiles)


# --------------------------------------------------------------------------
# parsing

def _parse_bracket(body: str, smiles: str, offset: int) -> Tuple[str, bool]:
    """Return (element symbol, aromatic) for the inside of ``[...]``."""
    i = 0
    while i < len(body) and body[i].isdigit():  # isotope
        i += 1
    rest = body[i:]
    if not rest:
        raise SmilesParseError("empty bracket atom", smiles, offset)
    for sym in _BRACKET_AROMATIC:
        if rest.startswith(sym):
            return sym.capitalize(), True
    if rest[0] == "*":
        return "*", False
    if not rest[0].isupper():
        raise SmilesParseError(f"bad bracket atom [{body}]", smiles, offset)
    if len(rest) > 1 and rest[1].islower():
        symbol = rest[:2]
    else:
        symbol = rest[0]
    # chirality, hydrogen count, charge and atom class are discarded
    return symbol, False


def parse_smiles(smiles: str) -> MolGraph:
    """
    Parse a SMILES string into a heavy-atom :class:`MolGraph`.

    Hydrogens (implicit or as ``[H]`` atoms), stereo marks, charges and
    isotopes are dropped. An unmarked bond between two aromatic atoms is
    aromatic if it lies on a ring and single otherwise.
    """
    if not smiles:
        raise SmilesParseError("empty SMILES", smiles, 0)
    try:
        smiles.encode("ascii")
    except UnicodeEncodeError:
        raise SmilesParseError("non-ASCII character", smiles, 0) from None

    atoms: List[str] = []
    aromatic: List[bool] = []
    hydrogen: List[bool] = []
    # (i, j, type or None when unmarked)
    raw_bonds: List[Tuple[int, int, Optional[int]]] = []
    prev: Optional[int] = None
    pending_bond: Optional[int] = None
    pending_offset = 0
    branch_stack: List[Tuple[Optional[int], int]] = []
    rings: Dict[int, Tuple[int, Optional[int], int]] = {}

    def add_atom(symbol, arom, is_h, pos):
        nonlocal prev, pending_bond
        idx = len(atoms)
        atoms.append(symbol)
        aromatic.append(arom)
        hydrogen.append(is_h)
        if prev is not None:
            raw_bonds.append((prev, idx, pending_bond))
        elif pending_bond is not None:
            raise SmilesParseError("bond without a preceding atom", smiles, pending_offset)
        pending_bond = None
        prev = idx

    def ring_closure(number, pos):
        nonlocal pending_bond
        if prev is None:
            raise SmilesParseError("ring closure without a preceding atom", smiles, pos)
        if number in rings:
            j, bond, _ = rings.pop(number)
            if bond is not None and pending_bond is not None and bond != pending_bond:
                raise SmilesParseError("conflicting ring-closure bond types", smiles, pos)
            if j == prev:
                raise SmilesParseError("ring closure onto the same atom", smiles, pos)
            raw_bonds.append((j, prev, pending_bond if pending_bond is not None else bond))
        else:
            rings[number] = (prev, pending_bond, pos)
        pending_bond = None

    pos = 0
    n = len(smiles)
    while pos < n:
        ch = smiles[pos]
        if ch == "[":
            end = smiles.find("]", pos)
            if end < 0:
                raise SmilesParseError("unclosed bracket atom", smiles, pos)
            symbol, arom = _parse_bracket(smiles[pos + 1:end], smiles, pos)
            add_atom(symbol, arom, symbol == "H", pos)
            pos = end + 1
        elif smiles.startswith(("Cl", "Br"), pos):
            add_atom(smiles[pos:pos + 2], False, False, pos)
            pos += 2
        elif ch in "BCNOPSFI":
            add_atom(ch, False, False, pos)
            pos += 1
        elif ch in _AROMATIC_ORGANIC:
            add_atom(ch.upper(), True, False, pos)
            pos += 1
        elif ch == "*":
            add_atom("*", False, False, pos)
            pos += 1
        elif ch in _BOND_SYMBOLS:
            if pending_bond is not None:
                raise SmilesParseError("two consecutive bond symbols", smiles, pos)
            pending_bond = _BOND_SYMBOLS[ch]
            pending_offset = pos
            pos += 1
        elif ch == "(":
            if prev is None:
                raise SmilesParseError("branch without a preceding atom", smiles, pos)
            branch_stack.append((prev, pos))
            pos += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesParseError("unbalanced ')'", smiles, pos)
            if pending_bond is not None:
                raise SmilesParseError("dangling bond", smiles, pending_offset)
            prev, _ = branch_stack.pop()
            pos += 1
        elif ch.isdigit():
            ring_closure(int(ch), pos)
            pos += 1
        elif ch == "%":
            digits = smiles[pos + 1:pos + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise SmilesParseError("'%' must be followed by two digits", smiles, pos)
            ring_closure(int(digits), pos)
            pos += 3
        elif ch == ".":
            if pending_bond is not None:
                raise SmilesParseError("dangling bond", smiles, pending_offset)
            prev = None
            pos += 1
        else:
            raise SmilesParseError(f"unknown token {ch!r}", smiles, pos)

    if branch_stack:
        raise SmilesParseError("unbalanced '('", smiles, branch_stack[-1][1])
    if rings:
        number, (_, _, where) = next(iter(rings.items()))
        raise SmilesParseError(f"unmatched ring closure {number}", smiles, where)
    if pending_bond is not None:
        raise SmilesParseError("dangling bond", smiles, pending_offset)

    return _finish_graph(atoms, aromatic, hydrogen, raw_bonds, smiles)


def _finish_graph(atoms, aromatic, hydrogen, raw_bonds, smiles) -> MolGraph:
    keep = [i for i, is_h in enumerate(hydrogen) if not is_h]
    remap = {old: new for new, old in enumerate(keep)}
    heavy = [(remap[i], remap[j], r, aromatic[i] and aromatic[j])
             for i, j, r in raw_bonds if i in remap and j in remap]

    seen = set()
    for i, j, _, _ in heavy:
        key = (min(i, j), max(i, j))
        if key in seen:
            raise SmilesParseError("duplicate bond", smiles, 0)
        seen.add(key)

    # unmarked bonds between aromatic atoms are aromatic only inside rings
    g = nx.Graph()
    g.add_nodes_from(range(len(keep)))
    g.add_edges_from((i, j) for i, j, _, _ in heavy)
    bridges = {frozenset(e) for e in nx.bridges(g)}
    bonds = []
    for i, j, r, both_aromatic in heavy:
        if r is None:
            r = AROMATIC if both_aromatic and frozenset((i, j)) not in bridges else SINGLE
        bonds.append((i, j, r))
    return MolGraph([atoms[i] for i in keep], bonds, smiles)


# --------------------------------------------------------------------------
# featurization

def relation_index(bond_type: int, n_relations: int = N_BOND_TYPES) -> int:
    """Map a bond type onto ``n_relations`` channels; surplus types share the last."""
    return min(bond_type, n_relations - 1)


def _vocab_index(vocab: Sequence[str]) -> Dict[str, int]:
    return {s: k for k, s in enumerate(vocab)}


def atom_index(symbol: str, index: Dict[str, int]) -> int:
    if symbol in index:
        return index[symbol]
    if UNK in index:
        return index[UNK]
    raise KeyError(f"atom {symbol!r} not in vocabulary and no {UNK} bucket")


def featurize(g: MolGraph, vocab: Sequence[str] = DEFAULT_VOCAB,
              n_relations: int = N_BOND_TYPES) -> Tuple[np.ndarray, np.ndarray]:
    """One-hot atom rows (n_atoms x |vocab|) and adjacency (R x n x n)."""
    index = _vocab_index(vocab)
    x = np.zeros((g.n_atoms, len(vocab)))
    for i, s in enumerate(g.atoms):
        x[i, atom_index(s, index)] = 1.0
    adj = np.zeros((n_relations, g.n_atoms, g.n_atoms))
    for i, j, r in g.bonds:
        r = relation_index(r, n_relations)
        adj[r, i, j] = adj[r, j, i] = 1.0
    return x, adj


def supernode_features(g: MolGraph, vocab: Sequence[str] = DEFAULT_VOCAB,
                       n_relations: int = N_BOND_TYPES) -> np.ndarray:
    """[atom histogram | bond-type histogram | node count | edge count]."""
    index = _vocab_index(vocab)
    atom_hist = np.zeros(len(vocab))
    for s in g.atoms:
        atom_hist[atom_index(s, index)] += 1
    bond_hist = np.zeros(n_relations)
    for _, _, r in g.bonds:
        bond_hist[relation_index(r, n_relations)] += 1
    return np.concatenate([atom_hist, bond_hist, [g.n_atoms, g.n_bonds]])


def supernode_width(vocab: Sequence[str] = DEFAULT_VOCAB, n_relations: int = N_BOND_TYPES):
    return len(vocab) + n_relations + 2


# --------------------------------------------------------------------------
# batching

@dataclass
class GraphBatch:
    """
    Zero-padded batch of graphs.

    Shapes: node_features (B, N, V), adjacency (R, B, N, N), node_mask (B, N),
    supernode_features (B, S), labels and label_mask (B, T).
    """

    node_features: np.ndarray
    adjacency: np.ndarray
    node_mask: np.ndarray
    supernode_features: np.ndarray
    labels: np.ndarray
    label_mask: np.ndarray

    @property
    def size(self):
        return self.node_features.shape[0]

    @property
    def n_nodes(self):
        return self.node_features.shape[1]


def batch(graphs: Sequence[MolGraph], vocab: Sequence[str] = DEFAULT_VOCAB,
          n_tasks: int = 1, labels=None, n_relations: int = N_BOND_TYPES,
          supernode_scale: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> GraphBatch:
    """
    Pad ``graphs`` to a common node count.

    ``labels`` is an optional (B, T) array where NaN marks a missing value.
    ``supernode_scale`` is an optional (center, scale) pair applied to the raw
    supernode vectors.
    """
    if len(graphs) == 0:
        raise ValueError("cannot batch an empty list of graphs")
    b = len(graphs)
    n = max(max(g.n_atoms for g in graphs), 1)
    v = len(vocab)
    x = np.zeros((b, n, v))
    adj = np.zeros((n_relations, b, n, n))
    mask = np.zeros((b, n), dtype=bool)
    sup = np.zeros((b, supernode_width(vocab, n_relations)))
    for k, g in enumerate(graphs):
        xk, ak = featurize(g, vocab, n_relations)
        m = g.n_atoms
        x[k, :m] = xk
        adj[:, k, :m, :m] = ak
        mask[k, :m] = True
        sup[k] = supernode_features(g, vocab, n_relations)
    if supernode_scale is not None:
        center, scale = supernode_scale
        sup = (sup - center) / scale

    if labels is None:
        y = np.zeros((b, n_tasks))
        ymask = np.zeros((b, n_tasks), dtype=bool)
    else:
        raw = np.asarray(labels, dtype=float).reshape(b, -1)
        if raw.shape[1] != n_tasks:
            raise ValueError(f"labels have {raw.shape[1]} columns, expected {n_tasks}")
        ymask = ~np.isnan(raw)
        y = np.where(ymask, raw, 0.0)
    return GraphBatch(x, adj, mask, sup, y, ymask)


def fit_supernode_scale(graphs: Sequence[MolGraph], vocab=DEFAULT_VOCAB,
                        n_relations: int = N_BOND_TYPES):
    """Per-feature (mean, std) of raw supernode vectors; constant features get std 1."""
    raw = np.stack([supernode_features(g, vocab, n_relations) for g in graphs])
    std = raw.std(axis=0)
    return raw.mean(axis=0), np.where(std > 0, std, 1.0)


# --------------------------------------------------------------------------
# splits

def skeleton_key(g: MolGraph, iterations: int = 3) -> str:
    """WL hash of the graph with atom labels erased and bonds untyped."""
    skeleton = nx.Graph()
    skeleton.add_nodes_from(range(g.n_atoms))
    skeleton.add_edges_from((i, j) for i, j, _ in g.bonds)
    return nx.weisfeiler_lehman_graph_hash(skeleton, iterations=iterations)


def _check_fractions(fractions, n):
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise SplitError(f"fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must sum to 1, got {sum(fractions)}")
    if n < 3:
        raise SplitError(f"need at least 3 samples to split, got {n}")


def split_by_keys(keys: Sequence[str], fractions=(0.8, 0.1, 0.1)):
    """Greedy group assignment: biggest groups first, ties by key."""
    _check_fractions(fractions, len(keys))
    groups: Dict[str, List[int]] = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    n = len(keys)
    train_cut = fractions[0] * n
    val_cut = (fractions[0] + fractions[1]) * n
    train, val, test = [], [], []
    for _, members in ordered:
        if len(train) + len(members) > train_cut + 1e-9:
            if len(train) + len(val) + len(members) > val_cut + 1e-9:
                test.extend(members)
            else:
                val.extend(members)
        else:
            train.extend(members)
    return sorted(train), sorted(val), sorted(test)


def skeleton_split(graphs: Sequence[MolGraph], fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """
    Structure-grouped train/val/test index lists.

    Molecules sharing a skeleton key always land in the same subset. The
    assignment is fully determined by the keys; ``seed`` is accepted for
    signature parity with :func:`random_split` and does not affect the result.
    """
    return split_by_keys([skeleton_key(g) for g in graphs], fractions)


def random_split(n: int, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    _check_fractions(fractions, n)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return (sorted(perm[:n_train].tolist()), sorted(perm[n_train:n_train + n_val].tolist()),
            sorted(perm[n_train + n_val:].tolist()))


# --------------------------------------------------------------------------
# CSV datasets

@dataclass
class MolDataset:
    smiles: List[str]
    graphs: List[MolGraph]
    labels: np.ndarray  # (n, T), NaN = missing
    tasks: List[str]

    def __len__(self):
        return len(self.graphs)

    def subset(self, indices: Sequence[int]) -> "MolDataset":
        idx = list(indices)
        return MolDataset([self.smiles[i] for i in idx], [self.graphs[i] for i in idx],
                          self.labels[idx], list(self.tasks))


def _parse_label(cell: str, row: int, column: str) -> float:
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise ValueError(f"row {row}: non-numeric label {cell!r} in column {column!r}") from None


def load_csv(path, smiles_column: str = "smiles") -> MolDataset:
    """Read a CSV with a SMILES column plus one numeric column per task."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or smiles_column not in reader.fieldnames:
            raise ValueError(f"{path}: missing {smiles_column!r} column")
        tasks = [c for c in reader.fieldnames if c != smiles_column]
        smiles, graphs, labels = [], [], []
        for row_no, row in enumerate(reader, start=2):
            s = row[smiles_column].strip()
            try:
                graphs.append(parse_smiles(s))
            except SmilesParseError as exc:
                raise SmilesParseError(f"line {row_no}: {exc.reason}", s, exc.offset) from exc
            smiles.append(s)
            labels.append([_parse_label(row[t] or "", row_no, t) for t in tasks])
    labels = np.array(labels, dtype=float).reshape(len(smiles), len(tasks))
    logger.info("loaded %d molecules, %d tasks from %s", len(smiles), len(tasks), path)
    return MolDataset(smiles, graphs, labels, tasks)


def write_csv(path, smiles: Sequence[str], labels, tasks: Sequence[str]):
    labels = np.asarray(labels, dtype=float).reshape(len(smiles), len(tasks))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", *tasks])
        for s, row in zip(smiles, labels):
            w.writerow([s, *("" if math.isnan(v) else repr(float(v)) for v in row)])
