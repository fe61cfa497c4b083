"""
Acceptance checks. Each test carries a ``criterion`` marker; the session ends
with one PASS/FAIL line per criterion (see conftest.py).
"""

import csv
import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from graphwarp import cli
from graphwarp.autodiff import Tensor
from graphwarp.chem import batch, parse_smiles, skeleton_key, skeleton_split
from graphwarp.gradcheck import TOLERANCE, component_names, random_batch, random_graph, run_suite
from graphwarp.gwm import (init_gwm_layer, node_attention, supernode_message,
                           transmit_main_to_super, transmit_sum_to_super,
                           transmit_super_to_main, warp_gates)
from graphwarp.layers import HOSTS, init_rgat, rgat_attention
from graphwarp.model import ModelConfig, flatten_params, init_params, model_forward
from graphwarp.synthetic import long_range_dataset
from graphwarp.training import loss_reduction_ratio, roc_auc, train_loop

DATA = Path(__file__).parent / "data"


def _report(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.mark.criterion("gradient suite: all components < 1e-4 on 10 random graphs, < 5 min")
def test_gradient_suite():
    started = time.perf_counter()
    results = run_suite(seed=0, trials=10, model_trials=1, dim=4, heads=2, relations=2)
    elapsed = time.perf_counter() - started
    required = ([f"host.{h}" for h in HOSTS] + ["gwm.simple", "gwm.nogate", "gwm.full",
                                               "readout", "loss.bce", "loss.mse"])
    assert set(required) <= set(results) and set(results) == set(component_names())
    offenders = {k: v for k, v in results.items() if not v < TOLERANCE}
    worst = max(results, key=results.get)
    _report("gradient suite", not offenders and elapsed < 300,
            f"worst {worst}={results[worst]:.2e}, {elapsed:.0f}s")
    assert not offenders, offenders
    assert elapsed < 300, f"took {elapsed:.0f}s"


@pytest.mark.criterion("attention normalization: transmitter and RGAT rows sum to 1 +- 1e-9")
def test_attention_normalization():
    rng = np.random.default_rng(100)
    worst = 0.0
    for _ in range(200):
        bt = random_batch(rng, n_graphs=3)
        m = bt.node_mask[..., None]
        h = Tensor(rng.normal(size=(3, bt.n_nodes, 4)) * m)
        g = Tensor(rng.normal(size=(3, 4)))
        alpha = node_attention(h, g, bt.node_mask, init_gwm_layer(rng, "full", 4, 2)).data
        worst = max(worst, np.abs(alpha.sum(axis=1) - 1).max())
        p = init_rgat(rng, 4, 2, 2)
        has_neighbour = bt.adjacency.sum(axis=0).sum(axis=-1) > 0
        for k in range(2):
            a = rgat_attention(h, bt.adjacency, bt.node_mask, p, k).data
            worst = max(worst, np.abs(a.sum(axis=-1)[has_neighbour] - 1).max())
    _report("attention normalization", worst <= 1e-9, f"max deviation {worst:.1e}")
    assert worst <= 1e-9


@pytest.mark.criterion("gate and range invariants: z in (0,1), tanh messages in (-1,1), 1000 inputs")
def test_gate_and_range_invariants():
    rng = np.random.default_rng(101)
    violations = 0
    for _ in range(1000):
        bt = random_batch(rng, n_graphs=2)
        m = bt.node_mask[..., None]
        h = Tensor(rng.normal(size=(2, bt.n_nodes, 4)) * m)
        h_hat = Tensor(rng.normal(size=(2, bt.n_nodes, 4)) * m)
        g = Tensor(rng.normal(size=(2, 4)))
        p = init_gwm_layer(rng, "full", 4, 2)
        g2m, g_hat = transmit_super_to_main(g, p), supernode_message(g, p)
        m2s = transmit_main_to_super(h, g, bt.node_mask, p)
        z, z_s = warp_gates(h_hat, g_hat, g2m, m2s, p)
        simple = transmit_sum_to_super(h, bt.node_mask, init_gwm_layer(rng, "simple", 4, 2))
        violations += int(not np.all((z.data > 0) & (z.data < 1)))
        violations += int(not np.all((z_s.data > 0) & (z_s.data < 1)))
        for t in (g2m, g_hat, m2s, simple):
            violations += int(not np.all(np.abs(t.data) < 1))
    _report("gate and range invariants", violations == 0, f"{violations} violations")
    assert violations == 0


@pytest.mark.criterion("symmetry: forward invariant, g invariant, h equivariant, 50 permutations")
def test_permutation_symmetry():
    rng = np.random.default_rng(102)
    worst = 0.0
    for trial in range(50):
        host = HOSTS[trial % len(HOSTS)]
        cfg = ModelConfig(host=host, variant="full", n_layers=2, dim=5, n_heads=2,
                          n_relations=2, seed=trial)
        params = init_params(cfg)
        graphs = [random_graph(rng) for _ in range(2)]
        perms = [rng.permutation(gr.n_atoms) for gr in graphs]
        out, states = model_forward(cfg, params, batch(graphs, n_relations=2),
                                    return_states=True)
        pbt = batch([gr.permuted(q) for gr, q in zip(graphs, perms)], n_relations=2)
        pout, pstates = model_forward(cfg, params, pbt, return_states=True)
        worst = max(worst, np.abs(out.data - pout.data).max())
        for (h, g), (ph, pg) in zip(states, pstates):
            worst = max(worst, np.abs(g.data - pg.data).max())
            for b, q in enumerate(perms):
                worst = max(worst, np.abs(ph.data[b, :len(q)] - h.data[b, q]).max())
    _report("symmetry", worst <= 1e-9, f"max deviation {worst:.1e}")
    assert worst <= 1e-9


@pytest.mark.criterion("ablation oracle: simple module with Z1=I, Z2=0 reproduces host exactly")
def test_ablation_reduction():
    rng = np.random.default_rng(103)
    mismatches = 0
    for host in HOSTS:
        kw = dict(host=host, n_layers=3, dim=6, n_heads=2, n_relations=2, seed=7)
        vanilla_cfg = ModelConfig(variant="none", **kw)
        simple_cfg = ModelConfig(variant="simple", **kw)
        vanilla, simple = init_params(vanilla_cfg), init_params(simple_cfg)
        flat_v, flat_s = flatten_params(vanilla), flatten_params(simple)
        for name, t in flat_v.items():
            mismatches += int(flat_s[name].shape != t.shape)
        for layer in range(3):
            p = simple[f"gwm{layer}"]
            p["Z1"].data[...] = np.eye(6)
            for name in ("Z2", "Z1_s", "Z2_s"):
                p[name].data[...] = 0.0
        for _ in range(5):
            graphs = [random_graph(rng) for _ in range(4)]
            bt = batch(graphs, n_relations=2)
            a = model_forward(vanilla_cfg, vanilla, bt).data
            b = model_forward(simple_cfg, simple, bt).data
            mismatches += int(not np.array_equal(a, b))
    _report("ablation oracle", mismatches == 0, f"{mismatches} mismatches over 20 graphs/host")
    assert mismatches == 0


def _pairwise_auc(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


@pytest.mark.criterion("ROC-AUC equals pairwise brute force within 1e-12 on 100 instances")
def test_auc_oracle():
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 101))
        scores = rng.normal(size=n)
        if rng.random() < 0.5:
            scores = np.round(scores, 1)
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        worst = max(worst, abs(roc_auc(scores, labels) - _pairwise_auc(scores, labels)))
    _report("ROC-AUC oracle", worst <= 1e-12, f"max deviation {worst:.1e}")
    assert worst <= 1e-12


# --------------------------------------------------------------------------
# desk-scale experiment, shared by two criteria

DESK_SEEDS = [0, 1, 2, 3, 4]


@pytest.fixture(scope="module")
def desk_sweep(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    data = root / "long_range.csv"
    assert cli.main(["make-synthetic", "--out", str(data), "--n", "500", "--seed", "0"]) == 0
    started = time.perf_counter()
    code = cli.main(["sweep", "--data", str(data), "--hosts", "rsgcn,ggnn",
                     "--variants", "none,full", "--layer-grid", "3", "--dim-grid", "50",
                     "--seeds", ",".join(map(str, DESK_SEEDS)), "--epochs", "30",
                     "--split", "random", "--split-seed", "0", "--out", str(root / "out")])
    elapsed = time.perf_counter() - started
    assert code == 0
    return root / "out", elapsed


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _final_losses(rows):
    last = {}
    for r in rows:
        key = (r["host"], r["variant"], int(r["seed"]))
        if key not in last or int(r["epoch"]) > int(last[key]["epoch"]):
            last[key] = r
    return last


@pytest.mark.criterion("desk-scale long-range task: median r_train > 0 and r_test > 0 "
                       "for RSGCN and GGNN, < 30 min")
def test_desk_scale_loss_reduction(desk_sweep):
    out, elapsed = desk_sweep
    final = _final_losses(_read(out / "losses.csv"))
    ok = elapsed < 1800
    details = []
    for host in ("rsgcn", "ggnn"):
        r = {}
        for split, key in (("train", "train_loss"), ("test", "test_loss")):
            r[split] = [loss_reduction_ratio([float(final[(host, "none", s)][key])],
                                             [float(final[(host, "full", s)][key])])
                        for s in DESK_SEEDS]
        med_train, med_test = np.median(r["train"]), np.median(r["test"])
        ok &= bool(med_train > 0 and med_test > 0)
        details.append(f"{host}: median r_train {med_train:+.3f}, r_test {med_test:+.3f}")
        print(host, "per-seed r_train", np.round(r["train"], 3), "r_test", np.round(r["test"], 3))
    _report("desk-scale loss reduction", ok, "; ".join(details) + f"; {elapsed:.0f}s")
    assert ok, "; ".join(details) + f"; {elapsed:.0f}s"


@pytest.mark.criterion("reduction.csv recomputes from losses.csv within 1e-12")
def test_reduction_csv_recomputes(desk_sweep):
    out, _ = desk_sweep
    final = _final_losses(_read(out / "losses.csv"))
    rows = _read(out / "reduction.csv")
    assert {r["host"] for r in rows} == {"rsgcn", "ggnn"}
    worst = 0.0
    for row in rows:
        for column, key in (("r_train_mean", "train_loss"), ("r_test_mean", "test_loss")):
            expected = loss_reduction_ratio(
                [float(final[(row["host"], "none", s)][key]) for s in DESK_SEEDS],
                [float(final[(row["host"], row["variant"], s)][key]) for s in DESK_SEEDS])
            worst = max(worst, abs(float(row[column]) - expected))
    _report("reduction.csv arithmetic", worst <= 1e-12, f"max deviation {worst:.1e}")
    assert worst <= 1e-12


@pytest.mark.criterion("SMILES corpus matches golden counts; skeleton split deterministic, "
                       "no straddling")
def test_smiles_corpus_and_split():
    rows = _read(DATA / "corpus_golden.csv")
    assert len(rows) == 50
    mismatched = []
    graphs = []
    for row in rows:
        g = parse_smiles(row["smiles"])
        graphs.append(g)
        counts = np.bincount([t for *_, t in g.bonds], minlength=4).tolist()
        expected = [int(row[k]) for k in ("n_atoms", "n_bonds", "single", "double", "triple",
                                          "aromatic")]
        if [g.n_atoms, g.n_bonds, *counts] != expected:
            mismatched.append(row["smiles"])
    first, second = skeleton_split(graphs), skeleton_split(graphs)
    keys = [skeleton_key(g) for g in graphs]
    owner = {}
    straddles = 0
    for part, idx in enumerate(first):
        for i in idx:
            straddles += int(owner.setdefault(keys[i], part) != part)
    ok = not mismatched and first == second and straddles == 0
    _report("SMILES corpus", ok, f"{len(mismatched)} mismatches, {straddles} straddling")
    assert not mismatched, mismatched
    assert first == second and straddles == 0


@pytest.mark.criterion("determinism: identical seed/config/data give bit-identical RunRecords")
def test_determinism(tmp_path):
    ds = long_range_dataset(60, seed=9)
    splits = ds.subset(range(40)), ds.subset(range(40, 50)), ds.subset(range(50, 60))
    identical = True
    for host in HOSTS:
        cfg = ModelConfig(host=host, variant="full", n_layers=2, dim=8, n_heads=2, seed=3)
        a = train_loop(cfg, *splits, epochs=3, batch_size=16)
        b = train_loop(cfg, *splits, epochs=3, batch_size=16)
        identical &= a == b and a.to_jsonl() == b.to_jsonl()
    data = tmp_path / "d.csv"
    cli.main(["make-synthetic", "--out", str(data), "--n", "40", "--seed", "2"])
    for run in ("a", "b"):
        assert cli.main(["train", "--data", str(data), "--layers", "2", "--dim", "8",
                         "--heads", "2", "--epochs", "2", "--split", "random",
                         "--out", str(tmp_path / run)]) == 0
    identical &= (tmp_path / "a" / "record.jsonl").read_bytes() == \
        (tmp_path / "b" / "record.jsonl").read_bytes()
    _report("determinism", identical)
    assert identical
