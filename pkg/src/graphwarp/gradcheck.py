"""
Finite-difference gradient suite over every differentiable component.

Each component builds a scalar objective on fresh random inputs and reports
the worst relative error from :func:`graphwarp.autodiff.grad_check`.
"""

import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .chem import MolGraph, batch
from .gwm import (gwm_step, init_gwm_layer, init_supernode, init_supernode_embedding,
                  transmit_main_to_super, transmit_super_to_main)
from .layers import HOSTS, gru_cell, host_layer, init_gru, init_host
from .model import ModelConfig, init_params, model_forward, parameter_list, readout
from .training import masked_bce_loss, masked_mse_loss

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
_ATOMS = ("C", "N", "O", "S")


def random_graph(rng: np.random.Generator, min_nodes: int = 4, max_nodes: int = 10,
                 n_bond_types: int = 4) -> MolGraph:
    """Connected random graph: a random spanning tree plus a few chords."""
    n = int(rng.integers(min_nodes, max_nodes + 1))
    atoms = [_ATOMS[k] for k in rng.integers(0, len(_ATOMS), size=n)]
    edges = {(int(rng.integers(0, i)), i) for i in range(1, n)}
    for _ in range(int(rng.integers(0, 3))):
        i, j = sorted(rng.choice(n, size=2, replace=False).tolist())
        edges.add((i, j))
    bonds = [(i, j, int(rng.integers(0, n_bond_types))) for i, j in sorted(edges)]
    return MolGraph(atoms, bonds)


def random_batch(rng, n_graphs: int = 2, n_relations: int = 2, n_tasks: int = 1,
                 min_nodes: int = 4, max_nodes: int = 10):
    graphs = [random_graph(rng, min_nodes, max_nodes) for _ in range(n_graphs)]
    labels = rng.integers(0, 2, size=(n_graphs, n_tasks)).astype(float)
    return batch(graphs, n_tasks=n_tasks, labels=labels, n_relations=n_relations)


def _leaf(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def _jitter_biases(rng, params):
    # zero biases can park ReLU pre-activations exactly on the kink
    for name, t in params.items():
        if name.rsplit(".", 1)[-1].startswith("b"):
            t.data[...] = rng.normal(scale=0.1, size=t.shape)
    return params


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return ad.sum_reduce(out * weights)


Case = Tuple[Callable[[], Tensor], List[Tensor]]


# --------------------------------------------------------------------------
# op-level cases

def _op_cases(rng) -> Dict[str, Case]:
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    x, y = _leaf(rng, 2, 3, 4), _leaf(rng, 4)
    w = rng.normal(size=(2, 3, 4))
    mask = rng.random((2, 3, 4)) < 0.7
    mask[..., 0] = True
    return {
        "add": (lambda: _weighted_sum(x + y, w), [x, y]),
        "sub": (lambda: _weighted_sum(x - y, w), [x, y]),
        "neg": (lambda: _weighted_sum(-x, w), [x]),
        "mul": (lambda: _weighted_sum(x * y, w), [x, y]),
        "matmul": (lambda: _weighted_sum(a @ b, w[0, :, :2]), [a, b]),
        "concat": (lambda: _weighted_sum(ad.concat([a, b.reshape(2, 4)], axis=0),
                                         rng_w(5, 4)), [a, b]),
        "sum": (lambda: _weighted_sum(ad.sum_reduce(x, axis=1), w[:, 0, :]), [x]),
        "tanh": (lambda: _weighted_sum(ad.tanh(x), w), [x]),
        "sigmoid": (lambda: _weighted_sum(ad.sigmoid(x), w), [x]),
        "relu": (lambda: _weighted_sum(ad.relu(x), w), [x]),
        "softplus": (lambda: _weighted_sum(ad.softplus(x), w), [x]),
        "softmax_masked": (lambda: _weighted_sum(ad.softmax_masked(x, mask, axis=-1), w), [x]),
        "slice": (lambda: _weighted_sum(x[:, 1:, ::2], w[:, 1:, ::2]), [x]),
        "broadcast": (lambda: _weighted_sum(ad.broadcast_to(y, (2, 3, 4)), w), [y]),
        "reshape": (lambda: _weighted_sum(x.reshape(6, 4), w.reshape(6, 4)), [x]),
        "transpose": (lambda: _weighted_sum(ad.transpose(x, (2, 0, 1)),
                                            np.transpose(w, (2, 0, 1))), [x]),
    }


_W_CACHE: Dict[Tuple[int, ...], np.ndarray] = {}


def rng_w(*shape):
    if shape not in _W_CACHE:
        _W_CACHE[shape] = np.random.default_rng(len(shape) * 7 + sum(shape)).normal(size=shape)
    return _W_CACHE[shape]


# --------------------------------------------------------------------------
# component-level cases

def _host_case(host, rng, dim, heads, relations) -> Case:
    bt = random_batch(rng, n_relations=relations)
    h = _leaf(rng, bt.size, bt.n_nodes, dim) * bt.node_mask[..., None]
    h = Tensor(h.data, requires_grad=True)
    params = _jitter_biases(rng, init_host(host, rng, dim, relations, heads))
    w = rng.normal(size=h.shape)

    def f():
        drop_rng = np.random.default_rng(11)
        out = host_layer(host, h, bt.adjacency, bt.node_mask, params, dropout=0.3,
                         training=True, rng=drop_rng)
        return _weighted_sum(out, w)

    return f, [h, *params.values()]


def _gru_case(rng, dim) -> Case:
    s, x = _leaf(rng, 3, dim), _leaf(rng, 3, dim + 1)
    params = _jitter_biases(rng, init_gru(rng, dim + 1, dim))
    w = rng.normal(size=(3, dim))
    return (lambda: _weighted_sum(gru_cell(s, x, params), w)), [s, x, *params.values()]


def _gwm_case(variant, rng, dim, heads, relations) -> Case:
    bt = random_batch(rng, n_relations=relations)
    m = bt.node_mask[..., None]
    h_prev = Tensor(rng.normal(size=(bt.size, bt.n_nodes, dim)) * m, requires_grad=True)
    h_hat = Tensor(rng.normal(size=h_prev.shape) * m, requires_grad=True)
    g_prev = _leaf(rng, bt.size, dim)
    params = _jitter_biases(rng, init_gwm_layer(rng, variant, dim, heads))
    wh, wg = rng.normal(size=h_prev.shape), rng.normal(size=g_prev.shape)

    def f():
        h, g = gwm_step(h_prev, g_prev, h_hat, bt.node_mask, params, variant)
        return _weighted_sum(h, wh) + _weighted_sum(g, wg)

    return f, [h_prev, g_prev, h_hat, *params.values()]


def _transmit_case(direction, rng, dim, heads, relations) -> Case:
    bt = random_batch(rng, n_relations=relations)
    h_prev = Tensor(rng.normal(size=(bt.size, bt.n_nodes, dim)) * bt.node_mask[..., None],
                    requires_grad=True)
    g_prev = _leaf(rng, bt.size, dim)
    params = init_gwm_layer(rng, "full", dim, heads)
    w = rng.normal(size=(bt.size, dim))
    if direction == "main_to_super":
        return (lambda: _weighted_sum(transmit_main_to_super(h_prev, g_prev, bt.node_mask,
                                                             params), w),
                [h_prev, g_prev, *(params[k] for k in params if k[0] in "AUW")])
    return (lambda: _weighted_sum(transmit_super_to_main(g_prev, params), w),
            [g_prev, params["F"]])


def _supernode_case(rng, dim, heads, relations) -> Case:
    bt = random_batch(rng, n_relations=relations)
    params = init_supernode_embedding(rng, bt.supernode_features.shape[1], dim)
    w = rng.normal(size=(bt.size, dim))
    return (lambda: _weighted_sum(init_supernode(bt.supernode_features, params), w),
            list(params.values()))


def _readout_case(rng, dim, heads, relations) -> Case:
    bt = random_batch(rng, n_relations=relations, n_tasks=2)
    h = Tensor(rng.normal(size=(bt.size, bt.n_nodes, dim)), requires_grad=True)
    g = _leaf(rng, bt.size, dim)
    params = {"W_agg": _leaf(rng, dim, dim), "b_agg": _leaf(rng, dim),
              "W_out": _leaf(rng, 2 * dim, 2), "b_out": _leaf(rng, 2)}
    w = rng.normal(size=(bt.size, 2))
    return (lambda: _weighted_sum(readout(h, g, bt.node_mask, params), w)), \
        [h, g, *params.values()]


def _loss_case(kind, rng) -> Case:
    x = _leaf(rng, 5, 3, scale=2.0)
    mask = rng.random((5, 3)) < 0.7
    mask[0, 0] = True
    if kind == "bce":
        y = rng.integers(0, 2, size=(5, 3)).astype(float)
        return (lambda: masked_bce_loss(x, y, mask)), [x]
    y = rng.normal(size=(5, 3))
    return (lambda: masked_mse_loss(x, y, mask)), [x]


def _model_case(host, variant, rng, dim, heads, relations) -> Case:
    bt = random_batch(rng, n_relations=relations)
    cfg = ModelConfig(host=host, variant=variant, n_layers=2, dim=dim, n_heads=heads,
                      n_relations=relations, dropout=0.0, seed=int(rng.integers(1 << 30)))
    params = init_params(cfg)
    for group in params.values():
        _jitter_biases(rng, group)
    return (lambda: masked_bce_loss(model_forward(cfg, params, bt), bt.labels, bt.label_mask),
            parameter_list(params))


def component_names(models: bool = True) -> List[str]:
    names = [f"op.{k}" for k in ad.BACKWARD_RULES]
    names += [f"host.{h}" for h in HOSTS] + ["gru"]
    names += ["transmit.main_to_super", "transmit.super_to_main", "supernode.init"]
    names += [f"gwm.{v}" for v in ("simple", "nogate", "full")]
    names += ["readout", "loss.bce", "loss.mse"]
    if models:
        names += [f"model.{h}.{v}" for h in HOSTS for v in ("none", "simple", "nogate", "full")]
    return names


def build_case(name: str, rng, dim: int = 4, heads: int = 2, relations: int = 2) -> Case:
    kind, _, rest = name.partition(".")
    if kind == "op":
        return _op_cases(rng)[rest]
    if kind == "host":
        return _host_case(rest, rng, dim, heads, relations)
    if kind == "gru":
        return _gru_case(rng, dim)
    if kind == "transmit":
        return _transmit_case(rest, rng, dim, heads, relations)
    if kind == "supernode":
        return _supernode_case(rng, dim, heads, relations)
    if kind == "gwm":
        return _gwm_case(rest, rng, dim, heads, relations)
    if kind == "readout":
        return _readout_case(rng, dim, heads, relations)
    if kind == "loss":
        return _loss_case(rest, rng)
    if kind == "model":
        host, variant = rest.split(".")
        return _model_case(host, variant, rng, dim, heads, relations)
    raise KeyError(name)


def run_suite(seed: int = 0, trials: int = 10, model_trials: int = 1,
              names: Optional[List[str]] = None, dim: int = 4, heads: int = 2,
              relations: int = 2, step: float = 1e-5,
              max_entries: Optional[int] = None) -> Dict[str, float]:
    """Worst relative error per component over ``trials`` random instances."""
    names = component_names() if names is None else names
    results = {}
    for k, name in enumerate(names):
        rng = np.random.default_rng([seed, k])
        n = model_trials if name.startswith("model.") else trials
        worst = 0.0
        for _ in range(n):
            f, params = build_case(name, rng, dim, heads, relations)
            worst = max(worst, ad.grad_check(f, params, step, max_entries=max_entries, rng=rng))
        results[name] = worst
        logger.info("%-28s %.3e", name, worst)
    return results
