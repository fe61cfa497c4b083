"""
Host GNN layers (RSGCN, GGNN, RGAT, GIN) and the shared GRU cell.

Tensors use the row-vector convention: node states are (B, N, D) and a
weight maps by right-multiplication, ``h @ W``. Adjacency is a constant
(R, B, N, N) array and the node mask a boolean (B, N) array. Every layer
zeroes padded rows of its output.
"""

from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ShapeError

Params = Dict[str, Tensor]

HOSTS = ("rsgcn", "ggnn", "rgat", "gin")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def node_mask3(mask) -> np.ndarray:
    """(B, N) boolean mask as a broadcastable (B, N, 1) float array."""
    return np.asarray(mask, dtype=float)[..., None]


def _check_nodes(h: Tensor, adjacency, mask):
    b, n = np.shape(mask)
    if h.ndim != 3 or h.shape[:2] != (b, n) or np.shape(adjacency)[1:] != (b, n, n):
        raise ShapeError(f"inconsistent layer inputs: h {h.shape}, adjacency "
                         f"{np.shape(adjacency)}, mask {np.shape(mask)}")


def total_adjacency(adjacency, mask) -> np.ndarray:
    """Relation-summed 0/1 adjacency restricted to unmasked nodes, (B, N, N)."""
    a = np.minimum(np.asarray(adjacency).sum(axis=0), 1.0)
    m = np.asarray(mask, dtype=float)
    return a * m[:, :, None] * m[:, None, :]


def renormalized_adjacency(adjacency, mask) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with the self-loop on every (also padded) node."""
    a = total_adjacency(adjacency, mask)
    a = a + np.eye(a.shape[-1])[None]
    d = a.sum(axis=-1) ** -0.5
    return d[:, :, None] * a * d[:, None, :]


# --------------------------------------------------------------------------
# GRU

def init_gru(rng, d_in: int, d_state: int) -> Params:
    p = {}
    for gate in ("u", "r", "c"):
        p[f"W_{gate}"] = glorot(rng, d_in, d_state)
        p[f"U_{gate}"] = glorot(rng, d_state, d_state)
        p[f"b_{gate}"] = zeros(d_state)
    return p


def gru_cell(state: Tensor, x: Tensor, params: Params) -> Tensor:
    """
    Standard GRU update; ``state`` and ``x`` share all leading axes.

    u = sig(x W_u + s U_u + b_u), r = sig(x W_r + s U_r + b_r),
    c = tanh(x W_c + (r * s) U_c + b_c), out = (1 - u) * s + u * c.
    """
    state, x = ad.as_tensor(state), ad.as_tensor(x)
    d_state = params["U_u"].shape[0]
    if state.shape[-1] != d_state or x.shape[-1] != params["W_u"].shape[0] \
            or state.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"gru_cell: state {state.shape} / input {x.shape} do not match "
                         f"parameters ({params['W_u'].shape[0]} -> {d_state})")
    u = ad.sigmoid(x @ params["W_u"] + state @ params["U_u"] + params["b_u"])
    r = ad.sigmoid(x @ params["W_r"] + state @ params["U_r"] + params["b_r"])
    c = ad.tanh(x @ params["W_c"] + (r * state) @ params["U_c"] + params["b_c"])
    return state + u * (c - state)


# --------------------------------------------------------------------------
# RSGCN

def init_rsgcn(rng, dim: int, n_relations: int, n_heads: int) -> Params:
    return {"W": glorot(rng, dim, dim)}


def rsgcn_layer(h: Tensor, adjacency, mask, params: Params, **_) -> Tensor:
    _check_nodes(h, adjacency, mask)
    a_hat = renormalized_adjacency(adjacency, mask)
    out = ad.relu(ad.matmul(a_hat, h @ params["W"]))
    return out * node_mask3(mask)


# --------------------------------------------------------------------------
# GGNN

def init_ggnn(rng, dim: int, n_relations: int, n_heads: int) -> Params:
    p = {f"W_rel{r}": glorot(rng, dim, dim) for r in range(n_relations)}
    p.update({f"gru.{k}": v for k, v in init_gru(rng, dim, dim).items()})
    return p


def ggnn_layer(h: Tensor, adjacency, mask, params: Params, **_) -> Tensor:
    _check_nodes(h, adjacency, mask)
    m3 = node_mask3(mask)
    message = None
    for r in range(np.shape(adjacency)[0]):
        a_r = total_adjacency(adjacency[r:r + 1], mask)
        term = ad.matmul(a_r, h @ params[f"W_rel{r}"])
        message = term if message is None else message + term
    out = gru_cell(h, message, _sub(params, "gru."))
    return out * m3


# --------------------------------------------------------------------------
# RGAT

def init_rgat(rng, dim: int, n_relations: int, n_heads: int) -> Params:
    p = {}
    for k in range(n_heads):
        p[f"F{k}"] = glorot(rng, dim, dim)
        p[f"G{k}"] = glorot(rng, dim, dim)
        for r in range(n_relations):
            p[f"A{k}_rel{r}"] = glorot(rng, dim, dim)
    p["W"] = glorot(rng, n_heads * dim, dim)
    return p


def rgat_attention(h: Tensor, adjacency, mask, params: Params, head: int) -> Tensor:
    """Neighbour attention (B, N, N) of one head; rows of isolated nodes are zero."""
    score = None
    for r in range(np.shape(adjacency)[0]):
        a_r = total_adjacency(adjacency[r:r + 1], mask)
        bilinear = ad.matmul(h @ params[f"A{head}_rel{r}"], ad.transpose(h))
        term = bilinear * a_r
        score = term if score is None else score + term
    neighbours = total_adjacency(adjacency, mask) > 0
    return ad.softmax_masked(score, neighbours, axis=-1, allow_empty=True)


def rgat_layer(h: Tensor, adjacency, mask, params: Params, **_) -> Tensor:
    _check_nodes(h, adjacency, mask)
    n_heads = sum(1 for k in params if k.startswith("F"))
    heads = []
    for k in range(n_heads):
        alpha = rgat_attention(h, adjacency, mask, params, k)
        heads.append(h @ params[f"F{k}"] + ad.matmul(alpha, h @ params[f"G{k}"]))
    out = ad.tanh(ad.concat(heads, axis=-1) @ params["W"])
    return out * node_mask3(mask)


# --------------------------------------------------------------------------
# GIN

GIN_EPSILON = 0.0


def init_gin(rng, dim: int, n_relations: int, n_heads: int) -> Params:
    return {"W1": glorot(rng, dim, dim), "b1": zeros(dim),
            "W2": glorot(rng, dim, dim), "b2": zeros(dim)}


def gin_layer(h: Tensor, adjacency, mask, params: Params, dropout: float = 0.0,
              training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    _check_nodes(h, adjacency, mask)
    m3 = node_mask3(mask)
    agg = (1.0 + GIN_EPSILON) * h + ad.matmul(total_adjacency(adjacency, mask), h)
    hidden = ad.relu(agg @ params["W1"] + params["b1"])
    if training and dropout > 0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        keep = rng.random(hidden.shape) >= dropout
        hidden = hidden * (keep / (1.0 - dropout))
    out = ad.relu(hidden @ params["W2"] + params["b2"])
    return out * m3


LAYERS = {"rsgcn": (init_rsgcn, rsgcn_layer), "ggnn": (init_ggnn, ggnn_layer),
          "rgat": (init_rgat, rgat_layer), "gin": (init_gin, gin_layer)}


def _sub(params: Params, prefix: str) -> Params:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def init_host(host: str, rng, dim: int, n_relations: int, n_heads: int) -> Params:
    if host not in LAYERS:
        raise ValueError(f"unknown host {host!r}; choose from {HOSTS}")
    return LAYERS[host][0](rng, dim, n_relations, n_heads)


def host_layer(host: str, h, adjacency, mask, params: Params, **kwargs) -> Tensor:
    return LAYERS[host][1](h, adjacency, mask, params, **kwargs)
