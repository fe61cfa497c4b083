"""
Graph warp module: a supernode that talks to the host GNN at every layer.

One step takes the previous node states ``h_prev`` (B, N, D), the previous
supernode state ``g_prev`` (B, D) and the host layer's message ``h_hat``
(B, N, D), and returns the next ``(h, g)``. Supernode and node widths are
equal.

Variants
--------
full
    Attention transmitter, sigmoid warp gates and a GRU on each side.
nogate
    Attention transmitter; gates replaced by trainable linear mixes, GRU on
    the supernode side only.
simple
    Sum-pooling transmitter; linear mixes, no GRUs.
"""

from typing import Dict, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Params, glorot, init_gru, gru_cell, node_mask3, zeros

VARIANTS = ("none", "simple", "nogate", "full")


def _sub(params: Params, prefix: str) -> Params:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def init_supernode_embedding(rng, n_raw: int, dim: int) -> Params:
    return {"W": glorot(rng, n_raw, dim), "b": zeros(dim)}


def init_supernode(raw, params: Params) -> Tensor:
    """Initial supernode state: a trainable affine map of raw graph features."""
    return ad.as_tensor(raw) @ params["W"] + params["b"]


def init_gwm_layer(rng, variant: str, dim: int, n_heads: int) -> Params:
    p: Dict[str, Tensor] = {}
    if variant == "simple":
        p["W"] = glorot(rng, dim, dim)
    else:
        for k in range(n_heads):
            p[f"A{k}"] = glorot(rng, dim, dim)
            p[f"U{k}"] = glorot(rng, dim, dim)
        p["W"] = glorot(rng, n_heads * dim, dim)
    p["F"] = glorot(rng, dim, dim)
    p["V"] = glorot(rng, dim, dim)
    if variant == "full":
        p["H"] = glorot(rng, dim, dim)
        p["G"] = glorot(rng, dim, dim)
        p["b_z"] = zeros(dim)
        p["H_s"] = glorot(rng, dim, dim)
        p["G_s"] = glorot(rng, dim, dim)
        p["b_zs"] = zeros(dim)
        p.update({f"gru_main.{k}": v for k, v in init_gru(rng, dim, dim).items()})
    else:
        for name in ("Z1", "Z2", "Z1_s", "Z2_s"):
            p[name] = glorot(rng, dim, dim)
    if variant in ("full", "nogate"):
        p.update({f"gru_super.{k}": v for k, v in init_gru(rng, dim, dim).items()})
    return p


def node_attention(h_prev: Tensor, g_prev: Tensor, mask, params: Params) -> Tensor:
    """
    Per-head attention of the supernode over nodes, shape (B, N, K).

    Scores are the bilinear forms h_i^T A_k g; the softmax runs over the
    unmasked nodes of each graph.
    """
    n_heads = sum(1 for k in params if k.startswith("A"))
    cols = []
    for k in range(n_heads):
        query = ad.reshape(g_prev @ ad.transpose(params[f"A{k}"]), (g_prev.shape[0], -1, 1))
        cols.append(ad.matmul(h_prev, query))
    scores = ad.concat(cols, axis=-1)
    return ad.softmax_masked(scores, np.asarray(mask, dtype=bool)[..., None], axis=1)


def transmit_main_to_super(h_prev: Tensor, g_prev: Tensor, mask, params: Params) -> Tensor:
    """tanh(W concat_k sum_i alpha_ik U_k h_i), shape (B, D)."""
    alpha = node_attention(h_prev, g_prev, mask, params)
    messages = []
    for k in range(alpha.shape[-1]):
        weights = ad.reshape(alpha[:, :, k], (alpha.shape[0], 1, -1))
        pooled = ad.matmul(weights, h_prev)  # (B, 1, D)
        messages.append(ad.reshape(pooled, (alpha.shape[0], -1)) @ params[f"U{k}"])
    return ad.tanh(ad.concat(messages, axis=-1) @ params["W"])


def transmit_sum_to_super(h_prev: Tensor, mask, params: Params) -> Tensor:
    """Attention-free transmitter: tanh(W sum_i h_i)."""
    pooled = ad.sum_reduce(h_prev * node_mask3(mask), axis=1)
    return ad.tanh(pooled @ params["W"])


def transmit_super_to_main(g_prev: Tensor, params: Params) -> Tensor:
    return ad.tanh(ad.as_tensor(g_prev) @ params["F"])


def supernode_message(g_prev: Tensor, params: Params) -> Tensor:
    """The supernode's self-message tanh(g V)."""
    return ad.tanh(ad.as_tensor(g_prev) @ params["V"])


def _per_node(x: Tensor) -> Tensor:
    return ad.reshape(x, (x.shape[0], 1, x.shape[-1]))


def warp_gates(h_hat: Tensor, g_hat: Tensor, g2m: Tensor, m2s: Tensor,
               params: Params) -> Tuple[Tensor, Tensor]:
    """Gate coefficients z (B, N, D) and z_s (B, D)."""
    z = ad.sigmoid(h_hat @ params["H"] + _per_node(g2m @ params["G"]) + params["b_z"])
    z_s = ad.sigmoid(m2s @ params["H_s"] + g_hat @ params["G_s"] + params["b_zs"])
    return z, z_s


def warp_gate_merge(h_hat: Tensor, g_hat: Tensor, g2m: Tensor, m2s: Tensor,
                    params: Params) -> Tuple[Tensor, Tensor]:
    """
    Gated interpolation of main and supernode messages.

    h0_i = (1 - z_i) * h_hat_i + z_i * g2m and g0 = z_s * m2s + (1 - z_s) * g_hat.
    """
    z, z_s = warp_gates(h_hat, g_hat, g2m, m2s, params)
    h0 = (1.0 - z) * h_hat + z * _per_node(g2m)
    g0 = z_s * m2s + (1.0 - z_s) * g_hat
    return h0, g0


def linear_merge(h_hat: Tensor, g_hat: Tensor, g2m: Tensor, m2s: Tensor,
                 params: Params) -> Tuple[Tensor, Tensor]:
    h0 = h_hat @ params["Z1"] + _per_node(g2m @ params["Z2"])
    g0 = m2s @ params["Z1_s"] + g_hat @ params["Z2_s"]
    return h0, g0


def gwm_step(h_prev: Tensor, g_prev: Tensor, h_hat: Tensor, mask, params: Params,
             variant: str = "full") -> Tuple[Tensor, Tensor]:
    """Merge host message ``h_hat`` with the supernode; returns ``(h, g)``."""
    m3 = node_mask3(mask)
    g2m = transmit_super_to_main(g_prev, params)
    g_hat = supernode_message(g_prev, params)
    if variant == "simple":
        m2s = transmit_sum_to_super(h_prev, mask, params)
    elif variant in ("nogate", "full"):
        m2s = transmit_main_to_super(h_prev, g_prev, mask, params)
    else:
        raise ValueError(f"unknown GWM variant {variant!r}")

    if variant == "full":
        h0, g0 = warp_gate_merge(h_hat, g_hat, g2m, m2s, params)
        h = gru_cell(h_prev, h0, _sub(params, "gru_main."))
        g = gru_cell(g_prev, g0, _sub(params, "gru_super."))
    else:
        h, g0 = linear_merge(h_hat, g_hat, g2m, m2s, params)
        g = gru_cell(g_prev, g0, _sub(params, "gru_super.")) if variant == "nogate" else g0
    return h * m3, g
