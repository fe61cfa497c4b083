"""Full model: node embedding, host layers interleaved with GWM steps, readout."""

import json
import struct
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .chem import GraphBatch
from .gwm import VARIANTS, gwm_step, init_gwm_layer, init_supernode, init_supernode_embedding
from .layers import HOSTS, Params, glorot, host_layer, init_host, node_mask3, zeros


@dataclass(frozen=True)
class ModelConfig:
    host: str = "rsgcn"
    variant: str = "full"
    n_layers: int = 3
    dim: int = 50
    n_heads: int = 8
    n_relations: int = 4
    n_tasks: int = 1
    task: str = "classification"
    dropout: float = 0.5
    seed: int = 0
    n_atom_types: int = 13

    @property
    def n_super_features(self) -> int:
        return self.n_atom_types + self.n_relations + 2

    def __post_init__(self):
        if self.host not in HOSTS:
            raise ValueError(f"host must be one of {HOSTS}, got {self.host!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.task not in ("classification", "regression"):
            raise ValueError(f"task must be classification or regression, got {self.task!r}")
        for name in ("n_layers", "dim", "n_heads", "n_relations", "n_tasks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


# parameters are grouped by component: {"embed": {...}, "host0": {...}, ...}
ModelParams = Dict[str, Params]


def init_params(config: ModelConfig) -> ModelParams:
    """Glorot-uniform weights and zero biases, fully determined by ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    d = config.dim
    params: ModelParams = {"embed": {"W": glorot(rng, config.n_atom_types, d)}}
    for layer in range(config.n_layers):
        params[f"host{layer}"] = init_host(config.host, rng, d, config.n_relations,
                                           config.n_heads)
    # supernode weights come from a separate stream so host weights are identical
    # with and without the module
    super_rng = np.random.default_rng([config.seed, 1])
    if config.variant != "none":
        params["super_embed"] = init_supernode_embedding(super_rng, config.n_super_features, d)
        for layer in range(config.n_layers):
            params[f"gwm{layer}"] = init_gwm_layer(super_rng, config.variant, d,
                                                   config.n_heads)
    params["readout"] = {"W_agg": glorot(rng, d, d), "b_agg": zeros(d),
                         "W_out": glorot(rng, 2 * d, config.n_tasks),
                         "b_out": zeros(config.n_tasks)}
    return params


def flatten_params(params: ModelParams) -> Dict[str, Tensor]:
    return {f"{group}.{name}": t for group, p in params.items() for name, t in p.items()}


def parameter_list(params: ModelParams) -> List[Tensor]:
    return list(flatten_params(params).values())


def n_parameters(params: ModelParams) -> int:
    return sum(t.data.size for t in parameter_list(params))


def readout(h_final: Tensor, g_final: Tensor, mask, params: Params) -> Tensor:
    """Linear map of the masked node sum, concatenated with g, then one dense layer."""
    pooled = ad.sum_reduce(h_final * node_mask3(mask), axis=1)
    aggregate = pooled @ params["W_agg"] + params["b_agg"]
    return ad.concat([aggregate, ad.as_tensor(g_final)], axis=-1) @ params["W_out"] \
        + params["b_out"]


def model_forward(config: ModelConfig, params: ModelParams, batch: GraphBatch,
                  training: bool = False, rng: Optional[np.random.Generator] = None,
                  return_states: bool = False):
    """
    Predictions (B, T): logits for classification, values for regression.

    With ``return_states`` the per-layer ``(h, g)`` pairs are returned too.
    """
    mask = batch.node_mask
    h = (ad.as_tensor(batch.node_features) @ params["embed"]["W"]) * node_mask3(mask)
    if config.variant == "none":
        g = Tensor(np.zeros((batch.size, config.dim)))
    else:
        g = init_supernode(batch.supernode_features, params["super_embed"])
    states: List[Tuple[Tensor, Tensor]] = [(h, g)]
    for layer in range(config.n_layers):
        h_hat = host_layer(config.host, h, batch.adjacency, mask, params[f"host{layer}"],
                           dropout=config.dropout, training=training, rng=rng)
        if config.variant == "none":
            h = h_hat
        else:
            h, g = gwm_step(h, g, h_hat, mask, params[f"gwm{layer}"], config.variant)
        states.append((h, g))
    out = readout(h, g, mask, params["readout"])
    return (out, states) if return_states else out


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"GWMCKPT\0"
CHECKPOINT_VERSION = 1


BUFFER_GROUP = "buffer"


def save_checkpoint(path, config: ModelConfig, params: ModelParams,
                    buffers: Optional[Dict[str, np.ndarray]] = None):
    """
    Binary little-endian layout::

        magic[8] version:u32 config_len:u32 config_json n_tensors:u32
        per tensor: name_len:u32 name ndim:u32 dims:u64[ndim] values:f64[prod(dims)]

    ``buffers`` are non-trainable arrays (e.g. feature scaling) stored under
    the ``buffer.`` prefix after the parameters.
    """
    flat = flatten_params(params)
    for name, value in (buffers or {}).items():
        flat[f"{BUFFER_GROUP}.{name}"] = Tensor(value)
    cfg = json.dumps(asdict(config), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(flat)))
        for name, t in flat.items():
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}Q", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path, return_buffers: bool = False):
    """``(config, params)``, plus a dict of buffers when ``return_buffers``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    version, cfg_len = struct.unpack_from("<II", data, pos)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    config = ModelConfig(**json.loads(data[pos:pos + cfg_len]))
    pos += cfg_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params: ModelParams = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        group, _, key = name.partition(".")
        params.setdefault(group, {})[key] = Tensor(values, requires_grad=group != BUFFER_GROUP)
    buffers = {k: t.data for k, t in params.pop(BUFFER_GROUP, {}).items()}
    return (config, params, buffers) if return_buffers else (config, params)
