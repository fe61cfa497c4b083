import struct

import numpy as np
import pytest

from graphwarp import autodiff as ad
from graphwarp.autodiff import Tensor
from graphwarp.chem import batch, parse_smiles
from graphwarp.gradcheck import build_case, random_graph
from graphwarp.layers import HOSTS
from graphwarp.model import (CHECKPOINT_MAGIC, ModelConfig, flatten_params, init_params,
                             load_checkpoint, model_forward, n_parameters, readout,
                             save_checkpoint)

SMALL = dict(n_layers=2, dim=6, n_heads=2, n_relations=2)


def _mol_batch(smiles, n_relations=2):
    return batch([parse_smiles(s) for s in smiles], n_relations=n_relations)


class TestReadout:
    def test_zero_inputs_zero_output(self):
        p = {"W_agg": Tensor(np.ones((3, 3))), "b_agg": Tensor(np.zeros(3)),
             "W_out": Tensor(np.ones((6, 2))), "b_out": Tensor(np.zeros(2))}
        out = readout(Tensor(np.zeros((2, 4, 3))), Tensor(np.zeros((2, 3))),
                      np.ones((2, 4), bool), p)
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_doubling_nodes_doubles_aggregate(self, rng):
        w = rng.normal(size=(3, 3))
        p = {"W_agg": Tensor(w), "b_agg": Tensor(np.zeros(3)),
             "W_out": Tensor(np.vstack([np.eye(3), np.zeros((3, 3))])),
             "b_out": Tensor(np.zeros(3))}
        h = rng.normal(size=(1, 4, 3))
        mask = np.ones((1, 4), bool)
        g = Tensor(rng.normal(size=(1, 3)))
        a = readout(Tensor(h), g, mask, p).data
        b = readout(Tensor(2 * h), g, mask, p).data
        np.testing.assert_allclose(b, 2 * a, rtol=1e-14)

    def test_padded_rows_ignored(self, rng):
        params = init_params(ModelConfig(dim=3, n_layers=1))["readout"]
        mask = np.array([[True, True, False, False]])
        h = rng.normal(size=(1, 4, 3))
        noisy = h.copy()
        noisy[0, 2:] = rng.normal(size=(2, 3)) * 1e3
        g = Tensor(rng.normal(size=(1, 3)))
        assert np.array_equal(readout(Tensor(h), g, mask, params).data,
                              readout(Tensor(noisy), g, mask, params).data)

    def test_gradients(self):
        rng = np.random.default_rng(4)
        assert max(ad.grad_check(*build_case("readout", rng)) for _ in range(5)) < 1e-4


class TestForward:
    def test_output_shape(self):
        cfg = ModelConfig(variant="none", n_layers=1, dim=5, n_tasks=1)
        out = model_forward(cfg, init_params(cfg), _mol_batch(["CCO", "c1ccccc1", "C"],
                                                               n_relations=4))
        assert out.shape == (3, 1)

    @pytest.mark.parametrize("variant", ["none", "simple", "nogate", "full"])
    def test_states_per_layer(self, variant):
        cfg = ModelConfig(variant=variant, n_tasks=3, **SMALL)
        out, states = model_forward(cfg, init_params(cfg), _mol_batch(["CCN", "CC=O"]),
                                    return_states=True)
        assert out.shape == (2, 3)
        assert len(states) == cfg.n_layers + 1
        for h, g in states:
            assert h.shape == (2, 3, 6) and g.shape == (2, 6)

    def test_training_mode_uses_dropout_only_for_gin(self):
        bt = _mol_batch(["CCN", "CC=O"])
        for host in HOSTS:
            cfg = ModelConfig(host=host, **SMALL)
            params = init_params(cfg)
            a = model_forward(cfg, params, bt).data
            b = model_forward(cfg, params, bt, training=True, rng=np.random.default_rng(0)).data
            assert np.array_equal(a, b) == (host != "gin")

    @pytest.mark.parametrize("host", HOSTS)
    @pytest.mark.parametrize("variant", ["none", "full"])
    def test_node_permutation_invariance(self, host, variant):
        rng = np.random.default_rng(99)
        cfg = ModelConfig(host=host, variant=variant, **SMALL)
        params = init_params(cfg)
        graphs = [random_graph(rng) for _ in range(3)]
        base = model_forward(cfg, params, batch(graphs, n_relations=2)).data
        for _ in range(5):
            perm_graphs = [g.permuted(rng.permutation(g.n_atoms)) for g in graphs]
            out = model_forward(cfg, params, batch(perm_graphs, n_relations=2)).data
            np.testing.assert_allclose(out, base, rtol=0, atol=1e-9)

    def test_full_variant_gradients_on_four_nodes(self):
        from graphwarp.chem import MolGraph
        from graphwarp.training import masked_bce_loss

        cfg = ModelConfig(variant="full", n_layers=2, dim=4, n_heads=2, n_relations=2,
                          dropout=0.0)
        params = init_params(cfg)
        rng = np.random.default_rng(3)
        for group in params.values():
            for name, t in group.items():
                if name.startswith("b"):
                    t.data[...] = rng.normal(scale=0.1, size=t.shape)
        g = MolGraph(["C", "N", "C", "O"], [(0, 1, 0), (1, 2, 1), (2, 3, 0)])
        bt = batch([g], n_tasks=1, labels=[[1.0]], n_relations=2)
        f = lambda: masked_bce_loss(model_forward(cfg, params, bt), bt.labels,  # noqa: E731
                                    bt.label_mask)
        assert ad.grad_check(f, list(flatten_params(params).values())) < 1e-4


class TestParameters:
    @pytest.mark.parametrize("host", HOSTS)
    def test_host_shapes_unchanged_by_module(self, host):
        plain = flatten_params(init_params(ModelConfig(host=host, variant="none", **SMALL)))
        for variant in ("simple", "nogate", "full"):
            aug = flatten_params(init_params(ModelConfig(host=host, variant=variant, **SMALL)))
            for name, t in plain.items():
                assert aug[name].shape == t.shape
                # separate RNG stream: the host weights are the same values too
                assert np.array_equal(aug[name].data, t.data)

    def test_count_is_deterministic(self):
        cfg = ModelConfig(**SMALL)
        assert n_parameters(init_params(cfg)) == n_parameters(init_params(cfg))
        assert n_parameters(init_params(ModelConfig(variant="none", **SMALL))) < \
            n_parameters(init_params(cfg))

    def test_rejects_bad_config(self):
        for bad in (dict(host="gcn"), dict(variant="half"), dict(dim=0),
                    dict(dropout=1.0), dict(task="ranking")):
            with pytest.raises(ValueError):
                ModelConfig(**bad)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = ModelConfig(host="rgat", variant="nogate", **SMALL)
        params = init_params(cfg)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, cfg, params)
        cfg2, params2 = load_checkpoint(path)
        assert cfg2 == cfg
        a, b = flatten_params(params), flatten_params(params2)
        assert list(a) == list(b)
        for name in a:
            assert np.array_equal(a[name].data, b[name].data)
        bt = _mol_batch(["CCO"])
        assert np.array_equal(model_forward(cfg, params, bt).data,
                              model_forward(cfg2, params2, bt).data)

    def test_header_layout(self, tmp_path):
        cfg = ModelConfig(**SMALL)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, cfg, init_params(cfg))
        raw = path.read_bytes()
        assert raw[:8] == CHECKPOINT_MAGIC
        version, cfg_len = struct.unpack_from("<II", raw, 8)
        assert version == 1
        (count,) = struct.unpack_from("<I", raw, 16 + cfg_len)
        assert count == len(flatten_params(init_params(cfg)))

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"not a model")
        with pytest.raises(ValueError):
            load_checkpoint(path)
