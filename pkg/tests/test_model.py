"""Architecture tests: branch geometry, attention semantics, graph fusion,
ablation wiring, and end-to-end differentiability on a reduced profile."""
import numpy as np
import pytest

from nodulebench.engine import (Tensor, finite_diff_check_params, softmax_cross_entropy,
                                softmax_probs)
from nodulebench.model import (ABLATION_TABLE, ATTRIBUTES, ConfigError, DeepFAN,
                               ModelConfig, ablation_config, attribute_heads,
                               bap_pool, bap_project, desk_config, fg_attention,
                               init_attribute_heads, init_model, model_forward,
                               node_names, paper_config, param_groups)
from nodulebench.model.fine_grained import apply_res_block, init_res_block
from nodulebench.model.layers import conv_p
from nodulebench.model.vit import patch_tokenize, vit_trunk


def tiny_config(**overrides) -> ModelConfig:
    """Smallest legal geometry, for tests that only care about wiring."""
    base = dict(input_vox=16, patch_grid=2, token_dim=32, node_dim=16, vit_blocks=1,
                heads=2, mlp_ratio=2, resnet_blocks=(1, 1, 1), backbone_channels=16,
                fg_spatial=2)
    base.update(overrides)
    return ModelConfig(**base)


RNG = np.random.default_rng(1234)


def rand_input(cfg: ModelConfig, b: int = 2, seed: int = 5) -> np.ndarray:
    r = np.random.default_rng(seed)
    v = cfg.input_vox
    return r.normal(0.3, 0.2, size=(b, 1, v, v, v))


class TestConfig:
    def test_node_count_law_full_model(self):
        assert desk_config().total_nodes == 12
        assert paper_config().total_nodes == 12

    def test_node_count_law_scales_with_patch_grid(self):
        cfg = tiny_config(input_vox=24, patch_grid=3, fg_spatial=3)
        assert cfg.total_nodes == 27 + 1 + 3

    def test_single_node_globals(self):
        assert ablation_config(2).total_nodes == 1
        assert ablation_config(7).total_nodes == 4

    def test_paper_profile_geometry(self):
        cfg = paper_config()
        assert (cfg.input_vox, cfg.token_dim, cfg.vit_blocks) == (128, 4096, 12)
        assert cfg.resnet_blocks == (6, 9, 12)
        assert (cfg.backbone_channels, cfg.fg_spatial, cfg.node_dim) == (512, 16, 64)

    def test_ablation_table(self):
        assert ABLATION_TABLE[9] == ("vit", "cal_adl", "gcn")
        assert ABLATION_TABLE[1] == ("vit", "none", "none")
        assert ABLATION_TABLE[4] == ("vit", "cal_adl", "concat")
        with pytest.raises(ConfigError):
            ablation_config(10)

    def test_inconsistent_ablation_rejected(self):
        with pytest.raises(ConfigError):
            desk_config().with_ablation(global_branch="resnet50",
                                        local_branch="none", fusion="gcn")

    def test_divisibility_guards(self):
        with pytest.raises(ConfigError):
            ModelConfig(input_vox=30)
        with pytest.raises(ConfigError):
            ModelConfig(token_dim=250, heads=4)

    def test_roundtrip(self):
        cfg = ablation_config(7)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestVit:
    def test_zero_input_zero_embeddings(self):
        cfg = tiny_config()
        params = init_model(cfg, np.random.default_rng(0))
        for name in list(params):
            if name.startswith(("gvit.embed", "gvit.pos")):
                params[name] = Tensor(np.zeros_like(params[name].data),
                                      requires_grad=True)
        v = cfg.input_vox
        tokens = patch_tokenize(params, "gvit", cfg, Tensor(np.zeros((1, 1, v, v, v))))
        assert np.array_equal(tokens.data[0, 1:], np.zeros((cfg.n_patches, cfg.token_dim)))
        assert np.array_equal(tokens.data[0, 0], params["gvit.cls"].data)

    def test_class_output_permutation_equivariant(self):
        cfg = tiny_config()
        params = init_model(cfg, np.random.default_rng(0))
        x = rand_input(cfg, b=1)
        base = vit_trunk(params, "gvit", cfg, Tensor(x)).data[0, 0]

        # swap patch subcubes 0 and 7 (opposite corners) plus their pos rows
        g, p = cfg.patch_grid, cfg.input_vox // cfg.patch_grid
        xs = x.copy()
        a = xs[:, :, :p, :p, :p].copy()
        xs[:, :, :p, :p, :p] = xs[:, :, p:, p:, p:]
        xs[:, :, p:, p:, p:] = a
        pos = params["gvit.pos"].data.copy()
        pos[[1, 8]] = pos[[8, 1]]
        params["gvit.pos"] = Tensor(pos, requires_grad=True)
        swapped = vit_trunk(params, "gvit", cfg, Tensor(xs)).data[0, 0]
        np.testing.assert_allclose(swapped, base, rtol=0, atol=1e-10)

    def test_p_vit_in_unit_interval(self):
        cfg = tiny_config()
        model = DeepFAN(cfg, seed=3)
        out = model.forward(rand_input(cfg, b=4))
        p = out.vit.p_vit
        assert p.shape == (4,) and np.all(p >= 0) and np.all(p <= 1)

    def test_desk_node_shapes(self):
        cfg = desk_config()
        model = DeepFAN(cfg, seed=0)
        out = model.forward(rand_input(cfg, b=2))
        assert out.vit.nodes.shape == (2, 9, cfg.node_dim)
        assert out.vit.h_class.shape == (2, cfg.node_dim)


class TestBackbone:
    def test_desk_feature_map_shape(self):
        cfg = desk_config()
        out = DeepFAN(cfg, seed=0).forward(rand_input(cfg, b=1))
        assert out.fg_activations.f_map.shape == (1, 64, 4, 4, 4)

    def test_residual_identity_same_shape_block(self):
        rng = np.random.default_rng(2)
        params = {}
        init_res_block(params, rng, "blk", 8, 8, 1)
        for name in ("blk.conv1.w", "blk.conv1.b", "blk.conv2.w", "blk.conv2.b",
                     "blk.norm2.bias"):
            params[name] = Tensor(np.zeros_like(params[name].data), requires_grad=True)
        x = Tensor(rng.normal(size=(2, 8, 6, 6, 6)))
        y = apply_res_block(params, "blk", x, stride=1)
        assert np.array_equal(y.data, x.data)

    def test_residual_identity_projected_block(self):
        rng = np.random.default_rng(2)
        params = {}
        init_res_block(params, rng, "blk", 8, 16, 2)
        for name in ("blk.conv1.w", "blk.conv1.b", "blk.conv2.w", "blk.conv2.b",
                     "blk.norm2.bias"):
            params[name] = Tensor(np.zeros_like(params[name].data), requires_grad=True)
        x = Tensor(rng.normal(size=(2, 8, 6, 6, 6)))
        y = apply_res_block(params, "blk", x, stride=2)
        proj = conv_p(params, "blk.proj", x, stride=2)
        assert np.array_equal(y.data, proj.data)


class TestAttention:
    def test_constant_feature_gives_uniform_attention(self):
        cfg = tiny_config()
        f = Tensor(np.full((2, 16, 2, 2, 2), 3.7))
        a, _, _ = fg_attention(f, cfg, np.random.default_rng(0), training=False)
        np.testing.assert_allclose(a.data, 1.0, atol=1e-9)

    def test_gamma_zero_drop_mode_keeps_f(self):
        cfg = tiny_config(adl_gamma=0.0, adl_p_drop=1.0)
        rng = np.random.default_rng(0)
        f = Tensor(np.random.default_rng(1).normal(size=(3, 16, 2, 2, 2)))
        _, _, f_used = fg_attention(f, cfg, rng, training=True)
        assert np.array_equal(f_used.data, f.data)

    def test_drop_mode_zeroes_low_attention_voxels(self):
        cfg = tiny_config(adl_gamma=0.8, adl_p_drop=1.0)
        f = Tensor(np.random.default_rng(1).random((1, 16, 2, 2, 2)) + 0.1)
        a, _, f_used = fg_attention(f, cfg, np.random.default_rng(0), training=True)
        low = a.data[0, 0] < 0.8 * a.data[0, 0].max()
        assert np.all(f_used.data[0][:, low] == 0.0)
        assert np.array_equal(f_used.data[0][:, ~low], f.data[0][:, ~low])

    def test_counterfactual_map_seeded(self):
        cfg = tiny_config()
        f = Tensor(np.random.default_rng(1).normal(size=(2, 16, 2, 2, 2)))
        _, a1, _ = fg_attention(f, cfg, np.random.default_rng(42), training=False)
        _, a2, _ = fg_attention(f, cfg, np.random.default_rng(42), training=False)
        assert np.array_equal(a1.data, a2.data)
        assert a1.data.min() >= 0 and a1.data.max() <= 1


class TestBap:
    def test_uniform_attention_reduces_to_average(self):
        f = Tensor(np.random.default_rng(0).normal(size=(2, 8, 3, 3, 3)))
        a = Tensor(np.ones((2, 1, 3, 3, 3)))
        np.testing.assert_allclose(bap_pool(f, a).data, f.data.mean(axis=(2, 3, 4)),
                                   atol=1e-15)

    def test_zero_attention_gives_zero_vector(self):
        f = Tensor(np.random.default_rng(0).normal(size=(2, 8, 3, 3, 3)))
        a = Tensor(np.zeros((2, 1, 3, 3, 3)))
        z = bap_project(bap_pool(f, a))
        assert np.all(np.isfinite(z.data)) and np.array_equal(z.data, np.zeros((2, 8)))

    def test_projection_unit_norm(self):
        pooled = Tensor(np.random.default_rng(3).normal(size=(5, 32)))
        norms = np.linalg.norm(bap_project(pooled).data, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-9)


class TestAttributeHeads:
    def _params(self, cfg):
        params = {}
        init_attribute_heads(params, np.random.default_rng(0), cfg, "h",
                             cfg.backbone_channels, counterfactual=True)
        return params

    def test_equal_streams_zero_difference(self):
        cfg = tiny_config()
        params = self._params(cfg)
        pooled = Tensor(np.random.default_rng(1).normal(size=(2, 16)))
        feats = attribute_heads(params, "h", cfg, pooled, pooled)
        assert np.array_equal(feats.h_diff.data, np.zeros_like(feats.h_diff.data))

    def test_head_widths(self):
        cfg = tiny_config()
        params = self._params(cfg)
        r = np.random.default_rng(1)
        feats = attribute_heads(params, "h", cfg, Tensor(r.normal(size=(2, 16))),
                                Tensor(r.normal(size=(2, 16))))
        assert feats.attr_logits["density"].shape == (2, 3)
        assert feats.attr_logits["lobulation"].shape == (2, 2)
        assert feats.attr_logits["spiculation"].shape == (2, 2)
        probs = feats.attr_probs["density"]
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_swap_antisymmetry(self):
        cfg = tiny_config()
        params = self._params(cfg)
        r = np.random.default_rng(1)
        pooled, pooled_bar = Tensor(r.normal(size=(2, 16))), Tensor(r.normal(size=(2, 16)))
        fwd = attribute_heads(params, "h", cfg, pooled, pooled_bar)
        swapped = dict(params)
        for k in range(len(ATTRIBUTES)):
            for leaf in ("w", "b"):
                swapped[f"h.attr{k}.real.{leaf}"] = params[f"h.attr{k}.cf.{leaf}"]
                swapped[f"h.attr{k}.cf.{leaf}"] = params[f"h.attr{k}.real.{leaf}"]
        rev = attribute_heads(swapped, "h", cfg, pooled_bar, pooled)
        np.testing.assert_allclose(rev.attr_logits["lobulation"].data,
                                   -fwd.attr_logits["lobulation"].data, atol=1e-12)


class TestGraph:
    def test_row_placement(self):
        cfg = desk_config()
        out = DeepFAN(cfg, seed=0).forward(rand_input(cfg, b=2))
        h_all = out.graph.h_all.data
        assert np.array_equal(h_all[:, 0], out.vit.h_class.data)
        assert np.array_equal(h_all[:, 1:9], out.vit.h_patch.data)
        assert np.array_equal(h_all[:, 9:12], out.fg_features.h_diff.data)
        assert out.graph.node_names == node_names(cfg)

    def test_identical_nodes_uniform_adjacency(self):
        cfg = desk_config()
        model = DeepFAN(cfg, seed=0)
        from nodulebench.model.gcn import FeatureGraph, gcn_forward
        h = np.tile(np.random.default_rng(0).normal(size=(1, 1, cfg.node_dim)), (1, 12, 1))
        g = gcn_forward(model.params, "gcn", cfg,
                        FeatureGraph(h_all=Tensor(h), node_names=node_names(cfg)))
        np.testing.assert_allclose(g.adjacency[0].data, 1.0 / 12.0, atol=1e-12)

    def test_zero_weights_pure_residual(self):
        cfg = desk_config()
        model = DeepFAN(cfg, seed=0)
        from nodulebench.model.gcn import FeatureGraph, gcn_forward
        params = dict(model.params)
        for i in range(cfg.gcn_layers):
            for leaf in ("w", "b"):
                name = f"gcn.layer{i}.{leaf}"
                params[name] = Tensor(np.zeros_like(params[name].data))
        h = Tensor(np.random.default_rng(0).normal(size=(2, 12, cfg.node_dim)))
        g = gcn_forward(params, "gcn", cfg, FeatureGraph(h_all=h, node_names=node_names(cfg)))
        assert np.array_equal(g.h_final.data, h.data)

    def test_adjacency_rows_sum_to_one(self):
        cfg = desk_config()
        out = DeepFAN(cfg, seed=1).forward(rand_input(cfg, b=2))
        for adj in out.graph.adjacency:
            np.testing.assert_allclose(adj.data.sum(axis=-1), 1.0, atol=1e-12)


class TestModelForward:
    def test_full_model_all_groups_present(self):
        cfg = ablation_config(9, tiny_config())
        out = DeepFAN(cfg, seed=0).forward(rand_input(cfg))
        assert out.vit is not None
        assert out.fg_activations is not None and out.fg_features is not None
        assert out.graph is not None and out.graph.logits_all is not None
        assert np.all((out.scores >= 0) & (out.scores <= 1))

    def test_vit_only_model(self):
        cfg = ablation_config(1, tiny_config())
        out = DeepFAN(cfg, seed=0).forward(rand_input(cfg))
        assert out.fg_activations is None and out.fg_features is None
        assert out.graph is None
        np.testing.assert_array_equal(out.scores, out.vit.p_vit)

    def test_concat_model_has_no_graph_layers(self):
        cfg = ablation_config(4, tiny_config())
        out = DeepFAN(cfg, seed=0).forward(rand_input(cfg))
        assert out.graph.adjacency == () and out.graph.logits_all is None
        assert out.graph.logits_fused is not None

    def test_branch_features_match_between_concat_and_gcn(self):
        base = tiny_config()
        m4 = DeepFAN(ablation_config(4, base), seed=11)
        m9 = DeepFAN(ablation_config(9, base), seed=11)
        shared = set(m4.params) & set(m9.params)
        assert all(np.array_equal(m4.params[n].data, m9.params[n].data) for n in shared)
        assert {n for n in m4.params if n not in shared} == {"cat.head.w", "cat.head.b"}
        x = rand_input(base)
        o4, o9 = m4.forward(x), m9.forward(x)
        assert np.array_equal(o4.graph.h_all.data, o9.graph.h_all.data)
        assert not np.array_equal(o4.scores, o9.scores)

    def test_eval_deterministic(self):
        cfg = ablation_config(9, tiny_config())
        model = DeepFAN(cfg, seed=0)
        x = rand_input(cfg)
        assert np.array_equal(model.forward(x).scores, model.forward(x).scores)

    def test_training_forward_needs_rng(self):
        cfg = tiny_config()
        model = DeepFAN(cfg, seed=0)
        from nodulebench.engine import EngineError
        with pytest.raises(EngineError):
            model.forward(rand_input(cfg), training=True)

    def test_parts_selectors(self):
        cfg = tiny_config()
        model = DeepFAN(cfg, seed=0)
        x = rand_input(cfg)
        g = model.forward(x, parts="global")
        assert g.fg_features is None and g.graph is None
        np.testing.assert_array_equal(g.scores, g.vit.p_vit)
        l = model.forward(x, parts="local")
        assert l.vit is None and l.score_logits is None
        assert set(l.attr_logits) == {name for name, _ in ATTRIBUTES}
        from nodulebench.engine import EngineError
        with pytest.raises(EngineError):
            l.scores

    def test_all_ablations_run(self):
        base = tiny_config()
        x = rand_input(base, b=1)
        for k in range(1, 10):
            cfg = ablation_config(k, base)
            out = DeepFAN(cfg, seed=0).forward(x)
            assert out.scores.shape == (1,)
            if cfg.fusion != "none":
                assert out.graph.h_all.shape == (1, cfg.total_nodes, cfg.node_dim)

    def test_wrong_extent_rejected(self):
        cfg = tiny_config()
        model = DeepFAN(cfg, seed=0)
        from nodulebench.engine import EngineError
        with pytest.raises(EngineError):
            model.forward(np.zeros((1, 1, 8, 8, 8)))

    def test_checkpoint_roundtrip(self, tmp_path):
        cfg = ablation_config(9, tiny_config())
        model = DeepFAN(cfg, seed=0)
        x = rand_input(cfg)
        model.save(tmp_path / "m.ckpt", extra={"stage": "test"})
        loaded, extra = DeepFAN.load(tmp_path / "m.ckpt")
        assert extra == {"stage": "test"} and loaded.cfg == cfg
        assert np.array_equal(loaded.forward(x).scores, model.forward(x).scores)

    def test_param_groups_partition(self):
        cfg = ablation_config(9, tiny_config())
        model = DeepFAN(cfg, seed=0)
        groups = model.param_groups()
        names = sorted(model.params)
        assert sorted(groups["global"] + groups["local"] + groups["fusion"]) == names
        assert all(n.startswith("gvit.") for n in groups["global"])
        assert all(n.startswith("lcal.") for n in groups["local"])
        assert all(n.startswith("gcn.") for n in groups["fusion"])


class TestPaperGeometry:
    def test_streamed_shape_dry_run(self):
        from nodulebench.model import dry_run_shapes
        shapes = dry_run_shapes(paper_config(), 0)
        assert shapes["h_all"] == (12, 64)
        assert shapes["vit_nodes"] == (9, 64)
        assert shapes["f_map"] == (512, 16, 16, 16)
        assert shapes["tokens"] == (9, 4096)
        assert shapes["adjacency"] == (12, 12)


class TestEndToEndGradients:
    def test_finite_diff_through_composite_forward(self):
        cfg = ablation_config(9, tiny_config())
        model = DeepFAN(cfg, seed=6)
        x = rand_input(cfg, b=2, seed=9)
        y = np.array([0, 1])

        def loss_fn():
            out = model_forward(model.params, cfg, x)
            loss = softmax_cross_entropy(out.score_logits, y)
            loss = loss + softmax_cross_entropy(out.vit.logits, y)
            loss = loss + softmax_cross_entropy(out.graph.logits_all, y)
            for name, _ in ATTRIBUTES:
                loss = loss + softmax_cross_entropy(out.attr_logits[name], y)
            return loss

        res = finite_diff_check_params(loss_fn, model.params, n_samples=24,
                                       eps=1e-5, rng=np.random.default_rng(0))
        assert res.n_checked >= 12
        assert res.max_rel_err < 1e-4
