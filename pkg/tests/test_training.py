import hashlib
import json
import math

import numpy as np
import pytest

from nodulebench.data import DatasetConfig, build_dataset
from nodulebench.engine import Tensor
from nodulebench.model import (DeepFAN, FeatureGraph, FineGrainedFeatures,
                               ForwardOutputs, GlobalFeatures, ModelConfig)
from nodulebench.stats import StatsError, auc_from_scores
from nodulebench.training import (DESK_EPOCH_DIVISOR, BatchTargets,
                                  LossWeights, SplitData, StagePlan,
                                  TrainingError, batch_tensor, composite_loss,
                                  desk_stage_plans, evaluate_split,
                                  load_split_patches, lr_schedule,
                                  paper_stage_plans, plans_for_config,
                                  score_split, select_best_checkpoint,
                                  train_stage)

LN2 = math.log(2.0)


def tiny_config(**overrides) -> ModelConfig:
    base = dict(input_vox=16, patch_grid=2, token_dim=32, node_dim=16, vit_blocks=1,
                heads=2, mlp_ratio=2, resnet_blocks=(1, 1, 1), backbone_channels=16,
                fg_spatial=2)
    base.update(overrides)
    return ModelConfig(**base)


def fake_outputs(cfg, b=4, with_global=True, with_attrs=True, with_graph=True):
    """Hand-built outputs whose every cross-entropy equals ln 2 on zero labels."""
    two = Tensor(np.zeros((b, 2)))
    three = Tensor(np.tile([0.0, 0.0, -1000.0], (b, 1)))
    nd = cfg.node_dim
    global_feats = None
    if with_global:
        global_feats = GlobalFeatures(nodes=Tensor(np.zeros((b, 1, nd))), logits=two)
    fg = None
    if with_attrs:
        fg = FineGrainedFeatures(
            h_attr=Tensor(np.zeros((b, 3, nd))), h_attr_cf=None, h_diff=None,
            attr_logits={"lobulation": two, "spiculation": two, "density": three})
    graph = None
    if with_graph:
        graph = FeatureGraph(h_all=Tensor(np.zeros((b, 2, nd))),
                             node_names=("a", "b"),
                             logits_fused=two, logits_all=two)
    return ForwardOutputs(cfg=cfg, vit=None, global_feats=global_feats,
                          fg_activations=None, fg_features=fg, graph=graph,
                          score_logits=two if with_graph else None)


def zero_targets(b=4, attrs=True):
    z = np.zeros(b, dtype=np.int64)
    if attrs:
        return BatchTargets(pathology=z, lobulation=z, spiculation=z, density=z)
    return BatchTargets(pathology=z)


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert (w.w0, w.w1, w.w2, w.w3) == (0.2, 0.2, 0.2, 0.4)


class TestCompositeLoss:
    def test_all_terms_equal_gives_1_4x(self):
        cfg = tiny_config()
        breakdown = composite_loss(fake_outputs(cfg), zero_targets())
        for term in ("l_t0", "l_c0", "l_c1", "l_c2", "l_all", "l_g"):
            assert getattr(breakdown, term) == pytest.approx(LN2, abs=1e-15)
        assert float(breakdown.total.data) == pytest.approx(1.4 * LN2, abs=1e-12)

    def test_total_recomposes_from_breakdown(self):
        cfg = tiny_config()
        w = LossWeights()
        b = composite_loss(fake_outputs(cfg), zero_targets(), w)
        recomposed = (w.w0 * b.l_t0 + w.w1 * (b.l_c0 + b.l_c1 + b.l_c2)
                      + w.w2 * b.l_all + w.w3 * b.l_g)
        assert float(b.total.data) == pytest.approx(recomposed, abs=1e-12)

    def test_perfect_predictions_zero_loss(self):
        cfg = tiny_config()
        b = 3
        hot2 = Tensor(np.tile([1000.0, 0.0], (b, 1)))
        hot3 = Tensor(np.tile([1000.0, 0.0, 0.0], (b, 1)))
        outputs = ForwardOutputs(
            cfg=cfg, vit=None,
            global_feats=GlobalFeatures(nodes=Tensor(np.zeros((b, 1, 16))), logits=hot2),
            fg_activations=None,
            fg_features=FineGrainedFeatures(
                h_attr=Tensor(np.zeros((b, 3, 16))), h_attr_cf=None, h_diff=None,
                attr_logits={"lobulation": hot2, "spiculation": hot2, "density": hot3}),
            graph=FeatureGraph(h_all=Tensor(np.zeros((b, 2, 16))), node_names=("a", "b"),
                               logits_fused=hot2, logits_all=hot2),
            score_logits=hot2)
        breakdown = composite_loss(outputs, zero_targets(b))
        assert float(breakdown.total.data) == 0.0

    def test_weight_masking_exact(self):
        cfg = tiny_config()
        w = LossWeights(w0=1.0, w1=0.0, w2=0.0, w3=0.0)
        b = composite_loss(fake_outputs(cfg), zero_targets(), w)
        assert float(b.total.data) == b.l_t0

    def test_absent_terms_read_zero(self):
        cfg = tiny_config()
        out = fake_outputs(cfg, with_graph=False)
        b = composite_loss(out, zero_targets())
        assert b.l_all == 0.0 and b.l_g == 0.0
        assert float(b.total.data) == pytest.approx(
            0.2 * b.l_t0 + 0.2 * (b.l_c0 + b.l_c1 + b.l_c2), abs=1e-12)

    def test_missing_attribute_labels_rejected(self):
        cfg = tiny_config()
        with pytest.raises(TrainingError, match="attribute"):
            composite_loss(fake_outputs(cfg), zero_targets(attrs=False))

    def test_attrs_not_required_when_local_absent(self):
        cfg = tiny_config()
        out = fake_outputs(cfg, with_attrs=False, with_graph=False)
        b = composite_loss(out, zero_targets(attrs=False))
        assert float(b.total.data) == pytest.approx(0.2 * LN2, abs=1e-15)

    def test_no_active_terms_rejected(self):
        cfg = tiny_config()
        empty = ForwardOutputs(cfg=cfg, vit=None, global_feats=None,
                               fg_activations=None, fg_features=None,
                               graph=None, score_logits=None)
        with pytest.raises(TrainingError):
            composite_loss(empty, zero_targets(attrs=False))

    def test_total_backward_reaches_logit_gradients(self):
        cfg = tiny_config()
        b = 2
        logits = Tensor(np.array([[0.3, -0.2], [0.1, 0.4]]), requires_grad=True)
        outputs = ForwardOutputs(
            cfg=cfg, vit=None,
            global_feats=GlobalFeatures(nodes=Tensor(np.zeros((b, 1, 16))),
                                        logits=logits),
            fg_activations=None, fg_features=None, graph=None, score_logits=logits)
        breakdown = composite_loss(outputs, zero_targets(b, attrs=False))
        breakdown.total.backward()
        assert logits.grad is not None
        assert np.all(np.isfinite(logits.grad))


class TestSchedule:
    def test_paper_plan_table(self):
        plans = {p.stage: p for p in paper_stage_plans()}
        assert (plans["vit"].epochs, plans["vit"].initial_lr) == (1200, 2e-4)
        assert plans["vit"].decay_epochs == (400, 800)
        assert (plans["fine_grained"].epochs, plans["fine_grained"].initial_lr) == (1200, 1e-2)
        assert plans["gcn"].epochs == 200
        assert plans["gcn"].decay_epochs == (80, 160)
        assert plans["gcn"].frozen_groups == ("global", "local")
        assert (plans["joint"].epochs, plans["joint"].initial_lr) == (1400, 1e-5)
        assert plans["joint"].decay_epochs == (300, 600, 900)
        assert all(p.checkpoint_every == 30 for p in plans.values())

    def test_decade_decay_exact(self):
        vit = paper_stage_plans()[0]
        assert lr_schedule(vit, 0) == 0.0002
        assert lr_schedule(vit, 399) == 0.0002
        assert lr_schedule(vit, 400) == 2e-5
        assert lr_schedule(vit, 800) == 2e-6
        joint = paper_stage_plans()[3]
        assert lr_schedule(joint, 0) == 1e-5
        assert lr_schedule(joint, 300) == 1e-6
        assert lr_schedule(joint, 600) == 1e-7
        assert lr_schedule(joint, 900) == 1e-8
        assert lr_schedule(joint, 1399) == 1e-8

    def test_epoch_out_of_range(self):
        vit = paper_stage_plans()[0]
        with pytest.raises(TrainingError):
            lr_schedule(vit, -1)
        with pytest.raises(TrainingError):
            lr_schedule(vit, 1200)

    def test_non_increasing_everywhere(self):
        for plan in paper_stage_plans() + desk_stage_plans():
            rates = [lr_schedule(plan, e) for e in range(plan.epochs)]
            assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_desk_divisor(self):
        assert DESK_EPOCH_DIVISOR == 20
        plans = {p.stage: p for p in desk_stage_plans()}
        assert plans["vit"].epochs == 60 and plans["vit"].decay_epochs == (20, 40)
        assert plans["fine_grained"].epochs == 60
        assert plans["gcn"].epochs == 10 and plans["gcn"].decay_epochs == (4, 8)
        assert plans["joint"].epochs == 70 and plans["joint"].decay_epochs == (15, 30, 45)
        # learning rates are untouched by the epoch scaling
        assert plans["vit"].initial_lr == 2e-4
        assert plans["joint"].initial_lr == 1e-5

    def test_plan_validation(self):
        with pytest.raises(TrainingError):
            StagePlan("warmup", 10, 1e-3, ())
        with pytest.raises(TrainingError):
            StagePlan("vit", 10, 1e-3, (10,))        # decay at/after end
        with pytest.raises(TrainingError):
            StagePlan("vit", 10, 1e-3, (4, 4))
        with pytest.raises(TrainingError):
            StagePlan("vit", 10, 1e-3, (), frozen_groups=("heads",))

    def test_plans_for_config(self):
        plans = desk_stage_plans()
        full = tiny_config()
        assert [p.stage for p in plans_for_config(full, plans)] == [
            "vit", "fine_grained", "gcn", "joint"]
        vit_only = tiny_config(local_branch="none", fusion="none")
        assert [p.stage for p in plans_for_config(vit_only, plans)] == ["vit", "joint"]
        concat = tiny_config(fusion="concat")
        assert [p.stage for p in plans_for_config(concat, plans)] == [
            "vit", "fine_grained", "gcn", "joint"]


@pytest.fixture(scope="module")
def small_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("trainset")
    return build_dataset(DatasetConfig(n_nodules=24, seed=2), out)


@pytest.fixture(scope="module")
def benign_val_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("degenerate")
    return build_dataset(DatasetConfig(n_nodules=24, seed=4), out)


@pytest.fixture(scope="module")
def train_split(small_manifest):
    return load_split_patches(small_manifest, tiny_config(), "train")


def param_bytes(model, names):
    h = hashlib.sha256()
    for name in sorted(names):
        h.update(model.params[name].data.tobytes())
    return h.hexdigest()


class TestTrainStage:
    def test_checkpoint_cadence_one_periodic_plus_final(self, train_split, tmp_path):
        model = DeepFAN(tiny_config(), seed=0)
        plan = StagePlan("joint", 2, 1e-3, (), checkpoint_every=2)
        result = train_stage(model, train_split, plan, tmp_path,
                             np.random.default_rng(0), batch_size=8)
        names = [p.name for p in result.checkpoints]
        assert names == ["joint_epoch0002.ckpt", "joint_final.ckpt"]
        assert result.final.name == "joint_final.ckpt"
        assert all(p.exists() for p in result.checkpoints)

    def test_no_periodic_checkpoint_when_stage_is_short(self, train_split, tmp_path):
        model = DeepFAN(tiny_config(), seed=0)
        plan = StagePlan("joint", 1, 1e-3, (), checkpoint_every=30)
        result = train_stage(model, train_split, plan, tmp_path,
                             np.random.default_rng(0), batch_size=8)
        assert [p.name for p in result.checkpoints] == ["joint_final.ckpt"]

    def test_gcn_stage_freezing_airtight(self, train_split, tmp_path):
        model = DeepFAN(tiny_config(), seed=1)
        groups = model.param_groups()
        before_frozen = param_bytes(model, groups["global"] + groups["local"])
        before_fusion = param_bytes(model, groups["fusion"])
        plan = StagePlan("gcn", 2, 1e-3, (), frozen_groups=("global", "local"),
                         checkpoint_every=30)
        train_stage(model, train_split, plan, tmp_path,
                    np.random.default_rng(3), batch_size=8)
        assert param_bytes(model, groups["global"] + groups["local"]) == before_frozen
        assert param_bytes(model, groups["fusion"]) != before_fusion
        # requires_grad restored afterwards
        assert all(model.params[n].requires_grad for n in groups["global"])

    def test_global_stage_touches_only_global_group(self, train_split, tmp_path):
        model = DeepFAN(tiny_config(), seed=2)
        groups = model.param_groups()
        before_local = param_bytes(model, groups["local"])
        before_fusion = param_bytes(model, groups["fusion"])
        before_global = param_bytes(model, groups["global"])
        plan = StagePlan("vit", 1, 1e-3, (), checkpoint_every=30)
        train_stage(model, train_split, plan, tmp_path,
                    np.random.default_rng(4), batch_size=8)
        assert param_bytes(model, groups["local"]) == before_local
        assert param_bytes(model, groups["fusion"]) == before_fusion
        assert param_bytes(model, groups["global"]) != before_global

    def test_local_stage_touches_only_local_group(self, train_split, tmp_path):
        model = DeepFAN(tiny_config(), seed=2)
        groups = model.param_groups()
        before_global = param_bytes(model, groups["global"])
        before_fusion = param_bytes(model, groups["fusion"])
        plan = StagePlan("fine_grained", 1, 1e-3, (), checkpoint_every=30)
        train_stage(model, train_split, plan, tmp_path,
                    np.random.default_rng(4), batch_size=8)
        assert param_bytes(model, groups["global"]) == before_global
        assert param_bytes(model, groups["fusion"]) == before_fusion

    def test_log_lines_carry_schedule_and_breakdown(self, train_split, tmp_path):
        model = DeepFAN(tiny_config(), seed=0)
        plan = StagePlan("joint", 3, 1e-3, (2,), checkpoint_every=30)
        result = train_stage(model, train_split, plan, tmp_path,
                             np.random.default_rng(0), batch_size=8)
        lines = [json.loads(l) for l in result.log_path.read_text().splitlines()]
        assert [l["epoch"] for l in lines] == [1, 2, 3]
        assert all(l["stage"] == "joint" for l in lines)
        assert [l["lr"] for l in lines] == [lr_schedule(plan, e) for e in range(3)]
        for line in lines:
            loss = line["loss"]
            for key in ("l_t0", "l_c0", "l_c1", "l_c2", "l_all", "l_g", "total"):
                assert key in loss and math.isfinite(loss[key])
            assert loss["total"] > 0

    def test_seeded_rerun_reproduces_final_checkpoint(self, train_split, tmp_path):
        digests = []
        for run in ("a", "b"):
            model = DeepFAN(tiny_config(), seed=7)
            plan = StagePlan("joint", 1, 1e-3, (), checkpoint_every=30)
            result = train_stage(model, train_split, plan, tmp_path / run,
                                 np.random.default_rng(11), batch_size=8)
            digests.append(hashlib.sha256(result.final.read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_empty_split_rejected(self, tmp_path):
        model = DeepFAN(tiny_config(), seed=0)
        empty = SplitData(ids=[], patient_ids=[], patches=[],
                          targets=BatchTargets(pathology=np.array([], dtype=np.int64)))
        plan = StagePlan("joint", 1, 1e-3, ())
        with pytest.raises(TrainingError):
            train_stage(model, empty, plan, tmp_path, np.random.default_rng(0))

    def test_fully_frozen_rejected(self, train_split, tmp_path):
        model = DeepFAN(tiny_config(), seed=0)
        plan = StagePlan("joint", 1, 1e-3, (),
                         frozen_groups=("global", "local", "fusion"))
        with pytest.raises(TrainingError):
            train_stage(model, train_split, plan, tmp_path, np.random.default_rng(0))


class TestSelection:
    def test_select_matches_manual_argmax(self, small_manifest, train_split, tmp_path):
        model = DeepFAN(tiny_config(), seed=3)
        plan = StagePlan("joint", 2, 1e-3, (), checkpoint_every=1)
        result = train_stage(model, train_split, plan, tmp_path,
                             np.random.default_rng(5), batch_size=8)
        val = load_split_patches(small_manifest, tiny_config(), "validation")
        aucs = []
        for path in result.checkpoints:
            m, _ = DeepFAN.load(path)
            scored = score_split(m, val)
            aucs.append(auc_from_scores(scored.scores, scored.labels))
        best_path, best_auc = select_best_checkpoint(result.checkpoints,
                                                     small_manifest)
        assert best_auc == max(aucs)
        # ties break to the latest checkpoint
        latest_max = max(i for i, a in enumerate(aucs) if a == max(aucs))
        assert best_path == result.checkpoints[latest_max]

    def test_tie_breaks_to_latest(self, small_manifest, tmp_path):
        model = DeepFAN(tiny_config(), seed=4)
        a, b = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
        model.save(a)
        model.save(b)
        best_path, _ = select_best_checkpoint([a, b], small_manifest)
        assert best_path == b

    def test_single_checkpoint_trivial(self, small_manifest, tmp_path):
        model = DeepFAN(tiny_config(), seed=4)
        path = tmp_path / "only.ckpt"
        model.save(path)
        best_path, auc = select_best_checkpoint([path], small_manifest)
        assert best_path == path
        assert 0.0 <= auc <= 1.0

    def test_empty_series_rejected(self, small_manifest):
        with pytest.raises(TrainingError):
            select_best_checkpoint([], small_manifest)

    def test_single_class_validation_rejected(self, benign_val_manifest, tmp_path):
        model = DeepFAN(tiny_config(), seed=4)
        path = tmp_path / "m.ckpt"
        model.save(path)
        with pytest.raises(StatsError):
            select_best_checkpoint([path], benign_val_manifest)


class TestEvaluateSplit:
    def test_threshold_zero_gives_sensitivity_one(self, small_manifest):
        model = DeepFAN(tiny_config(), seed=5)
        ev = evaluate_split(model, small_manifest, "test", threshold=0.0,
                            with_ci=False)
        assert ev.report.value("sensitivity") == 1.0
        assert all(c.call == "malignant" for c in ev.cases)

    def test_threshold_one_gives_specificity_one(self, small_manifest):
        model = DeepFAN(tiny_config(), seed=5)
        ev = evaluate_split(model, small_manifest, "test", threshold=1.0,
                            with_ci=False)
        assert ev.report.value("specificity") == 1.0

    def test_threshold_out_of_range_rejected(self, small_manifest):
        model = DeepFAN(tiny_config(), seed=5)
        with pytest.raises(TrainingError):
            evaluate_split(model, small_manifest, "test", threshold=1.5)

    def test_report_has_cis_and_scores_are_probabilities(self, small_manifest):
        model = DeepFAN(tiny_config(), seed=5)
        ev = evaluate_split(model, small_manifest, "test", threshold=0.5,
                            rng=np.random.default_rng(0), n_resamples=50)
        assert all(0.0 <= c.score <= 1.0 for c in ev.cases)
        acc = ev.report.metrics["accuracy"]
        assert acc.ci is not None and acc.ci[0] <= acc.value <= acc.ci[1]
        assert ev.report.n == len(ev.cases)

    def test_eval_scores_deterministic(self, small_manifest):
        model = DeepFAN(tiny_config(), seed=5)
        a = evaluate_split(model, small_manifest, "test", 0.5, with_ci=False)
        b = evaluate_split(model, small_manifest, "test", 0.5, with_ci=False)
        assert [c.score for c in a.cases] == [c.score for c in b.cases]


class TestRunTraining:
    def test_stages_in_order_and_best_loaded(self, small_manifest, tmp_path):
        from nodulebench.training import run_training
        model = DeepFAN(tiny_config(), seed=6)
        plans = (
            StagePlan("vit", 1, 1e-3, ()),
            StagePlan("fine_grained", 1, 1e-3, ()),
            StagePlan("gcn", 1, 1e-3, (), frozen_groups=("global", "local")),
            StagePlan("joint", 2, 1e-3, (), checkpoint_every=1),
        )
        run = run_training(model, small_manifest, plans, tmp_path, seed=13,
                           batch_size=8)
        assert [s.stage for s in run.stages] == ["vit", "fine_grained", "gcn", "joint"]
        assert run.best_checkpoint in run.stages[-1].checkpoints
        assert 0.0 <= run.best_val_auc <= 1.0
        # the model was left holding the selected checkpoint's weights
        best, _ = DeepFAN.load(run.best_checkpoint)
        for name, p in best.params.items():
            assert np.array_equal(p.data, model.params[name].data)
        # one shared log across stages, in stage order
        lines = [json.loads(l) for l in
                 (tmp_path / "train_log.jsonl").read_text().splitlines()]
        assert [l["stage"] for l in lines] == ["vit", "fine_grained", "gcn",
                                               "joint", "joint"]


class TestBatchTensor:
    def test_shape_and_range(self, train_split):
        x = batch_tensor(train_split.patches[:3])
        assert x.shape == (3, 1, 16, 16, 16)
        assert x.data.min() >= 0.0 and x.data.max() <= 1.0

    def test_augmentation_changes_bytes_deterministically(self, train_split):
        plain = batch_tensor(train_split.patches[:2])
        aug1 = batch_tensor(train_split.patches[:2], np.random.default_rng(9))
        aug2 = batch_tensor(train_split.patches[:2], np.random.default_rng(9))
        assert np.array_equal(aug1.data, aug2.data)
        assert not np.array_equal(plain.data, aug1.data)
