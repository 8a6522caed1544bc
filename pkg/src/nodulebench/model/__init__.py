"""Two-branch nodule classifier with graph fusion, plus its ablation variants."""
from .config import (ABLATION_TABLE, FUSIONS, GLOBAL_BRANCHES, LOCAL_BRANCHES, SCALES,
                     ConfigError, ModelConfig, ablation_config, desk_config, paper_config)
from .fine_grained import (ATTRIBUTES, FineGrainedActivations, FineGrainedFeatures,
                           attribute_heads, attribute_heads_plain, backbone_forward,
                           backbone_widths, bap_pool, bap_project, fg_attention,
                           init_attribute_heads, init_backbone)
from .gcn import (FeatureGraph, assemble_feature_graph, concat_forward, gcn_forward,
                  init_concat_head, init_gcn)
from .layers import (init_conv, init_embedding, init_linear, init_norm, l2_normalize,
                     signed_sqrt)
from .network import (DEFAULT_CUTOFF, DeepFAN, ForwardOutputs, GlobalFeatures,
                      dry_run_shapes, init_model, model_forward, node_names,
                      param_groups)
from .vit import (VitFeatures, apply_vit_block, init_vit_trunk, patch_tokenize,
                  vit_branch, vit_forward, vit_trunk)

__all__ = [
    "ABLATION_TABLE", "ATTRIBUTES", "DEFAULT_CUTOFF", "DeepFAN", "FUSIONS",
    "FeatureGraph", "FineGrainedActivations", "FineGrainedFeatures", "ForwardOutputs",
    "GLOBAL_BRANCHES", "GlobalFeatures", "LOCAL_BRANCHES", "ModelConfig", "SCALES",
    "VitFeatures", "ablation_config", "apply_vit_block", "assemble_feature_graph",
    "attribute_heads", "attribute_heads_plain", "backbone_forward", "backbone_widths",
    "bap_pool", "bap_project", "concat_forward", "ConfigError", "desk_config",
    "dry_run_shapes", "fg_attention", "gcn_forward", "init_attribute_heads",
    "init_backbone", "init_concat_head", "init_conv", "init_embedding", "init_gcn",
    "init_linear", "init_model", "init_norm", "init_vit_trunk", "l2_normalize",
    "model_forward", "node_names", "paper_config", "param_groups", "patch_tokenize",
    "signed_sqrt", "vit_branch", "vit_forward", "vit_trunk",
]
