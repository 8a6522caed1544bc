"""Model configuration: scale profiles and ablation variants."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

GLOBAL_BRANCHES = ("vit", "resnet50", "cal_adl")
LOCAL_BRANCHES = ("cal_adl", "resnet50", "vit", "none")
FUSIONS = ("gcn", "concat", "none")
SCALES = ("paper", "desk")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture geometry plus branch/fusion selection.

    The paper profile carries the published geometry; the desk profile keeps
    every structural count (patches, nodes, head divisibility) while shrinking
    widths so the whole model trains in minutes on a CPU.
    """
    scale: str = "desk"
    input_vox: int = 32
    patch_grid: int = 2
    token_dim: int = 256
    node_dim: int = 64
    vit_blocks: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    resnet_blocks: tuple[int, int, int] = (2, 2, 2)
    backbone_channels: int = 64
    fg_spatial: int = 4
    global_branch: str = "vit"
    local_branch: str = "cal_adl"
    fusion: str = "gcn"
    gcn_layers: int = 3
    adl_gamma: float = 0.8
    adl_p_drop: float = 0.25
    dropout: float = 0.1

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ConfigError(f"unknown scale {self.scale!r}")
        if self.global_branch not in GLOBAL_BRANCHES:
            raise ConfigError(f"unknown global branch {self.global_branch!r}")
        if self.local_branch not in LOCAL_BRANCHES:
            raise ConfigError(f"unknown local branch {self.local_branch!r}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {self.fusion!r}")
        if self.input_vox % self.patch_grid:
            raise ConfigError(
                f"input extent {self.input_vox} not divisible by patch grid {self.patch_grid}")
        if (self.input_vox // self.patch_grid) % 4:
            raise ConfigError(
                f"patch extent {self.input_vox // self.patch_grid} must divide by 4"
                " (stride-2 conv then 2x pooling)")
        if self.fg_spatial * 8 != self.input_vox:
            raise ConfigError(
                f"fg_spatial {self.fg_spatial} must be input_vox/8 "
                f"(= {self.input_vox // 8}); the conv branch downsamples by 8")
        if self.token_dim % self.heads:
            raise ConfigError(
                f"token dim {self.token_dim} not divisible by {self.heads} heads")
        if len(self.resnet_blocks) != 3:
            raise ConfigError("resnet_blocks must list exactly three stage counts")
        if self.fusion == "gcn" and self.total_nodes < 2:
            raise ConfigError("gcn fusion needs at least 2 nodes; pick another fusion")

    # ---- node bookkeeping ----------------------------------------------------

    @property
    def n_patches(self) -> int:
        return self.patch_grid ** 3

    @property
    def global_nodes(self) -> int:
        """Node vectors contributed by the global branch."""
        return self.n_patches + 1 if self.global_branch == "vit" else 1

    @property
    def local_nodes(self) -> int:
        return 0 if self.local_branch == "none" else 3

    @property
    def total_nodes(self) -> int:
        return self.global_nodes + self.local_nodes

    def to_dict(self) -> dict[str, Any]:
        return {
            "scale": self.scale,
            "input_vox": self.input_vox,
            "patch_grid": self.patch_grid,
            "token_dim": self.token_dim,
            "node_dim": self.node_dim,
            "vit_blocks": self.vit_blocks,
            "heads": self.heads,
            "mlp_ratio": self.mlp_ratio,
            "resnet_blocks": list(self.resnet_blocks),
            "backbone_channels": self.backbone_channels,
            "fg_spatial": self.fg_spatial,
            "global_branch": self.global_branch,
            "local_branch": self.local_branch,
            "fusion": self.fusion,
            "gcn_layers": self.gcn_layers,
            "adl_gamma": self.adl_gamma,
            "adl_p_drop": self.adl_p_drop,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        d = dict(d)
        if "resnet_blocks" in d:
            d["resnet_blocks"] = tuple(d["resnet_blocks"])
        return cls(**d)

    def with_ablation(self, global_branch: str | None = None,
                      local_branch: str | None = None,
                      fusion: str | None = None) -> "ModelConfig":
        return replace(
            self,
            global_branch=global_branch or self.global_branch,
            local_branch=local_branch or self.local_branch,
            fusion=fusion or self.fusion,
        )


def paper_config(**overrides) -> ModelConfig:
    base = dict(
        scale="paper", input_vox=128, patch_grid=2, token_dim=4096, node_dim=64,
        vit_blocks=12, heads=8, mlp_ratio=4, resnet_blocks=(6, 9, 12),
        backbone_channels=512, fg_spatial=16,
    )
    base.update(overrides)
    return ModelConfig(**base)


def desk_config(**overrides) -> ModelConfig:
    return ModelConfig(**overrides) if overrides else ModelConfig()


# the nine ablation variants: (global, local, fusion), keyed by model number
ABLATION_TABLE: dict[int, tuple[str, str, str]] = {
    1: ("vit", "none", "none"),
    2: ("resnet50", "none", "none"),
    3: ("cal_adl", "none", "none"),
    4: ("vit", "cal_adl", "concat"),
    5: ("vit", "vit", "gcn"),
    6: ("vit", "resnet50", "gcn"),
    7: ("cal_adl", "cal_adl", "gcn"),
    8: ("resnet50", "cal_adl", "gcn"),
    9: ("vit", "cal_adl", "gcn"),
}


def ablation_config(model_number: int, base: ModelConfig | None = None) -> ModelConfig:
    if model_number not in ABLATION_TABLE:
        raise ConfigError(f"ablation model number must be 1..9, got {model_number}")
    g, l, f = ABLATION_TABLE[model_number]
    base = base or desk_config()
    return base.with_ablation(global_branch=g, local_branch=l, fusion=f)
