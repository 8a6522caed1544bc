from .gradcam import (CLASS_INDEX, TARGET_LAYERS, ExplainError, Heatmap,
                      cam_from_arrays, grad_cam_map, upsample_trilinear)
from .attribution import NodeAttribution, gcn_node_attribution, node_weights_from_arrays
from .overlay import DEFAULT_WINDOW, heat_palette, overlay_rgb, render_overlay

__all__ = [
    "CLASS_INDEX",
    "DEFAULT_WINDOW",
    "ExplainError",
    "Heatmap",
    "NodeAttribution",
    "TARGET_LAYERS",
    "cam_from_arrays",
    "gcn_node_attribution",
    "grad_cam_map",
    "heat_palette",
    "node_weights_from_arrays",
    "overlay_rgb",
    "render_overlay",
    "upsample_trilinear",
]
