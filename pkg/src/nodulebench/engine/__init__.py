from .tensor import (
    EngineError,
    NonFiniteError,
    Tensor,
    as_tensor,
    concat,
    set_finite_checks,
    stack,
)
from .functional import (
    avg_pool3d,
    conv3d,
    dropout,
    gelu,
    global_avg_pool3d,
    group_norm,
    layer_norm_lastdim,
    linear,
    log_softmax,
    multi_head_attention,
    softmax,
    softmax_cross_entropy,
    softmax_probs,
)
from .optim import AdamState, adam_step, zero_grads
from .gradcheck import GradCheckResult, finite_diff_check, finite_diff_check_params
from .checkpoint import CheckpointError, load_checkpoint, params_allclose, save_checkpoint

__all__ = [
    "AdamState",
    "CheckpointError",
    "EngineError",
    "GradCheckResult",
    "NonFiniteError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "avg_pool3d",
    "concat",
    "conv3d",
    "dropout",
    "finite_diff_check",
    "finite_diff_check_params",
    "gelu",
    "global_avg_pool3d",
    "group_norm",
    "layer_norm_lastdim",
    "linear",
    "load_checkpoint",
    "log_softmax",
    "multi_head_attention",
    "params_allclose",
    "save_checkpoint",
    "set_finite_checks",
    "softmax",
    "softmax_cross_entropy",
    "softmax_probs",
    "stack",
    "zero_grads",
]
