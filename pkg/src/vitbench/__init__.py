"""From-scratch Vision Transformer classification stack.

A numpy-backed tensor core with reverse-mode autodiff, a patch-embedding
transformer classifier and a small CNN baseline, loss functions and an
Adam training loop, a manifest-driven image pipeline with seeded
augmentation, multiclass evaluation statistics, and a command-line
harness for training, evaluating, and statistically comparing models.
"""

from .data import (
    AugmentPolicy,
    DatasetManifest,
    batches,
    load_manifest,
    synthesize_toy_dataset,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DecodeError,
    ShapeError,
    VitbenchError,
)
from .metrics import (
    EvaluationReport,
    bootstrap_mcc_samples,
    confusion,
    evaluate_predictions,
    fps,
    mcc,
    paired_t_test,
    render_report,
    roc_auc,
    weighted_prf,
)
from .models import (
    ConvBaseline,
    VisionTransformer,
    ViTConfig,
    cnn_baseline,
    load_checkpoint,
    param_count,
    preset,
    save_checkpoint,
)
from .tensor import (
    Tensor,
    concat,
    dropout,
    finite_difference_check,
    gelu,
    layer_norm,
    load_tensor,
    matmul,
    no_grad,
    save_tensor,
    set_default_dtype,
    softmax,
)
from .training import (
    TrainConfig,
    adam_init,
    adam_step,
    cross_entropy,
    fit,
    focal_loss,
    train_epoch,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy",
    "ConfigError",
    "ContractError",
    "ConvBaseline",
    "DataError",
    "DatasetManifest",
    "DecodeError",
    "EvaluationReport",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "VisionTransformer",
    "ViTConfig",
    "VitbenchError",
    "adam_init",
    "adam_step",
    "batches",
    "bootstrap_mcc_samples",
    "cnn_baseline",
    "concat",
    "confusion",
    "cross_entropy",
    "dropout",
    "evaluate_predictions",
    "finite_difference_check",
    "fit",
    "focal_loss",
    "fps",
    "gelu",
    "layer_norm",
    "load_checkpoint",
    "load_manifest",
    "load_tensor",
    "matmul",
    "mcc",
    "no_grad",
    "paired_t_test",
    "param_count",
    "preset",
    "render_report",
    "roc_auc",
    "save_checkpoint",
    "save_tensor",
    "set_default_dtype",
    "softmax",
    "train_epoch",
    "weighted_prf",
]
