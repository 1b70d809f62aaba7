"""damcast: dual-attention multimodal forecasting for daily market data."""

from .dam import DamConfig, DamModel, VariantSpec, build_model, dam_forward
from .datapipe import PreparedData, prepare_dataset
from .ndcore import GradTape, Tensor, backward, tensor
from .train_eval import MetricsReport, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "DamConfig",
    "DamModel",
    "GradTape",
    "MetricsReport",
    "PreparedData",
    "Tensor",
    "TrainConfig",
    "VariantSpec",
    "backward",
    "build_model",
    "dam_forward",
    "evaluate",
    "prepare_dataset",
    "tensor",
    "train",
    "__version__",
]
