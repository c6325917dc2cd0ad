"""Network graphs, configs, forward wrappers, and the parameter store."""

from .checkpoint import (
    FORMAT_VERSION,
    ParameterStore,
    load_checkpoint,
    model_from_store,
    save_checkpoint,
    store_from_model,
)
from .config import KINDS, ModelConfig, count_parameters, default_config
from .nets import build_model, init_params
from .ops import (
    INFER_KINDS,
    discriminator_forward,
    img2prog_forward,
    infer_forward,
    one_hot_planes,
    predicted_grid,
    refiner_forward,
)

__all__ = [
    "FORMAT_VERSION",
    "INFER_KINDS",
    "KINDS",
    "ModelConfig",
    "ParameterStore",
    "build_model",
    "count_parameters",
    "default_config",
    "discriminator_forward",
    "img2prog_forward",
    "infer_forward",
    "init_params",
    "load_checkpoint",
    "model_from_store",
    "one_hot_planes",
    "predicted_grid",
    "refiner_forward",
    "save_checkpoint",
    "store_from_model",
]
