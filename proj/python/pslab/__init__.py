"""Python access to the pslab person-search lab."""

from ._pslab import (
    BoundingBox,
    ConfigError,
    ContractError,
    ValidationError,
    average_precision,
    center_loss,
    center_update,
    config_hash,
    default_config,
    generate,
    iou,
    normalize_config,
    train_and_eval,
)

__all__ = [
    "BoundingBox",
    "ConfigError",
    "ContractError",
    "ValidationError",
    "average_precision",
    "center_loss",
    "center_update",
    "config_hash",
    "default_config",
    "generate",
    "iou",
    "normalize_config",
    "train_and_eval",
]
