"""Community-aware mixture-of-experts bot detection on multi-modal user data."""

from . import datagen, dataio, encoders, fusion, harness, moe, tensor, training

__all__ = [
    "datagen",
    "dataio",
    "encoders",
    "fusion",
    "harness",
    "moe",
    "tensor",
    "training",
]
