"""Dense-tensor layers, sequential networks, Adam, and gradient checking."""

from .adam import Adam
from .gradcheck import finite_diff_grad
from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Dense,
    Layer,
    LeakyReLU,
    ReLU,
    Reshape,
    Sigmoid,
    Tanh,
    layer_from_spec,
)
from .network import Activations, Network

__all__ = [
    "Activations",
    "Adam",
    "BatchNorm2d",
    "Conv2d",
    "ConvTranspose2d",
    "Dense",
    "Layer",
    "LeakyReLU",
    "Network",
    "ReLU",
    "Reshape",
    "Sigmoid",
    "Tanh",
    "finite_diff_grad",
    "layer_from_spec",
]
