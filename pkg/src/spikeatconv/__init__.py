"""Spiking SpikeAtConv networks on a small numpy autodiff core."""

from .kernels import BACKEND
from .model import ModelConfig, build, preset
from .neuron import LIFParams, lif_sequence, lif_step
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["BACKEND", "LIFParams", "ModelConfig", "Tensor", "backward", "build", "lif_sequence", "lif_step",
           "no_grad", "preset"]
