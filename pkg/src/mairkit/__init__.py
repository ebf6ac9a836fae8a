"""Toy-scale MaIR image restoration: NSS scans, selective scan, sequence shuffle attention."""

from .net import (MaIR, ModelConfig, build_model, forward_restore, forward_sr, load_model,
                  loss_charbonnier, loss_l1, save_model)
from .scan import ScanSpec, Strategy, build_permutation, four_directions
from .tensor import Tape, Tensor, backward

__all__ = [
    "MaIR", "ModelConfig", "ScanSpec", "Strategy", "Tape", "Tensor", "backward",
    "build_model", "build_permutation", "forward_restore", "forward_sr", "four_directions",
    "load_model", "loss_charbonnier", "loss_l1", "save_model",
]
__version__ = "0.1.0"
