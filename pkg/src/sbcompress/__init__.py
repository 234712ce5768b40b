"""One-shot post-training pruning and quantization of spiking neural networks
with the surrogate-membrane-potential Hessian."""
from ._accel import BACKEND
from .errors import SBCError
from .graph import Network, capture_calibration, fold_network, sequential
from .hessian import HessianState
from .metrics import accuracy, count_sops, fidelity
from .modelio import CalibSet, load_calib, load_model, save_calib, save_model
from .neuron import LIFParams, lif_forward, module_forward
from .prune import prune_network
from .quant import quantize_network
from .teacher import gen_teacher_task
from .vrd import build_kernel_matrix, vrd

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CalibSet", "HessianState", "LIFParams", "Network", "SBCError",
    "accuracy", "build_kernel_matrix", "capture_calibration", "count_sops", "fidelity",
    "fold_network", "gen_teacher_task", "lif_forward", "load_calib", "load_model",
    "module_forward", "prune_network", "quantize_network", "save_calib", "save_model",
    "sequential", "vrd",
]
