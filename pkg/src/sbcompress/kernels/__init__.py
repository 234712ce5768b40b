"""Hot numeric kernels, each with a numba and a numpy implementation."""
from .gptq import gptq_sweep, gptq_sweep_jit, gptq_sweep_numpy
from .lif import lif_scan, lif_scan_jit, lif_scan_numpy
from .obs import PIVOT_EPS, obs_order, obs_order_jit, obs_order_numpy

__all__ = [
    "PIVOT_EPS",
    "gptq_sweep", "gptq_sweep_jit", "gptq_sweep_numpy",
    "lif_scan", "lif_scan_jit", "lif_scan_numpy",
    "obs_order", "obs_order_jit", "obs_order_numpy",
]
