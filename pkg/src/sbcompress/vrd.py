"""Van Rossum distance in discrete time via an explicit kernel matrix."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidTau, ShapeMismatch


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    timesteps: int
    tau_m: float
    kernel: np.ndarray
    matrix: np.ndarray

    def apply(self, s):
        """Convolve along the time axis; ``s`` has shape (..., T, C)."""
        s = np.asarray(s, dtype=np.float64)
        if s.shape[-2] != self.timesteps:
            raise ShapeMismatch(f"expected {self.timesteps} timesteps, got {s.shape[-2]}")
        return np.einsum("ts,...sc->...tc", self.matrix, s)


def kernel_values(timesteps, tau_m):
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    if math.isinf(tau_m):
        return np.ones(timesteps)
    if not tau_m >= 1.0:
        raise InvalidTau(f"tau_m must be >= 1 or inf, got {tau_m}")
    t = np.arange(timesteps)
    return (1.0 - 1.0 / tau_m) ** t / tau_m


def build_kernel_matrix(timesteps, tau_m):
    """Lower-triangular Toeplitz matrix with ``M[i, j] = k[i - j]``.

    For IF neurons (``tau_m = inf``) the kernel is the unit step, i.e. a
    running sum; any constant rescaling would leave OBS decisions unchanged.
    """
    k = kernel_values(timesteps, float(tau_m))
    i, j = np.indices((timesteps, timesteps))
    m = np.where(i >= j, k[np.clip(i - j, 0, None)], 0.0)
    return KernelMatrix(timesteps, float(tau_m), k, m)


def _diff(s, s_hat):
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s.shape != s_hat.shape:
        raise ShapeMismatch(f"spike trains differ in shape: {s.shape} vs {s_hat.shape}")
    return s - s_hat


def vrd(s, s_hat, kernel):
    """Squared VRD ``||M S - M S_hat||_F^2``, summed over all neurons."""
    diff = kernel.apply(_diff(s, s_hat))
    return float(np.sum(diff * diff))


def vrd_batch(s, s_hat, kernel):
    """Per-sample squared VRD for batches shaped (N, T, C)."""
    diff = kernel.apply(_diff(s, s_hat))
    return np.sum(diff * diff, axis=tuple(range(1, diff.ndim)))
