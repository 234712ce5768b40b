"""Discrete-time LIF / IF neurons with hard reset to zero."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidTau, ShapeMismatch
from .kernels import lif_scan

IF_TAU = math.inf


@dataclass(frozen=True)
class LIFParams:
    """Neuron constants.  ``tau_m = inf`` selects the IF neuron.

    IF modules integrate ``V[t-1] + I[t]`` with no 1/tau input scaling, so
    their thresholds are stored in that convention.
    """

    tau_m: float = 2.0
    v_th: float = 1.0

    def __post_init__(self):
        if not (self.tau_m >= 1.0):
            raise InvalidTau(f"tau_m must be >= 1 or inf, got {self.tau_m}")
        if not (self.v_th > 0 and math.isfinite(self.v_th)):
            raise ValueError(f"v_th must be positive and finite, got {self.v_th}")

    @property
    def v_reset(self):
        return 0.0

    @property
    def is_if(self):
        return math.isinf(self.tau_m)

    @property
    def decay(self):
        return 1.0 if self.is_if else 1.0 - 1.0 / self.tau_m

    @property
    def gain(self):
        return 1.0 if self.is_if else 1.0 / self.tau_m

    @classmethod
    def integrate_and_fire(cls, v_th=1.0):
        return cls(IF_TAU, v_th)


def lif_forward(current, params, time_axis=0):
    """Simulate every channel of ``current`` independently.

    ``current`` may have any rank; ``time_axis`` names the step axis and all
    remaining axes are treated as independent neurons.  Returns
    ``(spikes, potential)`` with the same shape, where ``potential`` is the
    pre-reset membrane potential U.
    """
    current = np.asarray(current, dtype=np.float64)
    if current.ndim == 0 or current.shape[time_axis] < 1:
        raise ShapeMismatch("current needs a non-empty time axis")
    if not np.all(np.isfinite(current)):
        raise ValueError("current contains non-finite values")
    moved = np.moveaxis(current, time_axis, 0)
    flat = np.ascontiguousarray(moved.reshape(moved.shape[0], -1))
    spikes, potential = lif_scan(flat, params.decay, params.gain, float(params.v_th))
    spikes = np.moveaxis(spikes.reshape(moved.shape), 0, time_axis)
    potential = np.moveaxis(potential.reshape(moved.shape), 0, time_axis)
    return spikes, potential


def module_forward(x, weight, bias, params):
    """Spikes of a Linear->LIF unit for inputs ``x`` of shape (..., T, d_in)."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"input width {x.shape[-1]} does not match weight {weight.shape}")
    current = x @ weight
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (weight.shape[1],):
            raise ShapeMismatch(f"bias shape {bias.shape} does not match d_out {weight.shape[1]}")
        current = current + bias
    return lif_forward(current, params, time_axis=x.ndim - 2)[0]
