"""Per-module Hessian accumulation for the SMP and OBC objectives.

SMP: ``H = E[2 (M X)^T (M X)]`` with M the VRD kernel matrix of the module's
neurons.  OBC: ``H = E[2 X^T X]`` (the current-based baseline).  Every
(sample, spatial position) pair counts as one pseudo-sample.
"""
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ShapeMismatch
from .linalg import spd_inverse
from .vrd import build_kernel_matrix

MODES = ("smp", "obc")
CHUNK = 256


def _gram(kernel_matrix, x):
    # x: (n, T, d) -> sum_n 2 (M x_n)^T (M x_n)
    if kernel_matrix is not None:
        x = np.einsum("ts,nsd->ntd", kernel_matrix, x)
    flat = x.reshape(-1, x.shape[-1])
    return 2.0 * (flat.T @ flat)


class HessianState:
    """Running sum of per-sample Hessians.

    ``add`` accepts one (T, d) matrix or a stack (..., T, d); stacks are
    reduced in fixed-size chunks summed in order, so the result does not
    depend on the worker count.
    """

    def __init__(self, dim, timesteps, mode="smp", tau_m=2.0):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.dim = int(dim)
        self.timesteps = int(timesteps)
        self.mode = mode
        self.kernel = build_kernel_matrix(timesteps, tau_m) if mode == "smp" else None
        self.accum = np.zeros((self.dim, self.dim))
        self.sample_count = 0

    @property
    def _m(self):
        return None if self.kernel is None else self.kernel.matrix

    def add(self, x, workers=1):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2 or x.shape[-2:] != (self.timesteps, self.dim):
            raise ShapeMismatch(f"expected (..., {self.timesteps}, {self.dim}), got {x.shape}")
        x = x.reshape((-1,) + x.shape[-2:])
        chunks = [x[i:i + CHUNK] for i in range(0, x.shape[0], CHUNK)]
        m = self._m
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(lambda c: _gram(m, c), chunks))
        else:
            parts = [_gram(m, c) for c in chunks]
        for part in parts:
            self.accum += part
        self.sample_count += x.shape[0]
        return self

    accumulate = add

    def merge(self, other):
        if (other.dim, other.timesteps, other.mode) != (self.dim, self.timesteps, self.mode):
            raise ShapeMismatch("cannot merge Hessian states of different configuration")
        self.accum += other.accum
        self.sample_count += other.sample_count
        return self

    def hessian(self):
        if self.sample_count < 1:
            raise ValueError("no samples accumulated")
        h = self.accum / self.sample_count
        return 0.5 * (h + h.T)

    def finalize(self, damp=0.01):
        h = self.hessian()
        return h, spd_inverse(h, damp)


def module_hessian(x, timesteps, mode, tau_m, workers=1):
    """Hessian from module captures of shape (N, T, P, d) or (N, T, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        x = x.transpose(0, 2, 1, 3)
    state = HessianState(x.shape[-1], timesteps, mode, tau_m)
    return state.add(x, workers=workers)


def dump_hessian(path, h, **meta):
    """Write ``h`` as raw little-endian float64 (row-major) plus a JSON sidecar."""
    h = np.ascontiguousarray(h, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(h.tobytes())
    side = {"dtype": "<f8", "order": "C", "shape": list(h.shape), **meta}
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)


def load_hessian(path):
    with open(str(path) + ".json") as fh:
        side = json.load(fh)
    data = np.fromfile(path, dtype="<f8")
    return data.reshape(side["shape"]), side
