"""Post-training weight quantization on a symmetric per-channel grid.

``rtn`` rounds every weight independently.  ``sbc_quantize`` walks the input
rows in ascending ``diag(H^-1)`` order, rounds a row, and pushes the rounding
error onto the rows not yet quantized (OBS update with a rank-1 inverse
downdate).  With the SMP Hessian this is SBC quantization; with ``2 X^T X``
it is plain GPTQ.
"""
import time
from dataclasses import dataclass

import numpy as np

from .errors import ModuleFailure
from .graph import fold_network
from .hessian import module_hessian
from .kernels import gptq_sweep
from .linalg import calibration_inverse
from .prune import proxy_loss

METHODS = ("sbc", "gptq-obc", "rtn")


@dataclass(frozen=True, eq=False)
class QuantGrid:
    """Symmetric grid anchored on each channel's largest magnitude.

    Code q stands for ``(q / qmax) * anchor``; the nominal step is
    ``anchor / qmax``.  Anchoring on the value itself (rather than on the
    step) makes the top positive level equal the channel max exactly.
    """

    bits: int
    anchor: np.ndarray   # (d_out,) per channel, or (d_in, d_out) per row group

    @property
    def qmin(self):
        return -(2 ** (self.bits - 1))

    @property
    def qmax(self):
        return 2 ** (self.bits - 1) - 1

    @property
    def scale(self):
        return self.anchor / self.qmax

    def delta(self, shape):
        return np.ascontiguousarray(np.broadcast_to(self.scale, shape), dtype=np.float64)

    def anchors(self, shape):
        return np.ascontiguousarray(np.broadcast_to(self.anchor, shape), dtype=np.float64)

    def value(self, codes):
        codes = np.asarray(codes)
        return (codes / self.qmax) * self.anchors(codes.shape)

    def levels(self, channel):
        q = np.arange(self.qmin, self.qmax + 1)
        return (q / self.qmax) * self.anchor[..., channel]


@dataclass(eq=False)
class QuantizedModule:
    codes: np.ndarray
    grid: QuantGrid
    fallback: int = -1

    def reconstruct(self):
        return self.grid.value(self.codes)


def build_grid(weight, bits):
    """Per-output-column grid with step ``max|w| / (2^(bits-1) - 1)``.

    All-zero channels get step 1 (every code is 0).
    """
    if bits < 2:
        raise ValueError("bits must be >= 2")
    w = np.asarray(weight, dtype=np.float64)
    top = 2 ** (bits - 1) - 1
    peak = np.max(np.abs(w), axis=0) if w.size else np.zeros(w.shape[1])
    return QuantGrid(int(bits), np.where(peak > 0, peak, float(top)))


def _round(r):
    # nearest integer, exact halves toward zero
    return np.sign(r) * np.ceil(np.abs(r) - 0.5)


def rtn(weight, grid):
    w = np.asarray(weight, dtype=np.float64)
    delta = grid.delta(w.shape)
    codes = np.clip(_round(w / delta), grid.qmin, grid.qmax).astype(np.int64)
    return QuantizedModule(codes, grid)


def quant_order(hinv):
    return np.argsort(np.diag(hinv), kind="stable").astype(np.int64)


def sbc_quantize(weight, grid, hinv):
    """Error-compensated quantization of all columns with a shared ``hinv``.

    If a pivot vanishes, the remaining rows fall back to round-to-nearest;
    ``QuantizedModule.fallback`` records the step at which that happened.
    """
    w = np.ascontiguousarray(weight, dtype=np.float64)
    hinv = np.ascontiguousarray(hinv, dtype=np.float64)
    if hinv.shape != (w.shape[0], w.shape[0]):
        raise ValueError(f"hinv shape {hinv.shape} does not match {w.shape[0]} rows")
    codes, fallback = gptq_sweep(w, grid.delta(w.shape), grid.anchors(w.shape), float(grid.qmin),
                                 float(grid.qmax), hinv, quant_order(hinv))
    return QuantizedModule(codes, grid, int(fallback))


# -- network pipeline -----------------------------------------------------

def _row_grid(weight, mod, trainable, bits):
    # One grid per parameter layer; rows of each layer share that layer's anchors.
    rows = np.flatnonzero(trainable)
    anchor = np.ones(weight.shape)
    for b, sl in mod.row_slices():
        if b.param is not None:
            anchor[sl] = build_grid(weight[sl], bits).anchor
    return QuantGrid(int(bits), anchor[rows])


def _dequantize(codes, anchors, bits, conv):
    top = 2 ** (int(bits) - 1) - 1
    anchors = anchors.reshape(-1, 1, 1, 1) if conv else anchors
    return (codes / top) * anchors


def store_quantized(net, mod, codes_full, anchor_full, bits):
    """Attach integer codes and per-channel anchors to the module's layers."""
    for b, sl in mod.row_slices():
        if b.param is None:
            continue
        node = net[b.param]
        codes = codes_full[sl]
        anchors = anchor_full[sl][0].copy()
        conv = node.op == "conv2d"
        if conv:
            codes = codes.T.reshape(node.tensors["weight"].shape)
        node.tensors["weight"] = _dequantize(codes, anchors, bits, conv)
        node.tensors["codes"] = codes.astype(np.int64)
        node.tensors["anchors"] = anchors
        node.attrs["bits"] = int(bits)


def quantize_network(net, calib, bits, method="sbc", damp=0.01, capture="sequential", workers=1):
    """Quantize every module in topological order.

    Returns ``(quantized network, report)``.  Captures are sequential by
    default: each module sees inputs from the already-quantized upstream.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if capture not in ("sequential", "one-pass"):
        raise ValueError("capture must be 'sequential' or 'one-pass'")
    if bits < 2:
        raise ValueError("bits must be >= 2")
    t_start = time.perf_counter()
    work = fold_network(net)
    uncompressed = work.copy() if capture == "one-pass" else None
    entries, timing = [], {}
    for mod in work.modules():
        t0 = time.perf_counter()
        lm = work.linearize(mod)
        tr = lm.trainable
        rows = np.flatnonzero(tr)
        try:
            src = uncompressed if uncompressed is not None else work
            vals = src.run(calib, until=src.module_sources(mod))
            x = src.module_patches(mod, vals)
            h_smp = module_hessian(x, work.timesteps, "smp", mod.lif.tau_m, workers).hessian()
            grid = _row_grid(lm.weight, mod, tr, bits)
            sub = lm.weight[rows]
            if method == "rtn":
                q = rtn(sub, grid)
            else:
                if method == "gptq-obc":
                    h = module_hessian(x, work.timesteps, "obc", mod.lif.tau_m, workers).hessian()
                else:
                    h = h_smp
                q = sbc_quantize(sub, grid, calibration_inverse(h[np.ix_(rows, rows)], damp))
        except Exception as exc:
            raise ModuleFailure(mod.name, exc) from exc
        codes = np.zeros(lm.weight.shape, np.int64)
        anchor = np.ones(lm.weight.shape)
        codes[rows] = q.codes
        anchor[rows] = grid.anchor
        new_w = lm.weight.copy()
        new_w[rows] = q.reconstruct()
        store_quantized(work, mod, codes, anchor, bits)
        entries.append({
            "name": mod.name,
            "d_in": mod.d_in,
            "d_out": mod.d_out,
            "positions": mod.positions,
            "bits": int(bits),
            "proxy_loss": proxy_loss(sub, new_w[rows], h_smp[np.ix_(rows, rows)]),
            "rtn_fallback_step": None if q.fallback < 0 else int(q.fallback),
        })
        timing[mod.name] = time.perf_counter() - t0
    report = {
        "command": "quantize",
        "method": method,
        "config": {"bits": int(bits), "damp": damp, "capture": capture},
        "modules": entries,
        "timing": {"total_s": time.perf_counter() - t_start, "modules_s": timing},
    }
    return work, report


def dequantized_weight(node):
    """Float weight of a quantized node, in the node's native layout."""
    return _dequantize(np.asarray(node.tensors["codes"]),
                       np.asarray(node.tensors["anchors"], dtype=np.float64),
                       node.attrs["bits"], node.op == "conv2d")


__all__ = ["QuantGrid", "QuantizedModule", "build_grid", "rtn", "sbc_quantize", "quant_order",
           "quantize_network", "dequantized_weight"]
