"""One-shot unstructured pruning: SBC, ExactOBS and magnitude baselines.

Global sparsity is split across modules with LAMP scores.  Inside a module,
SBC and ExactOBS rank weights by their OBS loss (recorded while pruning each
neuron greedily in batches), mask the lowest-loss weights module-wide and
compensate every neuron with one group-OBS update.  They differ only in the
Hessian: SMP for SBC, ``2 X^T X`` for ExactOBS.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ModuleFailure, SingularBlock
from .graph import fold_network
from .hessian import module_hessian
from .kernels import obs_order
from .linalg import BLOCK_COND_MAX, calibration_inverse

METHODS = ("sbc", "exactobs", "mbp")
CAPTURE_MODES = ("sequential", "one-pass")


# -- LAMP allocation ------------------------------------------------------

def lamp_scores(weights):
    """LAMP score of every entry of ``weights`` (returned in its original layout)."""
    w = np.asarray(weights, dtype=np.float64)
    sq = w.ravel() ** 2
    order = np.argsort(sq, kind="stable")
    sorted_sq = sq[order]
    tail = np.cumsum(sorted_sq[::-1])[::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sc = np.where(tail > 0, sorted_sq / tail, 0.0)
    out = np.empty_like(sq)
    out[order] = sc
    return out.reshape(w.shape)


def lamps_allocate(layers, sparsity):
    """Per-layer prune counts for a global ``sparsity`` target.

    The ``floor(sparsity * total)`` globally smallest LAMP scores are removed;
    ties resolve by (layer index, weight index).
    """
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    sizes = [int(np.size(w)) for w in layers]
    total = sum(sizes)
    n_remove = int(np.floor(sparsity * total))
    if n_remove == 0:
        return [0] * len(layers)
    scores = np.concatenate([lamp_scores(w).ravel() for w in layers])
    layer_id = np.repeat(np.arange(len(layers)), sizes)
    pos = np.concatenate([np.arange(s) for s in sizes])
    picked = np.lexsort((pos, layer_id, scores))[:n_remove]
    return np.bincount(layer_id[picked], minlength=len(layers)).tolist()


# -- per-neuron ordering and compensation ---------------------------------

def order_weights(w, hinv, block=1):
    """OBS removal order and recorded losses for one neuron.

    Each step scores alive weights by ``w_p^2 / [H^-1]_pp``, removes the
    ``block`` smallest together (ties: lowest index), compensates the rest
    and downdates the inverse.  Returns ``(losses, order)``.
    """
    w = np.ascontiguousarray(w, dtype=np.float64)
    hinv = np.ascontiguousarray(hinv, dtype=np.float64)
    if hinv.shape != (w.size, w.size):
        raise ValueError(f"hinv shape {hinv.shape} does not match {w.size} weights")
    if not 1 <= block:
        raise ValueError("block must be >= 1")
    return obs_order(w, hinv, int(min(block, max(w.size, 1))))


def order_module(weight, hinv, block=16, b_out=32, workers=1):
    """Loss table (d_in, d_out) from ``order_weights`` on every column.

    Columns are processed in chunks of ``b_out``; each column works on its
    own copy of ``hinv`` so the result is independent of scheduling.
    """
    weight = np.asarray(weight, dtype=np.float64)
    d_out = weight.shape[1]
    losses = np.zeros_like(weight)

    def run(chunk):
        return [(c, order_weights(weight[:, c], hinv, block)[0]) for c in chunk]

    chunks = [range(i, min(i + b_out, d_out)) for i in range(0, d_out, b_out)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    for res in results:
        for c, col in res:
            losses[:, c] = col
    return losses


def select_mask(scores, count, eligible=None):
    """Boolean mask of the ``count`` smallest scores (ties: lowest flat index)."""
    scores = np.asarray(scores, dtype=np.float64)
    flat = scores.ravel()
    cand = np.arange(flat.size) if eligible is None else np.flatnonzero(np.ravel(eligible))
    if count > cand.size:
        raise ValueError(f"cannot prune {count} of {cand.size} eligible weights")
    pick = cand[np.argsort(flat[cand], kind="stable")[:count]]
    mask = np.zeros(flat.size, bool)
    mask[pick] = True
    return mask.reshape(scores.shape)


def apply_mask(w, indices, hinv):
    """Zero ``w`` on ``indices`` and optimally compensate the other entries.

    Solves ``min (w' - w)^T H (w' - w)`` subject to ``w'_P = 0`` through the
    group OBS update ``w - H^-1[:, P] (H^-1[P, P])^-1 w_P``.
    """
    w = np.asarray(w, dtype=np.float64)
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size == 0:
        return w.copy()
    if idx.size == w.size:
        return np.zeros_like(w)
    blk = hinv[np.ix_(idx, idx)]
    if np.linalg.cond(blk) > BLOCK_COND_MAX:
        raise SingularBlock(f"principal block of size {idx.size} is numerically singular")
    out = w - hinv[:, idx] @ np.linalg.solve(blk, w[idx])
    out[idx] = 0.0
    return out


def proxy_loss(w_old, w_new, h):
    """Sum over neurons of ``(w_new - w_old)^T H (w_new - w_old)``."""
    d = np.asarray(w_new, np.float64) - np.asarray(w_old, np.float64)
    return float(np.einsum("ic,ij,jc->", d, h, d))


# -- network pipeline -----------------------------------------------------

@dataclass
class PruneConfig:
    sparsity: float
    method: str = "sbc"
    b_in: int = 16
    b_out: int = 32
    damp: float = 0.01
    capture: str = "sequential"
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.capture not in CAPTURE_MODES:
            raise ValueError(f"capture must be one of {CAPTURE_MODES}")
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError("sparsity must lie in [0, 1)")
        if self.b_in < 1 or self.b_out < 1 or self.workers < 1:
            raise ValueError("b_in, b_out and workers must be >= 1")
        if self.damp < 0:
            raise ValueError("damp must be non-negative")


def _module_layers(mod):
    """Trainable (param node, row slice) groups of a module."""
    return [(b.param, rows) for b, rows in mod.row_slices() if b.param is not None]


def prune_module(weight, trainable, count, method, h_cmp, block, b_out, damp, workers):
    """Prune ``count`` weights of one linearised module; returns (new weight, mask)."""
    rows = np.flatnonzero(trainable)
    sub = weight[rows]
    mask_sub = np.zeros(sub.shape, bool)
    new_sub = sub.copy()
    if count > 0:
        if method == "mbp":
            mask_sub = select_mask(np.abs(sub), count)
            new_sub[mask_sub] = 0.0
        else:
            hinv = calibration_inverse(h_cmp[np.ix_(rows, rows)], damp)
            losses = order_module(sub, hinv, block, b_out, workers)
            mask_sub = select_mask(losses, count)
            for c in range(sub.shape[1]):
                new_sub[:, c] = apply_mask(sub[:, c], np.flatnonzero(mask_sub[:, c]), hinv)
    new = weight.copy()
    new[rows] = new_sub
    mask = np.zeros(weight.shape, bool)
    mask[rows] = mask_sub
    return new, mask


def prune_network(net, calib, sparsity, method="sbc", b_in=16, b_out=32, damp=0.01,
                  capture="sequential", workers=1):
    """Compress every module of ``net`` in topological order.

    ``calib`` is an input array (N, T, *input_shape).  Returns
    ``(pruned network, masks, report)``; ``masks`` maps module name to a
    (d_in, d_out) boolean array, ``report`` is JSON-serialisable.
    """
    cfg = PruneConfig(sparsity, method, b_in, b_out, damp, capture, workers)
    t_start = time.perf_counter()
    work = fold_network(net)
    mods = work.modules()
    lins = [work.linearize(m) for m in mods]

    layer_w, layer_mod = [], []
    for i, (m, lm) in enumerate(zip(mods, lins)):
        for _, rows in _module_layers(m):
            layer_w.append(lm.weight[rows])
            layer_mod.append(i)
    counts = np.zeros(len(mods), int)
    for mi, c in zip(layer_mod, lamps_allocate(layer_w, cfg.sparsity)):
        counts[mi] += c

    uncompressed = work.copy() if cfg.capture == "one-pass" else None
    masks, entries, timing = {}, [], {}
    for mod, lm, count in zip(mods, lins, counts):
        t0 = time.perf_counter()
        try:
            src = uncompressed if uncompressed is not None else work
            vals = src.run(calib, until=src.module_sources(mod))
            x = src.module_patches(mod, vals)
            h_smp = module_hessian(x, work.timesteps, "smp", mod.lif.tau_m, cfg.workers).hessian()
            if cfg.method == "exactobs":
                h_cmp = module_hessian(x, work.timesteps, "obc", mod.lif.tau_m,
                                       cfg.workers).hessian()
            else:
                h_cmp = h_smp
            new_w, mask = prune_module(lm.weight, lm.trainable, int(count), cfg.method, h_cmp,
                                       cfg.b_in, cfg.b_out, cfg.damp, cfg.workers)
        except Exception as exc:
            raise ModuleFailure(mod.name, exc) from exc
        work.set_module_weight(mod, new_w)
        masks[mod.name] = mask
        tr = lm.trainable
        n_prunable = int(tr.sum()) * mod.d_out
        zeros = int(np.count_nonzero(new_w[tr] == 0.0))
        entries.append({
            "name": mod.name,
            "d_in": mod.d_in,
            "d_out": mod.d_out,
            "positions": mod.positions,
            "prunable": n_prunable,
            "pruned": int(mask.sum()),
            "zeros": zeros,
            "sparsity": float(mask.sum() / n_prunable) if n_prunable else 0.0,
            "proxy_loss": proxy_loss(lm.weight[tr], new_w[tr], h_smp[np.ix_(tr, tr)]),
        })
        timing[mod.name] = time.perf_counter() - t0
    total = sum(e["prunable"] for e in entries)
    pruned = sum(e["pruned"] for e in entries)
    report = {
        "command": "prune",
        "method": cfg.method,
        "config": {"sparsity": cfg.sparsity, "b_in": cfg.b_in, "b_out": cfg.b_out,
                   "damp": cfg.damp, "capture": cfg.capture},
        "modules": entries,
        "total": {"prunable": total, "pruned": pruned,
                  "sparsity": pruned / total if total else 0.0},
        "timing": {"total_s": time.perf_counter() - t_start, "modules_s": timing},
    }
    return work, masks, report
