"""Numba vs numpy timings for the three hot kernels.

    python benchmarks/bench_kernels.py [--repeat 5] [--dim 128]

Each kernel is compiled once before timing.  Outputs are compared so a
speedup never hides a wrong answer.
"""
import argparse
import time

import numpy as np

from sbcompress import _accel
from sbcompress.kernels import (gptq_sweep_jit, gptq_sweep_numpy, lif_scan_jit, lif_scan_numpy,
                                obs_order_jit, obs_order_numpy)
from sbcompress.quant import build_grid, quant_order


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def spd(rng, dim):
    a = rng.standard_normal((dim, 2 * dim))
    return a @ a.T / (2 * dim) + 0.01 * np.eye(dim)


def cases(rng, dim):
    cur = rng.standard_normal((200, 4096))
    yield "lif_scan   T=200 C=4096", lif_scan_jit, lif_scan_numpy, (cur, 0.5, 0.5, 1.0)
    hinv = np.linalg.inv(spd(rng, dim))
    w = rng.standard_normal(dim)
    for block in (1, 16):
        yield (f"obs_order  d={dim} B={block}", obs_order_jit, obs_order_numpy,
               (w, hinv, block))
    wm = rng.standard_normal((dim, 64))
    g = build_grid(wm, 3)
    args = (wm, g.delta(wm.shape), g.anchors(wm.shape), float(g.qmin), float(g.qmax), hinv,
            quant_order(hinv))
    yield f"gptq_sweep d={dim} n=64", gptq_sweep_jit, gptq_sweep_numpy, args


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return a.shape == b.shape and np.allclose(a, b, rtol=1e-9, atol=1e-12)
    return a == b


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; both columns time the same code")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':28s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}  agree")
    for name, jit, ref, fargs in cases(rng, args.dim):
        jit(*fargs)  # compile
        t_jit, out_jit = best_of(jit, fargs, args.repeat)
        t_np, out_np = best_of(ref, fargs, args.repeat)
        print(f"{name:28s} {1e3 * t_jit:11.2f} {1e3 * t_np:11.2f} {t_np / t_jit:8.1f}x  "
              f"{'yes' if same(out_jit, out_np) else 'NO'}")


if __name__ == "__main__":
    main()
