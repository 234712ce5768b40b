"""Error-compensated row-by-row quantization sweep.

``w`` is (d_in, d_out); every output column shares the inverse Hessian, so
one rank-1 downdate per input row serves all neurons at once.  Returns the
integer codes and the position in ``order`` at which a vanishing pivot
forced the remaining rows to plain round-to-nearest (``-1`` if never).

Rounding uses the step ``delta``; a code ``q`` reconstructs as
``(q / qmax) * anchor`` so the top level equals the anchor bit-for-bit.
"""
import numpy as np

from .._accel import njit, pick
from .obs import PIVOT_EPS


@njit
def gptq_sweep_jit(w, delta, anchor, qmin, qmax, hinv, order):
    d_in, d_out = w.shape
    w = w.copy()
    hinv = hinv.copy()
    codes = np.zeros((d_in, d_out), np.int64)
    done = np.zeros(d_in, np.bool_)
    err = np.empty(d_out)
    fallback = -1
    for k in range(order.shape[0]):
        p = order[k]
        piv = hinv[p, p]
        if fallback < 0 and not piv >= PIVOT_EPS:
            fallback = k
        for c in range(d_out):
            r = w[p, c] / delta[p, c]
            q = np.sign(r) * np.ceil(np.abs(r) - 0.5)
            if q < qmin:
                q = qmin
            elif q > qmax:
                q = qmax
            codes[p, c] = np.int64(q)
            level = (q / qmax) * anchor[p, c]
            err[c] = w[p, c] - level
            w[p, c] = level
        done[p] = True
        if fallback >= 0:
            continue
        for r in range(d_in):
            if done[r]:
                continue
            f = hinv[r, p] / piv
            for c in range(d_out):
                w[r, c] -= f * err[c]
        for r in range(d_in):
            if done[r]:
                continue
            hr = hinv[r, p]
            for s in range(r, d_in):
                if done[s]:
                    continue
                hinv[r, s] -= hr * hinv[p, s] / piv
                hinv[s, r] = hinv[r, s]
        for r in range(d_in):
            hinv[p, r] = 0.0
            hinv[r, p] = 0.0
    return codes, fallback


def gptq_sweep_numpy(w, delta, anchor, qmin, qmax, hinv, order):
    w = np.array(w, dtype=np.float64)
    hinv = np.array(hinv, dtype=np.float64)
    codes = np.zeros(w.shape, np.int64)
    todo = np.ones(w.shape[0], bool)
    fallback = -1
    for k, p in enumerate(order):
        piv = hinv[p, p]
        if fallback < 0 and not piv >= PIVOT_EPS:
            fallback = k
        r = w[p] / delta[p]
        q = np.clip(np.sign(r) * np.ceil(np.abs(r) - 0.5), qmin, qmax)
        codes[p] = q.astype(np.int64)
        level = (q / qmax) * anchor[p]
        err = w[p] - level
        w[p] = level
        todo[p] = False
        if fallback >= 0:
            continue
        col = hinv[:, p].copy()
        w[todo] -= np.outer(col[todo] / piv, err)
        live = np.ix_(todo, todo)
        hinv[live] -= np.outer(col[todo], col[todo] / piv)
        hinv[p, :] = 0.0
        hinv[:, p] = 0.0
    return codes, fallback


gptq_sweep = pick(gptq_sweep_jit, gptq_sweep_numpy)
