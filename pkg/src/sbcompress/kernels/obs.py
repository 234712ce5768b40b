"""Per-neuron OBS weight ordering with batched (Woodbury) removal.

Both implementations keep the inverse Hessian at full size and mark removed
coordinates dead instead of shrinking it, so indices stay stable.
"""
import numpy as np

from .._accel import njit, pick

PIVOT_EPS = 1e-12


@njit
def _chol_solve_jit(a, rhs):
    # Returns (ok, a^{-1} rhs) for SPD a; ok is False on a non-positive pivot.
    n = a.shape[0]
    low = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= low[j, k] * low[j, k]
        if not s > PIVOT_EPS:
            return False, rhs
        low[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= low[i, k] * low[j, k]
            low[i, j] = s / low[j, j]
    m = rhs.shape[1]
    out = rhs.copy()
    for c in range(m):
        for i in range(n):
            s = out[i, c]
            for k in range(i):
                s -= low[i, k] * out[k, c]
            out[i, c] = s / low[i, i]
        for i in range(n - 1, -1, -1):
            s = out[i, c]
            for k in range(i + 1, n):
                s -= low[k, i] * out[k, c]
            out[i, c] = s / low[i, i]
    return True, out


@njit
def obs_order_jit(w, hinv, block):
    d = w.shape[0]
    w = w.copy()
    hinv = hinv.copy()
    alive = np.ones(d, np.bool_)
    chosen = np.zeros(d, np.bool_)
    scores = np.empty(d)
    losses = np.zeros(d)
    order = np.empty(d, np.int64)
    n_alive = d
    pos = 0
    while n_alive > 0:
        for p in range(d):
            if alive[p]:
                piv = hinv[p, p]
                if piv < PIVOT_EPS:
                    scores[p] = np.inf
                else:
                    scores[p] = w[p] * w[p] / piv
        b = min(block, n_alive)
        sel = np.empty(b, np.int64)
        for k in range(b):
            best = -1
            for p in range(d):
                if alive[p] and not chosen[p]:
                    if best < 0 or scores[p] < scores[best]:
                        best = p
            sel[k] = best
            chosen[best] = True
        for k in range(b):
            chosen[sel[k]] = False

        ok = False
        while not ok:
            a = np.empty((b, b))
            g = np.empty((d, b))
            for i in range(b):
                for j in range(b):
                    a[i, j] = hinv[sel[i], sel[j]]
                for r in range(d):
                    g[r, i] = hinv[r, sel[i]]
            rhs = np.empty((b, d + 1))
            for i in range(b):
                for r in range(d):
                    rhs[i, r] = hinv[sel[i], r]
                rhs[i, d] = w[sel[i]]
            ok, z = _chol_solve_jit(a, rhs)
            if ok:
                for r in range(d):
                    if alive[r]:
                        acc = 0.0
                        for i in range(b):
                            acc += g[r, i] * z[i, d]
                        w[r] -= acc
                for r in range(d):
                    if not alive[r]:
                        continue
                    for c in range(r, d):
                        if not alive[c]:
                            continue
                        acc = 0.0
                        for i in range(b):
                            acc += g[r, i] * z[i, c]
                        hinv[r, c] -= acc
                        hinv[c, r] = hinv[r, c]
            elif b > 1:
                b = 1
                sel = sel[:1]
            else:
                # Numerically dead direction: drop it without compensation.
                ok = True

        for i in range(b):
            p = sel[i]
            losses[p] = scores[p]
            order[pos] = p
            pos += 1
            alive[p] = False
            w[p] = 0.0
            for r in range(d):
                hinv[p, r] = 0.0
                hinv[r, p] = 0.0
        n_alive -= b
    return losses, order


def obs_order_numpy(w, hinv, block):
    d = w.shape[0]
    w = np.array(w, dtype=np.float64)
    hinv = np.array(hinv, dtype=np.float64)
    alive = np.ones(d, bool)
    losses = np.zeros(d)
    order = np.empty(d, np.int64)
    pos = 0
    while pos < d:
        idx = np.flatnonzero(alive)
        piv = hinv[idx, idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            sc = np.where(piv < PIVOT_EPS, np.inf, w[idx] ** 2 / piv)
        b = min(block, idx.size)
        sel = idx[np.argsort(sc, kind="stable")[:b]]
        scores = dict(zip(idx.tolist(), sc.tolist()))
        while True:
            a = hinv[np.ix_(sel, sel)]
            try:
                low = np.linalg.cholesky(a)
                if np.any(np.diag(low) ** 2 <= PIVOT_EPS):
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                if sel.size > 1:
                    sel = sel[:1]
                    continue
                break
            g = hinv[:, sel]
            rhs = np.concatenate([hinv[sel], w[sel, None]], axis=1)
            z = np.linalg.solve(low.T, np.linalg.solve(low, rhs))
            upd = g @ z
            w[alive] -= upd[alive, d]
            live = np.ix_(alive, alive)
            hinv[live] -= upd[:, :d][live]
            hinv = (np.triu(hinv) + np.triu(hinv, 1).T)
            break
        for p in sel:
            losses[p] = scores[int(p)]
            order[pos] = p
            pos += 1
        alive[sel] = False
        w[sel] = 0.0
        hinv[sel, :] = 0.0
        hinv[:, sel] = 0.0
    return losses, order


obs_order = pick(obs_order_jit, obs_order_numpy)
