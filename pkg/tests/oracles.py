"""Slow, literal reference implementations used as test oracles."""
import numpy as np


def sequential_obs(w, h):
    """Greedy OBS with a fresh inverse of the surviving block at every step."""
    w = np.array(w, dtype=np.float64)
    alive = list(range(w.size))
    order, losses = [], np.zeros(w.size)
    while alive:
        hinv = np.linalg.inv(h[np.ix_(alive, alive)])
        wa = w[alive]
        scores = wa ** 2 / np.diag(hinv)
        k = int(np.argmin(scores))
        p = alive[k]
        losses[p] = scores[k]
        order.append(p)
        w[alive] = wa - hinv[:, k] * (wa[k] / hinv[k, k])
        w[p] = 0.0
        alive.pop(k)
    return losses, np.array(order)


def constrained_minimizer(w, h, pruned):
    """argmin (v - w)^T H (v - w) subject to v_P = 0, via the reduced normal equations."""
    w = np.asarray(w, dtype=np.float64)
    keep = np.setdiff1d(np.arange(w.size), pruned)
    pruned = np.asarray(pruned, dtype=np.int64)
    out = np.zeros_like(w)
    if keep.size:
        # d/dv_K: H_KK (v_K - w_K) - H_KP w_P = 0
        rhs = h[np.ix_(keep, keep)] @ w[keep] + h[np.ix_(keep, pruned)] @ w[pruned]
        out[keep] = np.linalg.solve(h[np.ix_(keep, keep)], rhs)
    return out


def brute_sops(patches, weight):
    """Triple loop over (sample*time*position, input row, output column)."""
    x = patches.reshape(-1, patches.shape[-1])
    total = 0
    for r in range(x.shape[0]):
        for i in range(x.shape[1]):
            if x[r, i] != 0:
                for j in range(weight.shape[1]):
                    if weight[i, j] != 0:
                        total += 1
    return total


def nearest_level(value, levels):
    """Closest level by exhaustive scan; ties go to the smaller magnitude."""
    best = None
    for lv in levels:
        d = abs(value - lv)
        if best is None or d < best[0] or (d == best[0] and abs(lv) < abs(best[1])):
            best = (d, lv)
    return best[1]


def brute_sops_network(net, data):
    """SOPs from raw activations, without any lowering helpers.

    Walks every sample, timestep and input event of each module and counts
    the nonzero synapses it drives.
    """
    vals = net.run(data)
    out = {}
    for mod in net.modules():
        total = 0
        for br in mod.branches:
            x = vals[br.source]
            if br.param is None:          # identity shortcut: one synapse per channel
                total += int(np.count_nonzero(x))
                continue
            node = net[br.param]
            w = node.tensors["weight"]
            if node.op == "linear":
                fan = [np.count_nonzero(w[i]) for i in range(w.shape[0])]
                for n in range(x.shape[0]):
                    for t in range(x.shape[1]):
                        for i in range(x.shape[2]):
                            if x[n, t, i] != 0:
                                total += fan[i]
                continue
            s, p = node.attrs.get("stride", 1), node.attrs.get("padding", 0)
            c_out, c_in, kh, kw = w.shape
            _, h_out, w_out = net.shapes[node.name]
            h_in, w_in = x.shape[-2:]
            for n in range(x.shape[0]):
                for t in range(x.shape[1]):
                    for i in range(h_out):
                        for j in range(w_out):
                            for c in range(c_in):
                                for a in range(kh):
                                    for b in range(kw):
                                        r, q = i * s + a - p, j * s + b - p
                                        if 0 <= r < h_in and 0 <= q < w_in and x[n, t, c, r, q]:
                                            total += int(np.count_nonzero(w[:, c, a, b]))
        out[mod.name] = total
    return out


def direct_filter(s, tau):
    """Causal exponential filter by explicit time-domain convolution, per column."""
    t_len = s.shape[0]
    out = np.zeros(s.shape)
    for t in range(t_len):
        for u in range(t + 1):
            k = 1.0 if np.isinf(tau) else (1 - 1 / tau) ** (t - u) / tau
            out[t] += k * s[u]
    return out
