"""Discrete LIF scan over time, one column per neuron."""
import numpy as np

from .._accel import njit, pick


@njit
def lif_scan_jit(current, decay, gain, v_th):
    n_t, n_c = current.shape
    spikes = np.zeros((n_t, n_c))
    potential = np.empty((n_t, n_c))
    v = np.zeros(n_c)
    # time-major so the inner loop walks contiguous memory
    for t in range(n_t):
        for c in range(n_c):
            u = decay * v[c] + gain * current[t, c]
            potential[t, c] = u
            if u >= v_th:
                spikes[t, c] = 1.0
                v[c] = 0.0
            else:
                v[c] = u
    return spikes, potential


def lif_scan_numpy(current, decay, gain, v_th):
    n_t, n_c = current.shape
    spikes = np.zeros((n_t, n_c))
    potential = np.empty((n_t, n_c))
    v = np.zeros(n_c)
    for t in range(n_t):
        u = decay * v + gain * current[t]
        potential[t] = u
        fired = u >= v_th
        spikes[t] = fired
        v = np.where(fired, 0.0, u)
    return spikes, potential


lif_scan = pick(lif_scan_jit, lif_scan_numpy)
