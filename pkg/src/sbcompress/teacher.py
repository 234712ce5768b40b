"""Synthetic teacher tasks: a random-weight SNN labels random spike inputs.

Inputs are Bernoulli spike trains whose per-channel rates come from a
low-dimensional latent factor per sample, so channels are correlated the
way pixels or DVS events are.  Labels are the teacher's own readout.
"""
import numpy as np

from .errors import RateUnattainable
from .graph import lif, linear, sequential
from .modelio import CalibSet
from .neuron import LIFParams, module_forward

RATE_BOUNDS = (0.05, 0.5)
MAX_RESAMPLES = 100


def latent_bernoulli(rng, n_samples, timesteps, width, latent_dim=6, contrast=1.5, offset=-1.5):
    """Spike trains (N, T, width) with sample-specific, channel-correlated rates."""
    z = rng.standard_normal((n_samples, latent_dim))
    loadings = rng.standard_normal((latent_dim, width))
    logits = contrast * (z @ loadings) / np.sqrt(latent_dim) + offset
    rates = 1.0 / (1.0 + np.exp(-logits))
    return (rng.random((n_samples, timesteps, width)) < rates[:, None, :]).astype(np.float64)


def _balance_bias(x, w, params, classes, steps):
    # Shift output biases until every class wins roughly equally often.
    b = np.zeros(classes)
    for _ in range(steps):
        counts = module_forward(x, w, b, params).sum(axis=1)
        freq = np.bincount(np.argmax(counts, axis=1), minlength=classes) / x.shape[0]
        if np.max(np.abs(freq - 1.0 / classes)) < 0.2 / classes:
            break
        b -= 0.5 * (freq - 1.0 / classes)
    return b


def gen_teacher_task(seed, classes=10, timesteps=20, sizes=(100, 64), n_samples=1000,
                     tau_m=2.0, v_th=1.0, gain=3.0, latent_dim=6, balance_steps=200):
    """Random fully connected teacher plus a labelled dataset of ``n_samples``.

    ``sizes`` is the input width followed by hidden widths; the output layer
    has ``classes`` neurons.  A layer whose mean firing rate falls outside
    ``RATE_BOUNDS`` is redrawn with an adjusted scale, up to
    ``MAX_RESAMPLES`` times.  The output layer's biases are tuned so labels
    are roughly balanced.  Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    params = LIFParams(tau_m, v_th)
    widths = list(sizes) + [classes]
    data = latent_bernoulli(rng, n_samples, timesteps, widths[0], latent_dim)
    layers, x = [], data
    n_layers = len(widths) - 1
    for i, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == n_layers - 1
        scale = gain / np.sqrt(d_in * max(x.mean(), 1e-3))
        for _ in range(MAX_RESAMPLES):
            w = rng.standard_normal((d_in, d_out)) * scale
            b = _balance_bias(x, w, params, d_out, balance_steps) if last else np.zeros(d_out)
            s = module_forward(x, w, b, params)
            rate = float(s.mean())
            if RATE_BOUNDS[0] <= rate <= RATE_BOUNDS[1]:
                break
            scale *= 1.25 if rate < RATE_BOUNDS[0] else 0.8
        else:
            raise RateUnattainable(f"layer {i + 1}: rate {rate:.3f} after {MAX_RESAMPLES} draws")
        layers += [linear(f"fc{i + 1}", w, b), lif(f"lif{i + 1}", tau_m, v_th)]
        x = s
    net = sequential(layers, (widths[0],), timesteps)
    labels = np.argmax(x.sum(axis=1), axis=1)
    return net, CalibSet(data, labels, "binary-spike")


def layer_rates(net, data):
    vals = net.run(data)
    return {n.name: float(vals[n.name].mean()) for n in net.nodes if n.op == "lif"}
