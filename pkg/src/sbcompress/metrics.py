"""Evaluation: synaptic-operation counts, spike-train fidelity, accuracy."""
import numpy as np

from .errors import ShapeMismatch
from .graph import fold_network
from .hessian import module_hessian
from .neuron import lif_forward
from .prune import proxy_loss
from .vrd import build_kernel_matrix, vrd_batch


def _is_binary(x):
    return bool(np.all((x == 0.0) | (x == 1.0)))


def count_sops(net, data, drive=None):
    """Synaptic operations: each nonzero input event costs one op per nonzero
    outgoing weight of its input row.

    Conv modules are counted on their lowered patches, so an input spike is
    charged once per output position that reads it.  Modules whose inputs
    are not binary (a first layer fed by real-valued currents) are reported
    with ``input_kind = "real"`` and kept out of ``sops_per_sample``.

    With ``drive`` (a network of the same topology), every module is fed the
    inputs ``drive`` produces, so only ``net``'s weights change the count.
    """
    work = fold_network(net)
    src = work if drive is None else fold_network(drive)
    if drive is not None and [m.name for m in src.modules()] != [m.name for m in work.modules()]:
        raise ShapeMismatch("drive network does not share the same modules")
    data = work.check_input(data)
    n = data.shape[0]
    vals = src.run(data)
    modules = []
    for mod, smod in zip(work.modules(), src.modules()):
        x = src.module_patches(smod, vals)
        w = work.linearize(mod).weight
        fanout = np.count_nonzero(w, axis=1).astype(np.int64)
        events = np.count_nonzero(x, axis=(0, 1, 2)).astype(np.int64)
        total = int(events @ fanout)
        modules.append({
            "name": mod.name,
            "input_kind": "spike" if _is_binary(x) else "real",
            "ops_total": total,
            "ops_per_sample": total / n,
        })
    spike_total = sum(m["ops_total"] for m in modules if m["input_kind"] == "spike")
    all_total = sum(m["ops_total"] for m in modules)
    return {
        "samples": n,
        "modules": modules,
        "sops_total": spike_total,
        "sops_per_sample": spike_total / n,
        "ops_with_real_input_total": all_total,
        "ops_with_real_input_per_sample": all_total / n,
    }


def fidelity(net_a, net_b, data):
    """Mean squared VRD between the two networks' spike trains.

    ``output`` compares the final LIF layers end to end.  Per module, both
    weight sets are driven by the inputs ``net_a`` delivers to that module.
    """
    a, b = fold_network(net_a), fold_network(net_b)
    mods_a, mods_b = a.modules(), b.modules()
    if [m.name for m in mods_a] != [m.name for m in mods_b]:
        raise ShapeMismatch("networks do not share the same modules")
    if a[a.output].op != "lif":
        raise ShapeMismatch("network output must be a LIF layer")
    vals_a = a.run(data)
    out_b = b(data)
    t = a.timesteps
    k_out = build_kernel_matrix(t, a[a.output].lif_params.tau_m)
    n = data.shape[0]
    per_module = {}
    for ma, mb in zip(mods_a, mods_b):
        if a.shapes[ma.name] != b.shapes[mb.name]:
            raise ShapeMismatch(f"module {ma.name!r} differs in shape")
        s_a = vals_a[ma.name].reshape(n, t, -1)
        cur_b = b.module_current(mb, vals_a, weight=b.linearize(mb).weight,
                                 patches=a.module_patches(ma, vals_a))
        s_b = lif_forward(cur_b, mb.lif, time_axis=1)[0].reshape(n, t, -1)
        km = build_kernel_matrix(t, ma.lif.tau_m)
        per_module[ma.name] = float(np.mean(vrd_batch(s_a, s_b, km)))
    out_a = vals_a[a.output].reshape(n, t, -1)
    output = float(np.mean(vrd_batch(out_a, out_b.reshape(n, t, -1), k_out)))
    return {"output": output, "modules": per_module}


def module_proxy_losses(reference, net, data):
    """SMP quadratic proxy of each module's weight change, Hessian from ``reference``."""
    ref, cmp_ = fold_network(reference), fold_network(net)
    vals = ref.run(data)
    out = {}
    for mr, mc in zip(ref.modules(), cmp_.modules()):
        lr, lc = ref.linearize(mr), cmp_.linearize(mc)
        tr = lr.trainable
        x = ref.module_patches(mr, vals)
        h = module_hessian(x, ref.timesteps, "smp", mr.lif.tau_m).hessian()
        out[mr.name] = proxy_loss(lr.weight[tr], lc.weight[tr], h[np.ix_(tr, tr)])
    return out


def predict(net, data):
    """Class index with the most output spikes (ties: lowest index)."""
    out = net(data)
    counts = out.reshape(out.shape[0], out.shape[1], -1).sum(axis=1)
    return np.argmax(counts, axis=1)


def accuracy(net, data, labels):
    labels = np.asarray(labels)
    if labels.shape != (np.asarray(data).shape[0],):
        raise ShapeMismatch("one label per sample expected")
    return float(np.mean(predict(net, data) == labels))
