"""Network graphs, BatchNorm folding, conv lowering and module extraction.

A network is an ordered list of nodes; each node names its inputs, so
residual branches are plain extra edges.  Activations are laid out as
``(N, T, *features)``.  A *module* is a LIF node together with the
parameterised layer(s) producing its input current.
"""
import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidGeometry, MissingStats, ShapeMismatch
from .neuron import LIFParams, lif_forward

INPUT = "input"
PARAM_OPS = ("linear", "conv2d")
OPS = PARAM_OPS + ("batchnorm", "lif", "flatten", "maxpool", "add")
SHORTCUT_MODES = ("concat", "ignore")


def _as_tensor(v):
    v = np.asarray(v)
    return v.astype(np.int64) if v.dtype.kind in "iu" else v.astype(np.float64)


@dataclass
class Node:
    name: str
    op: str
    inputs: list
    attrs: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown op {self.op!r} on node {self.name!r}")
        self.inputs = list(self.inputs)
        self.tensors = {k: _as_tensor(v) for k, v in self.tensors.items()}

    @property
    def lif_params(self):
        tau = self.attrs.get("tau_m")
        return LIFParams(float("inf") if tau is None else float(tau), float(self.attrs.get("v_th", 1.0)))


def linear(name, weight, bias=None, inputs=None):
    """Linear layer with weight laid out (d_in, d_out)."""
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.zeros(weight.shape[1]) if bias is None else bias
    return Node(name, "linear", inputs or [], tensors={"weight": weight, "bias": bias})


def conv2d(name, weight, bias=None, stride=1, padding=0, inputs=None):
    """2-D convolution with weight laid out (C_out, C_in, kh, kw)."""
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.zeros(weight.shape[0]) if bias is None else bias
    return Node(name, "conv2d", inputs or [], {"stride": int(stride), "padding": int(padding)},
                {"weight": weight, "bias": bias})


def batchnorm(name, mean, var, gamma, beta, eps=1e-5, inputs=None):
    return Node(name, "batchnorm", inputs or [], {"eps": float(eps)},
                {"mean": mean, "var": var, "gamma": gamma, "beta": beta})


def lif(name, tau_m=2.0, v_th=1.0, inputs=None):
    tau = None if tau_m is None or np.isinf(tau_m) else float(tau_m)
    return Node(name, "lif", inputs or [], {"tau_m": tau, "v_th": float(v_th)})


def flatten(name, inputs=None):
    return Node(name, "flatten", inputs or [])


def maxpool(name, kernel=2, inputs=None):
    return Node(name, "maxpool", inputs or [], {"kernel": int(kernel)})


def add(name, inputs, shortcut="concat"):
    return Node(name, "add", inputs, {"shortcut": shortcut})


# ----------------------------------------------------------------------------
# convolution lowering


def conv_output_hw(h, w, kh, kw, stride, padding):
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1 or stride < 1 or padding < 0:
        raise InvalidGeometry(
            f"kernel {kh}x{kw}, stride {stride}, padding {padding} on {h}x{w} input "
            "yields no output positions")
    return ho, wo


def im2col(x, kh, kw, stride=1, padding=0):
    """Patches of ``x`` (..., C, H, W) as (..., H_out*W_out, C*kh*kw).

    Column order is (channel, kernel row, kernel col), matching
    ``weight.reshape(C_out, -1)``.  Padding contributes zero columns.
    """
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape[-3:]
    ho, wo = conv_output_hw(h, w, kh, kw, stride, padding)
    if padding:
        pad = [(0, 0)] * (x.ndim - 2) + [(padding, padding), (padding, padding)]
        x = np.pad(x, pad)
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(-2, -1))
    win = win[..., ::stride, ::stride, :, :][..., :ho, :wo, :, :]
    lead = x.ndim - 3
    perm = tuple(range(lead)) + (lead + 1, lead + 2, lead, lead + 3, lead + 4)
    win = win.transpose(perm)
    return np.ascontiguousarray(win).reshape(x.shape[:lead] + (ho * wo, c * kh * kw))


def conv_weight_to_linear(weight):
    return np.asarray(weight).reshape(weight.shape[0], -1).T.copy()


def linear_to_conv_weight(w_lin, conv_shape):
    return np.asarray(w_lin).T.reshape(conv_shape).copy()


@dataclass
class ConvLowering:
    weight: np.ndarray          # (C_in*kh*kw, C_out)
    bias: np.ndarray
    kernel: tuple
    stride: int
    padding: int
    out_hw: tuple

    @property
    def positions(self):
        return self.out_hw[0] * self.out_hw[1]

    def patches(self, x):
        return im2col(x, self.kernel[0], self.kernel[1], self.stride, self.padding)

    def forward(self, x):
        """Conv output (..., C_out, H_out, W_out) computed as patches @ weight."""
        cur = self.patches(x) @ self.weight + self.bias
        return np.moveaxis(cur, -1, -2).reshape(cur.shape[:-2] + (self.weight.shape[1],) + self.out_hw)


def lower_conv(weight, bias, stride, padding, input_shape):
    """Linearise a conv layer for inputs of feature shape (C, H, W)."""
    weight = np.asarray(weight, dtype=np.float64)
    c_out, c_in, kh, kw = weight.shape
    if tuple(input_shape)[0] != c_in:
        raise ShapeMismatch(f"conv expects {c_in} input channels, got {input_shape[0]}")
    hw = conv_output_hw(input_shape[1], input_shape[2], kh, kw, stride, padding)
    bias = np.zeros(c_out) if bias is None else np.asarray(bias, dtype=np.float64)
    return ConvLowering(conv_weight_to_linear(weight), bias, (kh, kw), stride, padding, hw)


# ----------------------------------------------------------------------------
# batchnorm folding


def fold_batchnorm(weight, bias, mean, var, gamma, beta, eps=1e-5, out_axis=-1):
    """Fold inference-mode BatchNorm into the preceding linear map.

    ``out_axis`` is the output-channel axis of ``weight``: -1 for (d_in, d_out)
    linear weights, 0 for (C_out, C_in, kh, kw) conv weights.
    """
    stats = dict(mean=mean, var=var, gamma=gamma, beta=beta)
    missing = [k for k, v in stats.items() if v is None]
    if missing:
        raise MissingStats(f"batchnorm statistics missing: {', '.join(missing)}")
    weight = np.asarray(weight, dtype=np.float64)
    mean, var, gamma, beta = (np.asarray(v, dtype=np.float64) for v in stats.values())
    scale = gamma / np.sqrt(var + eps)
    shape = [1] * weight.ndim
    shape[out_axis] = -1
    bias = np.zeros_like(mean) if bias is None else np.asarray(bias, dtype=np.float64)
    return weight * scale.reshape(shape), (bias - mean) * scale + beta


def _batchnorm_forward(x, node):
    t = node.tensors
    shape = (1, 1, -1) + (1,) * (x.ndim - 3)
    scale = t["gamma"] / np.sqrt(t["var"] + node.attrs.get("eps", 1e-5))
    return (x - t["mean"].reshape(shape)) * scale.reshape(shape) + t["beta"].reshape(shape)


# ----------------------------------------------------------------------------
# shortcut concatenation


@dataclass
class LinearMap:
    """Weights (d_in, d_out), bias, and which input rows may be compressed."""

    weight: np.ndarray
    bias: np.ndarray
    trainable: np.ndarray

    @classmethod
    def of(cls, weight, bias=None):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.zeros(weight.shape[1]) if bias is None else np.asarray(bias, dtype=np.float64)
        return cls(weight, bias, np.ones(weight.shape[0], bool))

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d), np.zeros(d), np.zeros(d, bool))


def concat_shortcut(a, b):
    """Merge two branches feeding the same LIF layer into one module.

    Inputs concatenate horizontally, weights vertically; currents add, so
    ``[X1 X2] @ [[W1], [W2]] + b1 + b2`` reproduces the branch sum.
    """
    if a.weight.shape[1] != b.weight.shape[1]:
        raise ShapeMismatch(
            f"branches disagree on output width: {a.weight.shape[1]} vs {b.weight.shape[1]}")
    return LinearMap(np.vstack([a.weight, b.weight]), a.bias + b.bias,
                     np.concatenate([a.trainable, b.trainable]))


def concat_inputs(x1, x2):
    return np.concatenate([np.asarray(x1, np.float64), np.asarray(x2, np.float64)], axis=-1)


# ----------------------------------------------------------------------------
# modules


@dataclass
class Branch:
    kind: str            # "linear", "conv2d" or "identity"
    source: str          # node whose output this branch reads
    param: str = None    # parameter node, None for identity
    rows: int = 0


@dataclass
class ModuleDef:
    name: str
    lif: LIFParams
    branches: list
    offset: str = None         # current added but ignored during compression
    out_shape: tuple = ()
    positions: int = 1

    @property
    def d_in(self):
        return sum(b.rows for b in self.branches)

    @property
    def d_out(self):
        return self.out_shape[0]

    @property
    def param_nodes(self):
        return [b.param for b in self.branches if b.param is not None]

    def row_slices(self):
        out, start = [], 0
        for b in self.branches:
            out.append((b, slice(start, start + b.rows)))
            start += b.rows
        return out


@dataclass
class LinearizedModule:
    name: str
    weight: np.ndarray
    bias: np.ndarray
    lif: LIFParams
    trainable: np.ndarray
    provenance: list
    positions: int


class Network:
    def __init__(self, nodes, input_shape, timesteps, input_encoding="spike"):
        self.nodes = list(nodes)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.timesteps = int(timesteps)
        if input_encoding not in ("spike", "current"):
            raise ValueError("input_encoding must be 'spike' or 'current'")
        self.input_encoding = input_encoding
        self._index = {}
        for i, node in enumerate(self.nodes):
            if node.name == INPUT or node.name in self._index:
                raise ValueError(f"duplicate or reserved node name {node.name!r}")
            if not node.inputs:
                node.inputs = [self.nodes[i - 1].name if i else INPUT]
            for src in node.inputs:
                if src != INPUT and src not in self._index:
                    raise ValueError(f"node {node.name!r} reads {src!r} before it is defined")
            want = 2 if node.op == "add" else 1
            if len(node.inputs) != want:
                raise ValueError(f"{node.op} node {node.name!r} needs {want} input(s)")
            self._index[node.name] = i
        self.shapes = self._infer_shapes()

    def __getitem__(self, name):
        return self.nodes[self._index[name]]

    def __contains__(self, name):
        return name in self._index

    def index(self, name):
        return -1 if name == INPUT else self._index[name]

    @property
    def output(self):
        return self.nodes[-1].name

    def copy(self):
        return copy.deepcopy(self)

    def consumers(self, name):
        return [n.name for n in self.nodes if name in n.inputs]

    def _infer_shapes(self):
        shapes = {INPUT: self.input_shape}
        for node in self.nodes:
            ins = [shapes[s] for s in node.inputs]
            shp = ins[0]
            t = node.tensors
            if node.op == "linear":
                w = t["weight"]
                if len(shp) != 1 or w.ndim != 2 or w.shape[0] != shp[0]:
                    raise ShapeMismatch(f"linear {node.name!r}: weight {w.shape} vs input {shp}")
                out = (w.shape[1],)
            elif node.op == "conv2d":
                w = t["weight"]
                if len(shp) != 3 or w.ndim != 4 or w.shape[1] != shp[0]:
                    raise ShapeMismatch(f"conv2d {node.name!r}: weight {w.shape} vs input {shp}")
                hw = conv_output_hw(shp[1], shp[2], w.shape[2], w.shape[3],
                                    node.attrs.get("stride", 1), node.attrs.get("padding", 0))
                out = (w.shape[0],) + hw
            elif node.op == "batchnorm":
                for k in ("mean", "var", "gamma", "beta"):
                    if k not in t:
                        raise MissingStats(f"batchnorm {node.name!r} lacks {k}")
                    if t[k].shape != (shp[0],):
                        raise ShapeMismatch(f"batchnorm {node.name!r}: {k} shape {t[k].shape}")
                out = shp
            elif node.op == "flatten":
                out = (int(np.prod(shp)),)
            elif node.op == "maxpool":
                k = node.attrs.get("kernel", 2)
                if len(shp) != 3 or shp[1] < k or shp[2] < k:
                    raise InvalidGeometry(f"maxpool {node.name!r}: kernel {k} on {shp}")
                out = (shp[0], shp[1] // k, shp[2] // k)
            elif node.op == "add":
                if ins[0] != ins[1]:
                    raise ShapeMismatch(f"add {node.name!r}: {ins[0]} vs {ins[1]}")
                if node.attrs.get("shortcut", "concat") not in SHORTCUT_MODES:
                    raise ValueError(f"add {node.name!r}: unknown shortcut mode")
                out = shp
            else:
                node.lif_params  # validates
                out = shp
            shapes[node.name] = tuple(out)
        return shapes

    # -- execution -------------------------------------------------------

    def _eval(self, node, vals):
        x = vals[node.inputs[0]]
        t = node.tensors
        if node.op == "linear":
            return x @ t["weight"] + t["bias"]
        if node.op == "conv2d":
            low = lower_conv(t["weight"], t["bias"], node.attrs.get("stride", 1),
                             node.attrs.get("padding", 0), x.shape[2:])
            return low.forward(x)
        if node.op == "batchnorm":
            return _batchnorm_forward(x, node)
        if node.op == "lif":
            return lif_forward(x, node.lif_params, time_axis=1)[0]
        if node.op == "flatten":
            return x.reshape(x.shape[:2] + (-1,))
        if node.op == "maxpool":
            k = node.attrs.get("kernel", 2)
            n, tt, c, h, w = x.shape
            x = x[..., : h // k * k, : w // k * k]
            return x.reshape(n, tt, c, h // k, k, w // k, k).max(axis=(4, 6))
        return x + vals[node.inputs[1]]

    def check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        want = (self.timesteps,) + self.input_shape
        if x.ndim != len(want) + 1 or x.shape[1:] != want:
            raise ShapeMismatch(f"network input must be (N,) + {want}, got {x.shape}")
        return x

    def run(self, x, until=None):
        """Forward pass; returns every node's output keyed by name.

        ``until`` (a node name or collection of names) stops execution once
        those nodes are available.
        """
        vals = {INPUT: self.check_input(x)}
        stop = len(self.nodes) - 1
        if until is not None:
            names = [until] if isinstance(until, str) else list(until)
            stop = max((self.index(n) for n in names), default=-1)
        for node in self.nodes[: stop + 1]:
            vals[node.name] = self._eval(node, vals)
        return vals

    def __call__(self, x):
        return self.run(x)[self.output]

    # -- modules ---------------------------------------------------------

    def _param_branch(self, name):
        node = self[name]
        if node.op == "batchnorm":
            raise ValueError(f"fold batchnorm {name!r} before extracting modules (fold_network)")
        if node.op == "linear":
            return Branch("linear", node.inputs[0], name, node.tensors["weight"].shape[0])
        if node.op == "conv2d":
            w = node.tensors["weight"]
            return Branch("conv2d", node.inputs[0], name, int(np.prod(w.shape[1:])))
        return None

    def modules(self):
        """Modules in topological order (the network must be BN-folded)."""
        mods = []
        for node in self.nodes:
            if node.op != "lif":
                continue
            src = self[node.inputs[0]] if node.inputs[0] != INPUT else None
            if src is None:
                raise ValueError(f"LIF {node.name!r} reads the raw input; no module to compress")
            offset = None
            br = self._param_branch(src.name)
            if br is not None:
                branches = [br]
            elif src.op == "add":
                mode = src.attrs.get("shortcut", "concat")
                first = self._param_branch(src.inputs[0]) if src.inputs[0] != INPUT else None
                if first is None:
                    raise ValueError(f"add {src.name!r}: first input must be a parameterised layer")
                branches = [first]
                if mode == "ignore":
                    offset = src.inputs[1]
                else:
                    second = self._param_branch(src.inputs[1]) if src.inputs[1] != INPUT else None
                    if second is None:
                        shp = self.shapes[src.inputs[1]]
                        second = Branch("identity", src.inputs[1], None, shp[0])
                    branches.append(second)
            else:
                raise ValueError(
                    f"LIF {node.name!r} is not fed by a linear/conv layer or shortcut add")
            out_shape = self.shapes[node.name]
            positions = int(np.prod(out_shape[1:])) if len(out_shape) == 3 else 1
            mods.append(ModuleDef(node.name, node.lif_params, branches, offset, out_shape, positions))
        return mods

    def module(self, name):
        for mod in self.modules():
            if mod.name == name:
                return mod
        raise KeyError(name)

    def branch_patches(self, branch, vals):
        x = vals[branch.source]
        if branch.kind == "linear":
            return x[:, :, None, :]
        if branch.kind == "conv2d":
            node = self[branch.param]
            w = node.tensors["weight"]
            return im2col(x, w.shape[2], w.shape[3], node.attrs.get("stride", 1),
                          node.attrs.get("padding", 0))
        if x.ndim == 5:
            n, t, c = x.shape[:3]
            return x.reshape(n, t, c, -1).transpose(0, 1, 3, 2)
        return x[:, :, None, :]

    def module_patches(self, mod, vals):
        """Module input matrices, shape (N, T, positions, d_in)."""
        parts = [self.branch_patches(b, vals) for b in mod.branches]
        for p in parts:
            if p.shape[2] != mod.positions:
                raise ShapeMismatch(f"module {mod.name!r}: branch positions disagree")
        return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=-1)

    def linearize(self, mod):
        maps, prov = [], []
        for b in mod.branches:
            if b.param is None:
                maps.append(LinearMap.identity(b.rows))
                prov.append(f"identity:{b.source}")
                continue
            node = self[b.param]
            w = node.tensors["weight"]
            w = conv_weight_to_linear(w) if node.op == "conv2d" else w
            maps.append(LinearMap.of(w, node.tensors["bias"]))
            prov.append(b.param)
        lm = maps[0]
        for extra in maps[1:]:
            lm = concat_shortcut(lm, extra)
        if mod.offset is not None:
            prov.append(f"ignored:{mod.offset}")
        return LinearizedModule(mod.name, lm.weight, lm.bias, mod.lif, lm.trainable, prov,
                                mod.positions)

    def set_module_weight(self, mod, weight):
        """Write a (d_in, d_out) linearised weight back into the parameter nodes."""
        weight = np.asarray(weight, dtype=np.float64)
        if weight.shape != (mod.d_in, mod.d_out):
            raise ShapeMismatch(f"module {mod.name!r} expects weight {(mod.d_in, mod.d_out)}")
        for b, rows in mod.row_slices():
            if b.param is None:
                continue
            node = self[b.param]
            part = weight[rows]
            if node.op == "conv2d":
                part = linear_to_conv_weight(part, node.tensors["weight"].shape)
            node.tensors["weight"] = part.copy()

    def module_current(self, mod, vals, weight=None, patches=None):
        """Input current of the module's LIF layer, shape (N, T, *out_shape)."""
        lm = self.linearize(mod)
        w = lm.weight if weight is None else weight
        if patches is None:
            patches = self.module_patches(mod, vals)
        cur = patches @ w + lm.bias
        if len(mod.out_shape) == 3:
            n, t = cur.shape[:2]
            cur = cur.transpose(0, 1, 3, 2).reshape((n, t) + tuple(mod.out_shape))
        else:
            cur = cur[:, :, 0, :]
        if mod.offset is not None:
            cur = cur + vals[mod.offset]
        return cur

    def module_sources(self, mod):
        names = [b.source for b in mod.branches]
        if mod.offset is not None:
            names.append(mod.offset)
        return names


def sequential(layers, input_shape, timesteps, input_encoding="spike"):
    """Chain nodes in order, each reading the previous one."""
    for i, node in enumerate(layers):
        if not node.inputs:
            node.inputs = [layers[i - 1].name if i else INPUT]
    return Network(layers, input_shape, timesteps, input_encoding)


def fold_network(net):
    """Copy of ``net`` with every BatchNorm merged into its producer."""
    nodes = []
    folded = {}
    for node in net.nodes:
        node = copy.deepcopy(node)
        node.inputs = [folded.get(s, s) for s in node.inputs]
        if node.op != "batchnorm":
            nodes.append(node)
            continue
        src = node.inputs[0]
        prev = next((n for n in nodes if n.name == src), None)
        if prev is None or prev.op not in PARAM_OPS:
            raise ValueError(f"batchnorm {node.name!r} must follow a linear or conv layer")
        if net.consumers(src) != [node.name]:
            raise ValueError(f"cannot fold {node.name!r}: {src!r} has other consumers")
        t = node.tensors
        axis = 0 if prev.op == "conv2d" else -1
        prev.tensors["weight"], prev.tensors["bias"] = fold_batchnorm(
            prev.tensors["weight"], prev.tensors["bias"], t.get("mean"), t.get("var"),
            t.get("gamma"), t.get("beta"), node.attrs.get("eps", 1e-5), out_axis=axis)
        folded[node.name] = src
    return Network(nodes, net.input_shape, net.timesteps, net.input_encoding)


def capture_calibration(net, data, modules=None):
    """Inputs seen by each module when ``net`` runs on ``data``.

    Returns ``{module name: array (N, T, positions, d_in)}``.  All captures
    come from the same forward pass of the network as given.
    """
    modules = net.modules() if modules is None else modules
    vals = net.run(data, until=[s for m in modules for s in net.module_sources(m)])
    return {m.name: net.module_patches(m, vals) for m in modules}
