"""Binary file formats for models, calibration sets and prune masks.

All three share one container: an 8-byte magic, a little-endian uint64
header length, a UTF-8 JSON header (sorted keys) and a raw payload.
Byte layouts are documented in docs/formats.md.
"""
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptPayload, SBCError, ShapeInconsistent, VersionMismatch
from .graph import Network, Node
from .quant import dequantized_weight

VERSION = 1
MODEL_MAGIC = b"SBCMODEL"
CALIB_MAGIC = b"SBCCALIB"
MASK_MAGIC = b"SBCMASK\x00"


def _pack(magic, header, payload):
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return magic + struct.pack("<Q", len(head)) + head + payload


def _unpack(raw, magic, fmt):
    if raw[:8] != magic:
        raise CorruptPayload(f"not a {fmt} file (bad magic)")
    if len(raw) < 16:
        raise CorruptPayload("truncated header")
    (n,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + n:
        raise CorruptPayload("truncated header")
    try:
        header = json.loads(raw[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPayload(f"unreadable header: {exc}") from None
    if header.get("format") != fmt:
        raise VersionMismatch(f"expected format {fmt!r}, found {header.get('format')!r}")
    if header.get("version") != VERSION:
        raise VersionMismatch(f"unsupported {fmt} version {header.get('version')!r}")
    return header, raw[16 + n:]


def _write(path, data):
    with open(path, "wb") as fh:
        fh.write(data)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


# -- models ---------------------------------------------------------------

def _int_dtype(codes):
    lo, hi = (int(codes.min()), int(codes.max())) if codes.size else (0, 0)
    for dt in ("<i1", "<i2", "<i4"):
        info = np.iinfo(dt)
        if info.min <= lo and hi <= info.max:
            return dt
    return "<i8"


def _node_tensors(node):
    """(key, little-endian array) pairs in storage order."""
    items = []
    quantized = "codes" in node.tensors
    for key in sorted(node.tensors):
        arr = node.tensors[key]
        if quantized and key == "weight":
            continue
        if key == "codes":
            items.append((key, np.asarray(arr).astype(_int_dtype(np.asarray(arr)))))
        elif key == "anchors":
            items.append((key, np.asarray(arr, dtype="<f8")))
        else:
            items.append((key, np.asarray(arr, dtype="<f4")))
    return items


def model_bytes(net):
    nodes, blobs = [], []
    for node in net.nodes:
        entries = []
        for key, arr in _node_tensors(node):
            arr = np.ascontiguousarray(arr)
            entries.append({"key": key, "dtype": arr.dtype.str, "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
        nodes.append({"name": node.name, "op": node.op, "inputs": node.inputs,
                      "attrs": node.attrs, "tensors": entries})
    blob = b"".join(blobs)
    header = {
        "format": "sbc-model", "version": VERSION,
        "timesteps": net.timesteps, "input_shape": list(net.input_shape),
        "input_encoding": net.input_encoding, "nodes": nodes, "blob_bytes": len(blob),
    }
    return _pack(MODEL_MAGIC, header, blob)


def save_model(net, path):
    _write(path, model_bytes(net))


def parse_model(raw):
    header, blob = _unpack(raw, MODEL_MAGIC, "sbc-model")
    if len(blob) != header.get("blob_bytes"):
        raise CorruptPayload(f"blob has {len(blob)} bytes, header says {header.get('blob_bytes')}")
    nodes, off = [], 0
    try:
        for spec in header["nodes"]:
            tensors = {}
            for ent in spec["tensors"]:
                dt = np.dtype(ent["dtype"])
                count = int(np.prod(ent["shape"], dtype=np.int64))
                nbytes = count * dt.itemsize
                if off + nbytes > len(blob):
                    raise ShapeInconsistent(f"tensor {spec['name']}.{ent['key']} overruns the blob")
                tensors[ent["key"]] = np.frombuffer(blob, dt, count, off).reshape(ent["shape"])
                off += nbytes
            node = Node(spec["name"], spec["op"], spec["inputs"], dict(spec["attrs"]), tensors)
            if "codes" in node.tensors:
                node.tensors["weight"] = dequantized_weight(node)
            nodes.append(node)
        if off != len(blob):
            raise ShapeInconsistent(f"manifest describes {off} bytes, blob holds {len(blob)}")
        return Network(nodes, header["input_shape"], header["timesteps"], header["input_encoding"])
    except ShapeInconsistent:
        raise
    except (KeyError, TypeError, ValueError, SBCError) as exc:
        raise ShapeInconsistent(f"inconsistent model manifest: {exc}") from None


def load_model(path):
    return parse_model(_read(path))


# -- calibration data -----------------------------------------------------

ENCODINGS = ("binary-spike", "real-current")


@dataclass(eq=False)
class CalibSet:
    data: np.ndarray            # (N, T, *input_shape)
    labels: np.ndarray = None
    encoding: str = "binary-spike"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.encoding not in ENCODINGS:
            raise ValueError(f"encoding must be one of {ENCODINGS}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.data.shape[0],):
                raise ValueError("one label per sample expected")

    def __len__(self):
        return self.data.shape[0]

    def subset(self, idx):
        lab = None if self.labels is None else self.labels[idx]
        return CalibSet(self.data[idx], lab, self.encoding)


def calib_bytes(calib):
    data = calib.data
    if calib.encoding == "binary-spike":
        if not np.all((data == 0) | (data == 1)):
            raise ValueError("binary-spike payload must be strictly 0/1")
        payload = np.packbits(data.astype(np.uint8).ravel()).tobytes()
    else:
        payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    labels = b"" if calib.labels is None else np.asarray(calib.labels, "<i4").tobytes()
    header = {
        "format": "sbc-calib", "version": VERSION,
        "samples": int(data.shape[0]), "timesteps": int(data.shape[1]),
        "input_shape": list(data.shape[2:]), "encoding": calib.encoding,
        "payload_bytes": len(payload), "labels": calib.labels is not None,
        "label_bytes": len(labels),
    }
    return _pack(CALIB_MAGIC, header, payload + labels)


def save_calib(calib, path):
    _write(path, calib_bytes(calib))


def parse_calib(raw):
    header, body = _unpack(raw, CALIB_MAGIC, "sbc-calib")
    try:
        shape = (header["samples"], header["timesteps"]) + tuple(header["input_shape"])
        count = int(np.prod(shape, dtype=np.int64))
        enc = header["encoding"]
        want = (count + 7) // 8 if enc == "binary-spike" else 4 * count
        n_lab = 4 * header["samples"] if header["labels"] else 0
    except (KeyError, TypeError) as exc:
        raise ShapeInconsistent(f"incomplete calibration header: {exc}") from None
    if header["payload_bytes"] != want or header["label_bytes"] != n_lab:
        raise ShapeInconsistent("payload sizes in header do not match the declared shape")
    if len(body) != want + n_lab:
        raise CorruptPayload(f"payload has {len(body)} bytes, expected {want + n_lab}")
    if enc == "binary-spike":
        bits = np.unpackbits(np.frombuffer(body, np.uint8, want))
        if bits[count:].any():
            raise CorruptPayload("nonzero padding bits in spike payload")
        data = bits[:count].reshape(shape).astype(np.float64)
    elif enc == "real-current":
        data = np.frombuffer(body, "<f4", count).reshape(shape).astype(np.float64)
    else:
        raise ShapeInconsistent(f"unknown encoding {enc!r}")
    labels = np.frombuffer(body, "<i4", header["samples"], want) if n_lab else None
    return CalibSet(data, labels, enc)


def load_calib(path):
    return parse_calib(_read(path))


# -- prune masks ----------------------------------------------------------

def mask_bytes(masks):
    entries, parts, off = [], [], 0
    for name, mask in masks.items():
        mask = np.asarray(mask, bool)
        packed = np.packbits(mask.ravel()).tobytes()
        entries.append({"name": name, "shape": list(mask.shape), "offset": off,
                        "nbytes": len(packed), "count": int(mask.sum())})
        parts.append(packed)
        off += len(packed)
    header = {"format": "sbc-mask", "version": VERSION, "modules": entries, "payload_bytes": off}
    return _pack(MASK_MAGIC, header, b"".join(parts))


def save_mask(masks, path):
    _write(path, mask_bytes(masks))


def parse_mask(raw):
    header, body = _unpack(raw, MASK_MAGIC, "sbc-mask")
    if len(body) != header.get("payload_bytes"):
        raise CorruptPayload("mask payload length does not match header")
    out = {}
    for ent in header["modules"]:
        n = int(np.prod(ent["shape"]))
        if ent["nbytes"] != (n + 7) // 8 or ent["offset"] + ent["nbytes"] > len(body):
            raise ShapeInconsistent(f"mask entry {ent['name']!r} has inconsistent size")
        bits = np.unpackbits(np.frombuffer(body, np.uint8, ent["nbytes"], ent["offset"]))
        mask = bits[:n].reshape(ent["shape"]).astype(bool)
        if int(mask.sum()) != ent["count"]:
            raise CorruptPayload(f"mask {ent['name']!r} popcount differs from header")
        out[ent["name"]] = mask
    return out


def load_mask(path):
    return parse_mask(_read(path))
