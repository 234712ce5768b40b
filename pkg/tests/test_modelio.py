import struct

import numpy as np
import pytest

from sbcompress.errors import CorruptPayload, ShapeInconsistent, VersionMismatch
from sbcompress.modelio import (CalibSet, calib_bytes, load_calib, load_mask, load_model,
                                mask_bytes, model_bytes, parse_calib, parse_mask, parse_model,
                                save_calib, save_mask, save_model)
from sbcompress.quant import quantize_network

from conftest import mlp, random_spikes, small_cnn


def test_model_roundtrip_bytes(tmp_path, rng):
    net = small_cnn(rng)
    save_model(net, tmp_path / "m.sbcm")
    raw = (tmp_path / "m.sbcm").read_bytes()
    again = load_model(tmp_path / "m.sbcm")
    assert model_bytes(again) == raw
    for node in net.nodes:
        for k, v in node.tensors.items():
            np.testing.assert_array_equal(again[node.name].tensors[k], v.astype(np.float32))
    x = random_spikes(rng, (2, 4, 2, 5, 5))
    assert again.modules()[0].name == "lif0" and again(x).shape == net(x).shape


def test_quantized_codes_exact(rng):
    net = mlp(rng)
    qnet, _ = quantize_network(net, random_spikes(rng, (10, 6, 12)), 3)
    back = parse_model(model_bytes(qnet))
    for name in ("fc0", "fc1"):
        np.testing.assert_array_equal(back[name].tensors["codes"], qnet[name].tensors["codes"])
        np.testing.assert_array_equal(back[name].tensors["weight"], qnet[name].tensors["weight"])
    assert model_bytes(back) == model_bytes(qnet)


def test_model_errors(rng):
    raw = model_bytes(mlp(rng))
    with pytest.raises(CorruptPayload):
        parse_model(raw[:-3])
    with pytest.raises(CorruptPayload):
        parse_model(b"NOTMODEL" + raw[8:])
    head_len = struct.unpack("<Q", raw[8:16])[0]
    head = raw[16:16 + head_len].replace(b'"version":1', b'"version":9')
    with pytest.raises(VersionMismatch):
        parse_model(raw[:8] + struct.pack("<Q", len(head)) + head + raw[16 + head_len:])
    head = raw[16:16 + head_len].replace(b'"shape":[12,10]', b'"shape":[12,11]', 1)
    with pytest.raises(ShapeInconsistent):
        parse_model(raw[:8] + struct.pack("<Q", len(head)) + head + raw[16 + head_len:])


@pytest.mark.parametrize("labels", [True, False])
def test_calib_roundtrip(tmp_path, rng, labels):
    data = random_spikes(rng, (7, 5, 3, 3))
    lab = rng.integers(0, 4, 7) if labels else None
    save_calib(CalibSet(data, lab), tmp_path / "c.sbcc")
    back = load_calib(tmp_path / "c.sbcc")
    np.testing.assert_array_equal(back.data, data)
    if labels:
        np.testing.assert_array_equal(back.labels, lab)
    assert calib_bytes(back) == (tmp_path / "c.sbcc").read_bytes()


def test_spikes_packed_time_major(rng):
    data = np.zeros((1, 2, 4))
    data[0, 0, 0] = 1          # first bit of the payload
    data[0, 1, 3] = 1          # last bit of the payload
    raw = calib_bytes(CalibSet(data))
    assert raw[-1:] == bytes([0b10000001])


def test_real_current_calib(rng):
    data = rng.standard_normal((3, 4, 2)).astype(np.float32).astype(np.float64)
    back = parse_calib(calib_bytes(CalibSet(data, encoding="real-current")))
    np.testing.assert_array_equal(back.data, data)
    assert back.encoding == "real-current"


def test_calib_errors(rng):
    with pytest.raises(ValueError):
        calib_bytes(CalibSet(np.full((1, 2, 2), 0.5)))
    raw = calib_bytes(CalibSet(random_spikes(rng, (4, 3, 5))))
    with pytest.raises(CorruptPayload):
        parse_calib(raw[:-1])


def test_mask_roundtrip(tmp_path, rng):
    masks = {"a": rng.random((5, 3)) < 0.5, "b": rng.random((9, 2)) < 0.2}
    save_mask(masks, tmp_path / "m.mask")
    back = load_mask(tmp_path / "m.mask")
    for k in masks:
        np.testing.assert_array_equal(back[k], masks[k])
    with pytest.raises(CorruptPayload):
        parse_mask(mask_bytes(masks)[:-1])
