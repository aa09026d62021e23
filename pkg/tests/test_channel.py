import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitlab import channel as channel_mod
from splitlab import models as models_mod
from splitlab.errors import ChannelIntegrityError, DataError, WireFormatError
from splitlab.models import ActivationTensor


def test_serialize_singleton_frame_layout():
    h = ActivationTensor(np.zeros((1, 1, 1), dtype=np.float32))
    buf = channel_mod.serialize(h)
    assert len(buf) == 4 + 1 + 1 + 1 + 12 + 4  # 23 bytes
    assert buf[:4] == b"ADVR"
    assert buf[4] == 1  # version
    assert buf[5] == 0  # float32
    assert buf[6] == 3  # ndim
    assert buf[7:19] == (1).to_bytes(4, "little") * 3
    assert buf[19:] == b"\x00\x00\x00\x00"


def test_serialize_ones_payload():
    h = ActivationTensor(np.ones((2, 2, 1), dtype=np.float32))
    buf = channel_mod.serialize(h)
    assert buf[-16:] == b"\x00\x00\x80\x3f" * 4


def test_serialize_rejects_nonfinite():
    with pytest.raises(DataError):
        channel_mod.serialize(ActivationTensor(np.array([np.nan])))
    with pytest.raises(DataError):
        channel_mod.serialize(ActivationTensor(np.array([np.inf])))


def test_roundtrip_identity():
    rng = np.random.default_rng(0)
    for shape in [(1,), (5,), (3, 4), (2, 2, 2), (4, 4, 64), (1, 1, 1)]:
        values = rng.standard_normal(shape).astype(np.float32)
        out = channel_mod.deserialize(
            channel_mod.serialize(ActivationTensor(values)))
        assert out.shape == shape
        assert out.values.tobytes() == values.tobytes()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(width=32, allow_nan=False, allow_infinity=False),
                min_size=1, max_size=48))
def test_roundtrip_property(values):
    arr = np.array(values, dtype=np.float32)
    out = channel_mod.deserialize(channel_mod.serialize(ActivationTensor(arr)))
    assert out.values.tobytes() == arr.tobytes()


def test_deserialize_bad_magic():
    with pytest.raises(WireFormatError):
        channel_mod.deserialize(b"XXXX" + b"\x00" * 30)


def test_deserialize_truncated_payload():
    h = ActivationTensor(np.ones((2, 2, 1), dtype=np.float32))
    buf = channel_mod.serialize(h)
    with pytest.raises(WireFormatError):
        channel_mod.deserialize(buf[:-8])


def test_deserialize_trailing_bytes():
    buf = channel_mod.serialize(ActivationTensor(np.ones((2,), np.float32)))
    with pytest.raises(WireFormatError):
        channel_mod.deserialize(buf + b"\x00")


def test_deserialize_bad_version_and_dtype():
    buf = bytearray(
        channel_mod.serialize(ActivationTensor(np.ones((2,), np.float32))))
    bad_version = bytes(buf[:4]) + b"\x02" + bytes(buf[5:])
    with pytest.raises(WireFormatError):
        channel_mod.deserialize(bad_version)
    bad_dtype = bytes(buf[:5]) + b"\x07" + bytes(buf[6:])
    with pytest.raises(WireFormatError):
        channel_mod.deserialize(bad_dtype)


def test_passive_tap_logs_copies():
    tap = channel_mod.ChannelTap("passive")
    values = np.ones((2, 2, 1), dtype=np.float32)
    h = ActivationTensor(values)
    out = channel_mod.transmit(tap, h)
    assert out is h
    assert tap.log_size() == 1
    values[0, 0, 0] = 99.0  # caller mutation must not reach the log
    assert tap.log[0].values[0, 0, 0] == 1.0


def test_active_tap_transform_and_shape_guard():
    identity = channel_mod.ChannelTap(
        "active", transform=lambda h: ActivationTensor(h.values.copy()))
    h = ActivationTensor(np.ones((2, 2, 1), dtype=np.float32))
    out = channel_mod.transmit(identity, h)
    assert np.array_equal(out.values, h.values)

    reshaper = channel_mod.ChannelTap(
        "active", transform=lambda h: ActivationTensor(h.values.reshape(4, 1)))
    with pytest.raises(ChannelIntegrityError):
        channel_mod.transmit(reshaper, h)


def test_active_tap_requires_transform():
    with pytest.raises(ChannelIntegrityError):
        channel_mod.ChannelTap("active")
    with pytest.raises(ChannelIntegrityError):
        channel_mod.ChannelTap("promiscuous")


def test_passive_tap_preserves_classification(part9, testset):
    images = testset.images[:8]
    tap = channel_mod.ChannelTap("passive")
    for x in images:
        direct_h = models_mod.forward_head(part9, x)
        tapped_h = channel_mod.transmit(tap, direct_h)
        direct = models_mod.forward_tail(part9, direct_h)
        tapped = models_mod.forward_tail(part9, tapped_h)
        assert np.array_equal(direct.full_distribution,
                              tapped.full_distribution)
    assert tap.log_size() == len(images)


def test_collect_semantics():
    tap = channel_mod.ChannelTap("passive")
    for i in range(5):
        channel_mod.transmit(
            tap, ActivationTensor(np.full((2, 2), float(i), np.float32)))
    ds = channel_mod.collect(tap, 3)
    assert ds.count == 3
    assert [s.values[0, 0] for s in ds.samples] == [0.0, 1.0, 2.0]
    assert channel_mod.collect(tap, 0).count == 0
    with pytest.raises(DataError):
        channel_mod.collect(tap, 6)
    active = channel_mod.ChannelTap("active", transform=lambda h: h)
    with pytest.raises(ChannelIntegrityError):
        channel_mod.collect(active, 0)


def test_eavesdrop_dataset_structure():
    samples = [ActivationTensor(np.ones((2, 2), np.float32), source_layer=7)]
    ds = channel_mod.EavesdropDataset(samples)
    # attacker-visible structure: shapes and values only
    fields = {f.name for f in dataclasses.fields(channel_mod.EavesdropDataset)}
    assert fields == {"samples", "provenance"}
    assert ds.provenance == ("model-id-unknown", "cut-index-unknown")
    assert all(s.source_layer is None for s in ds.samples)
    with pytest.raises(DataError):
        channel_mod.EavesdropDataset(
            [ActivationTensor(np.ones((2, 2))),
             ActivationTensor(np.ones((3, 3)))])


def test_capture_file_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    samples = [ActivationTensor(rng.standard_normal((3, 3, 2)).astype(np.float32))
               for _ in range(10)]
    path = channel_mod.write_capture(samples, tmp_path / "x.advr")
    loaded = channel_mod.read_capture(path)
    assert loaded.count == 10
    for orig, back in zip(samples, loaded.samples):
        assert orig.values.tobytes() == back.values.tobytes()


def test_capture_empty_file(tmp_path):
    path = channel_mod.write_capture([], tmp_path / "empty.advr")
    assert channel_mod.read_capture(path).count == 0
