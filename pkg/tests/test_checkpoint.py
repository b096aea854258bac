import struct

import numpy as np
import pytest

from triggerless.core.exceptions import (
    BadMagicError,
    CheckpointFormatError,
    OutputError,
    ShapeMismatchError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from triggerless.models.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from triggerless.models.network import forward, init_params
from triggerless.schemas.model import ModelSpec

SPEC = ModelSpec(layer_widths=[3, 4, 2])


@pytest.fixture
def params():
    return init_params(SPEC, 0)


def test_save_and_load(tmp_path, params):
    path = save_checkpoint(tmp_path / "m.ckpt", params, SPEC, {"kind": "clean", "repetition": 0})
    loaded, spec, meta = load_checkpoint(path)
    assert spec == SPEC
    assert meta == {"kind": "clean", "repetition": 0}
    for a, b in zip(params.weights, loaded.weights):
        np.testing.assert_allclose(a, b, rtol=1e-6)


def test_encoding_is_byte_stable(params):
    assert encode_checkpoint(params, SPEC, {"b": 1, "a": 2}) == encode_checkpoint(params, SPEC, {"a": 2, "b": 1})


def test_header_layout(params):
    data = encode_checkpoint(params, SPEC)
    assert data[:4] == b"TLBD"
    assert struct.unpack("<5I", data[4:24]) == (1, 3, 3, 4, 2)


def test_bad_magic(params):
    data = encode_checkpoint(params, SPEC)
    with pytest.raises(BadMagicError):
        decode_checkpoint(b"XXXX" + data[4:])


def test_version_mismatch(params):
    data = bytearray(encode_checkpoint(params, SPEC))
    data[4:8] = struct.pack("<I", 2)
    with pytest.raises(VersionMismatchError):
        decode_checkpoint(bytes(data))


def test_truncated(params):
    data = encode_checkpoint(params, SPEC)
    with pytest.raises(TruncatedCheckpointError):
        decode_checkpoint(data[:40])


def test_trailing_bytes_are_a_shape_mismatch(params):
    with pytest.raises(ShapeMismatchError):
        decode_checkpoint(encode_checkpoint(params, SPEC) + b"\x00\x00")


def test_too_few_layers(params):
    data = bytearray(encode_checkpoint(params, SPEC))
    data[8:12] = struct.pack("<I", 2)
    with pytest.raises(ShapeMismatchError):
        decode_checkpoint(bytes(data))


def test_corrupt_metadata(params):
    data = encode_checkpoint(params, SPEC, {})
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(data[:-2] + b"{x")


def test_params_must_match_spec(params):
    with pytest.raises(ShapeMismatchError):
        encode_checkpoint(params, ModelSpec(layer_widths=[3, 5, 2]))


def test_unreadable_file_is_output_error(tmp_path):
    with pytest.raises(OutputError) as info:
        load_checkpoint(tmp_path / "missing.ckpt")
    assert info.value.exit_code == 2


def test_save_load_save_is_byte_identical(tmp_path, params):
    meta = {"kind": "backdoored", "repetition": 3}
    first = save_checkpoint(tmp_path / "a.ckpt", params, SPEC, meta)
    loaded, spec, loaded_meta = load_checkpoint(first)
    second = save_checkpoint(tmp_path / "b.ckpt", loaded, spec, loaded_meta)
    assert first.read_bytes() == second.read_bytes()


def test_reloaded_posteriors_stay_close(tmp_path):
    spec = ModelSpec(layer_widths=[16, 32, 16, 4])
    params = init_params(spec, 3)
    loaded, _, _ = load_checkpoint(save_checkpoint(tmp_path / "m.ckpt", params, spec))
    x = np.random.default_rng(3).uniform(size=(50, 16))
    np.testing.assert_allclose(forward(loaded, x).posteriors, forward(params, x).posteriors, rtol=0, atol=1e-6)
