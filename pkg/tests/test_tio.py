"""The binary tensor file format."""

import struct

import numpy as np
import pytest

from scalescan.errors import ContractError
from scalescan.tio import load_tensor, save_tensor


@pytest.mark.parametrize("arr", [
    np.asarray(3.25),
    np.arange(7.0),
    np.arange(24.0).reshape(2, 3, 4),
    np.zeros((0, 5)),
])
def test_round_trip(tmp_path, arr):
    p = tmp_path / "t.must"
    save_tensor(p, arr)
    back = load_tensor(p)
    assert back.shape == arr.shape
    assert back.dtype == np.float64
    assert np.array_equal(back, arr)


def test_round_trip_non_contiguous(tmp_path):
    arr = np.arange(24.0).reshape(4, 6)[:, ::2]
    p = tmp_path / "t.must"
    save_tensor(p, arr)
    assert np.array_equal(load_tensor(p), arr)


def test_bytes_are_stable(tmp_path):
    a, b = tmp_path / "a.must", tmp_path / "b.must"
    arr = np.arange(10.0).reshape(2, 5)
    save_tensor(a, arr)
    save_tensor(b, arr.copy())
    assert a.read_bytes() == b.read_bytes()


def test_header_layout(tmp_path):
    p = tmp_path / "t.must"
    save_tensor(p, np.ones((2, 3)))
    blob = p.read_bytes()
    assert blob[:4] == b"MUST"
    assert struct.unpack_from("<I", blob, 4)[0] == 1
    assert blob[8] == 0 and blob[9] == 2
    assert struct.unpack_from("<2Q", blob, 10) == (2, 3)
    assert len(blob) == 10 + 16 + 6 * 8


def corrupt(tmp_path, mutate):
    p = tmp_path / "t.must"
    save_tensor(p, np.arange(6.0).reshape(2, 3))
    blob = bytearray(p.read_bytes())
    blob = mutate(blob)
    p.write_bytes(bytes(blob))
    return p


@pytest.mark.parametrize("name,mutate", [
    ("truncated header", lambda b: b[:6]),
    ("bad magic", lambda b: b"XUST" + b[4:]),
    ("bad version", lambda b: b[:4] + struct.pack("<I", 9) + b[8:]),
    ("bad dtype", lambda b: b[:8] + b"\x07" + b[9:]),
    ("truncated shape", lambda b: b[:14]),
    ("short payload", lambda b: b[:-8]),
    ("long payload", lambda b: b + b"\x00" * 8),
])
def test_corruption_is_refused(tmp_path, name, mutate):
    p = corrupt(tmp_path, mutate)
    with pytest.raises(ContractError):
        load_tensor(p)


def test_loaded_array_is_writable(tmp_path):
    p = tmp_path / "t.must"
    save_tensor(p, np.ones(3))
    arr = load_tensor(p)
    arr[0] = 5.0  # frombuffer views are read-only; the loader must copy
    assert arr[0] == 5.0
