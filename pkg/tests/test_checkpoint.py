import struct
from collections import OrderedDict

import numpy as np
import pytest

from conftest import TINY
from mbinet.checkpoint import Checkpoint, checksums, decode, encode, load, save
from mbinet.errors import CheckpointMismatch
from mbinet.model import ModelConfig, init_params


def sample(rng) -> Checkpoint:
    params = OrderedDict((k, v.numpy()) for k, v in init_params(TINY).items())
    state = OrderedDict([("step", np.array(3.0)), ("left.proj.weight.exp_avg", rng.normal(size=(8, 12)))])
    return Checkpoint(TINY, params, state, {"epoch": 2, "note": "x"})


def test_roundtrip_is_exact(tmp_path, rng):
    ck = sample(rng)
    back = load(save(tmp_path / "a.ckpt", ck))
    assert back.config == TINY and back.meta == ck.meta
    assert list(back.params) == list(ck.params) and list(back.state) == list(ck.state)
    for k in ck.params:
        np.testing.assert_array_equal(back.params[k], ck.params[k])
    assert back.state["step"].shape == ()


def test_write_read_write_bytes(tmp_path, rng):
    a = save(tmp_path / "a.ckpt", sample(rng)).read_bytes()
    b = save(tmp_path / "b.ckpt", load(tmp_path / "a.ckpt")).read_bytes()
    assert a == b


def test_layout(rng):
    data = encode(sample(rng))
    assert data[:4] == b"MBCK"
    version, head_len = struct.unpack_from("<II", data, 4)
    assert version == 1
    assert data[12 + head_len: 16 + head_len] == b"ARR8"


def test_expected_config_mismatch(tmp_path, rng):
    path = save(tmp_path / "a.ckpt", sample(rng))
    with pytest.raises(CheckpointMismatch):
        load(path, expect=ModelConfig.from_dict({**TINY.to_dict(), "seed": 9}))
    assert load(path, expect=TINY).config == TINY


@pytest.mark.parametrize("mangle", [
    lambda d: b"XXXX" + d[4:],
    lambda d: d[:-8],
    lambda d: d + b"\0",
    lambda d: d[:20],
    lambda d: d[:4] + struct.pack("<I", 2) + d[8:],
    lambda d: d[:12] + b"[" + d[13:],
])
def test_corrupt_files(rng, mangle):
    with pytest.raises(CheckpointMismatch):
        decode(mangle(encode(sample(rng))))


def test_checksums_track_content(rng):
    ck = sample(rng)
    a = checksums(ck.params)
    ck.params["merge.haspi.bias"] = ck.params["merge.haspi.bias"] + 1e-12
    b = checksums(ck.params)
    assert [k for k in a if a[k] != b[k]] == ["merge.haspi.bias"]
    assert all(len(v) == 16 for v in a.values())
