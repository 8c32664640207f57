import struct

import numpy as np
import pytest

from defian.checkpoint import (
    Checkpoint,
    CheckpointError,
    capture,
    decode,
    encode,
    load_checkpoint,
    model_from_checkpoint,
    restore,
    save_checkpoint,
)
from defian.config import ModelConfig
from defian.model import build_model
from defian.optim import Adam


def micro():
    return ModelConfig(n_modules=1, n_blocks=1, channels=4, scale=2, use_dac=False)


def test_save_load_forward_bit_exact(tmp_path):
    model = build_model(micro(), seed=3)
    path = tmp_path / "m.dfan"
    save_checkpoint(path, capture(model, updates=7, state={"note": "x"}))
    ckpt = load_checkpoint(path)
    assert ckpt.updates == 7 and ckpt.state == {"note": "x"} and ckpt.config == micro()
    x = np.random.default_rng(0).random((1, 3, 9, 9)).astype(np.float32)
    np.testing.assert_array_equal(model_from_checkpoint(ckpt)(x).value, model(x).value)
    assert not (tmp_path / "m.dfan.tmp").exists()


def test_optimizer_state_round_trip():
    model = build_model(micro())
    opt = Adam(model.parameters())
    rng = np.random.default_rng(1)
    for p in model.parameters():
        p.grad = rng.standard_normal(p.shape).astype(np.float32)
    opt.step(1e-3)
    ckpt = decode(encode(capture(model, opt, updates=1)))
    other = build_model(micro(), seed=99)
    opt2 = Adam(other.parameters())
    restore(ckpt, other, opt2)
    assert opt2.t == 1
    for a, b in zip(opt.m + opt.v, opt2.m + opt2.v):
        np.testing.assert_array_equal(a, b)


def test_header_layout():
    data = encode(capture(build_model(micro())))
    assert data[:4] == b"DFAN"
    assert struct.unpack("<H", data[4:6]) == (1,)


@pytest.mark.parametrize("cut", [3, 5, 40, -1, -17])
def test_truncated_file_reports_offset(tmp_path, cut):
    data = encode(capture(build_model(micro())))
    path = tmp_path / "bad.dfan"
    path.write_bytes(data[:cut])
    with pytest.raises(CheckpointError, match="byte"):
        load_checkpoint(path)


def test_corruptions():
    data = bytearray(encode(capture(build_model(micro()))))
    with pytest.raises(CheckpointError, match="magic"):
        decode(b"XXXX" + bytes(data[4:]))
    with pytest.raises(CheckpointError, match="version"):
        decode(bytes(data[:4]) + struct.pack("<H", 9) + bytes(data[6:]))
    with pytest.raises(CheckpointError, match="trailing"):
        decode(bytes(data) + b"\\0")


def test_mismatched_config_refused_on_resume(tmp_path):
    path = tmp_path / "m.dfan"
    save_checkpoint(path, capture(build_model(micro())))
    with pytest.raises(CheckpointError, match="does not match"):
        load_checkpoint(path, expect_config=ModelConfig(n_modules=1, n_blocks=1, channels=8, scale=2))


def test_restore_rejects_wrong_shapes():
    ckpt = capture(build_model(micro()))
    bigger = build_model(ModelConfig(n_modules=1, n_blocks=1, channels=8, scale=2, use_dac=False))
    with pytest.raises(ValueError, match="shape"):
        restore(ckpt, bigger)


def test_empty_checkpoint_decodes():
    ck = decode(encode(Checkpoint(micro(), {})))
    assert ck.params == {} and ck.adam_t == 0
