"""Binary checkpoint format.

Layout (little-endian)::

    b"DFAN"  u16 version
    u32 len, utf-8 model config  (``key = value`` lines)
    u32 len, utf-8 run state     (``key = value`` lines: updates, adam_t, ...)
    u32 tensor count
    per tensor: u16 name len, name, u8 ndim, ndim x u32 dims, u64 byte len, float32 data

Parameter tensors are named ``param/<name>``; Adam moments ``adam.m/<name>``
and ``adam.v/<name>``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig, dump_section, model_config_from_text
from .model import build_model

MAGIC = b"DFAN"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    updates: int = 0
    state: dict[str, str] = field(default_factory=dict)


def _block(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    key = name.encode("utf-8")
    head = struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    data = arr.tobytes()
    return head + struct.pack("<Q", len(data)) + data


def encode(ckpt: Checkpoint) -> bytes:
    state = {"updates": ckpt.updates, "adam_t": ckpt.adam_t, **ckpt.state}
    tensors = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    tensors += [(f"adam.m/{k}", v) for k, v in ckpt.adam_m.items()]
    tensors += [(f"adam.v/{k}", v) for k, v in ckpt.adam_v.items()]
    parts = [MAGIC, struct.pack("<H", VERSION), _block(dump_section(ckpt.config))]
    parts.append(_block("".join(f"{k} = {v}\n" for k, v in state.items())))
    parts.append(struct.pack("<I", len(tensors)))
    parts.extend(_tensor(name, arr) for name, arr in tensors)
    return b"".join(parts)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Write atomically: a crash mid-write never leaves a half file under ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(ckpt))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint at byte {self.pos}: need {n} bytes for {what}, "
                f"{len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic at byte 0")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at byte 4")
    (n,) = r.unpack("<I", "config length")
    try:
        config = model_config_from_text(r.take(n, "config block").decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"corrupt config block ending at byte {r.pos}: {exc}") from None
    (n,) = r.unpack("<I", "state length")
    state = {}
    for line in r.take(n, "state block").decode("utf-8", errors="replace").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            state[k.strip()] = v.strip()
    (count,) = r.unpack("<I", "tensor count")
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam.m": {}, "adam.v": {}}
    for i in range(count):
        start = r.pos
        (ln,) = r.unpack("<H", f"tensor {i} name length")
        name = r.take(ln, f"tensor {i} name").decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B", f"tensor {name!r} rank")
        dims = r.unpack(f"<{ndim}I", f"tensor {name!r} dims")
        (nbytes,) = r.unpack("<Q", f"tensor {name!r} byte length")
        if nbytes != 4 * int(np.prod(dims, dtype=np.int64)):
            raise CheckpointError(f"tensor {name!r} at byte {start}: {nbytes} bytes do not match dims {dims}")
        arr = np.frombuffer(r.take(nbytes, f"tensor {name!r} data"), dtype="<f4").reshape(dims)
        group, _, key = name.partition("/")
        if group not in groups:
            raise CheckpointError(f"tensor {name!r} at byte {start}: unknown group {group!r}")
        groups[group][key] = arr.astype(np.float32)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after byte {r.pos}")
    return Checkpoint(
        config=config,
        params=groups["param"],
        adam_m=groups["adam.m"],
        adam_v=groups["adam.v"],
        adam_t=int(state.pop("adam_t", 0)),
        updates=int(state.pop("updates", 0)),
        state=state,
    )


def load_checkpoint(path: str | Path, expect_config: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``expect_config`` (resume), a differing config is refused."""
    ckpt = decode(Path(path).read_bytes())
    if expect_config is not None and ckpt.config != expect_config:
        raise CheckpointError(f"checkpoint config {ckpt.config} does not match requested {expect_config}")
    return ckpt


def capture(model, optimizer=None, updates: int = 0, state: dict | None = None) -> Checkpoint:
    names = [name for name, _ in model.named_parameters()]
    ckpt = Checkpoint(model.cfg, {k: v.copy() for k, v in model.named_state().items()}, updates=updates)
    if optimizer is not None:
        ckpt.adam_m = {n: m.copy() for n, m in zip(names, optimizer.m)}
        ckpt.adam_v = {n: v.copy() for n, v in zip(names, optimizer.v)}
        ckpt.adam_t = optimizer.t
    ckpt.state = dict(state or {})
    return ckpt


def restore(ckpt: Checkpoint, model, optimizer=None) -> None:
    model.load_state(ckpt.params)
    if optimizer is None:
        return
    names = [name for name, _ in model.named_parameters()]
    if ckpt.adam_m and set(ckpt.adam_m) != set(names):
        raise CheckpointError("optimizer state does not cover the model parameters")
    for i, n in enumerate(names):
        if n in ckpt.adam_m:
            optimizer.m[i] = ckpt.adam_m[n].astype(optimizer.m[i].dtype, copy=True)
            optimizer.v[i] = ckpt.adam_v[n].astype(optimizer.v[i].dtype, copy=True)
    optimizer.t = ckpt.adam_t


def model_from_checkpoint(ckpt: Checkpoint):
    model = build_model(ckpt.config)
    restore(ckpt, model)
    return model
