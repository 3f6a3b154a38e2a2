"""Binary weight and checkpoint files.

Weight file layout (all integers little-endian):

    magic  b"SRITM\\x01"
    u32    tensor count
    per tensor:
        u16    name length, then UTF-8 name
        u8     rank, then rank x u32 dims
        raw    float32 little-endian values

A checkpoint is a weight file followed by a second section holding the
optimizer state: u32 tensor count, the same per-tensor encoding for the
moment buffers (named ``m.<param>`` / ``v.<param>``), then a u64 step
counter.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .network import Network, NetworkConfig

MAGIC = b"SRITM\x01"


def _encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated at byte {self.offset} (needed {n} more)")
        out = self.blob[self.offset : self.offset + n]
        self.offset += n
        return out

    def u(self, fmt: str) -> int:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def tensors(self) -> dict[str, np.ndarray]:
        count = self.u("<I")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            name = self.take(self.u("<H")).decode("utf-8")
            rank = self.u("<B")
            dims = struct.unpack(f"<{rank}I", self.take(4 * rank))
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            data = np.frombuffer(self.take(4 * size), dtype="<f4").reshape(dims)
            out[name] = data.astype(np.float32)
        return out


def save_weights(net: Network, path) -> None:
    Path(path).write_bytes(MAGIC + _encode_tensors(net.state()))


def _open(path) -> _Reader:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    r = _Reader(blob, path)
    r.offset = len(MAGIC)
    return r


def load_weights(path, config: NetworkConfig, dtype=np.float32) -> Network:
    """Build a network from the config and install the stored weights."""
    r = _open(path)
    state = r.tensors()
    net = Network(config, dtype=dtype)
    net.load_state(state)
    return net


def save_checkpoint(net: Network, optimizer_tensors: dict[str, np.ndarray], step_count: int, path) -> None:
    blob = MAGIC + _encode_tensors(net.state())
    blob += _encode_tensors(optimizer_tensors)
    blob += struct.pack("<Q", step_count)
    Path(path).write_bytes(blob)


def load_checkpoint(path, config: NetworkConfig, dtype=np.float32) -> tuple[Network, dict[str, np.ndarray], int]:
    """Restore (network, optimizer moment tensors, step counter)."""
    r = _open(path)
    state = r.tensors()
    opt_state = r.tensors()
    step_count = r.u("<Q")
    if r.offset != len(r.blob):
        raise FormatError(f"{path}: {len(r.blob) - r.offset} trailing byte(s) after checkpoint data")
    net = Network(config, dtype=dtype)
    net.load_state(state)
    return net, opt_state, step_count
