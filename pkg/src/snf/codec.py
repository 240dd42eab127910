"""Prefix-decodable byte stream for a :class:`~snf.net.StreamableNet`.

Layout (all integers little-endian)::

    header
        magic      4s        b"SNF1"
        version    u16       1
        flags      u16       bit 0: payloads are f32 (lossy)
        in_dim     u16
        out_dim    u16
        depth      u16
        K          u16       number of stages
        widths     K x u32   cumulative hidden widths
        omega0     f64
        value_lo   f64       physical values of network outputs -1 and +1
        value_hi   f64
        grid_ndim  u16
        grid       grid_ndim x u32   sample grid of the fitted signal (0 dims: unknown)
        crc        u32       CRC-32 of all preceding header bytes
    chunk (one per stage, in order)
        stage      u16       1-based
        length     u64       payload bytes
        payload              per hidden layer: lateral block, new-to-new block,
                             bias segment; then the output block.  Row-major.
        crc        u32       CRC-32 of the payload
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from snf.net import ActivationConfig, StageBlocks, StreamableNet

MAGIC = b"SNF1"
VERSION = 1
FLAG_F32 = 1

_FIXED = struct.Struct("<4sHHHHHH")
_CHUNK_HEAD = struct.Struct("<HQ")
_CRC = struct.Struct("<I")


class DecodeError(ValueError):
    """Base class; ``chunk`` is the 1-based stage whose chunk failed (0 = header)."""

    def __init__(self, message: str, chunk: int = 0):
        super().__init__(message)
        self.chunk = chunk


class BadMagicError(DecodeError):
    pass


class VersionError(DecodeError):
    pass


class ChecksumError(DecodeError):
    pass


class TruncatedError(DecodeError):
    pass


class StageRangeError(DecodeError):
    pass


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


@dataclass
class StreamHeader:
    in_dim: int
    out_dim: int
    depth: int
    stage_widths: list[int]
    omega0: float = 30.0
    value_range: tuple[float, float] = (-1.0, 1.0)
    grid_shape: tuple[int, ...] = ()
    f32: bool = False
    version: int = VERSION

    @property
    def num_stages(self) -> int:
        return len(self.stage_widths)

    def encode(self) -> bytes:
        k = self.num_stages
        body = bytearray(_FIXED.pack(MAGIC, self.version, FLAG_F32 if self.f32 else 0,
                                     self.in_dim, self.out_dim, self.depth, k))
        body += struct.pack(f"<{k}I", *self.stage_widths)
        body += struct.pack("<3d", self.omega0, *self.value_range)
        body += struct.pack(f"<H{len(self.grid_shape)}I", len(self.grid_shape), *self.grid_shape)
        body += _CRC.pack(crc32(bytes(body)))
        return bytes(body)

    @classmethod
    def decode(cls, data: bytes) -> tuple["StreamHeader", int]:
        """Parse a header from the front of ``data``; returns it and its byte length."""
        if len(data) < 4 or data[:4] != MAGIC:
            if len(data) < 4 and MAGIC.startswith(bytes(data)):
                raise TruncatedError("stream ends inside the header", 0)
            raise BadMagicError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}", 0)
        pos = _FIXED.size
        if len(data) < pos:
            raise TruncatedError("stream ends inside the header", 0)
        _, version, flags, in_dim, out_dim, depth, k = _FIXED.unpack_from(data, 0)
        if version != VERSION:
            raise VersionError(f"unsupported stream version {version}", 0)
        need = pos + 4 * k + 24 + 2
        if len(data) < need:
            raise TruncatedError("stream ends inside the header", 0)
        widths = list(struct.unpack_from(f"<{k}I", data, pos))
        pos += 4 * k
        omega0, lo, hi = struct.unpack_from("<3d", data, pos)
        pos += 24
        (ndim,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if len(data) < pos + 4 * ndim + 4:
            raise TruncatedError("stream ends inside the header", 0)
        grid = tuple(struct.unpack_from(f"<{ndim}I", data, pos))
        pos += 4 * ndim
        (crc,) = _CRC.unpack_from(data, pos)
        if crc != crc32(bytes(data[:pos])):
            raise ChecksumError("header CRC mismatch", 0)
        pos += 4
        if any(b <= a for a, b in zip(widths, widths[1:])) or (widths and widths[0] < 1):
            raise DecodeError(f"stage widths not strictly increasing: {widths}", 0)
        header = cls(in_dim, out_dim, depth, widths, omega0, (lo, hi), grid,
                     bool(flags & FLAG_F32), version)
        return header, pos


def header_for(net: StreamableNet, grid_shape=(), value_range=(-1.0, 1.0), f32: bool = False) -> StreamHeader:
    return StreamHeader(net.in_dim, net.out_dim, net.depth, net.stage_widths, net.omega0,
                        tuple(value_range), tuple(grid_shape), f32)


def _stage_arrays(net: StreamableNet, stage: int) -> list[np.ndarray]:
    """Blocks of one stage in stream order."""
    blk = net.stages[stage - 1]
    widths = net.stage_widths
    old = widths[stage - 2] if stage > 1 else 0
    arrays = []
    for layer in range(net.depth):
        w = blk.hidden[layer]
        split = w.shape[1] if layer == 0 else old
        arrays += [w[:, :split], w[:, split:], blk.bias[layer]]
    arrays.append(blk.out)
    return arrays


def encode_chunk(net: StreamableNet, stage: int, f32: bool = False) -> bytes:
    dtype = "<f4" if f32 else "<f8"
    payload = b"".join(np.ascontiguousarray(a, dtype=dtype).tobytes() for a in _stage_arrays(net, stage))
    return _CHUNK_HEAD.pack(stage, len(payload)) + payload + _CRC.pack(crc32(payload))


def pack(net: StreamableNet, grid_shape=(), value_range=(-1.0, 1.0), f32: bool = False,
         stages: int | None = None) -> bytes:
    """Header followed by one chunk per stage (optionally only the first ``stages``)."""
    if net.num_stages < 1:
        raise ValueError("cannot pack a net without stages")
    stages = net.num_stages if stages is None else net.check_stage(stages)
    header = header_for(net, grid_shape, value_range, f32)
    header.stage_widths = header.stage_widths[:stages]
    out = [header.encode()]
    out += [encode_chunk(net, k, f32) for k in range(1, stages + 1)]
    return b"".join(out)


@dataclass
class StreamDecoder:
    """Incremental decoder: feed the header, then chunks in order; each chunk yields a runnable net."""

    header: StreamHeader
    net: StreamableNet = field(init=False)

    def __post_init__(self):
        self.net = StreamableNet(self.header.in_dim, self.header.out_dim, self.header.depth,
                                 ActivationConfig(self.header.omega0))

    @property
    def stages_decoded(self) -> int:
        return self.net.num_stages

    def chunk_length(self, stage: int) -> int:
        """Expected total chunk size (head + payload + CRC) for ``stage``."""
        return _CHUNK_HEAD.size + self._payload_length(stage) + _CRC.size

    def _payload_length(self, stage: int) -> int:
        h = self.header
        widths = h.stage_widths
        delta = widths[stage - 1] - (widths[stage - 2] if stage > 1 else 0)
        per = 4 if h.f32 else 8
        count = delta * h.in_dim + delta
        count += (h.depth - 1) * (delta * widths[stage - 1] + delta)
        count += h.out_dim * delta
        return per * count

    def feed(self, data: bytes, pos: int = 0) -> int:
        """Decode the next chunk from ``data[pos:]``; returns the position after it."""
        stage = self.stages_decoded + 1
        if stage > self.header.num_stages:
            raise StageRangeError(f"stream holds only {self.header.num_stages} stages", stage)
        if len(data) - pos < _CHUNK_HEAD.size:
            raise TruncatedError(f"chunk {stage} truncated in its head", stage)
        index, length = _CHUNK_HEAD.unpack_from(data, pos)
        if index != stage:
            raise DecodeError(f"expected chunk {stage}, found chunk {index}", stage)
        if length != self._payload_length(stage):
            raise DecodeError(f"chunk {stage} has payload length {length}, "
                              f"expected {self._payload_length(stage)}", stage)
        start = pos + _CHUNK_HEAD.size
        end = start + length
        if len(data) < end + _CRC.size:
            raise TruncatedError(f"chunk {stage} truncated", stage)
        payload = bytes(data[start:end])
        (crc,) = _CRC.unpack_from(data, end)
        if crc != crc32(payload):
            raise ChecksumError(f"CRC mismatch in chunk {stage}", stage)
        self.net.stages.append(self._blocks(stage, payload))
        self.net.freeze(stage - 1)
        return end + _CRC.size

    def _blocks(self, stage: int, payload: bytes) -> StageBlocks:
        h = self.header
        widths = h.stage_widths
        new = widths[stage - 1]
        old = widths[stage - 2] if stage > 1 else 0
        delta = new - old
        flat = np.frombuffer(payload, dtype="<f4" if h.f32 else "<f8").astype(np.float64)
        pos = 0

        def take(rows, cols):
            nonlocal pos
            a = flat[pos:pos + rows * cols].reshape(rows, cols)
            pos += rows * cols
            return a

        hidden, bias = [], []
        for layer in range(h.depth):
            if layer == 0:
                lateral, inner = take(delta, h.in_dim), take(delta, 0)
            else:
                lateral, inner = take(delta, old), take(delta, delta)
            hidden.append(np.concatenate([lateral, inner], axis=1))
            bias.append(take(1, delta).ravel().copy())
        out = take(h.out_dim, delta).copy()
        return StageBlocks(hidden, bias, out)


def read_header(data: bytes) -> tuple[StreamHeader, int]:
    return StreamHeader.decode(data)


def decode_prefix(data: bytes, k: int | None = None) -> StreamableNet:
    """Decode the header and the first ``k`` chunks (all when ``k`` is None)."""
    header, pos = StreamHeader.decode(data)
    total = header.num_stages
    k = total if k is None else k
    if not 1 <= k <= total:
        raise StageRangeError(f"requested stage {k}, stream holds K={total} stages", k)
    dec = StreamDecoder(header)
    for _ in range(k):
        pos = dec.feed(data, pos)
    return dec.net


def split_messages(data: bytes) -> list[bytes]:
    """Cut a packed stream into its header and chunk byte strings."""
    header, pos = StreamHeader.decode(data)
    messages = [bytes(data[:pos])]
    dec = StreamDecoder(header)
    for stage in range(1, header.num_stages + 1):
        end = pos + dec.chunk_length(stage)
        if end > len(data):
            raise TruncatedError(f"chunk {stage} truncated", stage)
        messages.append(bytes(data[pos:end]))
        pos = end
    return messages
