"""Bit-exact spike packet codec.

Layout (little-endian)::

    u8 version | u8 flags | u16 n_spikes | u32 step | n_spikes * (u32 source, u32 emission_step)

A packet never exceeds 512 bytes, i.e. at most 63 spike records.
"""

from __future__ import annotations

import struct

import numpy as np

VERSION = 1
HEADER = struct.Struct("<BBHI")
HEADER_BYTES = HEADER.size  # 8
RECORD_BYTES = 8
MAX_PACKET_BYTES = 512
MAX_SPIKES = (MAX_PACKET_BYTES - HEADER_BYTES) // RECORD_BYTES  # 63

FLAG_EMPTY = 0x01

RECORD_DTYPE = np.dtype([("source", "<u4"), ("step", "<u4")])


class PacketError(ValueError):
    pass


class BadVersion(PacketError):
    pass


class LengthMismatch(PacketError):
    pass


class SpikeCountMismatch(PacketError):
    pass


def packet_size(n_spikes: int) -> int:
    return HEADER_BYTES + RECORD_BYTES * n_spikes


def pack_packets(dst_rank: int, step: int, spikes) -> list[bytes]:
    """Encode the axonal spikes emitted at ``step`` for one destination.

    ``spikes`` are source neuron ids sorted ascending.  Zero spikes still
    yield one header-only packet flagged empty; callers in point-to-point
    mode drop it.
    """
    src = np.asarray(spikes, dtype="<u4")
    n = src.shape[0]
    if n == 0:
        return [HEADER.pack(VERSION, FLAG_EMPTY, 0, step)]
    records = np.empty(n, dtype=RECORD_DTYPE)
    records["source"] = src
    records["step"] = step
    out = []
    for lo in range(0, n, MAX_SPIKES):
        chunk = records[lo:lo + MAX_SPIKES]
        out.append(HEADER.pack(VERSION, 0, chunk.shape[0], step) + chunk.tobytes())
    return out


def unpack_packet(data: bytes) -> tuple[int, np.ndarray]:
    """Decode one packet into ``(step, records)``.

    ``records`` is a structured array with ``source`` and ``step`` fields.
    """
    if len(data) < HEADER_BYTES:
        raise LengthMismatch(f"packet of {len(data)} bytes is shorter than the header")
    version, flags, n, step = HEADER.unpack_from(data)
    if version != VERSION:
        raise BadVersion(f"unsupported packet version {version}")
    if (len(data) - HEADER_BYTES) % RECORD_BYTES:
        raise LengthMismatch(f"body of {len(data) - HEADER_BYTES} bytes is not whole records")
    body_records = (len(data) - HEADER_BYTES) // RECORD_BYTES
    if body_records != n:
        raise SpikeCountMismatch(f"header announces {n} spikes, body holds {body_records}")
    if n > MAX_SPIKES:
        raise SpikeCountMismatch(f"{n} spikes exceed the {MAX_SPIKES}-spike packet limit")
    if bool(flags & FLAG_EMPTY) != (n == 0):
        raise SpikeCountMismatch("empty flag disagrees with spike count")
    records = np.frombuffer(data, dtype=RECORD_DTYPE, count=n, offset=HEADER_BYTES)
    return step, records


def peek_step(data: bytes) -> int:
    return HEADER.unpack_from(data)[3]
