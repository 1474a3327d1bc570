"""Lossless byte format for sparse trajectory sets, and bits-per-pixel accounting.

Layout (integers little-endian)::

    "TGVC"  version:u8  L:u16  latent_w:u16  latent_h:u16  n_instances:u16
    per instance:   K:u16
      per track:    varint x0, varint y0
                    ceil(L/8) visibility bytes, frame t at bit (t % 8) of byte t // 8
                    L-1 pairs (zigzag dx, zigzag dy), each an unsigned varint

Varints are base-128 groups, least significant first, high bit = continuation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptStream, EncodeRangeError, FormatError, InvalidInput, TruncationError
from .sampler import SparseInstance, SparseTrajectorySet

MAGIC = b"TGVC"
VERSION = 1
HEADER = struct.Struct("<4sBHHHH")
HEADER_SIZE = HEADER.size  # 13
_U16 = 0xFFFF
# a u32 never needs more than 5 groups
_MAX_VARINT_BYTES = 5


def zigzag(n):
    """32-bit zigzag; works on ints and integer arrays."""
    if isinstance(n, np.ndarray):
        n = n.astype(np.int64)
        return ((n << 1) ^ (n >> 31)) & 0xFFFFFFFF
    return ((n << 1) ^ (n >> 31)) & 0xFFFFFFFF


def unzigzag(z):
    if isinstance(z, np.ndarray):
        z = z.astype(np.int64)
    return (z >> 1) ^ -(z & 1)


def encode_uvarint(value: int) -> bytes:
    if value < 0:
        raise EncodeRangeError(f"cannot varint-encode negative value {value}")
    out = bytearray()
    while value > 0x7F:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    out.append(value)
    return bytes(out)


def _varint_layout(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Varint bytes of every value (flat) and the byte count of each value."""
    v = np.asarray(values, dtype=np.int64).ravel()
    if len(v) == 0:
        return np.zeros(0, dtype=np.uint8), np.zeros(0, dtype=np.int64)
    if v.min() < 0:
        raise EncodeRangeError("cannot varint-encode negative values")
    if v.max() >= 1 << (7 * _MAX_VARINT_BYTES):
        raise EncodeRangeError("value too large for a 5-byte varint")
    nbytes = np.ones(len(v), dtype=np.int64)
    for k in range(1, _MAX_VARINT_BYTES):
        nbytes += v >= (1 << (7 * k))
    if nbytes[-1] == 1 and np.all(nbytes == 1):
        return v.astype(np.uint8), nbytes
    total = int(nbytes.sum())
    owner = np.repeat(np.arange(len(v)), nbytes)
    starts = np.cumsum(nbytes) - nbytes
    group = np.arange(total) - starts[owner]
    out = (v[owner] >> (7 * group)) & 0x7F
    out |= np.where(group < nbytes[owner] - 1, 0x80, 0)
    return out.astype(np.uint8), nbytes


def encode_uvarints(values: np.ndarray) -> bytes:
    """Vectorized varint encoding of non-negative values below 2**35."""
    return _varint_layout(values)[0].tobytes()


def _values_from_varint_bytes(raw: np.ndarray, offset: int) -> np.ndarray:
    """Decode a byte run that holds only complete varints."""
    ends = np.flatnonzero(raw < 0x80)
    if len(ends) == len(raw):
        return raw.astype(np.int64)
    starts = np.concatenate(([0], ends[:-1] + 1))
    lengths = ends - starts + 1
    if lengths.max() > _MAX_VARINT_BYTES:
        raise CorruptStream(f"overlong varint near byte {offset + int(starts[np.argmax(lengths)])}")
    owner = np.repeat(np.arange(len(ends)), lengths)
    shift = 7 * (np.arange(len(raw)) - starts[owner])
    values = np.zeros(len(ends), dtype=np.int64)
    np.add.at(values, owner, (raw.astype(np.int64) & 0x7F) << shift)
    return values


def _varint_run_end(buf: np.ndarray, offset: int, count: int, what: str) -> int:
    """Offset just past ``count`` consecutive varints starting at ``offset``."""
    if count == 0:
        return offset
    window = buf[offset : offset + count * _MAX_VARINT_BYTES]
    ends = np.flatnonzero(window < 0x80)
    if len(ends) < count:
        raise TruncationError(offset + len(window), what)
    return offset + int(ends[count - 1]) + 1


def decode_uvarints(buf: np.ndarray, offset: int, count: int) -> tuple[np.ndarray, int]:
    """Read ``count`` varints from ``buf`` (a uint8 array) starting at ``offset``."""
    end = _varint_run_end(buf, offset, count, "varint run")
    return _values_from_varint_bytes(buf[offset:end], offset), end


def _check_u16(value: int, what: str):
    if not 0 <= value <= _U16:
        raise EncodeRangeError(f"{what}={value} does not fit in u16")


def _encode_instance(inst: SparseInstance, L: int) -> bytes:
    K = inst.K
    xy = inst.xy
    if xy.min() < 0 or xy.max() > _U16:
        raise EncodeRangeError("trajectory coordinate outside u16 range")
    # per track: x0, y0, then (dx, dy) for each transition
    values = np.concatenate([xy[:, 0, :], zigzag(np.diff(xy, axis=1)).reshape(K, -1)], axis=1)
    M = values.shape[1]
    vbytes, nbytes = _varint_layout(values)
    nbytes = nbytes.reshape(K, M)
    vis = np.packbits(inst.vis, axis=1, bitorder="little")
    vis_len = vis.shape[1]

    head = nbytes[:, :2].sum(axis=1)
    per_track = nbytes.sum(axis=1) + vis_len
    track_start = np.cumsum(per_track) - per_track
    out = np.empty(int(per_track.sum()), dtype=np.uint8)

    value_owner = np.repeat(np.arange(K * M), nbytes.ravel())
    track = value_owner // M
    after_vis = (value_owner % M) >= 2
    bstart = np.cumsum(nbytes.sum(axis=1)) - nbytes.sum(axis=1)
    dest = track_start[track] + (np.arange(len(vbytes)) - bstart[track]) + vis_len * after_vis
    out[dest] = vbytes
    vis_dest = (track_start + head)[:, None] + np.arange(vis_len)[None, :]
    out[vis_dest.ravel()] = vis.ravel()
    return out.tobytes()


def encode(s: SparseTrajectorySet) -> bytes:
    _check_u16(s.L, "L")
    _check_u16(s.latent_w, "latent_w")
    _check_u16(s.latent_h, "latent_h")
    _check_u16(len(s.instances), "n_instances")
    parts = [HEADER.pack(MAGIC, VERSION, s.L, s.latent_w, s.latent_h, len(s.instances))]
    for inst in s.instances:
        _check_u16(inst.K, "K")
        parts.append(struct.pack("<H", inst.K))
        if inst.K:
            parts.append(_encode_instance(inst, s.L))
    return b"".join(parts)


def _decode_instance(buf: np.ndarray, pos: int, K: int, L: int, lw: int, lh: int) -> tuple[SparseInstance, int]:
    vis_len = (L + 7) // 8
    n_deltas = 2 * (L - 1)
    head_runs, vis_at, delta_runs = [], [], []
    for _ in range(K):
        end = _varint_run_end(buf, pos, 2, "track start")
        head_runs.append((pos, end))
        if end + vis_len > len(buf):
            raise TruncationError(len(buf), "visibility bytes")
        vis_at.append(end)
        pos = end + vis_len
        end = _varint_run_end(buf, pos, n_deltas, "deltas")
        delta_runs.append((pos, end))
        pos = end

    def gather(runs):
        idx = np.concatenate([np.arange(a, b) for a, b in runs])
        return _values_from_varint_bytes(buf[idx], runs[0][0])

    starts = gather(head_runs).reshape(K, 2)
    if n_deltas:
        zz = gather(delta_runs)
        if np.any(zz > 0xFFFFFFFF):
            raise CorruptStream("delta exceeds 32 bits")
        deltas = unzigzag(zz).reshape(K, L - 1, 2)
    else:
        deltas = np.zeros((K, 0, 2), dtype=np.int64)
    vis_idx = (np.asarray(vis_at)[:, None] + np.arange(vis_len)[None, :]).ravel()
    bits = np.unpackbits(buf[vis_idx].reshape(K, vis_len), axis=1, bitorder="little")
    if bits[:, L:].any():
        raise CorruptStream("nonzero visibility padding bits")
    xy = np.cumsum(np.concatenate([starts[:, None, :], deltas], axis=1), axis=1)
    if xy[..., 0].min() < 0 or xy[..., 0].max() >= lw or xy[..., 1].min() < 0 or xy[..., 1].max() >= lh:
        raise CorruptStream(f"decoded coordinate outside the {lw}x{lh} latent grid (before byte {pos})")
    return SparseInstance(xy, bits[:, :L].astype(bool)), pos


def decode(data: bytes) -> SparseTrajectorySet:
    if len(data) < HEADER_SIZE:
        if len(data) >= 4 and data[:4] != MAGIC:
            raise FormatError(f"bad magic {data[:4]!r}")
        raise TruncationError(len(data), "header")
    magic, version, L, lw, lh, n_inst = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if L < 1 or lw < 1 or lh < 1:
        raise CorruptStream(f"invalid header dimensions L={L}, {lw}x{lh}")
    buf = np.frombuffer(data, dtype=np.uint8)
    pos = HEADER_SIZE
    instances = []
    for _ in range(n_inst):
        if pos + 2 > len(data):
            raise TruncationError(pos, "instance header")
        (K,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if K == 0:
            instances.append(SparseInstance(np.zeros((0, L, 2), np.int64), np.zeros((0, L), bool)))
            continue
        inst, pos = _decode_instance(buf, pos, K, L, lw, lh)
        instances.append(inst)
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after the last instance")
    return SparseTrajectorySet(L, lw, lh, tuple(instances))


@dataclass(frozen=True)
class RateReport:
    motion_bits: int
    keyframe_bits: int
    pixels: int
    bpp_with_motion: float
    bpp_without_motion: float


def rate_report(stream_or_length, width: int, height: int, L: int, keyframe_bits: int = 0) -> RateReport:
    """Bits per pixel over ``width * height * L`` with and without the motion stream."""
    if width <= 0 or height <= 0 or L <= 0:
        raise InvalidInput("dimensions must be positive")
    n_bytes = stream_or_length if isinstance(stream_or_length, int) else len(stream_or_length)
    motion_bits = 8 * n_bytes
    pixels = width * height * L
    return RateReport(
        motion_bits,
        keyframe_bits,
        pixels,
        (motion_bits + keyframe_bits) / pixels,
        keyframe_bits / pixels,
    )
