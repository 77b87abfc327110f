"""Wire format and the transmit/receive pipelines.

A message carries the basis fingerprint, the sparse projection weights, the
condition maps (run-length encoded), and the sampler choice. The transmitter
regenerates the receiver's output locally and only sends once a quality
threshold passes, walking a hierarchy of weight counts from cheap to full.
Because every stage is bit-pinned, the receiver's image is byte-identical to
the candidate the transmitter approved.
"""

from __future__ import annotations

import struct
import zlib
from collections import deque
from dataclasses import dataclass

import numpy as np

from .codec import WeightVector, project_gd, reconstruct, truncate_topk
from .diffusion import ConditionSet, forward_diffuse, reverse_sample
from .numerics import gaussian_stream
from .scenes import make_conditions

MAGIC = b"DGO1"
VERSION = 1
MAX_FRAME = 16 * 1024 * 1024
_MODE_CODE = {"deterministic": 0, "ancestral": 1}
_MODE_NAME = {v: k for k, v in _MODE_CODE.items()}

# fixed-size prefix: magic, version u8, mode u8, fingerprint u64, nonce u64, n u32, k u32
_HEAD = struct.Struct("<4sBBQQII")
_DIMS = struct.Struct("<HHB")
_ENTRY_DTYPE = np.dtype([("idx", "<u4"), ("val", "<f4")])
_MIN_MESSAGE = _HEAD.size + _DIMS.size + 3 + 2 + 4


class MessageError(ValueError):
    pass


class UnsupportedFormatError(MessageError):
    """Wrong magic or version."""


class CorruptMessageError(MessageError):
    """Checksum mismatch."""


class MalformedMessageError(MessageError):
    """Structurally invalid content behind a valid checksum."""


class BasisMismatchError(ValueError):
    """Message was produced against a different basis than the receiver holds."""


class FrameTooLargeError(ValueError):
    pass


class TruncatedFrameError(ValueError):
    pass


@dataclass(eq=False)
class DiffGoMessage:
    basis_fingerprint: int
    weights: WeightVector
    conditions: ConditionSet
    sampler_mode: str = "deterministic"
    nonce: int = 0

    @property
    def k_used(self):
        return self.weights.k


def _rle_labels(flat):
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [len(flat)]))
    out = bytearray()
    for s, e in zip(starts, ends):
        label = int(flat[s])
        length = int(e - s)
        while length > 0:
            chunk = min(length, 0xFFFF)
            out += struct.pack("<BH", label, chunk)
            length -= chunk
    return bytes(out)


def _rle_edges(flat):
    # alternating run lengths, starting with a zero-valued run (possibly empty)
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [len(flat)]))
    lengths = []
    if flat[0] == 1:
        lengths.append(0)
    for s, e in zip(starts, ends):
        length = int(e - s)
        while length > 0xFFFF:
            lengths.extend((0xFFFF, 0))
            length -= 0xFFFF
        lengths.append(length)
    return b"".join(struct.pack("<H", v) for v in lengths)


def encode_message(msg):
    """Serialize a message; layout is little-endian with a trailing CRC32."""
    if msg.sampler_mode not in _MODE_CODE:
        raise ValueError(f"unknown sampler mode {msg.sampler_mode!r}")
    cond = msg.conditions
    h, w = cond.label_map.shape
    if h > 0xFFFF or w > 0xFFFF or cond.num_labels > 0xFF:
        raise ValueError("condition maps too large for the wire format")
    blob = bytearray()
    blob += _HEAD.pack(MAGIC, VERSION, _MODE_CODE[msg.sampler_mode],
                       msg.basis_fingerprint & 0xFFFFFFFFFFFFFFFF,
                       msg.nonce & 0xFFFFFFFFFFFFFFFF,
                       msg.weights.n, msg.weights.k)
    entries = np.empty(msg.weights.k, dtype=_ENTRY_DTYPE)
    entries["idx"] = msg.weights.indices
    entries["val"] = msg.weights.values
    blob += entries.tobytes()
    blob += _DIMS.pack(h, w, cond.num_labels)
    blob += _rle_labels(cond.label_map.reshape(-1))
    blob += _rle_edges(cond.edge_map.reshape(-1))
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    return bytes(blob)


class _Cursor:
    def __init__(self, data, end):
        self.data = data
        self.off = 0
        self.end = end

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.off + size > self.end:
            raise MalformedMessageError("message truncated mid-field")
        vals = struct.unpack_from(fmt, self.data, self.off)
        self.off += size
        return vals


def decode_message(data):
    """Parse and validate wire bytes; checksum is verified before anything else."""
    if len(data) < _MIN_MESSAGE:
        raise MalformedMessageError(f"buffer of {len(data)} bytes is too short")
    (crc,) = struct.unpack("<I", data[-4:])
    if crc != zlib.crc32(data[:-4]):
        raise CorruptMessageError("checksum mismatch")
    cur = _Cursor(data, len(data) - 4)
    magic, version, mode_code, fingerprint, nonce, n, k = cur.take("<4sBBQQII")
    if magic != MAGIC:
        raise UnsupportedFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedFormatError(f"unsupported version {version}")
    if mode_code not in _MODE_NAME:
        raise MalformedMessageError(f"unknown sampler code {mode_code}")
    if k > n:
        raise MalformedMessageError(f"k={k} exceeds n={n}")
    if cur.off + 8 * k > cur.end:
        raise MalformedMessageError("weight block truncated")
    entries = np.frombuffer(data, dtype=_ENTRY_DTYPE, count=k, offset=cur.off)
    cur.off += 8 * k
    indices = entries["idx"].astype(np.int64)
    values = entries["val"].copy()
    h, w, num_labels = cur.take("<HHB")
    if h == 0 or w == 0 or num_labels == 0:
        raise MalformedMessageError("degenerate condition dimensions")
    total = h * w
    flat_labels = np.empty(total, dtype=np.uint8)
    filled = 0
    while filled < total:
        label, length = cur.take("<BH")
        if length == 0:
            raise MalformedMessageError("zero-length label run")
        if filled + length > total:
            raise MalformedMessageError("label runs overflow the map")
        flat_labels[filled:filled + length] = label
        filled += length
    flat_edges = np.empty(total, dtype=np.uint8)
    filled = 0
    bit = 0
    while filled < total:
        (length,) = cur.take("<H")
        if filled + length > total:
            raise MalformedMessageError("edge runs overflow the map")
        flat_edges[filled:filled + length] = bit
        filled += length
        bit ^= 1
    if cur.off != cur.end:
        raise MalformedMessageError(f"{cur.end - cur.off} trailing bytes after payload")
    try:
        weights = WeightVector(n, indices, values)
        cond = ConditionSet(flat_labels.reshape(h, w), flat_edges.reshape(h, w), num_labels)
    except ValueError as exc:
        raise MalformedMessageError(str(exc)) from exc
    return DiffGoMessage(fingerprint, weights, cond, _MODE_NAME[mode_code], nonce)


@dataclass(eq=False)
class FeedbackEntry:
    k: int
    score: object  # MetricScore
    candidate: np.ndarray


def transmit_pipeline(scene, model, basis, sched, metric, tau, hierarchy, forward_seed):
    """Project, then try weight counts in increasing order until quality passes.

    Every candidate is generated exactly as the receiver would generate it;
    the first count whose score is <= tau ships, and the full basis ships if
    none passes. Returns the message and the per-count feedback log.
    """
    hierarchy = [int(v) for v in hierarchy]
    if any(b <= a for a, b in zip(hierarchy, hierarchy[1:])):
        raise ValueError("hierarchy must be strictly increasing")
    if hierarchy and hierarchy[-1] >= basis.n:
        raise ValueError(f"hierarchy must stay below the basis size {basis.n}")
    h, w = scene.image.shape
    eps = gaussian_stream(forward_seed, h * w)
    x_T = forward_diffuse(scene.image.reshape(-1), sched.T, eps, sched)
    cond = make_conditions(scene)
    weights = project_gd(x_T, basis)
    log = []
    for k in hierarchy + [basis.n]:
        w_k = truncate_topk(weights, k)
        x_hat = reconstruct(w_k, basis)
        candidate = reverse_sample(model, x_hat, cond, sched, "deterministic").reshape(h, w)
        score = metric(candidate, scene)
        log.append(FeedbackEntry(k, score, candidate))
        if score.value <= tau:
            break
    msg = DiffGoMessage(basis.fingerprint, w_k, cond, "deterministic", 0)
    return msg, log


def receive_pipeline(msg, model, basis, sched):
    """Regenerate the transmitted image from weights alone; bit-exact by design."""
    if msg.basis_fingerprint != basis.fingerprint:
        raise BasisMismatchError(
            f"message fingerprint {msg.basis_fingerprint:#x} vs basis {basis.fingerprint:#x}")
    x_hat = reconstruct(msg.weights, basis)
    h, w = msg.conditions.label_map.shape
    out = reverse_sample(model, x_hat, msg.conditions, sched,
                         msg.sampler_mode, msg.nonce)
    return out.reshape(h, w)


@dataclass(frozen=True)
class AccountingRecord:
    method: str
    condition_floats: float
    edge_floats: float
    extra_floats: float
    wire_bytes: int

    @property
    def total_floats(self):
        return self.condition_floats + self.edge_floats + self.extra_floats


def floats_transmitted(msg, method):
    """Float-equivalent cost of one message under each sharing strategy.

    Conditions cost H*W symbols for everyone. The edge bitmap costs H*W/32
    float-equivalents, except the conditions-only baseline which sends labels
    only. On top of that: the weight codec pays its k values, full-latent
    sharing pays one float per pixel, and the no-latent baselines pay nothing.
    """
    method = method.lower()
    h, w = msg.conditions.label_map.shape
    c = float(h * w)
    e = 0.0 if method == "gesco" else h * w / 32.0
    if method == "diffgo":
        extra = float(msg.weights.k)
    elif method == "od":
        extra = float(h * w)
    elif method in ("rn", "gesco"):
        extra = 0.0
    else:
        raise ValueError(f"unknown method {method!r}")
    return AccountingRecord(method, c, e, extra, len(encode_message(msg)))


def _frame(payload):
    if len(payload) > MAX_FRAME:
        raise FrameTooLargeError(f"frame of {len(payload)} bytes exceeds {MAX_FRAME}")
    return struct.pack(">I", len(payload)) + payload


class InMemoryTransport:
    """Reliable in-process FIFO with the same framing semantics as the stream."""

    def __init__(self):
        self._frames = deque()

    def send(self, payload):
        self._frames.append(_frame(payload))

    def receive(self):
        if not self._frames:
            raise TruncatedFrameError("no frame available")
        frame = self._frames.popleft()
        (n,) = struct.unpack(">I", frame[:4])
        if n > MAX_FRAME:
            raise FrameTooLargeError(f"frame declares {n} bytes")
        return frame[4:]


class FramedStreamTransport:
    """Length-prefixed frames over a byte stream (anything with read/write)."""

    def __init__(self, stream):
        self._stream = stream

    def send(self, payload):
        self._stream.write(_frame(payload))

    def _read_exact(self, n):
        buf = self._stream.read(n)
        if buf is None or len(buf) != n:
            raise TruncatedFrameError(f"stream ended after {len(buf or b'')} of {n} bytes")
        return buf

    def receive(self):
        (n,) = struct.unpack(">I", self._read_exact(4))
        if n > MAX_FRAME:
            raise FrameTooLargeError(f"frame declares {n} bytes, cap is {MAX_FRAME}")
        return self._read_exact(n)


def in_memory_transport():
    return InMemoryTransport()


def framed_stream_transport(stream):
    return FramedStreamTransport(stream)
