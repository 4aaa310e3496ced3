"""Bit-exact binary codec for master/worker messages.

Frame layout (all integers little-endian)::

    magic    4 bytes  b"OGLM"
    version  u8       1
    msg_type u8
    length   u32      payload byte count
    payload  bytes

Reals are IEEE-754 binary64 little-endian and matrices are row-major.
Vector lengths are not transmitted where the payload size determines them,
which keeps a derivative response at exactly ``8(d + d*d + 1) + 8`` bytes.

========  ======================  ==========================================
type      message                 payload
========  ======================  ==========================================
0x01      ShardInfoRequest        (empty)
0x02      PilotDrawRequest        n_k u32, seed u64
0x03      DerivativesRequest      beta f64[d]
0x04      LogLikRequest           beta f64[d]
0x05      LocalFitRequest         init f64[d], tol f64, max_iter u32
0x06      RestrictedFitRequest    init f64[d], tol f64, max_iter u32, free u8[d]
0x81      ShardInfoResponse       count u64, d u32
0x82      PilotRowsResponse       m u32, d u32, y f64[m], X f64[m*d]
0x83      DerivativesResponse     score f64[d], info f64[d*d], log_lik f64, count u64
0x84      LogLikResponse          value f64
0x85      LocalFitResponse        beta f64[d], log_lik f64, step_norm f64, iterations u32, converged u8
0xFF      ErrorResponse           code u16, message utf-8
========  ======================  ==========================================
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import ClassVar, Optional

import numpy as np

from ..errors import IncompleteFrame, ProtocolError
from ..glm import DerivativeBundle, EstimateResult

MAGIC = b"OGLM"
VERSION = 1
HEADER = struct.Struct("<4sBBI")
HEADER_SIZE = HEADER.size  # 10

# error codes carried by ErrorResponse
ERR_MALFORMED = 1
ERR_DIMENSION = 2
ERR_SOLVER = 3
ERR_ALLOCATION = 4
ERR_INTERNAL = 99

_F8 = np.dtype("<f8")


def _f64s(values) -> bytes:
    return np.ascontiguousarray(values, dtype=_F8).tobytes()


def _read_f64s(buf: bytes, offset: int, count: int) -> np.ndarray:
    return np.frombuffer(buf, dtype=_F8, count=count, offset=offset).astype(float)


class Message:
    """Base class; equality is byte equality of the encoded payload."""

    msg_type: ClassVar[int]

    def payload(self) -> bytes:
        raise NotImplementedError

    @classmethod
    def from_payload(cls, payload: bytes) -> "Message":
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and self.payload() == other.payload()

    def __hash__(self):
        return hash((self.msg_type, self.payload()))


def _vector_len(payload: bytes, fixed: int, per_coord: int, name: str) -> int:
    extra = len(payload) - fixed
    if extra <= 0 or extra % per_coord:
        raise ProtocolError(f"{name}: payload of {len(payload)} bytes has no valid dimension")
    return extra // per_coord


# ---------------------------------------------------------------- requests


@dataclass(frozen=True, eq=False)
class ShardInfoRequest(Message):
    msg_type: ClassVar[int] = 0x01

    def payload(self):
        return b""

    @classmethod
    def from_payload(cls, payload):
        if payload:
            raise ProtocolError("ShardInfo request carries no payload")
        return cls()


@dataclass(frozen=True, eq=False)
class PilotDrawRequest(Message):
    n_k: int
    seed: int
    msg_type: ClassVar[int] = 0x02
    _layout: ClassVar[struct.Struct] = struct.Struct("<IQ")

    def payload(self):
        return self._layout.pack(self.n_k, self.seed)

    @classmethod
    def from_payload(cls, payload):
        if len(payload) != cls._layout.size:
            raise ProtocolError("PilotDraw request must be 12 bytes")
        return cls(*cls._layout.unpack(payload))


@dataclass(frozen=True, eq=False)
class DerivativesRequest(Message):
    beta: np.ndarray
    msg_type: ClassVar[int] = 0x03

    def payload(self):
        return _f64s(self.beta)

    @classmethod
    def from_payload(cls, payload):
        d = _vector_len(payload, 0, 8, "Derivatives request")
        return cls(_read_f64s(payload, 0, d))


@dataclass(frozen=True, eq=False)
class LogLikRequest(Message):
    beta: np.ndarray
    msg_type: ClassVar[int] = 0x04

    def payload(self):
        return _f64s(self.beta)

    @classmethod
    def from_payload(cls, payload):
        d = _vector_len(payload, 0, 8, "LogLik request")
        return cls(_read_f64s(payload, 0, d))


@dataclass(frozen=True, eq=False)
class LocalFitRequest(Message):
    init: np.ndarray
    tol: float
    max_iter: int
    msg_type: ClassVar[int] = 0x05
    _tail: ClassVar[struct.Struct] = struct.Struct("<dI")

    def payload(self):
        return _f64s(self.init) + self._tail.pack(self.tol, self.max_iter)

    @classmethod
    def from_payload(cls, payload):
        d = _vector_len(payload, 12, 8, "LocalFit request")
        tol, max_iter = cls._tail.unpack_from(payload, 8 * d)
        return cls(_read_f64s(payload, 0, d), tol, max_iter)


@dataclass(frozen=True, eq=False)
class RestrictedFitRequest(Message):
    """Local fit with the coordinates where ``free`` is false held at ``init``."""

    init: np.ndarray
    tol: float
    max_iter: int
    free: np.ndarray
    msg_type: ClassVar[int] = 0x06
    _tail: ClassVar[struct.Struct] = struct.Struct("<dI")

    def payload(self):
        mask = np.asarray(self.free, dtype=bool).astype(np.uint8).tobytes()
        return _f64s(self.init) + self._tail.pack(self.tol, self.max_iter) + mask

    @classmethod
    def from_payload(cls, payload):
        d = _vector_len(payload, 12, 9, "RestrictedFit request")
        tol, max_iter = cls._tail.unpack_from(payload, 8 * d)
        mask = np.frombuffer(payload, dtype=np.uint8, count=d, offset=8 * d + 12)
        if np.any(mask > 1):
            raise ProtocolError("RestrictedFit mask entries must be 0 or 1")
        return cls(_read_f64s(payload, 0, d), tol, max_iter, mask.astype(bool))


# ---------------------------------------------------------------- responses


@dataclass(frozen=True, eq=False)
class ShardInfoResponse(Message):
    count: int
    d: int
    msg_type: ClassVar[int] = 0x81
    _layout: ClassVar[struct.Struct] = struct.Struct("<QI")

    def payload(self):
        return self._layout.pack(self.count, self.d)

    @classmethod
    def from_payload(cls, payload):
        if len(payload) != cls._layout.size:
            raise ProtocolError("ShardInfo response must be 12 bytes")
        return cls(*cls._layout.unpack(payload))


@dataclass(frozen=True, eq=False)
class PilotRowsResponse(Message):
    y: np.ndarray
    X: np.ndarray
    msg_type: ClassVar[int] = 0x82
    _head: ClassVar[struct.Struct] = struct.Struct("<II")

    def payload(self):
        X = np.asarray(self.X, dtype=float)
        m, d = X.shape
        return self._head.pack(m, d) + _f64s(self.y) + _f64s(X)

    @classmethod
    def from_payload(cls, payload):
        if len(payload) < 8:
            raise ProtocolError("PilotRows response too short")
        m, d = cls._head.unpack_from(payload, 0)
        if len(payload) != 8 + 8 * m * (d + 1):
            raise ProtocolError("PilotRows payload length disagrees with its header")
        y = _read_f64s(payload, 8, m)
        X = _read_f64s(payload, 8 + 8 * m, m * d).reshape(m, d)
        return cls(y, X)


@dataclass(frozen=True, eq=False)
class DerivativesResponse(Message):
    bundle: DerivativeBundle
    msg_type: ClassVar[int] = 0x83

    def payload(self):
        b = self.bundle
        return _f64s(b.score) + _f64s(b.info) + struct.pack("<dQ", b.log_lik, b.count)

    @staticmethod
    def payload_size(d: int) -> int:
        return 8 * (d + d * d + 1) + 8

    @classmethod
    def from_payload(cls, payload):
        words = len(payload) // 8
        d = int((math.isqrt(4 * words - 7) - 1) // 2) if words >= 4 else 0
        if d < 1 or len(payload) != cls.payload_size(d):
            raise ProtocolError(f"Derivatives response of {len(payload)} bytes has no valid dimension")
        score = _read_f64s(payload, 0, d)
        info = _read_f64s(payload, 8 * d, d * d).reshape(d, d)
        ll, count = struct.unpack_from("<dQ", payload, 8 * (d + d * d))
        return cls(DerivativeBundle(score, info, ll, count))


@dataclass(frozen=True, eq=False)
class LogLikResponse(Message):
    value: float
    msg_type: ClassVar[int] = 0x84

    def payload(self):
        return struct.pack("<d", self.value)

    @classmethod
    def from_payload(cls, payload):
        if len(payload) != 8:
            raise ProtocolError("LogLik response must be 8 bytes")
        return cls(struct.unpack("<d", payload)[0])


@dataclass(frozen=True, eq=False)
class LocalFitResponse(Message):
    result: EstimateResult
    msg_type: ClassVar[int] = 0x85
    _tail: ClassVar[struct.Struct] = struct.Struct("<ddIB")

    def payload(self):
        r = self.result
        ll = math.nan if r.log_lik is None else r.log_lik
        return _f64s(r.beta) + self._tail.pack(ll, r.final_step_norm, r.iterations, int(bool(r.converged)))

    @classmethod
    def from_payload(cls, payload):
        d = _vector_len(payload, cls._tail.size, 8, "LocalFit response")
        ll, step, iters, conv = cls._tail.unpack_from(payload, 8 * d)
        if conv > 1:
            raise ProtocolError("converged flag must be 0 or 1")
        beta = _read_f64s(payload, 0, d)
        return cls(EstimateResult(beta, None if math.isnan(ll) else ll, iters, bool(conv), step))


@dataclass(frozen=True, eq=False)
class ErrorResponse(Message):
    code: int
    message: str
    msg_type: ClassVar[int] = 0xFF

    def payload(self):
        return struct.pack("<H", self.code) + self.message.encode("utf-8")

    @classmethod
    def from_payload(cls, payload):
        if len(payload) < 2:
            raise ProtocolError("Error response too short")
        (code,) = struct.unpack_from("<H", payload, 0)
        try:
            text = payload[2:].decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError("Error message is not valid UTF-8") from None
        return cls(code, text)


MESSAGE_TYPES = {
    cls.msg_type: cls
    for cls in (
        ShardInfoRequest, PilotDrawRequest, DerivativesRequest, LogLikRequest,
        LocalFitRequest, RestrictedFitRequest, ShardInfoResponse, PilotRowsResponse,
        DerivativesResponse, LogLikResponse, LocalFitResponse, ErrorResponse,
    )
}

#: request type -> the response type that answers it
RESPONSE_FOR = {
    ShardInfoRequest: ShardInfoResponse,
    PilotDrawRequest: PilotRowsResponse,
    DerivativesRequest: DerivativesResponse,
    LogLikRequest: LogLikResponse,
    LocalFitRequest: LocalFitResponse,
    RestrictedFitRequest: LocalFitResponse,
}


def encode_frame(msg: Message) -> bytes:
    payload = msg.payload()
    return HEADER.pack(MAGIC, VERSION, msg.msg_type, len(payload)) + payload


def parse_header(data: bytes):
    """Validate a frame header; returns ``(msg_type, payload_len)``."""
    if len(data) < HEADER_SIZE:
        raise IncompleteFrame(HEADER_SIZE - len(data))
    magic, version, msg_type, length = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if msg_type not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type 0x{msg_type:02x}")
    return msg_type, length


def read_frame(buf: bytes):
    """Decode the first frame of a byte stream; returns ``(message, consumed)``."""
    msg_type, length = parse_header(buf)
    total = HEADER_SIZE + length
    if len(buf) < total:
        raise IncompleteFrame(total - len(buf))
    payload = bytes(buf[HEADER_SIZE:total])
    return MESSAGE_TYPES[msg_type].from_payload(payload), total


def decode_frame(data: bytes) -> Message:
    """Decode exactly one complete frame."""
    msg, consumed = read_frame(data)
    if consumed != len(data):
        raise ProtocolError(f"{len(data) - consumed} trailing bytes after frame")
    return msg


def frame_overhead() -> int:
    return HEADER_SIZE
