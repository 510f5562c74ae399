"""Seeded message transport and the length-prefixed wire format.

All durations are integer microseconds. One random stream per delay model is
consumed in global send order, so a fixed seed and a fixed sequence of
``send`` calls reproduce every delay and every loss.

Frame layout::

    +----------------+-------------------------------------------+
    | u32 big-endian |  UTF-8 record, one ``key=value`` per line  |
    | payload length |  keys in FRAME_KEYS order, values as JSON  |
    +----------------+-------------------------------------------+
"""

from __future__ import annotations

import json
import math
import random
import struct
from dataclasses import dataclass, field
from typing import Iterator

from .geometry import InvalidDirection, PathDirection
from .protocol import ElectionStatus, MessageKind, ProtocolError, ProtocolMessage, Verdict

MAX_FRAME_BYTES = 64 * 1024
FRAME_KEYS = (
    "kind",
    "sender",
    "plate",
    "direction",
    "received_votes",
    "election_time",
    "election_status",
    "verdict",
    "directionStatus",
)
_HEADER = struct.Struct(">I")


class FrameError(ValueError):
    pass


class SelfSend(ValueError):
    pass


@dataclass
class DelayModel:
    """Per-message delay distribution plus independent loss.

    ``kind`` is ``"uniform"`` (params ``(min, max)``), ``"fixed"`` (``(d,)``)
    or ``"lognormal"`` (``(mu, sigma)`` of the natural log of the delay in
    microseconds).
    """

    kind: str = "uniform"
    params: tuple[float, ...] = (1000, 5000)
    loss_prob: float = 0.0
    seed: int = 0
    _rng: random.Random = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.params = tuple(self.params)
        if self.kind == "uniform":
            if len(self.params) != 2 or not 0 <= self.params[0] <= self.params[1]:
                raise ValueError(f"uniform delay needs 0 <= min <= max, got {self.params}")
        elif self.kind == "fixed":
            if len(self.params) != 1 or self.params[0] < 0:
                raise ValueError(f"fixed delay needs one non-negative value, got {self.params}")
        elif self.kind == "lognormal":
            if len(self.params) != 2 or self.params[1] < 0:
                raise ValueError(f"lognormal delay needs (mu, sigma >= 0), got {self.params}")
        else:
            raise ValueError(f"unknown delay kind {self.kind!r}")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError(f"loss_prob must lie in [0, 1], got {self.loss_prob}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self._rng = random.Random(self.seed)

    @classmethod
    def parse(cls, text: str, loss_prob: float = 0.0, seed: int = 0) -> "DelayModel":
        """Build from the CLI syntax, e.g. ``uniform:1000,5000`` (microseconds)."""
        kind, _, rest = text.partition(":")
        kind = kind.strip().lower()
        try:
            params = tuple(float(x) for x in rest.split(",")) if rest else ()
        except ValueError as exc:
            raise ValueError(f"bad delay spec {text!r}") from exc
        return cls(kind, params, loss_prob, seed)

    def spec(self) -> str:
        return f"{self.kind}:" + ",".join(_fmt_num(p) for p in self.params)

    def fork(self, seed: int) -> "DelayModel":
        """Same distribution and loss, fresh stream."""
        return DelayModel(self.kind, self.params, self.loss_prob, seed)

    @property
    def max_delay(self) -> int | None:
        if self.kind == "uniform":
            return int(self.params[1])
        if self.kind == "fixed":
            return int(self.params[0])
        return None

    def draw_lost(self) -> bool:
        return self._rng.random() < self.loss_prob

    def draw_delay(self) -> int:
        if self.kind == "fixed":
            return int(self.params[0])
        if self.kind == "uniform":
            lo, hi = self.params
            return int(round(self._rng.uniform(lo, hi)))
        mu, sigma = self.params
        return int(round(math.exp(self._rng.gauss(mu, sigma))))


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


@dataclass(frozen=True)
class Envelope:
    msg: ProtocolMessage
    src: str
    dst: str
    send_time: int
    deliver_time: int | None  # None means lost

    @property
    def lost(self) -> bool:
        return self.deliver_time is None


def send(model: DelayModel, msg: ProtocolMessage, src: str, dst: str, now: int) -> Envelope:
    if src == dst:
        raise SelfSend(f"{src} cannot send to itself")
    if model.draw_lost():
        return Envelope(msg, src, dst, now, None)
    return Envelope(msg, src, dst, now, now + model.draw_delay())


# ---------------------------------------------------------------------------
# codec


def _field_values(msg: ProtocolMessage) -> list:
    return [
        msg.kind.value,
        msg.sender,
        msg.plate,
        msg.direction.label if msg.direction is not None else None,
        msg.received_votes,
        msg.election_time,
        msg.election_status.value if msg.election_status is not None else None,
        msg.verdict.value if msg.verdict is not None else None,
        msg.direction_status,
    ]


def encode_frame(msg: ProtocolMessage) -> bytes:
    lines = [
        f"{k}={json.dumps(v, ensure_ascii=False)}" for k, v in zip(FRAME_KEYS, _field_values(msg))
    ]
    payload = "\n".join(lines).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise FrameError(f"message too large for a frame ({len(payload)} bytes)")
    return _HEADER.pack(len(payload)) + payload


def _enum(cls, raw, name):
    if raw is None:
        return None
    try:
        return cls(raw)
    except ValueError:
        raise ProtocolError(f"unknown {name} {raw!r}") from None


def _decode_payload(payload: bytes) -> ProtocolMessage:
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FrameError("frame payload is not UTF-8") from exc
    lines = text.split("\n")
    if len(lines) != len(FRAME_KEYS):
        raise FrameError(f"expected {len(FRAME_KEYS)} fields, got {len(lines)}")
    values = {}
    for key, line in zip(FRAME_KEYS, lines):
        k, sep, raw = line.partition("=")
        if not sep or k != key:
            raise FrameError(f"expected field {key!r}, got {line[:40]!r}")
        try:
            values[k] = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FrameError(f"bad value for {key!r}") from exc
    kind = _enum(MessageKind, values["kind"], "kind")
    if kind is None:
        raise ProtocolError("missing message kind")
    direction = values["direction"]
    if direction is not None:
        try:
            direction = PathDirection.parse(direction)
        except InvalidDirection as exc:
            raise ProtocolError(str(exc)) from None
    return ProtocolMessage(
        kind=kind,
        sender=values["sender"],
        plate=values["plate"],
        direction=direction,
        received_votes=values["received_votes"],
        election_time=values["election_time"],
        election_status=_enum(ElectionStatus, values["election_status"], "election status"),
        verdict=_enum(Verdict, values["verdict"], "verdict"),
        direction_status=values["directionStatus"],
    )


def decode_frame(data: bytes) -> ProtocolMessage:
    """Decode exactly one frame; trailing or missing bytes are an error."""
    if len(data) < _HEADER.size:
        raise FrameError("truncated frame header")
    (length,) = _HEADER.unpack_from(data)
    if length > MAX_FRAME_BYTES:
        raise FrameError(f"frame length {length} exceeds {MAX_FRAME_BYTES}")
    body = data[_HEADER.size :]
    if len(body) < length:
        raise FrameError(f"truncated frame: want {length} bytes, have {len(body)}")
    if len(body) > length:
        raise FrameError(f"{len(body) - length} trailing bytes after frame")
    return _decode_payload(body)


class FrameReader:
    """Incremental decoder for a byte stream carrying back-to-back frames."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[ProtocolMessage]:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= _HEADER.size:
            (length,) = _HEADER.unpack_from(self._buf)
            if length > MAX_FRAME_BYTES:
                raise FrameError(f"frame length {length} exceeds {MAX_FRAME_BYTES}")
            end = _HEADER.size + length
            if len(self._buf) < end:
                break
            out.append(_decode_payload(bytes(self._buf[_HEADER.size : end])))
            del self._buf[:end]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def iter_frames(chunks) -> Iterator[ProtocolMessage]:
    """Decode frames from an iterable of byte chunks (e.g. socket reads)."""
    reader = FrameReader()
    for chunk in chunks:
        yield from reader.feed(chunk)
    if reader.pending:
        raise FrameError(f"stream ended inside a frame ({reader.pending} bytes left)")
