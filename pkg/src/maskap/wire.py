"""Tagged binary frames and length-prefixed stream framing.

A frame is one type byte followed by a fixed-layout body.  On a stream
socket each frame is preceded by a 4-byte big-endian length; frames above
MAX_FRAME_LEN are rejected.
"""
from __future__ import annotations

import struct
from typing import BinaryIO

from .protocol import (
    DbUpdateRequest,
    LoginRequest,
    LoginResponse,
    UpdateRequest,
    UserListDelta,
)

MSG_LOGIN_REQUEST = 0x01
MSG_LOGIN_RESPONSE = 0x02
MSG_UPDATE_REQUEST = 0x03
MSG_DB_UPDATE_REQUEST = 0x04
MSG_LIST_PAYLOAD = 0x05
MSG_USER_LIST_DELTA = 0x06
MSG_ERROR = 0x7F

MAX_FRAME_LEN = 4096

Frame = (
    LoginRequest | LoginResponse | UpdateRequest | DbUpdateRequest | UserListDelta | bytes | str
)


class CodecError(Exception):
    pass


def encode_frame(msg: Frame) -> bytes:
    if isinstance(msg, LoginRequest):
        return bytes([MSG_LOGIN_REQUEST]) + msg.pack()
    if isinstance(msg, LoginResponse):
        return bytes([MSG_LOGIN_RESPONSE]) + msg.pack()
    if isinstance(msg, UpdateRequest):
        return bytes([MSG_UPDATE_REQUEST]) + msg.pack()
    if isinstance(msg, DbUpdateRequest):
        return bytes([MSG_DB_UPDATE_REQUEST]) + msg.pack()
    if isinstance(msg, UserListDelta):
        body = b"".join(uid + c for uid, c in msg.entries)
        return bytes([MSG_USER_LIST_DELTA]) + body
    if isinstance(msg, bytes):  # server list payload
        return bytes([MSG_LIST_PAYLOAD]) + msg
    if isinstance(msg, str):  # error code
        return bytes([MSG_ERROR]) + msg.encode("utf-8")
    raise CodecError(f"cannot encode {type(msg).__name__}")


def decode_frame(raw: bytes) -> tuple[int, Frame]:
    if not raw:
        raise CodecError("empty frame")
    msg_type, body = raw[0], raw[1:]
    try:
        if msg_type == MSG_LOGIN_REQUEST:
            return msg_type, LoginRequest.unpack(body)
        if msg_type == MSG_LOGIN_RESPONSE:
            return msg_type, LoginResponse.unpack(body)
        if msg_type == MSG_UPDATE_REQUEST:
            return msg_type, UpdateRequest.unpack(body)
        if msg_type == MSG_DB_UPDATE_REQUEST:
            return msg_type, DbUpdateRequest.unpack(body)
        if msg_type == MSG_USER_LIST_DELTA:
            if len(body) % 64 != 0:
                raise CodecError("user list delta body not a multiple of 64")
            entries = tuple(
                (body[i : i + 32], body[i + 32 : i + 64]) for i in range(0, len(body), 64)
            )
            return msg_type, UserListDelta(entries=entries)
        if msg_type == MSG_LIST_PAYLOAD:
            if len(body) == 0 or len(body) % 64 != 0:
                raise CodecError("list payload not a positive multiple of 64")
            return msg_type, body
        if msg_type == MSG_ERROR:
            return msg_type, body.decode("utf-8", errors="replace")
    except ValueError as exc:
        raise CodecError(str(exc)) from exc
    raise CodecError(f"unknown frame type 0x{msg_type:02x}")


def write_frame(stream: BinaryIO, msg: Frame) -> None:
    raw = encode_frame(msg)
    if len(raw) > MAX_FRAME_LEN:
        raise CodecError(f"frame of {len(raw)} bytes exceeds {MAX_FRAME_LEN}")
    stream.write(struct.pack(">I", len(raw)) + raw)
    stream.flush()


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def read_frame(stream: BinaryIO) -> bytes | None:
    """Read one length-prefixed frame; None on clean EOF.

    An oversized length is consumed and discarded, then CodecError is
    raised so the connection can answer with an error frame and continue.
    """
    header = _read_exact(stream, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_LEN:
        remaining = length
        while remaining > 0:
            chunk = stream.read(min(remaining, 65536))
            if not chunk:
                break
            remaining -= len(chunk)
        raise CodecError(f"frame of {length} bytes exceeds {MAX_FRAME_LEN}")
    raw = _read_exact(stream, length)
    if raw is None:
        raise CodecError("stream ended mid-frame")
    return raw
