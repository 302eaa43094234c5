"""Newline-delimited JSON wire protocol between nodes and the ingest service.

Client -> server::

    {"t":"hello","sensor":"s1","key":"..."}
    {"t":"batch","sensor":"s1","seq":0,"frames":[[1700000000,55012],...]}
    {"t":"snippet","sensor":"s1","sid":0,"start":1700000123,"duration":10,
     "digest":"ab12...","tags":["Jackhammer"]}

Server -> client::

    {"t":"ack","seq":0}          batch stored (or already stored)
    {"t":"ack","sid":0}          snippet record stored
    {"t":"err","code":"AUTH","detail":"..."}

Error codes: AUTH (bad key, connection closed), PROTO (malformed message,
connection closed), RANGE (frame level outside the sensor range, batch
rejected, connection kept), SEQ (sequence number beyond the dedup window,
batch rejected, connection kept).

Levels are integer mdB, timestamps integer epoch seconds.
"""

from __future__ import annotations

import json

from ..core import LEVEL_MAX, LEVEL_MIN

DEFAULT_PORT = 7477
MAX_LINE = 1 << 20
SNIPPET_SECONDS = 10

AUTH = "AUTH"
PROTO = "PROTO"
RANGE = "RANGE"
SEQ = "SEQ"


class ProtocolError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


def encode(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode("utf-8")


def decode(line: bytes) -> dict:
    try:
        msg = json.loads(line)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(PROTO, f"malformed JSON: {e}") from None
    if not isinstance(msg, dict) or not isinstance(msg.get("t"), str):
        raise ProtocolError(PROTO, "message must be an object with a string 't' field")
    return msg


def hello(sensor: str, key: str) -> dict:
    return {"t": "hello", "sensor": sensor, "key": key}


def batch(sensor: str, seq: int, frames) -> dict:
    return {"t": "batch", "sensor": sensor, "seq": seq, "frames": [[t, lv] for t, lv in frames]}


def snippet(sensor: str, sid: int, start: int, digest: str, tags, duration: int = SNIPPET_SECONDS) -> dict:
    return {"t": "snippet", "sensor": sensor, "sid": sid, "start": start, "duration": duration,
            "digest": digest, "tags": list(tags)}


def ack(seq: int) -> dict:
    return {"t": "ack", "seq": seq}


def ack_snippet(sid: int) -> dict:
    return {"t": "ack", "sid": sid}


def err(code: str, detail: str) -> dict:
    return {"t": "err", "code": code, "detail": detail}


def _int(msg, key):
    v = msg.get(key)
    if type(v) is not int or v < 0:
        raise ProtocolError(PROTO, f"'{key}' must be a non-negative integer")
    return v


def _str(msg, key):
    v = msg.get(key)
    if not isinstance(v, str) or not v:
        raise ProtocolError(PROTO, f"'{key}' must be a non-empty string")
    return v


def check_hello(msg: dict) -> tuple[str, str]:
    if msg["t"] != "hello":
        raise ProtocolError(PROTO, "expected hello before any data message")
    key = msg.get("key")
    if not isinstance(key, str):
        raise ProtocolError(PROTO, "'key' must be a string")
    return _str(msg, "sensor"), key


def check_batch(msg: dict) -> tuple[str, int, list]:
    """Validate a batch message; returns ``(sensor, seq, frames)``.

    Frames must be ``[t, level]`` integer pairs strictly increasing in time.
    Levels outside the sensor range raise a RANGE error.
    """
    sensor = _str(msg, "sensor")
    seq = _int(msg, "seq")
    frames = msg.get("frames")
    if not isinstance(frames, list):
        raise ProtocolError(PROTO, "'frames' must be a list")
    prev = -1
    bad_level = None
    for f in frames:
        if type(f) is not list or len(f) != 2:
            raise ProtocolError(PROTO, "each frame must be a [t, level] pair")
        t, lv = f
        if type(t) is not int or type(lv) is not int:
            raise ProtocolError(PROTO, "frame fields must be integers")
        if t <= prev:
            raise ProtocolError(PROTO, "frame timestamps must be strictly increasing")
        prev = t
        if bad_level is None and not LEVEL_MIN <= lv <= LEVEL_MAX:
            bad_level = (t, lv)
    if bad_level is not None:
        raise ProtocolError(RANGE, f"seq {seq}: level {bad_level[1]} mdB at t={bad_level[0]} outside [{LEVEL_MIN}, {LEVEL_MAX}]")
    return sensor, seq, frames


def check_snippet(msg: dict) -> dict:
    _str(msg, "sensor")
    _int(msg, "sid")
    _int(msg, "start")
    if msg.get("duration") != SNIPPET_SECONDS:
        raise ProtocolError(PROTO, f"snippet duration must be {SNIPPET_SECONDS}")
    if not isinstance(msg.get("digest"), str):
        raise ProtocolError(PROTO, "'digest' must be a string")
    tags = msg.get("tags")
    if not isinstance(tags, list) or not all(isinstance(x, str) for x in tags):
        raise ProtocolError(PROTO, "'tags' must be a list of strings")
    return msg
