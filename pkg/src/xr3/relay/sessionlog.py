"""Append-only session log.

A log file is an 8-byte container magic (``XR3LOG1\\n``) followed by wire
frames exactly as broadcast/ingested (see :mod:`xr3.relay.protocol`), in
append order. Logged bytes are byte-identical to the wire bytes, so a
log is replayable and verifiable without any re-encoding.
"""

from __future__ import annotations

import os
from pathlib import Path

from ..errors import ProtocolError
from . import protocol
from .protocol import Message

LOG_MAGIC = b"XR3LOG1\n"


class SessionLogWriter:
    """Serialized appender; one writer per file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "wb")
        self._fh.write(LOG_MAGIC)
        self.records = 0

    def append(self, frame_bytes: bytes) -> None:
        self._fh.write(frame_bytes)
        self.records += 1

    def append_message(self, msg_type: int, seq: int, timestamp_us: int,
                       payload: bytes = b"") -> bytes:
        data = protocol.encode_message(msg_type, seq, timestamp_us, payload)
        self.append(data)
        return data

    def flush(self) -> None:
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SessionLogReader:
    """Sequential reader; iterates Messages in append order."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            data = fh.read()
        if data[:8] != LOG_MAGIC:
            raise ProtocolError(f"{self.path}: not a session log "
                                f"(bad container magic {data[:8]!r})")
        self._data = data
        self._start = 8

    def __iter__(self):
        offset = self._start
        data = self._data
        while offset < len(data):
            msg, offset = protocol.decode_message(data, offset)
            yield msg

    def messages(self) -> list[Message]:
        return list(self)

    def raw_frames(self) -> list[bytes]:
        """Exact frame byte strings, in order."""
        out = []
        offset = self._start
        data = self._data
        while offset < len(data):
            _, end = protocol.decode_message(data, offset)
            out.append(bytes(data[offset:end]))
            offset = end
        return out
