"""Asyncio TCP front end for the ingest service."""

from __future__ import annotations

import asyncio
import hmac
import logging
import time

from ..lattice import DuplicateFrameError
from . import protocol
from .protocol import ProtocolError
from .service import Ingestor

logger = logging.getLogger(__name__)


class IngestServer:
    """Accepts node sessions and hands validated messages to one :class:`Ingestor`.

    Message application is synchronous inside the event loop, so the
    ingestor sees a single serialized stream of writes whatever the number
    of sessions.
    """

    def __init__(self, ingestor: Ingestor, key: str, host: str = "127.0.0.1", port: int = protocol.DEFAULT_PORT):
        self.ingestor = ingestor
        self.key = key
        self.host = host
        self.port = port
        self.sessions = 0
        self.auth_failures = 0
        self._server: asyncio.base_events.Server | None = None
        self._tasks: set[asyncio.Task] = set()

    async def start(self) -> IngestServer:
        self._server = await asyncio.start_server(self._on_connect, self.host, self.port, limit=protocol.MAX_LINE)
        self.port = self._server.sockets[0].getsockname()[1]
        logger.info("ingest listening on %s:%d", self.host, self.port)
        return self

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
        for task in list(self._tasks):
            task.cancel()
        if self._tasks:
            await asyncio.gather(*self._tasks, return_exceptions=True)

    async def __aenter__(self):
        return await self.start()

    async def __aexit__(self, *exc):
        await self.close()

    async def _on_connect(self, reader, writer):
        task = asyncio.current_task()
        self._tasks.add(task)
        try:
            await self.handle_session(reader, writer)
        finally:
            self._tasks.discard(task)

    async def handle_session(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self.sessions += 1
        peer = writer.get_extra_info("peername")
        sensor = None
        try:
            while True:
                try:
                    line = await reader.readline()
                except (ValueError, asyncio.LimitOverrunError):
                    raise ProtocolError(protocol.PROTO, "line too long") from None
                if not line:
                    break
                if not line.endswith(b"\n"):
                    raise ProtocolError(protocol.PROTO, "truncated message")
                msg = protocol.decode(line)
                if sensor is None:
                    sensor, key = protocol.check_hello(msg)
                    if not hmac.compare_digest(key.encode(), self.key.encode()):
                        self.auth_failures += 1
                        logger.warning("AUTH refused for sensor %r from %s", sensor, peer)
                        writer.write(protocol.encode(protocol.err(protocol.AUTH, "bad key")))
                        await _linger(reader, writer)
                        break
                    continue
                reply = self._dispatch(sensor, msg)
                writer.write(protocol.encode(reply))
                await writer.drain()
        except ProtocolError as e:
            logger.warning("closing session %s (%s): %s", peer, sensor, e)
            writer.write(protocol.encode(protocol.err(e.code, e.detail)))
            await _linger(reader, writer)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            try:
                await writer.drain()
                writer.close()
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    def _dispatch(self, sensor: str, msg: dict) -> dict:
        """Apply one data message; rejections that keep the session open become err replies."""
        kind = msg["t"]
        if kind == "batch":
            try:
                claimed, seq, frames = protocol.check_batch(msg)
            except ProtocolError as e:
                if e.code == protocol.RANGE:
                    return protocol.err(e.code, e.detail)
                raise
            self._own(sensor, claimed)
            try:
                self.ingestor.apply_batch(sensor, seq, frames, rx=time.time())
            except ProtocolError as e:
                return protocol.err(e.code, e.detail)
            except DuplicateFrameError as e:
                raise ProtocolError(protocol.PROTO, f"seq {seq}: {e}") from None
            return protocol.ack(seq)
        if kind == "snippet":
            protocol.check_snippet(msg)
            self._own(sensor, msg["sensor"])
            self.ingestor.apply_snippet(msg, rx=time.time())
            return protocol.ack_snippet(msg["sid"])
        raise ProtocolError(protocol.PROTO, f"unexpected message type {kind!r}")

    @staticmethod
    def _own(session_sensor: str, claimed: str) -> None:
        if claimed != session_sensor:
            raise ProtocolError(protocol.PROTO, f"message for {claimed!r} on session of {session_sensor!r}")


async def _linger(reader, writer, timeout: float = 1.0) -> None:
    """Half-close after an error reply and discard input until the peer hangs up.

    Closing with unread input would reset the connection and could destroy
    the error line before the client reads it.
    """
    try:
        await writer.drain()
        if writer.can_write_eof():
            writer.write_eof()
        await asyncio.wait_for(_discard(reader), timeout)
    except (ConnectionError, OSError, asyncio.TimeoutError):
        pass


async def _discard(reader) -> None:
    while await reader.read(65536):
        pass
