"""A line-aware TCP proxy that drops acknowledgements and kills connections on a seeded schedule."""

from __future__ import annotations

import asyncio
import json
import random


class FaultProxy:
    """Sits between nodes and the ingest server.

    Every client line after the hello is forwarded, then with probability
    ``kill_rate`` the connection is torn down before the reply can come back.
    Every ``ack`` line from the server is dropped with probability
    ``drop_ack_rate``.
    """

    def __init__(self, target_host: str, target_port: int, drop_ack_rate: float = 0.0,
                 kill_rate: float = 0.0, seed: int = 0, host: str = "127.0.0.1", port: int = 0):
        self.target = (target_host, target_port)
        self.drop_ack_rate = drop_ack_rate
        self.kill_rate = kill_rate
        self.rng = random.Random(seed)
        self.host = host
        self.port = port
        self.acks_dropped = 0
        self.kills = 0
        self._server = None
        self._tasks: set[asyncio.Task] = set()

    async def start(self) -> FaultProxy:
        self._server = await asyncio.start_server(self._on_connect, self.host, self.port, limit=1 << 20)
        self.port = self._server.sockets[0].getsockname()[1]
        return self

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for t in list(self._tasks):
            t.cancel()
        if self._tasks:
            await asyncio.gather(*self._tasks, return_exceptions=True)

    async def __aenter__(self):
        return await self.start()

    async def __aexit__(self, *exc):
        await self.close()

    async def _on_connect(self, c_reader, c_writer):
        task = asyncio.current_task()
        self._tasks.add(task)
        try:
            s_reader, s_writer = await asyncio.open_connection(*self.target, limit=1 << 20)
        except OSError:
            c_writer.close()
            self._tasks.discard(task)
            return
        # either direction finishing (EOF or a kill) ends the whole connection
        up = asyncio.ensure_future(self._upstream(c_reader, s_writer))
        down = asyncio.ensure_future(self._downstream(s_reader, c_writer))
        try:
            await asyncio.wait({up, down}, return_when=asyncio.FIRST_COMPLETED)
        finally:
            for t in (up, down):
                t.cancel()
            for w in (c_writer, s_writer):
                w.close()
            await asyncio.gather(up, down, return_exceptions=True)
            self._tasks.discard(task)

    async def _upstream(self, reader, writer):
        first = True
        while True:
            line = await reader.readline()
            if not line:
                return
            writer.write(line)
            await writer.drain()
            if not first and self.rng.random() < self.kill_rate:
                self.kills += 1
                return
            first = False

    async def _downstream(self, reader, writer):
        while True:
            line = await reader.readline()
            if not line:
                return
            if self.rng.random() < self.drop_ack_rate and _is_ack(line):
                self.acks_dropped += 1
                continue
            writer.write(line)
            await writer.drain()


def _is_ack(line: bytes) -> bool:
    try:
        return json.loads(line).get("t") == "ack"
    except (ValueError, AttributeError):
        return False
