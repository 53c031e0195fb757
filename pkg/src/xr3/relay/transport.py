"""Message-stream transports.

The relay speaks discrete binary frames over any bidirectional message
stream. Two implementations: an in-process loopback (asyncio queues; used
by the simulators and for latency measurements without network noise)
and a WebSocket server (the real deployment transport; binary messages
carry one wire frame each).
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field


class ConnectionClosed(Exception):
    pass


@dataclass
class LoopbackConnection:
    """One side of an in-process duplex pipe."""
    _rx: asyncio.Queue
    _tx: asyncio.Queue
    closed: bool = False

    async def send(self, data: bytes) -> None:
        if self.closed:
            raise ConnectionClosed()
        await self._tx.put(data)

    async def recv(self) -> bytes | None:
        """Next message, or None once the peer has closed."""
        if self.closed and self._rx.empty():
            return None
        item = await self._rx.get()
        if item is None:
            self.closed = True
            return None
        return item

    async def close(self) -> None:
        if not self.closed:
            self.closed = True
            await self._tx.put(None)

    def close_nowait(self) -> None:
        if not self.closed:
            self.closed = True
            self._tx.put_nowait(None)


def loopback_pair() -> tuple[LoopbackConnection, LoopbackConnection]:
    a_to_b: asyncio.Queue = asyncio.Queue()
    b_to_a: asyncio.Queue = asyncio.Queue()
    return (LoopbackConnection(b_to_a, a_to_b),
            LoopbackConnection(a_to_b, b_to_a))


@dataclass
class LoopbackListener:
    """In-process 'bind address': sessions accept from here, clients call
    :meth:`connect`."""
    _pending: asyncio.Queue = field(default_factory=asyncio.Queue)
    closed: bool = False

    async def connect(self) -> LoopbackConnection:
        if self.closed:
            raise ConnectionClosed("listener closed")
        client_side, server_side = loopback_pair()
        await self._pending.put(server_side)
        return client_side

    async def accept(self) -> LoopbackConnection | None:
        conn = await self._pending.get()
        return conn

    async def close(self) -> None:
        self.closed = True
        await self._pending.put(None)


class WebSocketConnection:
    """Adapter: websockets protocol object -> the connection interface."""

    def __init__(self, ws):
        self._ws = ws

    async def send(self, data: bytes) -> None:
        import websockets.exceptions
        try:
            await self._ws.send(data)
        except websockets.exceptions.ConnectionClosed as exc:
            raise ConnectionClosed() from exc

    async def recv(self) -> bytes | None:
        import websockets.exceptions
        try:
            data = await self._ws.recv()
        except websockets.exceptions.ConnectionClosed:
            return None
        if isinstance(data, str):
            data = data.encode("utf-8")
        return data

    async def close(self) -> None:
        await self._ws.close()


async def serve_websocket(handler, host: str, port: int):
    """Start a WebSocket server; ``handler(conn)`` runs per connection.
    Returns the server object (use ``server.sockets`` for the bound
    port, ``server.close()`` to stop)."""
    import websockets

    async def ws_handler(ws):
        await handler(WebSocketConnection(ws))

    return await websockets.serve(ws_handler, host, port, max_size=2 << 20)


async def connect_websocket(url: str) -> WebSocketConnection:
    import websockets
    ws = await websockets.connect(url, max_size=2 << 20)
    return WebSocketConnection(ws)
