"""Loopback request/response service speaking the binary wire format.

Two roles: a server role answering login requests from its provisioned
memory, and an RC role answering card-update and database-update requests.
The RC endpoints model the trusted registration channel and are meant to be
bound to loopback.  State mutations are serialized per instance.
"""
from __future__ import annotations

import socketserver
import threading
import time
from typing import Callable

from . import protocol, registry, wire
from .protocol import ProtocolError


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        while True:
            try:
                raw = wire.read_frame(self.rfile)
            except wire.CodecError as exc:
                wire.write_frame(self.wfile, f"CodecError: {exc}")
                continue
            except (ConnectionError, OSError):
                return
            if raw is None:
                return
            try:
                reply = self.server.app.dispatch(raw)  # type: ignore[attr-defined]
            except wire.CodecError as exc:
                reply = f"CodecError: {exc}"
            except ProtocolError as exc:
                reply = exc.kind
            try:
                wire.write_frame(self.wfile, reply)
            except (ConnectionError, OSError):
                return


class _ThreadingServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class ServerApp:
    """Answers login requests on behalf of one provisioned server."""

    def __init__(
        self,
        trm: protocol.TamperResistantMemory,
        server_id: str,
        server_loc: str,
        delta_t: int = 5,
        vt_duration: int = protocol.DEFAULT_VT_DURATION,
        now_fn: Callable[[], float] = time.time,
    ) -> None:
        self.trm = trm
        self.server_id = server_id
        self.server_loc = server_loc
        self.delta_t = delta_t
        self.vt_duration = vt_duration
        self.now_fn = now_fn
        self._lock = threading.Lock()

    def dispatch(self, raw: bytes) -> wire.Frame:
        msg_type, msg = wire.decode_frame(raw)
        if msg_type != wire.MSG_LOGIN_REQUEST:
            raise wire.CodecError(f"server role does not accept frame type 0x{msg_type:02x}")
        with self._lock:
            resp, _key = protocol.server_handle_login(
                self.trm, self.server_id, self.server_loc, msg,
                t2=int(self.now_fn()), delta_t=self.delta_t, vt_duration=self.vt_duration,
            )
        return resp


class RcApp:
    """Answers card-update and database-update requests from the RC database."""

    def __init__(
        self,
        rc: protocol.RcState,
        rc_path: str | None = None,
        delta_t: int = 5,
        now_fn: Callable[[], float] = time.time,
    ) -> None:
        self.rc = rc
        self.rc_path = rc_path
        self.delta_t = delta_t
        self.now_fn = now_fn
        self._lock = threading.Lock()

    def dispatch(self, raw: bytes) -> wire.Frame:
        msg_type, msg = wire.decode_frame(raw)
        now = int(self.now_fn())
        with self._lock:
            if msg_type == wire.MSG_UPDATE_REQUEST:
                return protocol.rc_handle_update(self.rc, msg, t5=now, delta_t=self.delta_t)
            if msg_type == wire.MSG_DB_UPDATE_REQUEST:
                delta = protocol.rc_handle_db_update(self.rc, msg, t7=now, delta_t=self.delta_t)
                if self.rc_path:
                    registry.store_rc(self.rc, self.rc_path)
                return delta
        raise wire.CodecError(f"rc role does not accept frame type 0x{msg_type:02x}")


def start_server(app: ServerApp | RcApp, host: str = "127.0.0.1", port: int = 0) -> _ThreadingServer:
    """Bind and return a threading TCP server; caller drives serve_forever()."""
    srv = _ThreadingServer((host, port), _Handler)
    srv.app = app  # type: ignore[attr-defined]
    return srv


def serve_forever_in_thread(srv: _ThreadingServer) -> threading.Thread:
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    return thread
