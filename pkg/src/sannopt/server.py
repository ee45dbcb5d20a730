"""Wire-protocol server wrapping an in-process experiment.

Serves one connection at a time (the protocol allows one in-flight request,
so there is nothing to parallelise). Malformed inbound lines get an error
reply and the connection stays up; a shutdown message or EOF ends the
connection and the server goes back to listening.
"""

from __future__ import annotations

import json
import socket
import threading

from .experiment import WIRE_VERSION, encode_line
from .spaces import ParameterSpace


class ExperimentServer:
    def __init__(self, fn, space: ParameterSpace, host: str = "127.0.0.1", port: int = 0):
        self._fn = fn
        self.space = space
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(1)
        self.host, self.port = self._listener.getsockname()
        self._stop = threading.Event()

    def _hello(self) -> dict:
        return {
            "type": "hello",
            "version": WIRE_VERSION,
            "dim": self.space.dim,
            "lower": [float(v) for v in self.space.lower],
            "upper": [float(v) for v in self.space.upper],
        }

    def _reply(self, conn: socket.socket, obj: dict) -> None:
        conn.sendall(encode_line(obj))

    def _serve_connection(self, conn: socket.socket) -> None:
        with conn, conn.makefile("rb") as rfile:
            self._reply(conn, self._hello())
            while not self._stop.is_set():
                line = rfile.readline()
                if not line:
                    return
                try:
                    msg = json.loads(line.decode("utf-8"))
                    if not isinstance(msg, dict):
                        raise ValueError("not a JSON object")
                except (UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
                    self._reply(conn, {"type": "error", "id": 0, "message": f"bad line: {exc}"})
                    continue
                kind = msg.get("type")
                if kind == "shutdown":
                    return
                if kind != "eval":
                    self._reply(conn, {"type": "error", "id": int(msg.get("id", 0) or 0), "message": f"unexpected type {kind!r}"})
                    continue
                request_id = msg.get("id", 0)
                params = msg.get("params")
                if not isinstance(params, list) or len(params) != self.space.dim:
                    self._reply(conn, {"type": "error", "id": int(request_id or 0), "message": "params length mismatch"})
                    continue
                try:
                    x = self.space.clamp([float(v) for v in params])
                    cost, bad = self._fn(x)
                except Exception as exc:  # keep the lab loop alive on cost-side bugs
                    self._reply(conn, {"type": "error", "id": int(request_id), "message": str(exc)})
                    continue
                self._reply(conn, {"type": "result", "id": int(request_id), "cost": float(cost), "bad": bool(bad)})

    def serve_one(self) -> None:
        """Accept a single connection, serve it to completion."""
        conn, _ = self._listener.accept()
        try:
            self._serve_connection(conn)
        except OSError:
            pass

    def serve_forever(self) -> None:
        while not self._stop.is_set():
            try:
                self.serve_one()
            except OSError:
                if self._stop.is_set():
                    return
                raise

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
