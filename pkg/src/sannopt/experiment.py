"""Experiment boundary: in-process handles, the TCP wire client, probe costs.

Wire protocol (newline-delimited UTF-8 JSON, one object per line, compact):

  on connect, experiment sends  {"type":"hello","version":1,"dim":N,"lower":[...],"upper":[...]}
  optimizer sends               {"type":"eval","id":<u64>,"params":[<f64> x N]}
  experiment replies            {"type":"result","id":<u64>,"cost":<f64>,"bad":<bool>}
                            or  {"type":"error","id":<u64>,"message":"..."}
  either side may send          {"type":"shutdown"}    before closing

ids must echo exactly and only one request is in flight at a time; an
out-of-order reply is a protocol violation. Numbers carry full round-trip
precision, so both ends of a deterministic loop see identical doubles.
"""

from __future__ import annotations

import json
import socket
from dataclasses import dataclass

import numpy as np

from .spaces import ParameterSpace

WIRE_VERSION = 1


class TransportError(RuntimeError):
    """Retryable I/O failure: timeout, dropped connection, remote error reply."""


class ProtocolError(RuntimeError):
    """The peer violated the wire protocol; the session cannot continue."""


def encode_line(obj: dict) -> bytes:
    return (json.dumps(obj, separators=(",", ":")) + "\n").encode("utf-8")


def decode_line(line: bytes) -> dict:
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable wire line: {exc}") from exc
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolError("wire line is not an object with a 'type' field")
    return obj


@dataclass
class ProbeTrace:
    """Photodetector samples around one probe pulse.

    reference_integral is the integral (volt-seconds) of the matching
    no-atoms reference pulse; dividing by it cancels slow laser-power drift.
    """

    samples: np.ndarray
    dt: float
    window: tuple[int, int]
    reference_integral: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        i0, i1 = self.window
        if not (0 <= i0 < i1 < self.samples.size):
            raise ValueError("window must lie within the trace")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.reference_integral <= 0:
            raise ValueError("reference integral must be positive")


def probe_cost(trace: ProbeTrace) -> float:
    """Windowed trapezoidal pulse integral over the reference integral.

    With the reference defined as the same integral of the no-atoms pulse the
    result is a dimensionless transmission fraction: 1 means full transmission
    (no atoms), 0 total absorption; larger = worse.
    """
    i0, i1 = trace.window
    area = float(np.trapezoid(trace.samples[i0 : i1 + 1], dx=trace.dt))
    return area / trace.reference_integral


class InProcessExperiment:
    """Wraps a plain cost function (params -> (cost, bad)) as an experiment."""

    kind = "in_process"

    def __init__(self, fn, space: ParameterSpace):
        self._fn = fn
        self.space = space
        self.dim = space.dim

    def evaluate(self, x) -> tuple[float, bool]:
        cost, bad = self._fn(np.asarray(x, dtype=float))
        return float(cost), bool(bad)

    def reset(self) -> None:
        pass

    def close(self) -> None:
        pass


class TcpExperiment:
    """Client side of the wire protocol; the experiment server owns the hardware."""

    kind = "tcp"

    def __init__(self, address: str, expected_dim: int | None = None, timeout: float = 30.0):
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"address must be host:port, got {address!r}")
        self._addr = (host, int(port))
        self._timeout = float(timeout)
        self._expected_dim = expected_dim
        self._sock = None
        self._rfile = None
        self._next_id = 0
        self.dim = None
        self.lower = None
        self.upper = None
        self._connect()

    def _connect(self) -> None:
        try:
            self._sock = socket.create_connection(self._addr, timeout=self._timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {self._addr}: {exc}") from exc
        self._rfile = self._sock.makefile("rb")
        hello = self._read()
        if hello.get("type") != "hello" or int(hello.get("version", -1)) != WIRE_VERSION:
            raise ProtocolError(f"expected hello v{WIRE_VERSION}, got {hello}")
        try:
            self.dim = int(hello["dim"])
            self.lower = np.asarray(hello["lower"], dtype=float)
            self.upper = np.asarray(hello["upper"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed hello: {exc}") from exc
        if self.lower.shape != (self.dim,) or self.upper.shape != (self.dim,):
            raise ProtocolError("hello bounds do not match dim")
        if self._expected_dim is not None and self.dim != self._expected_dim:
            raise ProtocolError(
                f"experiment dim {self.dim} does not match configured dim {self._expected_dim}"
            )

    def _read(self) -> dict:
        try:
            line = self._rfile.readline()
        except (OSError, socket.timeout) as exc:
            raise TransportError(f"read failed: {exc}") from exc
        if not line:
            raise TransportError("connection closed by experiment")
        return decode_line(line)

    def _write(self, obj: dict) -> None:
        try:
            self._sock.sendall(encode_line(obj))
        except OSError as exc:
            raise TransportError(f"write failed: {exc}") from exc

    def evaluate(self, x) -> tuple[float, bool]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got {x.shape}")
        request_id = self._next_id
        self._next_id += 1
        self._write({"type": "eval", "id": request_id, "params": [float(v) for v in x]})
        reply = self._read()
        kind = reply.get("type")
        if kind == "error":
            if reply.get("id") not in (request_id, 0):
                raise ProtocolError(f"error reply for unknown id {reply.get('id')}")
            raise TransportError(f"experiment error: {reply.get('message', '')}")
        if kind != "result":
            raise ProtocolError(f"expected result, got {reply}")
        if reply.get("id") != request_id:
            raise ProtocolError(
                f"out-of-order reply: sent id {request_id}, got {reply.get('id')}"
            )
        try:
            return float(reply["cost"]), bool(reply["bad"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed result: {exc}") from exc

    def reset(self) -> None:
        """Drop and re-establish the connection (used for the one retry)."""
        self.close(send_shutdown=False)
        self._connect()

    def close(self, send_shutdown: bool = True) -> None:
        if self._sock is not None:
            if send_shutdown:
                try:
                    self._sock.sendall(encode_line({"type": "shutdown"}))
                except OSError:
                    pass
            try:
                self._rfile.close()
                self._sock.close()
            except OSError:
                pass
            self._sock = None
            self._rfile = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
