"""Newline-delimited JSON detector protocol: client and reference stub server.

Request:  ``{"id": int, "width": W, "height": H, "pixels": base64(RGB8 row-major)}``
Response: ``{"id": same int, "detections": [{"x1", "y1", "x2", "y2", "conf", "label"}, ...]}``

Endpoints are ``tcp://host:port`` or ``stdio:<command line>`` (the command is
started as a subprocess and spoken to over its stdin/stdout).
"""
from __future__ import annotations

import base64
import binascii
import json
import os
import selectors
import shlex
import socket
import socketserver
import subprocess
import sys
import threading
import time
from typing import BinaryIO

import numpy as np

from .detector import BBox, Detection, person_detector
from .errors import ConfigError, ProtocolError
from .imageio import quantize

__all__ = [
    "ExternalDetector",
    "STUB_MODES",
    "decode_request",
    "encode_request",
    "parse_response",
    "serve_stream",
    "serve_tcp",
    "stub_reply",
]

STUB_MODES = ("constant", "echo", "toy", "malformed", "wrong-id", "silent")
MAX_LINE = 64 * 1024 * 1024


def encode_request(req_id: int, image) -> bytes:
    px = quantize(image)
    if px.ndim != 3 or px.shape[2] != 3:
        raise ConfigError(f"detector input must be (H, W, 3), got {px.shape}")
    H, W = px.shape[:2]
    msg = {"id": int(req_id), "width": W, "height": H, "pixels": base64.b64encode(px.tobytes()).decode("ascii")}
    return json.dumps(msg, separators=(",", ":")).encode() + b"\n"


def decode_request(line: bytes) -> tuple[int, np.ndarray]:
    try:
        msg = json.loads(line)
        req_id, W, H = int(msg["id"]), int(msg["width"]), int(msg["height"])
        raw = base64.b64decode(msg["pixels"], validate=True)
    except (ValueError, KeyError, TypeError, binascii.Error) as exc:
        raise ProtocolError(f"malformed request: {exc}") from None
    if len(raw) != 3 * W * H:
        raise ProtocolError(f"request {req_id}: {len(raw)} pixel bytes for a {W}x{H} image")
    return req_id, np.frombuffer(raw, np.uint8).reshape(H, W, 3).astype(float) / 255.0


def parse_response(line: bytes, expect_id: int) -> list[Detection]:
    try:
        msg = json.loads(line)
    except ValueError as exc:
        raise ProtocolError(f"response to request {expect_id} is not JSON: {exc}") from None
    if not isinstance(msg, dict) or "id" not in msg or "detections" not in msg:
        raise ProtocolError(f"response to request {expect_id} lacks id/detections")
    if msg["id"] != expect_id:
        raise ProtocolError(f"response id {msg['id']!r} does not match request id {expect_id}")
    if not isinstance(msg["detections"], list):
        raise ProtocolError(f"response {expect_id}: detections must be a list")
    out = []
    for k, d in enumerate(msg["detections"]):
        try:
            if not isinstance(d["label"], str):
                raise TypeError("label must be a string")
            out.append(Detection.from_dict(d))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"response {expect_id}, detection {k}: {exc}") from None
    return out


class ExternalDetector:
    """Client for one endpoint.  Requests on one instance are serialised."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = float(timeout)
        self._lock = threading.Lock()
        self._next_id = 0
        self._buf = b""
        self._proc = None
        self._sock = None
        if endpoint.startswith("tcp://"):
            host, _, port = endpoint[len("tcp://"):].rpartition(":")
            try:
                self._sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=self.timeout)
            except (OSError, ValueError) as exc:
                raise ProtocolError(f"cannot connect to {endpoint}: {exc}") from None
            self._sock.settimeout(self.timeout)
        elif endpoint.startswith("stdio:"):
            argv = shlex.split(endpoint[len("stdio:"):])
            if not argv:
                raise ConfigError("stdio endpoint needs a command")
            try:
                self._proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
            except OSError as exc:
                raise ProtocolError(f"cannot start {argv[0]!r}: {exc}") from None
            self._sel = selectors.DefaultSelector()
            self._sel.register(self._proc.stdout, selectors.EVENT_READ)
        else:
            raise ConfigError(f"unknown endpoint {endpoint!r}; use tcp://host:port or stdio:<command>")

    def _send(self, data: bytes):
        try:
            if self._sock is not None:
                self._sock.sendall(data)
            else:
                self._proc.stdin.write(data)
                self._proc.stdin.flush()
        except OSError as exc:
            raise ProtocolError(f"{self.endpoint}: send failed: {exc}") from None

    def _chunk(self, deadline: float) -> bytes:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise ProtocolError(f"{self.endpoint}: timed out after {self.timeout} s")
        if self._sock is not None:
            self._sock.settimeout(remaining)
            try:
                return self._sock.recv(65536)
            except socket.timeout:
                raise ProtocolError(f"{self.endpoint}: timed out after {self.timeout} s") from None
            except OSError as exc:
                raise ProtocolError(f"{self.endpoint}: receive failed: {exc}") from None
        if not self._sel.select(remaining):
            raise ProtocolError(f"{self.endpoint}: timed out after {self.timeout} s")
        return os.read(self._proc.stdout.fileno(), 65536)

    def _readline(self) -> bytes:
        deadline = time.monotonic() + self.timeout
        while b"\n" not in self._buf:
            if len(self._buf) > MAX_LINE:
                raise ProtocolError(f"{self.endpoint}: response line too long")
            chunk = self._chunk(deadline)
            if not chunk:
                raise ProtocolError(f"{self.endpoint}: connection closed by detector")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line

    def detect(self, image) -> list[Detection]:
        with self._lock:
            req_id = self._next_id
            self._next_id += 1
            self._send(encode_request(req_id, image))
            return parse_response(self._readline(), req_id)

    def close(self):
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
            self._sel.close()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


# ---------------------------------------------------------------- stub server

def stub_reply(line: bytes, mode: str = "constant", conf: float = 0.7) -> bytes | None:
    """The stub's response line for one request (None: send nothing)."""
    if mode not in STUB_MODES:
        raise ConfigError(f"unknown stub mode {mode!r}")
    req_id, image = decode_request(line)
    H, W = image.shape[:2]
    if mode == "silent":
        return None
    if mode == "malformed":
        return b'{"id": ' + str(req_id).encode() + b', "detections": [\n'
    if mode == "toy":
        det = person_detector()
        dets = det.detect(image) if H >= det.template.shape[0] and W >= det.template.shape[1] else []
    elif mode == "echo":
        # full-frame box whose confidence is the mean byte value, so content is checkable
        dets = [Detection(BBox(0.0, 0.0, float(W), float(H)), float(np.round(image * 255).mean() / 255.0))]
    else:
        dets = [Detection(BBox(0.0, 0.0, float(W), float(H)), conf)]
    out_id = req_id + 1 if mode == "wrong-id" else req_id
    msg = {"id": out_id, "detections": [d.to_dict() for d in dets]}
    return json.dumps(msg, separators=(",", ":")).encode() + b"\n"


def serve_stream(inp: BinaryIO, out: BinaryIO, mode: str = "constant", conf: float = 0.7) -> int:
    """Answer requests line by line until EOF; returns the number served."""
    n = 0
    for line in inp:
        if not line.strip():
            continue
        reply = stub_reply(line, mode, conf)
        n += 1
        if reply is not None:
            out.write(reply)
            out.flush()
    return n


def serve_tcp(host: str = "127.0.0.1", port: int = 0, mode: str = "constant", conf: float = 0.7,
              ready=None) -> None:
    """Serve forever, one thread per connection.  ``ready(address)`` fires once bound."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            try:
                serve_stream(self.rfile, self.wfile, mode, conf)
            except (ProtocolError, OSError) as exc:
                print(f"stub-detector: {exc}", file=sys.stderr)

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    with Server((host, port), Handler) as srv:
        if ready is not None:
            ready(srv.server_address)
        srv.serve_forever()
