"""Request handling and the serving loops.

One frame per line, newline-delimited JSON, UTF-8. A predict request is
``{"id", "prompt", "gen", "mask_id", "positions", "top_k"}``; the response
echoes the id and maps each queried generation index to ``{"tokens",
"probs", "tail_mass"}``. Any problem with a frame is answered with
``{"id": ..., "error": ...}`` and the connection stays open. A side
endpoint (``"op": "tokenize"`` with a ``text`` field) exposes the backend's
tokenizer and mask id, keeping the engine id-only.
"""

from __future__ import annotations

import json
import math
import socketserver
import sys
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .backends import PositionDistribution

MASS_TOLERANCE = 1e-6


@dataclass
class ServerConfig:
    backend: str = "stub"  # stub | checkpoint
    checkpoint: Optional[str] = None
    listen: str = "127.0.0.1:9155"  # host:port or "stdio"
    top_k_cap: int = 64
    vocab_size: int = 16  # stub backend only
    request_log: Optional[Path] = None

    def __post_init__(self):
        if self.top_k_cap < 1:
            raise ValueError("top_k cap must be >= 1")
        if self.backend not in ("stub", "checkpoint"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "checkpoint" and not self.checkpoint:
            raise ValueError("checkpoint backend needs a checkpoint identifier")


def build_backend(config: ServerConfig):
    if config.backend == "stub":
        from .backends import StubBackend

        return StubBackend(vocab_size=config.vocab_size)
    from .backends import CheckpointBackend

    return CheckpointBackend(config.checkpoint)


def _error(frame_id, message: str) -> dict:
    return {"id": frame_id, "error": str(message)}


def _checked_payload(dist: PositionDistribution) -> dict:
    """Renormalization guard: listed mass plus tail must be 1 within
    tolerance; drift beyond that is scaled out before the frame ships."""
    probs = [float(p) for p in dist.probs]
    tail = max(0.0, float(dist.tail_mass))
    total = math.fsum(probs) + tail
    if abs(total - 1.0) > MASS_TOLERANCE and total > 0:
        probs = [p / total for p in probs]
        tail = max(0.0, 1.0 - math.fsum(probs))
    return {"tokens": list(dist.tokens), "probs": probs, "tail_mass": tail}


def handle_frame(raw_line: bytes, backend, config: ServerConfig) -> dict:
    """Answer one frame; never raises, always returns a response frame."""
    try:
        frame = json.loads(raw_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        return _error(None, f"malformed frame: {exc}")
    if not isinstance(frame, dict):
        return _error(None, "frame must be a JSON object")
    frame_id = frame.get("id")
    if not isinstance(frame_id, str):
        return _error(None, "frame needs a string id")

    op = frame.get("op", "predict")
    if op == "tokenize":
        text = frame.get("text")
        if not isinstance(text, str):
            return _error(frame_id, "tokenize needs a text field")
        return {
            "id": frame_id,
            "tokens": backend.tokenize(text),
            "mask_id": backend.mask_id,
            "vocab_size": backend.vocab_size,
        }
    if op != "predict":
        return _error(frame_id, f"unknown op {op!r}")

    gen = frame.get("gen")
    positions = frame.get("positions")
    mask_id = frame.get("mask_id")
    prompt = frame.get("prompt", [])
    top_k = frame.get("top_k", config.top_k_cap)
    if not isinstance(gen, list) or not all(isinstance(t, int) for t in gen):
        return _error(frame_id, "gen must be a list of token ids")
    if not isinstance(positions, list) or not all(isinstance(p, int) for p in positions):
        return _error(frame_id, "positions must be a list of gen indices")
    if not isinstance(mask_id, int):
        return _error(frame_id, "mask_id must be a token id")
    if not isinstance(prompt, list) or not all(isinstance(t, int) for t in prompt):
        return _error(frame_id, "prompt must be a list of token ids")
    if not isinstance(top_k, int) or top_k < 1:
        return _error(frame_id, "top_k must be a positive integer")
    for pos in positions:
        if not 0 <= pos < len(gen):
            return _error(frame_id, f"position {pos} outside the generation region")
        if gen[pos] != mask_id:
            return _error(frame_id, f"position {pos} is not masked")

    try:
        predicted = backend.forward(
            prompt, gen, mask_id, positions, min(top_k, config.top_k_cap), frame_id
        )
    except Exception as exc:  # backend failure must not kill the connection
        return _error(frame_id, f"backend failure: {exc}")
    dists = {str(pos): _checked_payload(dist) for pos, dist in predicted.items()}
    return {"id": frame_id, "dists": dists}


class _LogWriter:
    def __init__(self, path: Optional[Path]):
        self.path = path
        self._lock = threading.Lock()

    def record(self, raw_line: bytes) -> None:
        if self.path is None:
            return
        with self._lock, open(self.path, "ab") as fh:
            fh.write(raw_line.rstrip(b"\n") + b"\n")


class PredictionServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, backend, config: ServerConfig):
        self.backend = backend
        self.config = config
        self.log = _LogWriter(config.request_log)
        super().__init__(address, _Handler)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            line = self.rfile.readline()
            if not line:
                return
            self.server.log.record(line)
            response = handle_frame(line, self.server.backend, self.server.config)
            self.wfile.write(json.dumps(response, separators=(",", ":")).encode("utf-8") + b"\n")
            self.wfile.flush()


def serve_stdio(config: ServerConfig, backend=None, stdin=None, stdout=None) -> None:
    backend = backend if backend is not None else build_backend(config)
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    log = _LogWriter(config.request_log)
    for line in stdin:
        log.record(line)
        response = handle_frame(line, backend, config)
        stdout.write(json.dumps(response, separators=(",", ":")).encode("utf-8") + b"\n")
        stdout.flush()


def start_tcp_server(config: ServerConfig, backend=None) -> PredictionServer:
    """Bind and return the TCP server; the caller drives serve_forever()."""
    backend = backend if backend is not None else build_backend(config)
    host, _, port = config.listen.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError("listen address must look like host:port")
    return PredictionServer((host, int(port)), backend, config)


def serve(config: ServerConfig) -> None:
    """Run until interrupted, on TCP or stdio per the config."""
    if config.listen == "stdio":
        serve_stdio(config)
        return
    server = start_tcp_server(config)
    with server:
        server.serve_forever()
