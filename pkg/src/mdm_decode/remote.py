"""Client side of the model-server wire protocol.

Frames are newline-delimited JSON, one frame per line, UTF-8. A predict
request carries the full partial sequence (mask id in masked slots), the
queried generation indices, and a top-k truncation; the response echoes the
request id and holds one truncated distribution per queried position, or an
``error`` field. The client validates every response before handing
distributions to the engine.
"""

from __future__ import annotations

import json
import socket
import threading
from typing import Iterable, Optional

from .errors import InvalidDistribution, ProtocolError, RemoteFailure, RemoteTimeout
from .state import SequenceState, TokenDistribution, masked_positions

DEFAULT_TOP_K = 64
MASS_TOLERANCE = 1e-6


def encode_request(
    request_id: str, state: SequenceState, positions: list[int], top_k: int
) -> bytes:
    frame = {
        "id": request_id,
        "prompt": list(state.prompt),
        "gen": list(state.gen),
        "mask_id": state.mask_id,
        "positions": positions,
        "top_k": top_k,
    }
    return json.dumps(frame, separators=(",", ":")).encode("utf-8") + b"\n"


def parse_distribution(entry: object) -> TokenDistribution:
    """Validate one per-position payload and turn it into a distribution."""
    if not isinstance(entry, dict):
        raise ProtocolError("distribution entry is not an object")
    tokens = entry.get("tokens")
    probs = entry.get("probs")
    tail = entry.get("tail_mass", 0.0)
    if not isinstance(tokens, list) or not isinstance(probs, list):
        raise ProtocolError("distribution entry needs token and prob arrays")
    if len(tokens) != len(probs):
        raise ProtocolError("token and prob arrays differ in length")
    if not tokens:
        raise ProtocolError("distribution entry has no tokens")
    if len(set(tokens)) != len(tokens):
        raise ProtocolError("duplicate token ids in distribution entry")
    try:
        return TokenDistribution(
            {int(t): float(p) for t, p in zip(tokens, probs)}, float(tail)
        )
    except (InvalidDistribution, TypeError, ValueError) as exc:
        raise ProtocolError(f"invalid distribution payload: {exc}") from exc


def parse_response(line: bytes, request_id: str, positions: list[int]) -> dict[int, TokenDistribution]:
    try:
        frame = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable response frame: {exc}") from exc
    if not isinstance(frame, dict):
        raise ProtocolError("response frame is not an object")
    if frame.get("id") != request_id:
        raise ProtocolError(
            f"response id {frame.get('id')!r} does not echo request id {request_id!r}"
        )
    if "error" in frame:
        raise RemoteFailure(str(frame["error"]))
    dists = frame.get("dists")
    if not isinstance(dists, dict):
        raise ProtocolError("response frame lacks a dists object")
    try:
        keyed = {int(k): v for k, v in dists.items()}
    except ValueError as exc:
        raise ProtocolError(f"non-integer position key: {exc}") from exc
    if set(keyed) != set(positions):
        raise ProtocolError(
            f"response covers positions {sorted(keyed)}, expected {sorted(positions)}"
        )
    return {pos: parse_distribution(entry) for pos, entry in keyed.items()}


class RemoteDenoiser:
    """Denoiser that forwards prediction queries over a socket connection.

    One request is in flight per connection; concurrent callers are
    serialized by an internal lock. Determinism is the server's promise,
    not the client's.
    """

    def __init__(
        self,
        host: Optional[str] = None,
        port: Optional[int] = None,
        *,
        sock: Optional[socket.socket] = None,
        top_k: int = DEFAULT_TOP_K,
        timeout: float = 10.0,
    ):
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        if sock is None:
            if host is None or port is None:
                raise ValueError("need host and port (or an already connected socket)")
            sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(timeout)
        self._sock = sock
        self._reader = sock.makefile("rb")
        self.top_k = top_k
        self._lock = threading.Lock()
        self._serial = 0

    def close(self) -> None:
        try:
            self._reader.close()
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()

    def predict(
        self, state: SequenceState, positions: Optional[Iterable[int]] = None
    ) -> dict[int, TokenDistribution]:
        masked = masked_positions(state)
        wanted = masked if positions is None else sorted(positions)
        extra = set(wanted) - set(masked)
        if extra:
            raise ProtocolError(f"positions {sorted(extra)} are not masked")
        if not wanted:
            return {}
        with self._lock:
            self._serial += 1
            request_id = f"q{self._serial}"
            try:
                self._sock.sendall(encode_request(request_id, state, wanted, self.top_k))
                line = self._reader.readline()
            except socket.timeout as exc:
                raise RemoteTimeout("server did not answer in time") from exc
            except OSError as exc:
                raise ProtocolError(f"connection failure: {exc}") from exc
        if not line:
            raise ProtocolError("connection closed before a response arrived")
        return parse_response(line, request_id, wanted)
