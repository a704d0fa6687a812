"""Line-framed JSON prediction server for masked-token models."""

from .backends import CheckpointBackend, PositionDistribution, StubBackend
from .server import PredictionServer, ServerConfig, handle_frame, serve, start_tcp_server

__all__ = [
    "CheckpointBackend",
    "PositionDistribution",
    "PredictionServer",
    "ServerConfig",
    "StubBackend",
    "handle_frame",
    "serve",
    "start_tcp_server",
]
