"""Reference stdio predictor server for the mdm-pred/1 wire protocol."""

__version__ = "0.1.0"

from .server import Schedule, ServerConfig, curve_confidence, handle_request, serve, unit_hash

__all__ = ["Schedule", "ServerConfig", "curve_confidence", "handle_request", "serve", "unit_hash"]
