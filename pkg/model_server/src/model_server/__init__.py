"""Batch-prediction HTTP adapter for vision classifiers."""

from .models import load_model, stub_model
from .protocol import ProtocolError, build_response, parse_request
from .server import PredictionServer, ServerConfig, make_server, serve

__version__ = "0.1.0"
