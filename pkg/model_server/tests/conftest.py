from __future__ import annotations

import threading

import pytest

from model_server.server import ServerConfig, make_server


@pytest.fixture
def stub_server_url():
    config = ServerConfig(model="stub", port=0)
    server = make_server(config)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
