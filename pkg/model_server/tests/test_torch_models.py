"""Torch model route, exercised with a weight-free TorchScript module.

The scripted model computes per-channel means and uses them as logits,
so with identity normalization it must reproduce the stub model's
labels, including on the golden fixtures.
"""
from __future__ import annotations

import threading
from pathlib import Path

import numpy as np
import pytest
import requests

torch = pytest.importorskip("torch")

from model_server import protocol
from model_server.models import load_model
from model_server.server import ServerConfig, make_server

GOLDEN = Path(__file__).parent.parent.parent / "fixtures" / "protocol"


class ChannelMeanLogits(torch.nn.Module):
    def forward(self, x):
        return x.mean(dim=(2, 3))


@pytest.fixture
def scripted_model_path(tmp_path):
    path = tmp_path / "channel_mean.pt"
    torch.jit.script(ChannelMeanLogits()).save(str(path))
    return str(path)


def test_torchscript_matches_stub(scripted_model_path):
    model = load_model(f"torchscript:{scripted_model_path}")
    batch = protocol.parse_request((GOLDEN / "request.bin").read_bytes())
    assert model(batch) == [2, 0]
    assert model(np.zeros((0, 4, 5, 3), dtype=np.float32)) == []


def test_normalization_applied(scripted_model_path):
    # Dividing channel 1 by a huge std suppresses it, flipping the argmax.
    model = load_model(
        f"torchscript:{scripted_model_path}", mean=(0.0, 0.0, 0.0), std=(1.0, 100.0, 1.0)
    )
    img = np.zeros((4, 4, 3), dtype=np.float32)
    img[:, :, 1] = 0.9
    img[:, :, 2] = 0.5
    assert model(img[None]) == [2]
    plain = load_model(f"torchscript:{scripted_model_path}")
    assert plain(img[None]) == [1]


def test_served_torchscript_reproduces_golden_response(scripted_model_path):
    config = ServerConfig(model=f"torchscript:{scripted_model_path}", port=0)
    server = make_server(config)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}/predict"
        resp = requests.post(url, data=(GOLDEN / "request.bin").read_bytes(), timeout=20)
        assert resp.status_code == 200
        assert resp.content == (GOLDEN / "response.bin").read_bytes()
    finally:
        server.shutdown()
