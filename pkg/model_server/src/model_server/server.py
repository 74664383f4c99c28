"""HTTP adapter: POST /predict speaks the binary batch protocol.

Inference calls are serialized with a lock so concurrent requests
cannot interleave on one device. /healthz answers 200 once the model is
loaded. Errors: 400 malformed body, 413 over the batch limit, 500 on
inference failure, all with UTF-8 text messages.
"""
from __future__ import annotations

import argparse
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import protocol
from .models import Model, load_model


@dataclass
class ServerConfig:
    model: str = "stub"
    host: str = "127.0.0.1"
    port: int = 8470
    device: str = "cpu"
    max_batch: int = 1024
    mean: tuple[float, ...] = (0.0,)
    std: tuple[float, ...] = (1.0,)


class PredictionServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, config: ServerConfig, model: Model):
        super().__init__((config.host, config.port), _Handler)
        self.config = config
        self.model = model
        self.inference_lock = threading.Lock()


class _Handler(BaseHTTPRequestHandler):
    server: PredictionServer

    def _send(self, status: int, body: bytes, content_type: str = "application/octet-stream"):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_text(self, status: int, message: str):
        self._send(status, message.encode("utf-8"), "text/plain; charset=utf-8")

    def do_GET(self):
        if self.path == "/healthz":
            self._send_text(200, "ok")
        else:
            self._send_text(404, "not found")

    def do_POST(self):
        if self.path != "/predict":
            self._send_text(404, "not found")
            return
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        try:
            batch = protocol.parse_request(body)
        except protocol.ProtocolError as exc:
            self._send_text(400, str(exc))
            return
        if batch.shape[0] > self.server.config.max_batch:
            self._send_text(
                413, f"batch {batch.shape[0]} exceeds limit {self.server.config.max_batch}"
            )
            return
        try:
            with self.server.inference_lock:
                labels = self.server.model(batch)
        except Exception as exc:  # model failure must not kill the server
            self._send_text(500, f"inference failed: {exc}")
            return
        self._send(200, protocol.build_response(labels))

    def log_message(self, *args):
        pass


def make_server(config: ServerConfig) -> PredictionServer:
    model = load_model(config.model, config.device, config.mean, config.std)
    return PredictionServer(config, model)


def serve(config: ServerConfig) -> None:
    server = make_server(config)
    print(
        f"serving {config.model} on http://{config.host}:{server.server_address[1]}/predict",
        flush=True,
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="patchshield-model-server")
    parser.add_argument("--model", default="stub",
                        help="stub | torchvision:<name> | torchscript:<path>")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8470)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-batch", type=int, default=1024)
    parser.add_argument("--mean", type=_floats, default=(0.0,),
                        help="per-channel normalization mean, comma separated")
    parser.add_argument("--std", type=_floats, default=(1.0,),
                        help="per-channel normalization std, comma separated")
    args = parser.parse_args(argv)
    serve(
        ServerConfig(
            model=args.model,
            host=args.host,
            port=args.port,
            device=args.device,
            max_batch=args.max_batch,
            mean=args.mean,
            std=args.std,
        )
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
