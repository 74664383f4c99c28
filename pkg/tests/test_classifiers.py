from __future__ import annotations

import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchshield import wire
from patchshield.classifiers import (
    CallCounter,
    Image,
    RemoteClassifier,
    TableClassifier,
    apply_mask,
    predict_batch,
)
from patchshield.errors import BackendUnavailable, GeometryMismatch, MalformedImage
from patchshield.masks import ImageGeometry, MaskSpec

from conftest import distinct_image


class TestImage:
    def test_shape_checked(self):
        with pytest.raises(GeometryMismatch):
            Image(ImageGeometry(2, 2), np.zeros((2, 3, 1), dtype=np.float32))

    def test_range_checked(self):
        with pytest.raises(ValueError):
            Image(ImageGeometry(1, 2), np.array([[[0.5], [1.5]]], dtype=np.float32))


class TestApplyMask:
    def test_full_mask_fills_everything(self):
        x = distinct_image(ImageGeometry(3, 3, 2))
        masked = apply_mask(x, MaskSpec([(0, 0, 3, 3)]))
        assert (masked.pixels == 0.0).all()

    def test_empty_mask_is_identity(self):
        x = distinct_image(ImageGeometry(3, 3))
        masked = apply_mask(x, MaskSpec([]))
        assert (masked.pixels == x.pixels).all()

    def test_does_not_mutate_input(self):
        x = distinct_image(ImageGeometry(3, 3))
        before = x.pixels.copy()
        apply_mask(x, MaskSpec([(0, 0, 2, 2)]))
        assert (x.pixels == before).all()

    def test_custom_fill(self):
        x = distinct_image(ImageGeometry(2, 2))
        masked = apply_mask(x, MaskSpec([(0, 0, 1, 1)]), fill=0.5)
        assert masked.pixels[0, 0, 0] == np.float32(0.5)

    def test_idempotent(self):
        x = distinct_image(ImageGeometry(4, 4))
        m = MaskSpec([(1, 1, 2, 3)])
        once = apply_mask(x, m)
        twice = apply_mask(once, m)
        assert (once.pixels == twice.pixels).all()

    @settings(max_examples=60)
    @given(st.data())
    def test_commutative(self, data):
        n0 = data.draw(st.integers(1, 5))
        n1 = data.draw(st.integers(1, 5))
        geom = ImageGeometry(n0, n1)

        def rect(d):
            h = d.draw(st.integers(1, n0))
            w = d.draw(st.integers(1, n1))
            return (
                d.draw(st.integers(0, n0 - h)),
                d.draw(st.integers(0, n1 - w)),
                h,
                w,
            )

        m0, m1 = MaskSpec([rect(data)]), MaskSpec([rect(data)])
        x = distinct_image(geom)
        ab = apply_mask(apply_mask(x, m0), m1)
        ba = apply_mask(apply_mask(x, m1), m0)
        assert (ab.pixels == ba.pixels).all()


class TestTableClassifier:
    def test_default_for_unknown_key(self):
        table = TableClassifier(label_space_size=10, default_label=3)
        x = distinct_image(ImageGeometry(2, 2))
        assert predict_batch(table, [x]) == [3]

    def test_empty_batch(self):
        table = TableClassifier(label_space_size=2)
        assert predict_batch(table, []) == []

    def test_entry_lookup(self):
        x = distinct_image(ImageGeometry(2, 2))
        key = TableClassifier.key_for(x)
        table = TableClassifier(4, 0, {key: 2})
        assert predict_batch(table, [x]) == [2]

    def test_masked_content_is_invisible(self):
        # Two images differing only inside a blanked region share a key,
        # so their predictions agree: the core of the certification story.
        geom = ImageGeometry(3, 3)
        a = distinct_image(geom)
        b_pixels = a.pixels.copy()
        b_pixels[0:2, 0:2] = 0.9
        b = Image(geom, b_pixels)
        m = MaskSpec([(0, 0, 2, 2)])
        assert TableClassifier.key_for(apply_mask(a, m)) == TableClassifier.key_for(
            apply_mask(b, m)
        )

    def test_same_visible_set_same_key(self):
        geom = ImageGeometry(1, 4)
        x = distinct_image(geom)
        m0, m1 = MaskSpec([(0, 0, 1, 2)]), MaskSpec([(0, 1, 1, 2)])
        k_ab = TableClassifier.key_for(apply_mask(apply_mask(x, m0), m1))
        k_ba = TableClassifier.key_for(apply_mask(apply_mask(x, m1), m0))
        assert k_ab == k_ba

    def test_batch_geometry_check(self):
        table = TableClassifier(2)
        a = distinct_image(ImageGeometry(2, 2))
        b = distinct_image(ImageGeometry(2, 3))
        with pytest.raises(GeometryMismatch):
            predict_batch(table, [a, b])

    def test_json_round_trip(self, tmp_path):
        x = distinct_image(ImageGeometry(2, 2))
        table = TableClassifier(5, 1, {TableClassifier.key_for(x): 4})
        path = tmp_path / "table.json"
        table.save(str(path))
        loaded = TableClassifier.load(str(path))
        assert loaded.predict_batch([x]) == [4]
        assert loaded.default_label == 1
        assert loaded.label_space_size == 5

    def test_bad_default_rejected(self):
        with pytest.raises(ValueError):
            TableClassifier(3, default_label=3)


class TestCallCounter:
    def test_counts_batch_sizes(self):
        table = TableClassifier(2)
        counter = CallCounter(table)
        x = distinct_image(ImageGeometry(2, 2))
        predict_batch(counter, [x, x, x])
        predict_batch(counter, [x])
        assert counter.count == 4

    def test_thread_safety(self):
        table = TableClassifier(2)
        counter = CallCounter(table)
        x = distinct_image(ImageGeometry(2, 2))

        def worker():
            for _ in range(100):
                counter.predict_batch([x, x])

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert counter.count == 8 * 100 * 2


class _StubHandler(BaseHTTPRequestHandler):
    """Loopback server: label = argmax of per-channel mean."""

    def do_POST(self):
        if self.path != "/predict":
            self.send_error(404)
            return
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        try:
            batch = wire.decode_request(body)
        except MalformedImage as exc:
            self.send_response(400)
            msg = str(exc).encode()
            self.send_header("Content-Length", str(len(msg)))
            self.end_headers()
            self.wfile.write(msg)
            return
        labels = [int(np.argmax(img.mean(axis=(0, 1)))) for img in batch]
        payload = wire.encode_response(labels)
        self.send_response(200)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


class TestRemoteClassifier:
    def test_round_trip_two_images(self, stub_server):
        geom = ImageGeometry(2, 2, 3)
        red = Image(geom, np.tile(np.array([0.9, 0.1, 0.1], dtype=np.float32), (2, 2, 1)))
        blue = Image(geom, np.tile(np.array([0.1, 0.1, 0.9], dtype=np.float32), (2, 2, 1)))
        remote = RemoteClassifier(stub_server)
        assert predict_batch(remote, [red, blue]) == [0, 2]
        assert predict_batch(remote, [blue, red]) == [2, 0]

    def test_empty_batch_no_network(self):
        remote = RemoteClassifier("http://127.0.0.1:1")  # nothing listens here
        assert predict_batch(remote, []) == []

    def test_unreachable_backend(self):
        remote = RemoteClassifier("http://127.0.0.1:1", timeout=0.2)
        x = distinct_image(ImageGeometry(2, 2))
        with pytest.raises(BackendUnavailable):
            predict_batch(remote, [x])

    def test_predict_suffix_added(self):
        assert RemoteClassifier("http://host:1234").url == "http://host:1234/predict"
        assert RemoteClassifier("http://host:1234/predict").url == "http://host:1234/predict"


class TestWireFormat:
    def test_request_round_trip(self):
        batch = np.random.default_rng(0).random((3, 4, 5, 2)).astype(np.float32)
        decoded = wire.decode_request(wire.encode_request(batch))
        assert decoded.shape == batch.shape
        assert np.array_equal(decoded, batch)

    def test_empty_request(self):
        batch = np.zeros((0, 4, 4, 1), dtype=np.float32)
        data = wire.encode_request(batch)
        assert len(data) == wire.HEADER_LEN
        assert wire.decode_request(data).shape == (0, 4, 4, 1)

    def test_header_layout(self):
        batch = np.zeros((1, 2, 3, 4), dtype=np.float32)
        data = wire.encode_request(batch)
        assert data[:4] == b"PCP1"
        assert data[4:20] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + (
            3
        ).to_bytes(4, "little") + (4).to_bytes(4, "little")

    def test_bad_magic_rejected(self):
        with pytest.raises(MalformedImage):
            wire.decode_request(b"XXXX" + bytes(16))

    def test_size_mismatch_rejected(self):
        batch = np.zeros((1, 2, 2, 1), dtype=np.float32)
        data = wire.encode_request(batch)
        with pytest.raises(MalformedImage):
            wire.decode_request(data[:-1])

    def test_response_round_trip(self):
        labels = [0, -1, 7, 2**31 - 1]
        assert wire.decode_response(wire.encode_response(labels), 4) == labels
