import socket
import struct

import numpy as np
import pytest

from roger_sidecar.protocol import (MAGIC_ERR, MAGIC_OK, png_bytes_to_rgb,
                                    read_header, recv_exact, rgb_to_png_bytes,
                                    write_frame)


def request(endpoint, magic, payload, timeout=10.0):
    host, _, port = endpoint.rpartition(":")
    with socket.create_connection((host, int(port)), timeout=timeout) as sock:
        sock.sendall(magic + struct.pack(">I", len(payload)) + payload)
        rmagic, length = read_header(sock)
        return rmagic, recv_exact(sock, length)


class TestServer:
    def test_valid_request_round_trip(self, sidecar_endpoint, corpus):
        img = corpus[0]
        magic, payload = request(sidecar_endpoint, MAGIC_OK, rgb_to_png_bytes(img))
        assert magic == MAGIC_OK
        out = png_bytes_to_rgb(payload)
        assert out.shape == img.shape

    def test_wrong_magic_yields_error_frame(self, sidecar_endpoint):
        magic, payload = request(sidecar_endpoint, b"XXXX", b"junk")
        assert magic == MAGIC_ERR
        assert b"bad magic" in payload

    def test_zero_byte_payload_rejected(self, sidecar_endpoint):
        magic, payload = request(sidecar_endpoint, MAGIC_OK, b"")
        assert magic == MAGIC_ERR

    def test_undecodable_payload_rejected(self, sidecar_endpoint):
        magic, payload = request(sidecar_endpoint, MAGIC_OK, b"not a png at all")
        assert magic == MAGIC_ERR
        assert b"PNG" in payload or b"decodable" in payload

    def test_oversized_payload_rejected_without_reading(self, sidecar_endpoint):
        host, _, port = sidecar_endpoint.rpartition(":")
        with socket.create_connection((host, int(port)), timeout=10) as sock:
            sock.sendall(MAGIC_OK + struct.pack(">I", 33 * 1024 * 1024))
            magic, length = read_header(sock)
            payload = recv_exact(sock, length)
        assert magic == MAGIC_ERR
        assert b"32 MiB" in payload

    def test_sequential_requests_on_fresh_connections(self, sidecar_endpoint, corpus):
        for img in corpus[:3]:
            magic, payload = request(sidecar_endpoint, MAGIC_OK,
                                     rgb_to_png_bytes(img))
            assert magic == MAGIC_OK

    @pytest.mark.parametrize("shape", [(1, 1), (7, 3), (33, 129), (240, 320)])
    def test_dims_preserved(self, sidecar_endpoint, shape):
        rng = np.random.default_rng(shape[0] * 1000 + shape[1])
        img = rng.uniform(0, 1, (*shape, 3))
        magic, payload = request(sidecar_endpoint, MAGIC_OK, rgb_to_png_bytes(img))
        assert magic == MAGIC_OK
        assert png_bytes_to_rgb(payload).shape == img.shape
