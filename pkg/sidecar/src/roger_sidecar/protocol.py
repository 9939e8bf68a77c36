"""Wire protocol shared with the SLAM gateway.

Length-prefixed frames over a stream socket: magic (4 bytes) | u32 big-endian
payload length | payload. Magic b"RGE1" carries a PNG-encoded 8-bit RGB image,
b"RGEE" carries a UTF-8 error string.
"""

from __future__ import annotations

import io
import socket
import struct

import numpy as np
from PIL import Image

MAGIC_OK = b"RGE1"
MAGIC_ERR = b"RGEE"
MAX_PAYLOAD = 32 * 1024 * 1024


class WireError(Exception):
    pass


def rgb_to_png_bytes(img: np.ndarray) -> bytes:
    u8 = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_rgb(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def write_frame(sock: socket.socket, magic: bytes, payload: bytes) -> None:
    sock.sendall(magic + struct.pack(">I", len(payload)) + payload)


def recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = sock.recv(min(remaining, 1 << 16))
        if not chunk:
            raise WireError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_header(sock: socket.socket) -> tuple[bytes, int]:
    header = recv_exact(sock, 8)
    return header[:4], struct.unpack(">I", header[4:])[0]
