"""Socket server speaking the gateway protocol: one request, one response."""

from __future__ import annotations

import logging
import socket
import threading

from .enhancer import Enhancer
from .protocol import (MAGIC_ERR, MAGIC_OK, MAX_PAYLOAD, WireError,
                       png_bytes_to_rgb, read_header, recv_exact,
                       rgb_to_png_bytes, write_frame)

log = logging.getLogger("roger_sidecar")


def _handle(conn: socket.socket, enhancer: Enhancer, lock: threading.Lock):
    with conn:
        try:
            magic, length = read_header(conn)
        except (WireError, OSError):
            return
        if magic != MAGIC_OK:
            write_frame(conn, MAGIC_ERR, b"bad magic")
            return
        if length > MAX_PAYLOAD:
            write_frame(conn, MAGIC_ERR,
                        f"payload of {length} bytes exceeds the 32 MiB cap".encode())
            return
        if length == 0:
            write_frame(conn, MAGIC_ERR, b"empty payload")
            return
        try:
            payload = recv_exact(conn, length)
        except (WireError, OSError):
            return
        try:
            img = png_bytes_to_rgb(payload)
        except Exception:
            write_frame(conn, MAGIC_ERR, b"payload is not a decodable PNG image")
            return
        try:
            with lock:  # single enhancer instance; requests serialize here
                result = enhancer.enhance(img)
            write_frame(conn, MAGIC_OK, rgb_to_png_bytes(result.image))
        except Exception as exc:  # never leave the client hanging
            log.exception("enhancement failed")
            write_frame(conn, MAGIC_ERR, f"enhancement failed: {exc}".encode())


def serve(endpoint: str, enhancer: Enhancer = None, ready_event=None) -> None:
    """Accept gateway connections forever; never returns under normal use."""
    host, _, port = endpoint.rpartition(":")
    enhancer = enhancer or Enhancer()
    lock = threading.Lock()
    srv = socket.create_server((host or "127.0.0.1", int(port)))
    log.info("listening on %s", srv.getsockname())
    if ready_event is not None:
        ready_event.set()
    try:
        while True:
            conn, _ = srv.accept()
            t = threading.Thread(target=_handle, args=(conn, enhancer, lock),
                                 daemon=True)
            t.start()
    finally:
        srv.close()
