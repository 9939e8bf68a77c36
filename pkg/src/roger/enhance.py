"""Selective enhancement gateway: passthrough, classical fallback, or sidecar.

Wire protocol (shared with the sidecar service): length-prefixed frames over a
stream socket. Request = magic b"RGE1" | u32 big-endian payload length |
PNG-encoded 8-bit RGB. Response = b"RGE1" | length | enhanced PNG of identical
dimensions, or b"RGEE" | length | UTF-8 error string.
"""

from __future__ import annotations

import io
import socket
import struct
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image
from scipy.ndimage import median_filter

from .core import Frame
from .degradation import DegradationReport
from .errors import ConfigurationError, ProtocolError

MAGIC_OK = b"RGE1"
MAGIC_ERR = b"RGEE"
MAX_PAYLOAD = 32 * 1024 * 1024


@dataclass
class EnhancerBinding:
    mode: str = "off"  # off | classical | sidecar
    endpoint: Optional[str] = None
    timeout_ms: int = 2000
    fallback_on_error: bool = True
    target_mu: float = 110.0

    def __post_init__(self):
        if self.mode not in ("off", "classical", "sidecar"):
            raise ConfigurationError(f"unknown enhancer mode {self.mode!r}")
        if (self.mode == "sidecar") != (self.endpoint is not None):
            raise ConfigurationError("endpoint is required iff mode is 'sidecar'")


@dataclass
class EnhanceTag:
    applied: bool
    enhancer: str
    latency_ms: float = 0.0
    error: Optional[str] = None


# ---------------------------------------------------------------------------
# Wire protocol helpers
# ---------------------------------------------------------------------------

def rgb_to_png_bytes(img: np.ndarray) -> bytes:
    u8 = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_rgb(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def write_wire_frame(sock: socket.socket, magic: bytes, payload: bytes) -> None:
    sock.sendall(magic + struct.pack(">I", len(payload)) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = sock.recv(min(remaining, 1 << 16))
        if not chunk:
            raise ProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_wire_frame(sock: socket.socket) -> tuple[bytes, bytes]:
    header = _recv_exact(sock, 8)
    magic, length = header[:4], struct.unpack(">I", header[4:])[0]
    if magic not in (MAGIC_OK, MAGIC_ERR):
        raise ProtocolError(f"bad magic {magic!r}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {length} bytes exceeds the 32 MiB cap")
    return magic, _recv_exact(sock, length)


def enhance_via_sidecar(img: np.ndarray, endpoint: str, timeout_ms: int) -> np.ndarray:
    host, _, port = endpoint.rpartition(":")
    with socket.create_connection((host or "127.0.0.1", int(port)),
                                  timeout=timeout_ms / 1000.0) as sock:
        write_wire_frame(sock, MAGIC_OK, rgb_to_png_bytes(img))
        magic, payload = read_wire_frame(sock)
    if magic == MAGIC_ERR:
        raise ProtocolError(f"sidecar error: {payload.decode('utf-8', 'replace')}")
    out = png_bytes_to_rgb(payload)
    if out.shape != np.asarray(img).shape:
        raise ProtocolError(f"sidecar changed dims: {out.shape}")
    return out


# ---------------------------------------------------------------------------
# Enhancers
# ---------------------------------------------------------------------------

def classical_enhance(img: np.ndarray, target_mu: float = 110.0) -> np.ndarray:
    """Median denoise followed by a brightness-targeting gamma lift."""
    img = np.asarray(img, dtype=np.float64)
    den = np.stack([median_filter(img[..., c], size=3, mode="nearest")
                    for c in range(3)], axis=-1)
    mu = max(float(den.mean() * 255.0), 1.0)
    g = np.log(target_mu / 255.0) / np.log(mu / 255.0)
    g = float(np.clip(g, 0.3, 1.0))
    return np.clip(den ** g, 0.0, 1.0)


def maybe_enhance(frame: Frame, report: DegradationReport,
                  binding: EnhancerBinding) -> tuple[Frame, EnhanceTag]:
    """Route a trigger-flagged frame to the configured enhancer.

    Untriggered frames (or mode 'off') pass through untouched; the depth map
    is never modified on any path.
    """
    if not report.trigger or binding.mode == "off":
        return frame, EnhanceTag(False, "passthrough")

    t0 = time.perf_counter()
    error = None
    if binding.mode == "sidecar":
        try:
            rgb = enhance_via_sidecar(frame.rgb, binding.endpoint, binding.timeout_ms)
            tag = EnhanceTag(True, "sidecar",
                             (time.perf_counter() - t0) * 1000.0)
            return Frame(rgb, frame.depth, frame.timestamp, frame.gt_pose), tag
        except (OSError, ProtocolError) as exc:
            error = f"{type(exc).__name__}: {exc}"
            if not binding.fallback_on_error:
                return frame, EnhanceTag(False, "passthrough", 0.0, error)

    rgb = classical_enhance(frame.rgb, binding.target_mu)
    tag = EnhanceTag(True, "classical", (time.perf_counter() - t0) * 1000.0, error)
    return Frame(rgb, frame.depth, frame.timestamp, frame.gt_pose), tag
