import socket
import threading

import numpy as np
import pytest

from roger_sidecar.enhancer import Enhancer
from roger_sidecar.server import serve


@pytest.fixture(scope="session")
def sidecar_endpoint():
    """A live sidecar on an ephemeral port, shared across the session."""
    srv = socket.create_server(("127.0.0.1", 0))
    port = srv.getsockname()[1]
    srv.close()
    ready = threading.Event()
    t = threading.Thread(target=serve, args=(f"127.0.0.1:{port}",),
                         kwargs={"enhancer": Enhancer(), "ready_event": ready},
                         daemon=True)
    t.start()
    assert ready.wait(timeout=10)
    return f"127.0.0.1:{port}"


def dark_corpus(n=20, shape=(48, 64)):
    """Synthetic dark/noisy frames with varying exposure and noise levels."""
    out = []
    for i in range(n):
        rng = np.random.default_rng(1000 + i)
        base = rng.uniform(0.25, 0.55) + 0.2 * np.sin(
            np.linspace(0, rng.uniform(3, 9), shape[0] * shape[1])).reshape(shape)
        img = np.repeat(np.clip(base, 0.05, 1.0)[..., None], 3, axis=2)
        img = img ** rng.uniform(1.4, 2.3)  # gamma darkening
        img = img + rng.normal(0, rng.uniform(0.04, 0.08), img.shape)
        out.append(np.clip(img, 0, 1))
    return out


@pytest.fixture(scope="session")
def corpus():
    return dark_corpus()
