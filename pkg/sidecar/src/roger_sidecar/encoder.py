"""Prompt-contrast scoring of image quality.

No pretrained vision-language weights are shippable in this environment, so
the encoder here is a deterministic photometric embedding: images and prompt
strings map into a shared unit-sphere space whose dominant axis tracks
exposure quality. The score keeps the contrastive form

    score = cos(Enc(image), Enc(high_prompt)) - cos(Enc(image), Enc(low_prompt))

so brighter, cleaner images score strictly higher against the "high-light"
prompt than dark or noisy ones.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

EMBED_DIM = 64
_BRIGHT_WORDS = frozenset({"high-light", "highlight", "bright", "well-lit",
                           "daylight", "clean"})
_DARK_WORDS = frozenset({"low-light", "lowlight", "dark", "dim", "night",
                         "noisy", "underexposed"})
_AXIS_WEIGHT = 3.0


@dataclass(frozen=True)
class PromptPair:
    high_prompt: str = "high-light image"
    low_prompt: str = "low-light image"

    def __post_init__(self):
        if not self.high_prompt or not self.low_prompt:
            raise ValueError("prompts must be non-empty")


def _token_vector(token: str) -> np.ndarray:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    rng = np.random.Generator(np.random.Philox(
        key=np.frombuffer(digest[:16], dtype=np.uint64)))
    v = rng.standard_normal(EMBED_DIM)
    return v / np.linalg.norm(v)


class PhotometricPromptEncoder:
    """Deterministic shared embedding for images and prompts."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim
        rng = np.random.Generator(np.random.Philox(key=np.uint64([2024, 11])))
        self.brightness_axis = rng.standard_normal(dim)
        self.brightness_axis /= np.linalg.norm(self.brightness_axis)
        self.feature_proj = rng.standard_normal((dim, 16)) / np.sqrt(16)

    def encode_text(self, prompt: str) -> np.ndarray:
        tokens = prompt.lower().replace(",", " ").split()
        if not tokens:
            raise ValueError("empty prompt")
        v = np.zeros(self.dim)
        polarity = 0.0
        for tok in tokens:
            v += _token_vector(tok)
            if tok in _BRIGHT_WORDS:
                polarity += 1.0
            if tok in _DARK_WORDS:
                polarity -= 1.0
        v = v / np.linalg.norm(v) + _AXIS_WEIGHT * polarity * self.brightness_axis
        return v / np.linalg.norm(v)

    def _features(self, img: np.ndarray) -> np.ndarray:
        y = np.asarray(img, dtype=np.float64).mean(axis=2) * 255.0
        mu = y.mean()
        resid = y - median_filter(y, size=3, mode="nearest")
        noise = np.sqrt(resid.var())
        hist, _ = np.histogram(y, bins=8, range=(0, 255))
        hist = hist / y.size
        if min(y.shape) >= 2:
            gy, gx = np.gradient(y)
            edge = np.hypot(gx, gy).mean()
        else:
            edge = 0.0
        f = np.concatenate([[mu / 255.0, y.std() / 128.0, noise / 30.0,
                             edge / 30.0, img.mean(), img.std(), 0.0, 0.0],
                            hist])
        return f

    def encode_image(self, img: np.ndarray) -> np.ndarray:
        f = self._features(img)
        y_mean = f[0] * 255.0
        noise = f[2] * 30.0
        # exposure-quality coordinate: bright and clean points along the axis
        quality = np.tanh((y_mean - 80.0) / 60.0) - 0.5 * np.tanh(noise / 30.0)
        v = self.feature_proj @ f + _AXIS_WEIGHT * quality * self.brightness_axis
        return v / np.linalg.norm(v)

    def prompt_score(self, img: np.ndarray, prompts: PromptPair) -> float:
        e = self.encode_image(img)
        eh = self.encode_text(prompts.high_prompt)
        el = self.encode_text(prompts.low_prompt)
        return float(e @ eh - e @ el)
