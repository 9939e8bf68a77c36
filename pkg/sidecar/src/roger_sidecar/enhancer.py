"""Two-stage restoration: non-local-means denoising then brightness recovery."""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.ndimage import median_filter

from .encoder import PhotometricPromptEncoder, PromptPair

TARGET_MU = 110.0  # 8-bit brightness target after restoration


@dataclass
class EnhanceResult:
    image: np.ndarray
    clip_score: float
    stages: list = field(default_factory=list)


def _estimate_noise_sigma(img: np.ndarray) -> float:
    y = img.mean(axis=2) * 255.0
    resid = y - median_filter(y, size=3, mode="nearest")
    return float(np.sqrt(resid.var()))


class Enhancer:
    """Stateless image -> image restoration with a prompt-contrast score."""

    def __init__(self, prompts: PromptPair = None,
                 encoder: PhotometricPromptEncoder = None,
                 target_mu: float = TARGET_MU):
        self.prompts = prompts or PromptPair()
        self.encoder = encoder or PhotometricPromptEncoder()
        self.target_mu = target_mu

    def enhance(self, img: np.ndarray) -> EnhanceResult:
        img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
        stages = []

        sigma = _estimate_noise_sigma(img)
        out = img
        if sigma > 2.0:
            u8 = np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8)
            h = float(np.clip(sigma, 3.0, 20.0))
            den = cv2.fastNlMeansDenoisingColored(u8, None, h, h, 7, 21)
            out = den.astype(np.float64) / 255.0
            stages.append("nlm_denoise")

        mu = max(float(out.mean() * 255.0), 1.0)
        if mu < self.target_mu:
            g = np.log(self.target_mu / 255.0) / np.log(mu / 255.0)
            g = float(np.clip(g, 0.25, 1.0))
            out = np.clip(out ** g, 0.0, 1.0)
            stages.append("gamma_lift")

        score = self.encoder.prompt_score(out, self.prompts)
        return EnhanceResult(out, score, stages)
