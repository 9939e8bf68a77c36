"""Degradation judgment (brightness + residual noise) and the two synthesizers.

The judgment measures mean 8-bit grayscale intensity and the variance of the
residual against a 3x3 median filter; either condition past its threshold
(mu_L < 80, sigma^2_R > 30) flags the frame for enhancement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

TAU_L = 80.0   # low-light threshold on mean 8-bit grayscale
TAU_N = 30.0   # noise threshold on residual variance (8-bit^2)


@dataclass(frozen=True)
class DegradationReport:
    mu_L: float
    sigma2_R: float
    low_light: bool
    noisy: bool
    trigger: bool

    def to_json(self) -> dict:
        return {"mu_L": round(self.mu_L, 4), "sigma2_R": round(self.sigma2_R, 4),
                "low_light": self.low_light, "noisy": self.noisy,
                "trigger": self.trigger}


@dataclass(frozen=True)
class NoiseParams:
    shot_var: float = 4e-4        # signal-dependent variance per unit intensity
    read_var: float = 3e-5        # signal-independent readout variance
    gauss_std_8bit: float = 15.0  # additive noise sigma on the 8-bit scale
    gamma: float = 1.55           # darkening exponent on [0,1] intensities
    rng_seed: int = 0

    def __post_init__(self):
        if self.shot_var < 0 or self.read_var < 0 or self.gauss_std_8bit < 0:
            raise ValueError("noise variances must be non-negative")
        if self.gamma < 1.0:
            raise ValueError("gamma must be >= 1 (darkening)")


def decide(mu_L: float, sigma2_R: float, tau_L: float = TAU_L,
           tau_N: float = TAU_N) -> DegradationReport:
    """Strict-inequality trigger decision from measured statistics."""
    low = mu_L < tau_L
    noisy = sigma2_R > tau_N
    return DegradationReport(float(mu_L), float(sigma2_R), low, noisy, low or noisy)


def judge(img: np.ndarray) -> DegradationReport:
    """Measure brightness and blind noise level of an RGB image in [0,1]."""
    y = np.asarray(img, dtype=np.float64).mean(axis=2) * 255.0
    mu = float(y.mean())
    resid = y - median_filter(y, size=3, mode="nearest")
    sigma2 = float(resid.var())
    return decide(mu, sigma2)


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream); bit-stable across runs."""
    return np.random.Generator(np.random.Philox(key=np.uint64([seed, stream])))


def add_sensor_noise(img: np.ndarray, p: NoiseParams, stream: int = 0) -> np.ndarray:
    """Heteroscedastic shot noise plus Gaussian read noise, clamped to [0,1].

    The shot component is Gaussian with variance shot_var * intensity, the
    moderate-count approximation of a photon-counting process.
    """
    img = np.asarray(img, dtype=np.float64)
    rng = rng_for(p.rng_seed, stream)
    shot = np.sqrt(p.shot_var * np.clip(img, 0.0, None)) * rng.standard_normal(img.shape)
    read = np.sqrt(p.read_var) * rng.standard_normal(img.shape)
    return np.clip(img + shot + read, 0.0, 1.0)


def add_lowlight_noise(img: np.ndarray, p: NoiseParams, stream: int = 0) -> np.ndarray:
    """Gamma darkening followed by additive Gaussian noise, clamped to [0,1]."""
    img = np.asarray(img, dtype=np.float64)
    rng = rng_for(p.rng_seed, stream)
    dark = np.clip(img, 0.0, 1.0) ** p.gamma
    noise = (p.gauss_std_8bit / 255.0) * rng.standard_normal(img.shape)
    return np.clip(dark + noise, 0.0, 1.0)
