"""Enhancement sidecar: image restoration service for the SLAM gateway."""

from .encoder import PromptPair, PhotometricPromptEncoder
from .enhancer import EnhanceResult, Enhancer
from .server import serve

__version__ = "0.1.0"
