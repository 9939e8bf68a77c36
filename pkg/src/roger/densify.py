"""Opacity-guided densification: multi-scale gating, insertion and pruning."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import CameraPose, Frame, GaussianMap, ImagePyramid, Intrinsics
from .errors import ConfigurationError
from .rasterizer import RenderOutput


def _default_scale_weights():
    return {1.0: 0.5, 0.5: 0.3, 0.25: 0.2}


@dataclass
class DensifyConfig:
    opacity_threshold: float = 0.5
    depth_error_factor: float = 50.0
    scale_weights: dict = field(default_factory=_default_scale_weights)
    imp_threshold: float = 0.01
    prune_importance_floor: float = 0.005
    gate_above: bool = True   # True = densify when the fused score exceeds the threshold
    insert_stride: int = 2
    init_opacity: float = 0.5
    # footprint in pixels at the source depth; stride-2 spacing needs overlap
    # (>= ~1.4) for rendered opacity to saturate past the tracking gate
    footprint_scale: float = 1.8

    def __post_init__(self):
        if abs(sum(self.scale_weights.values()) - 1.0) > 1e-9:
            raise ConfigurationError("scale weights must sum to 1")
        if self.opacity_threshold <= 0 or self.depth_error_factor <= 0 \
                or self.imp_threshold <= 0:
            raise ConfigurationError("densify thresholds must be positive")


def importance_score(pyr: ImagePyramid, cfg: DensifyConfig) -> float:
    """Weighted fusion of mean rendered opacity across the pyramid scales."""
    have = set(pyr.scales())
    missing = [s for s in cfg.scale_weights if s not in have]
    if missing:
        raise ConfigurationError(f"pyramid is missing scales {missing}")
    return float(sum(w * pyr.level(s).mean() for s, w in cfg.scale_weights.items()))


def gate_open(score: float, cfg: DensifyConfig) -> bool:
    return score > cfg.imp_threshold if cfg.gate_above else score < cfg.imp_threshold


def densify_mask(render: RenderOutput, frame: Frame, cfg: DensifyConfig) -> np.ndarray:
    """Pixels needing new Gaussians: low opacity or exploding depth error."""
    valid = frame.valid_depth
    mask = np.zeros_like(valid)
    if not valid.any():
        return mask
    err = np.abs(render.depth - frame.depth)
    med = float(np.median(err[valid]))
    mask = valid & ((render.opacity < cfg.opacity_threshold)
                    | (err > cfg.depth_error_factor * med))
    return mask


def insert_gaussians(gmap: GaussianMap, mask: np.ndarray, frame: Frame,
                     pose: CameraPose, K: Intrinsics,
                     cfg: DensifyConfig = None) -> GaussianMap:
    """Back-project masked pixels (subsampled) into new one-pixel Gaussians."""
    cfg = cfg or DensifyConfig()
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return gmap
    stride = max(cfg.insert_stride, 1)
    pick = (ys % stride == 0) & (xs % stride == 0)
    ys, xs = ys[pick], xs[pick]
    if ys.size == 0:
        return gmap
    d = frame.depth[ys, xs]
    pts_cam = K.backproject(xs.astype(np.float64), ys.astype(np.float64), d)
    means = pose.transform(pts_cam)
    log_scales = np.repeat(np.log(cfg.footprint_scale * d / K.fx)[:, None], 3, axis=1)
    rotations = np.zeros((len(ys), 4))
    rotations[:, 0] = 1.0
    logit = float(np.log(cfg.init_opacity / (1.0 - cfg.init_opacity)))
    new = GaussianMap(means, log_scales, rotations,
                      np.full(len(ys), logit), frame.rgb[ys, xs])
    return gmap.extend(new)


def gaussian_importances(gmap: GaussianMap,
                         recent_renders: Sequence[RenderOutput]) -> np.ndarray:
    """Mean over views of the per-Gaussian blended contribution mass."""
    if not recent_renders:
        raise ConfigurationError("prune needs at least one recent render")
    acc = np.zeros(len(gmap))
    for r in recent_renders:
        if len(r._gmap) != len(gmap):
            raise ConfigurationError("render does not match the current map size")
        acc += r.gaussian_importance()
    return acc / len(recent_renders)


def prune(gmap: GaussianMap, recent_renders: Sequence[RenderOutput],
          cfg: DensifyConfig = None) -> GaussianMap:
    """Drop Gaussians whose multi-view importance falls below the floor."""
    cfg = cfg or DensifyConfig()
    imp = gaussian_importances(gmap, recent_renders)
    return gmap.select(imp >= cfg.prune_importance_floor)
