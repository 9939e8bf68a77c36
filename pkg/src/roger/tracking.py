"""Camera tracking: constant-velocity initialization, adaptive residual
weighting and pose optimization over high-opacity pixels.

The tracking objective is the reweighted L1 loss with the weight-ratio
regularizer; descent uses its Huber-smoothed surrogate (identical minimizer,
usable line searches) driven by L-BFGS, which needs only first derivatives.
The reported per-iteration losses and the best-pose selection always use the
exact L1 objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .core import CameraPose, Frame, GaussianMap, Intrinsics, apply_pose_tangent, \
    compose_pose, inverse_pose, quat_normalize
from .errors import RogerError
from .rasterizer import RasterConfig, DEFAULT_CONFIG, RenderOutput, render, \
    render_backward


@dataclass
class TrackerConfig:
    gamma_im: float = 0.5
    gamma_depth: float = 0.5
    rho: float = 2.0           # pre-calibrated ideal depth/color weight ratio
    lambda_R: float = 0.1
    opacity_gate: float = 0.99
    iters: int = 40
    fallback_gate: float = 0.5
    min_gate_fraction: float = 0.01  # strict gate below this coverage counts as empty
    huber_delta_color: float = 0.02
    huber_delta_depth: float = 0.02
    bound_translation: float = 0.25  # line-search trust bounds on the tangent
    bound_rotation: float = 0.35
    literal_additive_init: bool = False

    def __post_init__(self):
        if min(self.gamma_im, self.gamma_depth, self.rho, self.lambda_R) <= 0:
            raise ValueError("tracker coefficients must be positive")
        if not 0 < self.opacity_gate < 1:
            raise ValueError("opacity gate must be in (0,1)")


def init_pose(prev: Optional[CameraPose], prev2: Optional[CameraPose],
              cfg: TrackerConfig = None) -> CameraPose:
    """Constant-velocity forecast: re-apply the last inter-frame motion."""
    if prev is None:
        return CameraPose.identity()
    if prev2 is None:
        return CameraPose(prev.q.copy(), prev.t.copy())
    if cfg is not None and cfg.literal_additive_init:
        # literal additive forecast on translation + renormalized quaternion
        q2 = prev2.q if float(prev2.q @ prev.q) >= 0 else -prev2.q
        return CameraPose(quat_normalize(2.0 * prev.q - q2), 2.0 * prev.t - prev2.t)
    return compose_pose(prev, compose_pose(inverse_pose(prev2), prev))


def adaptive_weights(l_color: float, l_depth: float,
                     cfg: TrackerConfig = None) -> tuple[float, float]:
    """Residual-driven weights in (0,1]; saturate to 1 at zero residual."""
    cfg = cfg or TrackerConfig()
    w_im = cfg.gamma_im / (l_color + cfg.gamma_im)
    w_depth = cfg.gamma_depth / (l_depth + cfg.gamma_depth)
    return float(w_im), float(w_depth)


@dataclass
class TrackingLossReport:
    loss: float
    l1_color: float
    l1_depth: float
    w_im: float
    w_depth: float
    regularizer: float
    mask_count: int
    fallback_used: bool


def _supervision_mask(render_out: RenderOutput, cfg: TrackerConfig):
    o = render_out.opacity
    mask = o > cfg.opacity_gate
    fallback = False
    if mask.sum() < max(1, int(cfg.min_gate_fraction * o.size)):
        # an (effectively) empty strict gate leaves the pose unconstrained
        mask = o > cfg.fallback_gate
        fallback = True
        if not mask.any():
            raise RogerError("tracking loss undefined: no supervised pixels")
    return mask, fallback


def tracking_loss(render_out: RenderOutput, frame: Frame,
                  cfg: TrackerConfig = None, adaptive: bool = True,
                  fixed_weights: tuple[float, float] = (0.5, 1.0),
                  want_grad: bool = False):
    """Reweighted L1 tracking objective over high-opacity pixels.

    Returns the report alone, or (report, grad_color, grad_depth) when
    want_grad is set; gradients are the exact L1 subgradients. The adaptive
    weights are treated as constants per evaluation.
    """
    cfg = cfg or TrackerConfig()
    mask, fallback = _supervision_mask(render_out, cfg)
    diff_c = render_out.color - frame.rgb
    l1_color = float(np.abs(diff_c[mask]).mean())
    dmask = mask & frame.valid_depth
    diff_d = render_out.depth - frame.depth
    l1_depth = float(np.abs(diff_d[dmask]).mean()) if dmask.any() else 0.0

    if adaptive:
        w_im, w_depth = adaptive_weights(l1_color, l1_depth, cfg)
    else:
        w_im, w_depth = fixed_weights
    reg = cfg.lambda_R * (np.log(w_depth / w_im) - np.log(cfg.rho)) ** 2
    loss = w_im * l1_color + w_depth * l1_depth + reg
    report = TrackingLossReport(float(loss), l1_color, l1_depth, w_im, w_depth,
                                float(reg), int(mask.sum()), fallback)
    if not want_grad:
        return report

    g_color = np.zeros_like(render_out.color)
    g_color[mask] = w_im * np.sign(diff_c[mask]) / (mask.sum() * 3)
    g_depth = np.zeros_like(render_out.depth)
    if dmask.any():
        g_depth[dmask] = w_depth * np.sign(diff_d[dmask]) / dmask.sum()
    return report, g_color, g_depth


def _huber(r: np.ndarray, delta: float):
    """Value and derivative of the L1-matched Huber penalty."""
    a = np.abs(r)
    val = np.where(a <= delta, 0.5 * r * r / delta, a - 0.5 * delta)
    return val, np.clip(r / delta, -1.0, 1.0)


@dataclass
class TrackResult:
    pose: CameraPose
    losses: list               # exact objective at every visited pose
    best_loss: float
    best_iter: int
    init: CameraPose
    fallback_used: bool = False
    diverged: bool = False
    reports: list = field(default_factory=list)


def track(gmap: GaussianMap, frame: Frame, K: Intrinsics,
          prev_poses: list[CameraPose], cfg: TrackerConfig = None,
          adaptive: bool = True, fixed_weights: tuple[float, float] = (0.5, 1.0),
          raster: RasterConfig = DEFAULT_CONFIG) -> TrackResult:
    """Pose refinement with frozen Gaussians; returns the best-loss pose."""
    cfg = cfg or TrackerConfig()
    if len(gmap) == 0:
        raise RogerError("cannot track against an empty map")
    prev = prev_poses[-1] if prev_poses else None
    prev2 = prev_poses[-2] if len(prev_poses) > 1 else None
    start = init_pose(prev, prev2, cfg)

    state = {"best": (np.inf, start, -1), "losses": [], "reports": [],
             "fallback": False, "evals": 0}

    def objective(x):
        pose = apply_pose_tangent(start, x)
        out = render(gmap, pose, K, raster)
        try:
            mask, fallback = _supervision_mask(out, cfg)
        except RogerError:
            return 1e6, np.zeros(6)
        dmask = mask & frame.valid_depth
        rc = (out.color - frame.rgb)[mask]
        rd = (out.depth - frame.depth)[dmask]
        l1c = float(np.abs(rc).mean())
        l1d = float(np.abs(rd).mean()) if rd.size else 0.0
        if adaptive:
            w_im, w_depth = adaptive_weights(l1c, l1d, cfg)
        else:
            w_im, w_depth = fixed_weights
        reg = cfg.lambda_R * (np.log(w_depth / w_im) - np.log(cfg.rho)) ** 2
        exact = w_im * l1c + w_depth * l1d + reg

        state["losses"].append(float(exact))
        state["fallback"] = state["fallback"] or fallback
        if np.isfinite(exact) and exact < state["best"][0]:
            state["best"] = (float(exact), pose, state["evals"])
        state["evals"] += 1

        hc, dhc = _huber(rc, cfg.huber_delta_color)
        val = w_im * float(hc.mean()) + reg
        g_color = np.zeros_like(out.color)
        g_color[mask] = w_im * dhc / rc.size
        g_depth = np.zeros_like(out.depth)
        if rd.size:
            hd, dhd = _huber(rd, cfg.huber_delta_depth)
            val += w_depth * float(hd.mean())
            g_depth[dmask] = w_depth * dhd / rd.size
        grads = render_backward(out, g_color, g_depth, np.zeros_like(g_depth),
                                wrt=("pose",))
        return val, grads.pose

    bounds = [(-cfg.bound_translation, cfg.bound_translation)] * 3 \
        + [(-cfg.bound_rotation, cfg.bound_rotation)] * 3
    try:
        minimize(objective, np.zeros(6), jac=True, method="L-BFGS-B",
                 bounds=bounds,
                 options={"maxiter": cfg.iters, "ftol": 1e-14, "gtol": 1e-12,
                          "maxls": 25})
    except Exception:
        return TrackResult(start, state["losses"], np.inf, -1, start,
                           state["fallback"], diverged=True)

    best_loss, best_pose, best_iter = state["best"]
    if not np.isfinite(best_loss):
        return TrackResult(start, state["losses"], np.inf, -1, start,
                           state["fallback"], diverged=True)
    return TrackResult(best_pose, state["losses"], best_loss, best_iter, start,
                       state["fallback"], diverged=False)
