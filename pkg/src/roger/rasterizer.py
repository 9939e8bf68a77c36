"""Differentiable splat rasterizer: forward color/depth/opacity and analytic backward.

The optimized path flattens every (gaussian, pixel) contribution into parallel
arrays, sorts them by (pixel, depth rank) and composites with segment-wise
cumulative sums, which keeps the whole pass vectorized and bit-stable. A naive
sequential compositor (`render_reference`) acts as the correctness oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (CameraPose, DEFAULT_PYRAMID_SCALES, GaussianMap, ImagePyramid,
                   Intrinsics, hat, quat_to_mat)


@dataclass(frozen=True)
class RasterConfig:
    near_plane: float = 0.01
    alpha_clamp: float = 0.999      # per-pixel alpha ceiling, keeps gradients alive
    cov_reg: float = 0.3            # px^2 added to the 2D covariance diagonal
    early_exit: float = 1e-4        # skip contributions once transmittance drops below
    alpha_floor: float = 1e-4       # drop negligible per-pixel alphas
    bbox_sigma: Optional[float] = 4.0  # splat extent in projected sigmas; None = full image

    @classmethod
    def exact(cls, cov_reg: float = 0.3) -> "RasterConfig":
        """Oracle-comparison mode: no early exit, no footprint or alpha cutoffs."""
        return cls(cov_reg=cov_reg, early_exit=0.0, alpha_floor=0.0, bbox_sigma=None)


DEFAULT_CONFIG = RasterConfig()


@dataclass
class ProjectedGaussian:
    center2d: np.ndarray
    cov2d: np.ndarray
    depth_cam: float
    alpha: float
    color: np.ndarray
    source_index: int


class _Projection:
    """Camera-frame intermediates for the visible subset of the map."""

    __slots__ = ("idx", "m", "z", "center2d", "cov2d", "inv_a", "inv_b", "inv_c",
                 "alpha_g", "color", "jac", "cov_cam", "rank")

    def __init__(self, **kw):
        for k, v in kw.items():
            setattr(self, k, v)

    def __len__(self):
        return len(self.idx)


def _project_soa(gmap: GaussianMap, pose: CameraPose, K: Intrinsics,
                 config: RasterConfig) -> _Projection:
    n = len(gmap)
    if n == 0:
        return _empty_projection()
    R = pose.rotation()
    m = (gmap.means - pose.t) @ R  # world -> camera
    vis = m[:, 2] > config.near_plane
    idx = np.flatnonzero(vis)
    if idx.size == 0:
        return _empty_projection()
    m = m[idx]
    x, y, z = m[:, 0], m[:, 1], m[:, 2]

    cov_w = gmap.covariances()[idx]
    cov_cam = np.einsum("ji,njk,kl->nil", R, cov_w, R)  # R^T Sigma R

    fx, fy = K.fx, K.fy
    u = fx * x / z + K.cx
    v = fy * y / z + K.cy
    center2d = np.stack([u, v], axis=1)

    jac = np.zeros((len(idx), 2, 3))
    jac[:, 0, 0] = fx / z
    jac[:, 0, 2] = -fx * x / z ** 2
    jac[:, 1, 1] = fy / z
    jac[:, 1, 2] = -fy * y / z ** 2

    cov2d = np.einsum("nij,njk,nlk->nil", jac, cov_cam, jac)
    cov2d[:, 0, 0] += config.cov_reg
    cov2d[:, 1, 1] += config.cov_reg

    a2, b2, c2 = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a2 * c2 - b2 * b2

    # depth-ascending rank, ties broken by source index
    order = np.lexsort((idx, z))
    rank = np.empty(len(idx), dtype=np.int64)
    rank[order] = np.arange(len(idx))

    return _Projection(idx=idx, m=m, z=z, center2d=center2d, cov2d=cov2d,
                       inv_a=c2 / det, inv_b=-b2 / det, inv_c=a2 / det,
                       alpha_g=gmap.alphas()[idx], color=gmap.colors[idx],
                       jac=jac, cov_cam=cov_cam, rank=rank)


def _empty_projection() -> _Projection:
    z0 = np.zeros(0)
    return _Projection(idx=np.zeros(0, dtype=np.int64), m=np.zeros((0, 3)), z=z0,
                       center2d=np.zeros((0, 2)), cov2d=np.zeros((0, 2, 2)),
                       inv_a=z0, inv_b=z0, inv_c=z0, alpha_g=z0,
                       color=np.zeros((0, 3)), jac=np.zeros((0, 2, 3)),
                       cov_cam=np.zeros((0, 3, 3)), rank=np.zeros(0, dtype=np.int64))


def project(gmap: GaussianMap, pose: CameraPose, K: Intrinsics,
            config: RasterConfig = DEFAULT_CONFIG) -> list[ProjectedGaussian]:
    """Perspective projection of every Gaussian in front of the near plane."""
    p = _project_soa(gmap, pose, K, config)
    return [ProjectedGaussian(center2d=p.center2d[i].copy(), cov2d=p.cov2d[i].copy(),
                              depth_cam=float(p.z[i]), alpha=float(p.alpha_g[i]),
                              color=p.color[i].copy(), source_index=int(p.idx[i]))
            for i in range(len(p))]


class _Records:
    """Flat applied contributions, sorted by (pixel, depth rank)."""

    __slots__ = ("pix", "gid", "alpha", "trans", "clamped", "starts", "seg_id")

    def __init__(self, pix, gid, alpha, trans, clamped):
        self.pix = pix
        self.gid = gid
        self.alpha = alpha
        self.trans = trans
        self.clamped = clamped
        if len(pix):
            new = np.empty(len(pix), dtype=bool)
            new[0] = True
            np.not_equal(pix[1:], pix[:-1], out=new[1:])
            self.starts = np.flatnonzero(new)
            self.seg_id = np.cumsum(new) - 1
        else:
            self.starts = np.zeros(0, dtype=np.int64)
            self.seg_id = np.zeros(0, dtype=np.int64)

    def __len__(self):
        return len(self.pix)


@dataclass
class RenderOutput:
    color: np.ndarray    # (H, W, 3)
    depth: np.ndarray    # (H, W)
    opacity: np.ndarray  # (H, W)
    width: int
    height: int
    _records: _Records = field(repr=False, default=None)
    _proj: _Projection = field(repr=False, default=None)
    _gmap: GaussianMap = field(repr=False, default=None)
    _pose: CameraPose = field(repr=False, default=None)
    _K: Intrinsics = field(repr=False, default=None)
    _config: RasterConfig = field(repr=False, default=None)

    def pixel_contributions(self, x: int, y: int) -> list[tuple[int, float, float]]:
        """Ordered (source index, alpha, transmittance) records for one pixel."""
        rec = self._records
        p = y * self.width + x
        lo = np.searchsorted(rec.pix, p, side="left")
        hi = np.searchsorted(rec.pix, p, side="right")
        src = self._proj.idx
        return [(int(src[rec.gid[i]]), float(rec.alpha[i]), float(rec.trans[i]))
                for i in range(lo, hi)]

    def gaussian_importance(self) -> np.ndarray:
        """Per map Gaussian: sum over pixels of alpha * transmittance."""
        rec = self._records
        w = rec.alpha * rec.trans
        per_proj = np.bincount(rec.gid, weights=w, minlength=len(self._proj))
        out = np.zeros(len(self._gmap))
        out[self._proj.idx] = per_proj
        return out


def render(gmap: GaussianMap, pose: CameraPose, K: Intrinsics,
           config: RasterConfig = DEFAULT_CONFIG) -> RenderOutput:
    """Depth-sorted alpha compositing of color, depth and opacity."""
    H, W = K.height, K.width
    proj = _project_soa(gmap, pose, K, config)
    n = len(proj)
    if n == 0:
        return RenderOutput(np.zeros((H, W, 3)), np.zeros((H, W)), np.zeros((H, W)),
                            W, H, _Records(*[np.zeros(0, dtype=t) for t in
                                             (np.int64, np.int64, np.float64,
                                              np.float64, bool)]),
                            proj, gmap, pose, K, config)

    # splat footprint per gaussian
    cx, cy = proj.center2d[:, 0], proj.center2d[:, 1]
    if config.bbox_sigma is None:
        x0 = np.zeros(n, dtype=np.int64)
        y0 = np.zeros(n, dtype=np.int64)
        x1 = np.full(n, W - 1, dtype=np.int64)
        y1 = np.full(n, H - 1, dtype=np.int64)
    else:
        a2, b2, c2 = proj.cov2d[:, 0, 0], proj.cov2d[:, 0, 1], proj.cov2d[:, 1, 1]
        lam_max = 0.5 * (a2 + c2) + np.sqrt(0.25 * (a2 - c2) ** 2 + b2 ** 2)
        r = np.ceil(config.bbox_sigma * np.sqrt(lam_max)) + 1.0
        x0 = np.clip(np.floor(cx - r), 0, W - 1).astype(np.int64)
        x1 = np.clip(np.ceil(cx + r), 0, W - 1).astype(np.int64)
        y0 = np.clip(np.floor(cy - r), 0, H - 1).astype(np.int64)
        y1 = np.clip(np.ceil(cy + r), 0, H - 1).astype(np.int64)
        off = (cx < -r) | (cx > W - 1 + r) | (cy < -r) | (cy > H - 1 + r)
        x1[off] = x0[off] - 1  # empty bbox for splats fully outside the image

    bw = np.maximum(x1 - x0 + 1, 0)
    bh = np.maximum(y1 - y0 + 1, 0)
    counts = bw * bh
    total = int(counts.sum())

    if total == 0:
        rec = _Records(*[np.zeros(0, dtype=t) for t in
                         (np.int64, np.int64, np.float64, np.float64, bool)])
        return RenderOutput(np.zeros((H, W, 3)), np.zeros((H, W)), np.zeros((H, W)),
                            W, H, rec, proj, gmap, pose, K, config)

    gid = np.repeat(np.arange(n, dtype=np.int64), counts)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts)
    bwg = bw[gid]
    px = x0[gid] + local % bwg
    py = y0[gid] + local // bwg

    dx = px - cx[gid]
    dy = py - cy[gid]
    q = -0.5 * (proj.inv_a[gid] * dx * dx + 2.0 * proj.inv_b[gid] * dx * dy
                + proj.inv_c[gid] * dy * dy)
    araw = proj.alpha_g[gid] * np.exp(q)

    if config.alpha_floor > 0.0:
        keep = araw >= config.alpha_floor
        gid, px, py, araw = gid[keep], px[keep], py[keep], araw[keep]
    if len(araw) == 0:
        rec = _Records(*[np.zeros(0, dtype=t) for t in
                         (np.int64, np.int64, np.float64, np.float64, bool)])
        return RenderOutput(np.zeros((H, W, 3)), np.zeros((H, W)), np.zeros((H, W)),
                            W, H, rec, proj, gmap, pose, K, config)

    clamped = araw > config.alpha_clamp
    alpha = np.where(clamped, config.alpha_clamp, araw)

    pix = py * W + px
    order = np.lexsort((proj.rank[gid], pix))
    pix, gid, alpha, clamped = pix[order], gid[order], alpha[order], clamped[order]

    # segment-local transmittance via log-space prefix sums
    logs = np.log1p(-alpha)
    cs = np.cumsum(logs)
    pe = cs - logs  # exclusive prefix
    new = np.empty(len(pix), dtype=bool)
    new[0] = True
    np.not_equal(pix[1:], pix[:-1], out=new[1:])
    seg_id = np.cumsum(new) - 1
    base = pe[np.flatnonzero(new)]
    with np.errstate(under="ignore"):
        trans = np.exp(pe - base[seg_id])

    if config.early_exit > 0.0:
        applied = trans >= config.early_exit
        pix, gid, alpha, trans, clamped = (pix[applied], gid[applied], alpha[applied],
                                           trans[applied], clamped[applied])

    rec = _Records(pix, gid, alpha, trans, clamped)
    w = rec.alpha * rec.trans
    hw = H * W
    color = np.stack([np.bincount(rec.pix, weights=w * proj.color[rec.gid, c],
                                  minlength=hw) for c in range(3)], axis=1)
    depth = np.bincount(rec.pix, weights=w * proj.z[rec.gid], minlength=hw)
    opac = np.bincount(rec.pix, weights=w, minlength=hw)

    return RenderOutput(color.reshape(H, W, 3), depth.reshape(H, W),
                        opac.reshape(H, W), W, H, rec, proj, gmap, pose, K, config)


def render_reference(gmap: GaussianMap, pose: CameraPose, K: Intrinsics,
                     config: RasterConfig = RasterConfig.exact()):
    """Naive full-image sequential compositor (the equivalence oracle).

    Walks the depth-sorted Gaussians one by one, evaluating every pixel with no
    footprint cutoff, no alpha floor and no early termination.
    """
    H, W = K.height, K.width
    proj = _project_soa(gmap, pose, K, config)
    color = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    opac = np.zeros((H, W))
    trans = np.ones((H, W))
    ys, xs = np.mgrid[0:H, 0:W]
    for i in np.argsort(proj.rank):
        dx = xs - proj.center2d[i, 0]
        dy = ys - proj.center2d[i, 1]
        q = -0.5 * (proj.inv_a[i] * dx * dx + 2.0 * proj.inv_b[i] * dx * dy
                    + proj.inv_c[i] * dy * dy)
        alpha = np.minimum(proj.alpha_g[i] * np.exp(q), config.alpha_clamp)
        w = alpha * trans
        color += w[..., None] * proj.color[i]
        depth += w * proj.z[i]
        opac += w
        trans = trans * (1.0 - alpha)
    return color, depth, opac


@dataclass
class RenderGrads:
    """Gradients aligned with the map arrays; rotation/pose use tangent coords."""

    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray      # (N, 3) right-multiplicative SO(3) tangent
    opacity_logits: np.ndarray
    colors: np.ndarray
    pose: np.ndarray           # (6,) body-frame (translation, rotation) tangent


def render_backward(out: RenderOutput, grad_color: np.ndarray,
                    grad_depth: np.ndarray, grad_opacity: np.ndarray,
                    wrt: Sequence[str] = ("gaussians", "pose")) -> RenderGrads:
    """Analytic gradients of the compositing equations.

    Backpropagates d(loss)/d(color, depth, opacity) images through blending,
    the projected covariance (including the Jacobian's dependence on the
    camera-frame mean) and the world-to-camera transform.
    """
    gmap, proj, rec = out._gmap, out._proj, out._records
    n_map = len(gmap)
    grads = RenderGrads(np.zeros((n_map, 3)), np.zeros((n_map, 3)),
                        np.zeros((n_map, 3)), np.zeros(n_map),
                        np.zeros((n_map, 3)), np.zeros(6))
    n = len(proj)
    if n == 0 or len(rec) == 0:
        return grads

    W = out.width
    gc = np.ascontiguousarray(grad_color, dtype=np.float64).reshape(-1, 3)
    gd = np.asarray(grad_depth, dtype=np.float64).ravel()
    go = np.asarray(grad_opacity, dtype=np.float64).ravel()

    gid, pix = rec.gid, rec.pix
    w = rec.alpha * rec.trans

    # upstream sensitivity of each record's blend weight
    s = (np.einsum("mc,mc->m", gc[pix], proj.color[gid])
         + gd[pix] * proj.z[gid] + go[pix])

    # d(loss)/d(alpha_i) needs the suffix sum of s*w over later records in the pixel
    r = s * w
    cs = np.cumsum(r)
    base = (cs - r)[rec.starts]
    prefix_incl = cs - base[rec.seg_id]
    seg_last = np.concatenate([rec.starts[1:] - 1, [len(rec) - 1]])
    totals = cs[seg_last] - base
    suffix = totals[rec.seg_id] - prefix_incl
    dalpha = s * rec.trans - suffix / (1.0 - rec.alpha)
    dalpha[rec.clamped] = 0.0  # alpha ceiling: flat on the clamped side
    u = dalpha * rec.alpha     # d/dQ of alpha = alpha itself

    px = pix % W
    py = pix // W
    dx = px - proj.center2d[gid, 0]
    dy = py - proj.center2d[gid, 1]
    ad_x = proj.inv_a[gid] * dx + proj.inv_b[gid] * dy
    ad_y = proj.inv_b[gid] * dx + proj.inv_c[gid] * dy

    bc = lambda vals: np.bincount(gid, weights=vals, minlength=n)
    g_logit = bc(u) * (1.0 - proj.alpha_g)
    gc2d = np.stack([bc(u * ad_x), bc(u * ad_y)], axis=1)
    m_xx, m_xy, m_yy = bc(u * dx * dx), bc(u * dx * dy), bc(u * dy * dy)
    g_z = bc(w * gd[pix])
    g_col = np.stack([bc(w * gc[pix, c]) for c in range(3)], axis=1)

    # chain through Sigma' = J V J^T + reg: dL/dSigma' = 0.5 * A M A
    A = np.empty((n, 2, 2))
    A[:, 0, 0], A[:, 0, 1] = proj.inv_a, proj.inv_b
    A[:, 1, 0], A[:, 1, 1] = proj.inv_b, proj.inv_c
    M = np.empty((n, 2, 2))
    M[:, 0, 0], M[:, 0, 1] = m_xx, m_xy
    M[:, 1, 0], M[:, 1, 1] = m_xy, m_yy
    g_sig2 = 0.5 * np.einsum("nij,njk,nkl->nil", A, M, A)

    J, V = proj.jac, proj.cov_cam
    g_v = np.einsum("nji,njk,nkl->nil", J, g_sig2, J)       # dL/d cov_cam
    g_j = 2.0 * np.einsum("nij,njk,nkl->nil", g_sig2, J, V)  # dL/dJ

    fx, fy = out._K.fx, out._K.fy
    x, y, z = proj.m[:, 0], proj.m[:, 1], proj.m[:, 2]
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z

    # dL/dm: pinhole projection, J(m) dependence and the depth channel
    dm = np.zeros((n, 3))
    dm[:, 0] = gc2d[:, 0] * fx * inv_z - g_j[:, 0, 2] * fx * inv_z2
    dm[:, 1] = gc2d[:, 1] * fy * inv_z - g_j[:, 1, 2] * fy * inv_z2
    dm[:, 2] = (-gc2d[:, 0] * fx * x * inv_z2 - gc2d[:, 1] * fy * y * inv_z2
                - g_j[:, 0, 0] * fx * inv_z2 - g_j[:, 1, 1] * fy * inv_z2
                + g_j[:, 0, 2] * 2.0 * fx * x * inv_z2 * inv_z
                + g_j[:, 1, 2] * 2.0 * fy * y * inv_z2 * inv_z
                + g_z)

    R = out._pose.rotation()

    if "gaussians" in wrt:
        g_sigma_w = np.einsum("ij,njk,lk->nil", R, g_v, R)
        g_mu = dm @ R.T

        rot = quat_to_mat(gmap.rotations[proj.idx])
        m_rot = np.einsum("nji,njk,nkl->nil", rot, g_sigma_w, rot)
        d_eig = np.exp(2.0 * gmap.log_scales[proj.idx])
        g_ls = 2.0 * d_eig * np.stack([m_rot[:, 0, 0], m_rot[:, 1, 1],
                                       m_rot[:, 2, 2]], axis=1)
        g_rot = np.stack([
            2.0 * m_rot[:, 1, 2] * (d_eig[:, 1] - d_eig[:, 2]),
            2.0 * m_rot[:, 0, 2] * (d_eig[:, 2] - d_eig[:, 0]),
            2.0 * m_rot[:, 0, 1] * (d_eig[:, 0] - d_eig[:, 1]),
        ], axis=1)

        grads.means[proj.idx] = g_mu
        grads.log_scales[proj.idx] = g_ls
        grads.rotations[proj.idx] = g_rot
        grads.opacity_logits[proj.idx] = g_logit
        grads.colors[proj.idx] = g_col

    if "pose" in wrt:
        grads.pose[:3] = -dm.sum(axis=0)
        grads.pose[3:] = -np.cross(proj.m, dm).sum(axis=0)
        for k in range(3):
            bk = hat(np.eye(3)[k])
            comm = np.einsum("nij,jk->nik", V, bk) - np.einsum("ij,njk->nik", bk, V)
            grads.pose[3 + k] += np.einsum("nij,nij->", g_v, comm)

    return grads


def render_pyramid(gmap: GaussianMap, pose: CameraPose, K: Intrinsics,
                   scales: Sequence[float] = DEFAULT_PYRAMID_SCALES,
                   config: RasterConfig = DEFAULT_CONFIG) -> ImagePyramid:
    """Opacity maps rendered at each requested scale of the intrinsics."""
    levels = []
    for s in scales:
        out = render(gmap, pose, K.scaled(s), config)
        levels.append((float(s), out.opacity))
    return ImagePyramid(levels)
