"""Trajectory and image-quality metrics: ATE RMSE, PSNR, SSIM.

SSIM follows the universal reference implementation (11x11 Gaussian window,
sigma 1.5, C1 = 0.01^2, C2 = 0.03^2, per-channel average over the valid
region) and also exposes its analytic gradient for the mapping loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .core import CameraPose
from .errors import DataError

ASSOC_MAX_GAP = 0.02  # seconds


@dataclass
class Trajectory:
    """Timestamped pose sequence; timestamps must be strictly increasing."""

    poses: list = field(default_factory=list)  # [(timestamp, CameraPose)]

    def __post_init__(self):
        ts = [t for t, _ in self.poses]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DataError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def append(self, timestamp: float, pose: CameraPose):
        if self.poses and timestamp <= self.poses[-1][0]:
            raise DataError("trajectory timestamps must be strictly increasing")
        self.poses.append((float(timestamp), pose))

    def translations(self) -> np.ndarray:
        return np.array([p.t for _, p in self.poses]).reshape(-1, 3)

    def timestamps(self) -> np.ndarray:
        return np.array([t for t, _ in self.poses])

    def path_length(self) -> float:
        t = self.translations()
        return float(np.linalg.norm(np.diff(t, axis=0), axis=1).sum()) if len(t) > 1 else 0.0


def associate(est: Trajectory, gt: Trajectory, max_gap: float = ASSOC_MAX_GAP):
    """Greedy one-to-one nearest-timestamp association within max_gap seconds."""
    te, tg = est.timestamps(), gt.timestamps()
    pairs = []
    for i, t in enumerate(te):
        j = int(np.argmin(np.abs(tg - t)))
        gap = abs(tg[j] - t)
        if gap <= max_gap:
            pairs.append((gap, i, j))
    pairs.sort()
    used_i, used_j, out = set(), set(), []
    for _, i, j in pairs:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        out.append((i, j))
    out.sort()
    return out


def rigid_align(src: np.ndarray, dst: np.ndarray):
    """Rotation + translation (no scale) minimizing ||dst - (R src + t)||^2."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    s = np.diag([1.0, 1.0, d])
    r = vt.T @ s @ u.T
    t = mu_d - r @ mu_s
    return r, t


def ate_rmse(est: Trajectory, gt: Trajectory, max_gap: float = ASSOC_MAX_GAP) -> float:
    """Absolute trajectory error RMSE in centimeters, after rigid alignment."""
    pairs = associate(est, gt, max_gap)
    if len(pairs) < 2:
        raise DataError(f"need >= 2 associated pose pairs, got {len(pairs)}")
    e = est.translations()[[i for i, _ in pairs]]
    g = gt.translations()[[j for _, j in pairs]]
    r, t = rigid_align(e, g)
    res = g - (e @ r.T + t)
    return float(np.sqrt((res ** 2).sum(axis=1).mean()) * 100.0)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0,1] images; +inf when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"image dims differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2
_WIN = 11
_PAD = _WIN // 2


def _gaussian_window(sigma: float = 1.5, size: int = _WIN) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


_W1D = _gaussian_window()


def _conv_valid(img: np.ndarray) -> np.ndarray:
    out = correlate1d(img, _W1D, axis=0, mode="constant")
    out = correlate1d(out, _W1D, axis=1, mode="constant")
    return out[_PAD:-_PAD, _PAD:-_PAD]


def _conv_full(g: np.ndarray, shape) -> np.ndarray:
    full = np.zeros(shape)
    full[_PAD:-_PAD, _PAD:-_PAD] = g
    full = correlate1d(full, _W1D, axis=0, mode="constant")
    return correlate1d(full, _W1D, axis=1, mode="constant")


def _ssim_channel(x: np.ndarray, y: np.ndarray, want_grad: bool):
    h, w = x.shape
    if min(h, w) < _WIN:
        # single global window
        mx, my = x.mean(), y.mean()
        vx = ((x - mx) ** 2).mean()
        vy = ((y - my) ** 2).mean()
        vxy = ((x - mx) * (y - my)).mean()
        a1, a2 = 2 * mx * my + _SSIM_C1, 2 * vxy + _SSIM_C2
        b1, b2 = mx * mx + my * my + _SSIM_C1, vx + vy + _SSIM_C2
        s = (a1 * a2) / (b1 * b2)
        if not want_grad:
            return s, None
        # raw-moment chain: p1 = mean(x), p3 = mean(x^2), p5 = mean(xy)
        n = x.size
        ds_da1, ds_da2 = a2 / (b1 * b2), a1 / (b1 * b2)
        ds_db1, ds_db2 = -s / b1, -s / b2
        ds_dp1 = (ds_da1 * 2 * my + ds_da2 * (-2 * my)
                  + ds_db1 * 2 * mx + ds_db2 * (-2 * mx))
        grad = (ds_dp1 + ds_db2 * 2 * x + ds_da2 * 2 * y) / n
        return s, grad

    p1 = _conv_valid(x)
    p2 = _conv_valid(y)
    p3 = _conv_valid(x * x)
    p4 = _conv_valid(y * y)
    p5 = _conv_valid(x * y)
    sxy = p5 - p1 * p2
    a1 = 2 * p1 * p2 + _SSIM_C1
    a2 = 2 * sxy + _SSIM_C2
    b1 = p1 * p1 + p2 * p2 + _SSIM_C1
    b2 = (p3 - p1 * p1) + (p4 - p2 * p2) + _SSIM_C2
    smap = (a1 * a2) / (b1 * b2)
    s = float(smap.mean())
    if not want_grad:
        return s, None
    n = smap.size
    ds_da1, ds_da2 = a2 / (b1 * b2), a1 / (b1 * b2)
    ds_db1, ds_db2 = -smap / b1, -smap / b2
    ds_dp1 = (ds_da1 * 2 * p2 - ds_da2 * 2 * p2 + ds_db1 * 2 * p1 - ds_db2 * 2 * p1) / n
    ds_dp3 = ds_db2 / n
    ds_dp5 = ds_da2 * 2 / n
    grad = (_conv_full(ds_dp1, x.shape)
            + 2 * x * _conv_full(ds_dp3, x.shape)
            + y * _conv_full(ds_dp5, x.shape))
    return s, grad


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM in [-1, 1]; channels are scored independently and averaged."""
    v, _ = ssim_with_grad(a, b, want_grad=False)
    return v


def ssim_with_grad(a: np.ndarray, b: np.ndarray, want_grad: bool = True):
    """SSIM value plus d(ssim)/da, used by the mapping loss."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"image dims differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    vals, grads = [], []
    for c in range(a.shape[2]):
        v, g = _ssim_channel(a[..., c], b[..., c], want_grad)
        vals.append(v)
        grads.append(g)
    value = float(np.mean(vals))
    if not want_grad:
        return value, None
    grad = np.stack(grads, axis=-1) / a.shape[2]
    return value, grad


def metrics_record(seq: str, condition: str, ate_cm, psnr_db, ssim_val,
                   lpips=None) -> dict:
    """JSON-ready metrics row; LPIPS stays 'n/a' unless a sidecar supplies it."""
    def num(v):
        if v is None:
            return None
        return "inf" if (isinstance(v, float) and math.isinf(v)) else round(float(v), 6)
    return {"seq": seq, "condition": condition, "ate_cm": num(ate_cm),
            "psnr_db": num(psnr_db), "ssim": num(ssim_val),
            "lpips": lpips if lpips is not None else "n/a"}


def format_table(rows: list[dict]) -> str:
    """Plain-text metrics table matching the evaluation column layout."""
    headers = ["seq", "condition", "ATE[cm]", "PSNR[dB]", "SSIM", "LPIPS"]
    keys = ["seq", "condition", "ate_cm", "psnr_db", "ssim", "lpips"]
    cells = [[str(r.get(k, "-") if r.get(k) is not None else "-") for k in keys]
             for r in rows]
    widths = [max(len(h), *(len(c[i]) for c in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    def fmt(vals):
        return "  ".join(v.ljust(w) for v, w in zip(vals, widths))
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines += [fmt(c) for c in cells]
    return "\n".join(lines)
