"""Sequence I/O (TUM layout + JSON manifest) and synthetic scene generation.

Ground-truth frames are produced by an analytic ray caster over textured
planes, spheres and boxes — deliberately independent of the splat renderer so
end-to-end evaluation never scores the engine against its own forward model.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .core import CameraPose, Frame, Intrinsics, quat_normalize
from .degradation import NoiseParams, add_lowlight_noise, add_sensor_noise, judge
from .errors import DataError

DEFAULT_DEPTH_SCALE = 5000.0
# TUM freiburg-style defaults, used when a directory carries no manifest
DEFAULT_TUM_INTRINSICS = Intrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)


@dataclass
class FrameRecord:
    rgb_path: str
    depth_path: str
    timestamp: float
    gt_pose: Optional[list] = None  # [tx ty tz qx qy qz qw]


@dataclass
class SequenceManifest:
    name: str
    intrinsics: Intrinsics
    frames: list
    depth_scale: float = DEFAULT_DEPTH_SCALE
    condition: str = "clean"
    source: Optional[str] = None  # clean sequence dir a degraded copy came from
    root: Optional[str] = None

    def to_json(self) -> dict:
        k = self.intrinsics
        return {
            "name": self.name,
            "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                           "width": k.width, "height": k.height},
            "depth_scale": self.depth_scale,
            "condition": self.condition,
            "source": self.source,
            "frames": [{"rgb": f.rgb_path, "depth": f.depth_path,
                        "t": f.timestamp, "pose": f.gt_pose} for f in self.frames],
        }

    @classmethod
    def from_json(cls, data: dict, root: str = None) -> "SequenceManifest":
        k = data["intrinsics"]
        frames = [FrameRecord(f["rgb"], f["depth"], f["t"], f.get("pose"))
                  for f in data["frames"]]
        return cls(data["name"],
                   Intrinsics(k["fx"], k["fy"], k["cx"], k["cy"],
                              k["width"], k["height"]),
                   frames, data.get("depth_scale", DEFAULT_DEPTH_SCALE),
                   data.get("condition", "clean"), data.get("source"), root)


# ---------------------------------------------------------------------------
# PNG helpers
# ---------------------------------------------------------------------------

def save_rgb(path: Path, img: np.ndarray) -> None:
    u8 = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path)


def load_rgb(path: Path) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_depth(path: Path, depth_m: np.ndarray, depth_scale: float) -> None:
    u16 = np.clip(np.round(depth_m * depth_scale), 0, 65535).astype(np.uint16)
    Image.fromarray(u16).save(path)


def load_depth(path: Path, depth_scale: float) -> np.ndarray:
    raw = np.asarray(Image.open(path), dtype=np.float64)
    return raw / depth_scale


# ---------------------------------------------------------------------------
# TUM-format loading
# ---------------------------------------------------------------------------

def _read_index(path: Path) -> list[tuple[float, str]]:
    if not path.exists():
        raise DataError(f"missing index file {path}")
    rows = []
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise DataError(f"{path}:{ln}: expected 'timestamp path'")
        try:
            rows.append((float(parts[0]), parts[1]))
        except ValueError as exc:
            raise DataError(f"{path}:{ln}: {exc}") from exc
    return rows


def _read_groundtruth(path: Path) -> list[tuple[float, CameraPose]]:
    if not path.exists():
        return []
    rows = []
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise DataError(f"{path}:{ln}: expected 't tx ty tz qx qy qz qw'")
        try:
            t, tx, ty, tz, qx, qy, qz, qw = map(float, parts)
        except ValueError as exc:
            raise DataError(f"{path}:{ln}: {exc}") from exc
        rows.append((t, CameraPose(quat_normalize([qw, qx, qy, qz]),
                                   [tx, ty, tz])))
    return rows


def _nearest(ts: float, table: list, max_gap: float):
    best, best_gap = None, max_gap
    for t, item in table:
        gap = abs(t - ts)
        if gap <= best_gap:
            best, best_gap = item, gap
    return best


def load_tum(seq_dir, max_gap: float = 0.02):
    """Load a sequence directory; prefers the JSON manifest when present.

    Returns (manifest, frames). RGB/depth/groundtruth rows are associated by
    nearest timestamp; rows without a depth partner within max_gap seconds are
    dropped with a warning entry in the manifest condition log.
    """
    seq_dir = Path(seq_dir)
    if not seq_dir.exists():
        raise DataError(f"sequence directory {seq_dir} does not exist")

    mpath = seq_dir / "manifest.json"
    if mpath.exists():
        manifest = SequenceManifest.from_json(json.loads(mpath.read_text()),
                                              str(seq_dir))
        frames = []
        for rec in manifest.frames:
            rgb = load_rgb(seq_dir / rec.rgb_path)
            depth = load_depth(seq_dir / rec.depth_path, manifest.depth_scale)
            gt = None
            if rec.gt_pose is not None:
                tx, ty, tz, qx, qy, qz, qw = rec.gt_pose
                gt = CameraPose(quat_normalize([qw, qx, qy, qz]), [tx, ty, tz])
            frames.append(Frame(rgb, depth, rec.timestamp, gt))
        _check_frame_dims(frames, manifest.intrinsics)
        return manifest, frames

    rgb_rows = _read_index(seq_dir / "rgb.txt")
    depth_rows = _read_index(seq_dir / "depth.txt")
    gt_rows = _read_groundtruth(seq_dir / "groundtruth.txt")
    records, frames = [], []
    intr = None
    for ts, rgb_rel in rgb_rows:
        depth_rel = _nearest(ts, depth_rows, max_gap)
        if depth_rel is None:
            continue  # no depth partner within the association window
        rgb = load_rgb(seq_dir / rgb_rel)
        depth = load_depth(seq_dir / depth_rel, DEFAULT_DEPTH_SCALE)
        gt = _nearest(ts, gt_rows, max_gap) if gt_rows else None
        if intr is None:
            h, w = rgb.shape[:2]
            if (w, h) == (DEFAULT_TUM_INTRINSICS.width, DEFAULT_TUM_INTRINSICS.height):
                intr = DEFAULT_TUM_INTRINSICS
            else:
                # fall back to a 58-degree pinhole guess for unknown cameras
                intr = Intrinsics(0.9 * w, 0.9 * w, (w - 1) / 2, (h - 1) / 2, w, h)
        pose_row = None
        if gt is not None:
            pose_row = [*gt.t.tolist(), gt.q[1], gt.q[2], gt.q[3], gt.q[0]]
        records.append(FrameRecord(rgb_rel, depth_rel, ts, pose_row))
        frames.append(Frame(rgb, depth, ts, gt))
    if not frames:
        raise DataError(f"no associated frames in {seq_dir}")
    manifest = SequenceManifest(seq_dir.name, intr, records, root=str(seq_dir))
    _check_frame_dims(frames, intr)
    return manifest, frames


def _check_frame_dims(frames, intr: Intrinsics):
    for i, f in enumerate(frames):
        if f.rgb.shape[:2] != (intr.height, intr.width):
            raise DataError(f"frame {i} dims {f.rgb.shape[:2]} do not match "
                            f"intrinsics {(intr.height, intr.width)}")


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

@dataclass
class Primitive:
    kind: str                  # plane | sphere | box
    params: dict
    base_color: np.ndarray
    tex_amp: float = 0.08      # smooth band
    tex_freq: float = 3.0
    mid_amp: float = 0.18      # mid band: strong gradients, survives a 3x3 median
    mid_freq: float = 3.4
    detail_amp: float = 0.05   # pixel-scale detail, sets the clean residual level
    detail_freq: float = 6.5
    tex_phase: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class SyntheticScene:
    name: str
    primitives: list
    trajectory: str = "orbit"  # orbit | lissajous | linear
    frames: int = 20
    width: int = 80
    height: int = 60
    fps: float = 10.0
    orbit_span_deg: float = 36.0
    orbit_radius: float = 2.4
    look_at: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 2.4]))

    def intrinsics(self) -> Intrinsics:
        fx = 0.96 * self.width
        return Intrinsics(fx, fx, (self.width - 1) / 2.0, (self.height - 1) / 2.0,
                          self.width, self.height)


def _texture(prim: Primitive, pts: np.ndarray) -> np.ndarray:
    """World-space sinusoid texture: a smooth band plus fine surface detail."""
    f = prim.tex_freq
    s = (np.sin(2 * np.pi * (f * pts[:, 0] + prim.tex_phase[0]))
         * np.sin(2 * np.pi * (f * pts[:, 1] + prim.tex_phase[1]))
         + 0.5 * np.sin(2 * np.pi * (0.7 * f * pts[:, 2] + prim.tex_phase[2])))
    mid = (np.sin(2 * np.pi * (prim.mid_freq * (pts[:, 0] + 0.61 * pts[:, 1])
                               + prim.tex_phase[1]))
           + np.sin(2 * np.pi * (prim.mid_freq * 1.31 * (pts[:, 1] + 0.43 * pts[:, 2])
                                 + prim.tex_phase[0]))) * 0.5
    fine = (np.sin(2 * np.pi * (prim.detail_freq * (pts[:, 0] + 0.37 * pts[:, 2])
                                + prim.tex_phase[0]))
            * np.sin(2 * np.pi * (prim.detail_freq * (pts[:, 1] - 0.21 * pts[:, 2])
                                  + prim.tex_phase[2])))
    bump = (prim.tex_amp * s[:, None] + prim.mid_amp * mid[:, None]
            + prim.detail_amp * fine[:, None])
    return np.clip(prim.base_color[None, :] * (1.0 + bump), 0.0, 1.0)


def _intersect(prim: Primitive, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Ray parameter t (camera z-depth) per ray; inf where missed."""
    inf = np.full(dirs.shape[0], np.inf)
    if prim.kind == "plane":
        p0 = np.asarray(prim.params["point"], dtype=np.float64)
        n = np.asarray(prim.params["normal"], dtype=np.float64)
        u = np.asarray(prim.params["u"], dtype=np.float64)
        v = np.asarray(prim.params["v"], dtype=np.float64)
        hu, hv = prim.params["half_extents"]
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((p0 - origin) @ n) / denom
        hit = origin + t[:, None] * dirs - p0
        ok = (np.abs(denom) > 1e-12) & (t > 1e-6) \
            & (np.abs(hit @ u) <= hu) & (np.abs(hit @ v) <= hv)
        return np.where(ok, t, inf)
    if prim.kind == "sphere":
        c = np.asarray(prim.params["center"], dtype=np.float64)
        r = prim.params["radius"]
        oc = origin - c
        a = np.einsum("nd,nd->n", dirs, dirs)
        b = 2.0 * dirs @ oc
        cc = oc @ oc - r * r
        disc = b * b - 4 * a * cc
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t = (-b - sq) / (2 * a)
        t2 = (-b + sq) / (2 * a)
        t = np.where(t > 1e-6, t, t2)  # camera inside: take the far root
        return np.where(ok & (t > 1e-6), t, inf)
    if prim.kind == "box":
        lo = np.asarray(prim.params["min"], dtype=np.float64)
        hi = np.asarray(prim.params["max"], dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[None, :] - origin[None, :]) / dirs
            t2 = (hi[None, :] - origin[None, :]) / dirs
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        ok = (tmax >= tmin) & (tmax > 1e-6)
        t = np.where(tmin > 1e-6, tmin, tmax)
        return np.where(ok & (t > 1e-6), t, inf)
    raise DataError(f"unknown primitive kind {prim.kind!r}")


def _raycast_at(scene: SyntheticScene, pose: CameraPose, K: Intrinsics,
                xs: np.ndarray, ys: np.ndarray):
    d_cam = np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy,
                      np.ones_like(xs, dtype=np.float64)], axis=-1).reshape(-1, 3)
    r = pose.rotation()
    dirs = d_cam @ r.T
    origin = pose.t
    best_t = np.full(dirs.shape[0], np.inf)
    color = np.zeros((dirs.shape[0], 3))
    for prim in scene.primitives:
        t = _intersect(prim, origin, dirs)
        closer = t < best_t
        if closer.any():
            pts = origin + t[closer, None] * dirs[closer]
            color[closer] = _texture(prim, pts)
            best_t[closer] = t[closer]
    return color, np.where(np.isfinite(best_t), best_t, 0.0)


def raycast(scene: SyntheticScene, pose: CameraPose, K: Intrinsics,
            supersample: int = 2):
    """Analytic RGB-D render; color integrates over each pixel's footprint.

    Color is area-averaged on a supersample x supersample sub-grid (sensor
    pixel integration, keeps fine texture from aliasing into fake noise);
    depth is the exact center-ray hit, 0 where no primitive is hit.
    """
    ys, xs = np.mgrid[0:K.height, 0:K.width]
    xs = xs.astype(np.float64).ravel()
    ys = ys.astype(np.float64).ravel()
    _, depth = _raycast_at(scene, pose, K, xs, ys)
    s = max(int(supersample), 1)
    acc = np.zeros((xs.size, 3))
    offsets = (np.arange(s) + 0.5) / s - 0.5
    for oy in offsets:
        for ox in offsets:
            c, _ = _raycast_at(scene, pose, K, xs + ox, ys + oy)
            acc += c
    color = acc / (s * s)
    return (color.reshape(K.height, K.width, 3),
            depth.reshape(K.height, K.width))


def _look_at(eye: np.ndarray, target: np.ndarray) -> CameraPose:
    f = target - eye
    f = f / np.linalg.norm(f)
    r = np.cross([0.0, 1.0, 0.0], f)
    r = r / np.linalg.norm(r)
    d = np.cross(f, r)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = r, d, f, eye
    return CameraPose.from_matrix(m)


def trajectory_poses(scene: SyntheticScene) -> list[CameraPose]:
    center = np.asarray(scene.look_at, dtype=np.float64)
    n = scene.frames
    poses = []
    for i in range(n):
        s = i / max(n - 1, 1)
        if scene.trajectory == "orbit":
            ang = np.deg2rad((s - 0.5) * scene.orbit_span_deg)
            eye = center + scene.orbit_radius * np.array(
                [np.sin(ang), 0.12 * np.sin(2 * ang), -np.cos(ang)])
        elif scene.trajectory == "linear":
            eye = np.array([-0.3 + 0.6 * s, 0.05 * s, 0.0])
        elif scene.trajectory == "lissajous":
            eye = np.array([0.35 * np.sin(2 * np.pi * s * 0.5),
                            0.18 * np.sin(2 * np.pi * s * 1.0 + 0.7),
                            0.25 * np.sin(2 * np.pi * s * 0.75)])
        else:
            raise DataError(f"unknown trajectory {scene.trajectory!r}")
        poses.append(_look_at(eye, center))
    return poses


def desk_scene(seed: int = 0, frames: int = 20, width: int = 80, height: int = 60,
               trajectory: str = "orbit", brightness: float = 1.0) -> SyntheticScene:
    """Desk-scale preset: a back wall, a floor slab, one box and one sphere.

    Texture frequencies scale with resolution so the pixel-space statistics
    (tracking gradients, residual noise level) are resolution-invariant.
    """
    rng = np.random.default_rng(seed)
    res = width / 80.0
    def phase():
        return rng.uniform(0, 1, 3)
    b = 0.9 * brightness
    kw = dict(mid_amp=0.20, mid_freq=2.2 * res, detail_amp=0.035,
              detail_freq=6.5 * res)
    prims = [
        Primitive("plane",
                  {"point": [0.0, 0.0, 3.4], "normal": [0.0, 0.0, -1.0],
                   "u": [1.0, 0.0, 0.0], "v": [0.0, 1.0, 0.0],
                   "half_extents": (4.0, 3.0)},
                  base_color=b * np.array([0.55, 0.50, 0.45]),
                  tex_amp=0.10, tex_freq=1.3 * res, tex_phase=phase(), **kw),
        Primitive("plane",
                  {"point": [0.0, 0.75, 2.0], "normal": [0.0, -1.0, 0.0],
                   "u": [1.0, 0.0, 0.0], "v": [0.0, 0.0, 1.0],
                   "half_extents": (4.0, 4.0)},
                  base_color=b * np.array([0.42, 0.45, 0.50]),
                  tex_amp=0.08, tex_freq=1.1 * res, tex_phase=phase(), **kw),
        Primitive("box",
                  {"min": [-0.85, 0.05, 2.1], "max": [-0.25, 0.65, 2.7]},
                  base_color=b * np.array([0.60, 0.35, 0.30]),
                  tex_amp=0.09, tex_freq=1.7 * res, tex_phase=phase(), **kw),
        Primitive("sphere",
                  {"center": [0.55, 0.30, 2.25], "radius": 0.34},
                  base_color=b * np.array([0.35, 0.52, 0.38]),
                  tex_amp=0.09, tex_freq=1.9 * res, tex_phase=phase(), **kw),
    ]
    return SyntheticScene(f"desk-{seed}", prims, trajectory, frames, width, height)


def generate_scene(scene: SyntheticScene, out_dir, seed: int = 0,
                   depth_scale: float = DEFAULT_DEPTH_SCALE) -> SequenceManifest:
    """Ray-cast the scene along its trajectory and write a TUM-layout sequence."""
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    K = scene.intrinsics()
    poses = trajectory_poses(scene)
    records, rgb_lines, depth_lines, gt_lines = [], [], [], []
    for i, pose in enumerate(poses):
        rgb, depth = raycast(scene, pose, K)
        if not (depth > 0).any():
            raise DataError(f"trajectory pose {i} sees no primitive")
        ts = i / scene.fps
        rgb_rel, depth_rel = f"rgb/{i:06d}.png", f"depth/{i:06d}.png"
        save_rgb(out / rgb_rel, rgb)
        save_depth(out / depth_rel, depth, depth_scale)
        q, t = pose.q, pose.t
        records.append(FrameRecord(rgb_rel, depth_rel, ts,
                                   [*t.tolist(), q[1], q[2], q[3], q[0]]))
        rgb_lines.append(f"{ts:.6f} {rgb_rel}")
        depth_lines.append(f"{ts:.6f} {depth_rel}")
        gt_lines.append(f"{ts:.6f} {t[0]:.9f} {t[1]:.9f} {t[2]:.9f} "
                        f"{q[1]:.9f} {q[2]:.9f} {q[3]:.9f} {q[0]:.9f}")
    (out / "rgb.txt").write_text("# ts path\n" + "\n".join(rgb_lines) + "\n")
    (out / "depth.txt").write_text("# ts path\n" + "\n".join(depth_lines) + "\n")
    (out / "groundtruth.txt").write_text("# ts tx ty tz qx qy qz qw\n"
                                         + "\n".join(gt_lines) + "\n")
    manifest = SequenceManifest(scene.name, K, records, depth_scale,
                                condition="clean", root=str(out))
    (out / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=1))
    return manifest


def degrade_sequence(src_dir, dst_dir, params: NoiseParams, kind: str) -> SequenceManifest:
    """Write a degraded copy: RGB re-synthesized, depth and poses copied verbatim."""
    if kind not in ("natural", "noise_lowlight"):
        raise DataError(f"unknown degradation kind {kind!r}")
    src = Path(src_dir)
    dst = Path(dst_dir)
    manifest, frames = load_tum(src)
    (dst / "rgb").mkdir(parents=True, exist_ok=True)
    (dst / "depth").mkdir(parents=True, exist_ok=True)
    apply_noise = add_sensor_noise if kind == "natural" else add_lowlight_noise
    report_lines = []
    for i, (rec, frame) in enumerate(zip(manifest.frames, frames)):
        noisy = apply_noise(frame.rgb, params, stream=i)
        save_rgb(dst / rec.rgb_path, noisy)
        shutil.copyfile(src / rec.depth_path, dst / rec.depth_path)
        rep = judge(noisy).to_json()
        rep["frame"] = i
        rep["t"] = rec.timestamp
        report_lines.append(json.dumps(rep))
    (dst / "reports.jsonl").write_text("\n".join(report_lines) + "\n")
    for name in ("rgb.txt", "depth.txt", "groundtruth.txt"):
        if (src / name).exists():
            shutil.copyfile(src / name, dst / name)
    out = SequenceManifest(manifest.name + "-" + kind, manifest.intrinsics,
                           manifest.frames, manifest.depth_scale,
                           condition="natural_noise" if kind == "natural"
                           else "noise_lowlight",
                           source=str(src), root=str(dst))
    (dst / "manifest.json").write_text(json.dumps(out.to_json(), indent=1))
    return out
