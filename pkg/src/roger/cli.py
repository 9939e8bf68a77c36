"""Command-line interface: run / synth / degrade / eval / ablate.

Exit codes: 0 success, 2 usage error, 3 data error, 4 divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as config_mod
from .dataset import degrade_sequence, desk_scene, generate_scene, load_rgb, load_tum
from .degradation import NoiseParams
from .enhance import EnhancerBinding
from .errors import ConfigurationError, DataError, DivergenceError, RogerError
from .metrics import Trajectory, ate_rmse, format_table, metrics_record, psnr, ssim
from .pipeline import PipelineConfig, ablate, run

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roger",
                                 description="Robust RGB-D splatting SLAM engine")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run SLAM over a sequence directory")
    p.add_argument("sequence")
    p.add_argument("--config", help="flat key/value config file")
    p.add_argument("--ablation", help="comma list of flags; prefix 'no-' disables"
                   " (adaptive_tracking, sp_rofusion, enhancement)")
    p.add_argument("--enhancer", choices=["off", "classical", "sidecar"])
    p.add_argument("--endpoint", help="sidecar address host:port")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")

    p = sub.add_parser("synth", help="generate a synthetic RGB-D sequence")
    p.add_argument("scene_spec", help="preset name (desk) or JSON spec file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int)
    p.add_argument("--size", help="WxH, e.g. 80x60")
    p.add_argument("--trajectory", choices=["orbit", "lissajous", "linear"])

    p = sub.add_parser("degrade", help="write a degraded copy of a sequence")
    p.add_argument("sequence")
    p.add_argument("--kind", required=True, choices=["natural", "noise_lowlight"])
    p.add_argument("--out", required=True)
    p.add_argument("--shot-var", type=float, default=4e-4)
    p.add_argument("--read-var", type=float, default=3e-5)
    p.add_argument("--gauss-std", type=float, default=15.0)
    p.add_argument("--gamma", type=float, default=1.55)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="evaluate a run directory against ground truth")
    p.add_argument("run_dir")
    p.add_argument("--gt", required=True, help="ground-truth sequence directory")

    p = sub.add_parser("ablate", help="run the ablation grid over a sequence")
    p.add_argument("sequence")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--enhancer", choices=["off", "classical", "sidecar"])
    p.add_argument("--endpoint")
    return ap


def _pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(config_mod.parse_config_file(args.config))
    for item in getattr(args, "set", []) or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    cfg = config_mod.apply_overrides(cfg, overrides)
    if getattr(args, "ablation", None):
        for token in args.ablation.split(","):
            token = token.strip()
            if not token:
                continue
            value = not token.startswith("no-")
            name = token[3:] if token.startswith("no-") else token
            if name not in ("adaptive_tracking", "sp_rofusion", "enhancement"):
                raise ConfigurationError(f"unknown ablation flag {name!r}")
            setattr(cfg, name, value)
    if getattr(args, "enhancer", None):
        cfg.enhancer = EnhancerBinding(mode=args.enhancer,
                                       endpoint=getattr(args, "endpoint", None))
    return cfg


def _cmd_run(args) -> int:
    cfg = _pipeline_config(args)
    result = run(args.sequence, cfg, args.out)
    print(format_table([result.metrics]))
    return 0


def _parse_scene(args):
    spec = args.scene_spec
    kw = {}
    path = Path(spec)
    if path.exists():
        data = json.loads(path.read_text())
        preset = data.pop("preset", "desk")
        kw.update(data)
    else:
        preset = spec
    if preset != "desk":
        raise DataError(f"unknown scene preset {preset!r}")
    if args.frames:
        kw["frames"] = args.frames
    if args.size:
        w, h = args.size.lower().split("x")
        kw["width"], kw["height"] = int(w), int(h)
    if args.trajectory:
        kw["trajectory"] = args.trajectory
    kw.setdefault("seed", args.seed)
    return desk_scene(**kw)


def _cmd_synth(args) -> int:
    scene = _parse_scene(args)
    manifest = generate_scene(scene, args.out, seed=args.seed)
    print(f"wrote {len(manifest.frames)} frames to {args.out}")
    return 0


def _cmd_degrade(args) -> int:
    params = NoiseParams(shot_var=args.shot_var, read_var=args.read_var,
                         gauss_std_8bit=args.gauss_std, gamma=args.gamma,
                         rng_seed=args.seed)
    manifest = degrade_sequence(args.sequence, args.out, params, args.kind)
    print(f"wrote {len(manifest.frames)} degraded frames ({manifest.condition}) "
          f"to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    traj_path = run_dir / "trajectory.txt"
    if not traj_path.exists():
        raise DataError(f"{traj_path} not found")
    est = Trajectory()
    from .core import CameraPose, quat_normalize
    for line in traj_path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        t, tx, ty, tz, qx, qy, qz, qw = map(float, line.split())
        est.append(t, CameraPose(quat_normalize([qw, qx, qy, qz]), [tx, ty, tz]))
    manifest, frames = load_tum(args.gt)
    gt = Trajectory()
    for f in frames:
        if f.gt_pose is not None:
            gt.append(f.timestamp, f.gt_pose)
    ate = ate_rmse(est, gt) if len(gt) >= 2 else None
    psnrs, ssims = [], []
    rdir = run_dir / "renders"
    if rdir.exists():
        for i, f in enumerate(frames):
            p = rdir / f"{i:06d}.png"
            if p.exists():
                img = load_rgb(p)
                psnrs.append(psnr(img, f.rgb))
                ssims.append(ssim(img, f.rgb))
    import numpy as np
    rec = metrics_record(manifest.name, manifest.condition, ate,
                         float(np.mean(psnrs)) if psnrs else None,
                         float(np.mean(ssims)) if ssims else None)
    (run_dir / "eval.json").write_text(json.dumps(rec, indent=1))
    print(format_table([rec]))
    return 0


def _cmd_ablate(args) -> int:
    cfg = _pipeline_config(args)
    rows = ablate(args.sequence, cfg, args.out)
    display = []
    for r in rows:
        d = dict(r)
        d["seq"] = r.get("config", d.get("seq"))
        if r.get("absent"):
            d["ate_cm"] = d["psnr_db"] = d["ssim"] = "--"
        display.append(d)
    print(format_table(display))
    return 0


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    handlers = {"run": _cmd_run, "synth": _cmd_synth, "degrade": _cmd_degrade,
                "eval": _cmd_eval, "ablate": _cmd_ablate}
    try:
        return handlers[args.command](args)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(exc.diagnostics), file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RogerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
