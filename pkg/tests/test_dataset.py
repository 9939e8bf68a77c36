import json
from pathlib import Path

import numpy as np
import pytest

from roger.core import CameraPose, Intrinsics
from roger.dataset import (DEFAULT_DEPTH_SCALE, Primitive, SyntheticScene,
                           degrade_sequence, desk_scene, generate_scene,
                           load_depth, load_tum, raycast, save_depth,
                           trajectory_poses)
from roger.degradation import NoiseParams, judge
from roger.errors import DataError


@pytest.fixture(scope="module")
def tiny_sequence(tmp_path_factory):
    out = tmp_path_factory.mktemp("seq")
    scene = desk_scene(seed=3, frames=4, width=40, height=30)
    manifest = generate_scene(scene, out)
    return out, scene, manifest


class TestRaycast:
    def test_frontoparallel_plane_constant_depth(self):
        prim = Primitive("plane", {"point": [0, 0, 2.5], "normal": [0, 0, -1.0],
                                   "u": [1.0, 0, 0], "v": [0, 1.0, 0],
                                   "half_extents": (50.0, 50.0)},
                         base_color=np.array([0.5, 0.5, 0.5]))
        scene = SyntheticScene("t", [prim], width=16, height=12)
        rgb, depth = raycast(scene, CameraPose.identity(), scene.intrinsics())
        np.testing.assert_allclose(depth, 2.5, atol=1e-9)

    def test_sphere_min_depth_at_center(self):
        prim = Primitive("sphere", {"center": [0, 0, 3.0], "radius": 0.5},
                         base_color=np.array([0.5, 0.5, 0.5]))
        scene = SyntheticScene("t", [prim], width=17, height=13)
        K = scene.intrinsics()
        rgb, depth = raycast(scene, CameraPose.identity(), K)
        center = depth[6, 8]
        assert center == pytest.approx(2.5, abs=1e-9)
        assert depth[depth > 0].min() == pytest.approx(2.5, abs=1e-6)

    def test_miss_is_invalid_depth(self):
        prim = Primitive("sphere", {"center": [0, 0, 3.0], "radius": 0.2},
                         base_color=np.array([0.5, 0.5, 0.5]))
        scene = SyntheticScene("t", [prim], width=16, height=12)
        rgb, depth = raycast(scene, CameraPose.identity(), scene.intrinsics())
        assert (depth == 0).any()
        np.testing.assert_array_equal(rgb[depth == 0], 0.0)

    def test_box_front_face_depth(self):
        prim = Primitive("box", {"min": [-1, -1, 2.0], "max": [1, 1, 3.0]},
                         base_color=np.array([0.5, 0.5, 0.5]))
        scene = SyntheticScene("t", [prim], width=16, height=12)
        rgb, depth = raycast(scene, CameraPose.identity(), scene.intrinsics())
        assert depth[6, 8] == pytest.approx(2.0, abs=1e-9)


class TestGenerateLoad:
    def test_round_trip_counts_timestamps_poses(self, tiny_sequence):
        out, scene, manifest = tiny_sequence
        m2, frames = load_tum(out)
        assert len(frames) == scene.frames
        gt_poses = trajectory_poses(scene)
        for f, p in zip(frames, gt_poses):
            np.testing.assert_allclose(f.gt_pose.matrix(), p.matrix(), atol=1e-7)
        ts = [f.timestamp for f in frames]
        assert ts == sorted(ts)

    def test_depth_png_scale_convention(self, tmp_path):
        depth = np.array([[1.0, 0.5], [0.0, 2.0]])
        save_depth(tmp_path / "d.png", depth, DEFAULT_DEPTH_SCALE)
        back = load_depth(tmp_path / "d.png", DEFAULT_DEPTH_SCALE)
        np.testing.assert_allclose(back, depth, atol=1e-4)
        raw = load_depth(tmp_path / "d.png", 1.0)
        assert raw[0, 0] == 5000.0  # value 5000 <=> one meter

    def test_regeneration_bit_identical(self, tmp_path):
        scene = desk_scene(seed=9, frames=2, width=24, height=18)
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate_scene(scene, a)
        generate_scene(scene, b)
        for rel in ["rgb/000000.png", "depth/000001.png", "groundtruth.txt"]:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_association_drops_offset_rows(self, tmp_path):
        seq = tmp_path / "t"
        (seq / "rgb").mkdir(parents=True)
        (seq / "depth").mkdir()
        from roger.dataset import save_rgb
        img = np.full((6, 8, 3), 0.5)
        for i, ts in enumerate([0.0, 0.1]):
            save_rgb(seq / f"rgb/{i}.png", img)
            save_depth(seq / f"depth/{i}.png", np.ones((6, 8)), 5000.0)
        (seq / "rgb.txt").write_text("0.0 rgb/0.png\n0.1 rgb/1.png\n")
        # second depth row is 25 ms off: outside the 20 ms association gap
        (seq / "depth.txt").write_text("0.0 depth/0.png\n0.125 depth/1.png\n")
        manifest, frames = load_tum(seq)
        assert len(frames) == 1

    def test_groundtruth_line_parsing(self, tmp_path):
        seq = tmp_path / "t"
        (seq / "rgb").mkdir(parents=True)
        (seq / "depth").mkdir()
        from roger.dataset import save_rgb
        save_rgb(seq / "rgb/0.png", np.full((6, 8, 3), 0.5))
        save_depth(seq / "depth/0.png", np.ones((6, 8)), 5000.0)
        (seq / "rgb.txt").write_text("0.0 rgb/0.png\n")
        (seq / "depth.txt").write_text("0.0 depth/0.png\n")
        (seq / "groundtruth.txt").write_text(
            "# comment\n0.0 1.0 2.0 3.0 0.0 0.0 0.0 1.0\n")
        _, frames = load_tum(seq)
        np.testing.assert_allclose(frames[0].gt_pose.t, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(frames[0].gt_pose.q, [1.0, 0, 0, 0])

    def test_bad_groundtruth_reports_line_number(self, tmp_path):
        seq = tmp_path / "t"
        (seq / "rgb").mkdir(parents=True)
        (seq / "depth").mkdir()
        from roger.dataset import save_rgb
        save_rgb(seq / "rgb/0.png", np.full((6, 8, 3), 0.5))
        save_depth(seq / "depth/0.png", np.ones((6, 8)), 5000.0)
        (seq / "rgb.txt").write_text("0.0 rgb/0.png\n")
        (seq / "depth.txt").write_text("0.0 depth/0.png\n")
        (seq / "groundtruth.txt").write_text("0.0 1.0 2.0\n")
        with pytest.raises(DataError, match=":1"):
            load_tum(seq)

    def test_missing_index_is_data_error(self, tmp_path):
        with pytest.raises(DataError):
            load_tum(tmp_path)


class TestDegradeSequence:
    def test_zero_variance_natural_is_byte_identical_rgb(self, tiny_sequence, tmp_path):
        src, scene, _ = tiny_sequence
        params = NoiseParams(shot_var=0.0, read_var=0.0, rng_seed=0)
        degrade_sequence(src, tmp_path / "deg", params, "natural")
        for i in range(scene.frames):
            rel = f"rgb/{i:06d}.png"
            assert (src / rel).read_bytes() == (tmp_path / "deg" / rel).read_bytes()

    def test_depth_and_groundtruth_copied_verbatim(self, tiny_sequence, tmp_path):
        src, scene, _ = tiny_sequence
        out = tmp_path / "deg2"
        degrade_sequence(src, out, NoiseParams(rng_seed=1), "noise_lowlight")
        for i in range(scene.frames):
            rel = f"depth/{i:06d}.png"
            assert (src / rel).read_bytes() == (out / rel).read_bytes()
        assert (src / "groundtruth.txt").read_bytes() == \
            (out / "groundtruth.txt").read_bytes()

    def test_lowlight_triggers_on_every_frame(self, tiny_sequence, tmp_path):
        src, scene, _ = tiny_sequence
        out = tmp_path / "deg3"
        degrade_sequence(src, out, NoiseParams(rng_seed=2), "noise_lowlight")
        _, frames = load_tum(out)
        assert all(judge(f.rgb).trigger for f in frames)

    def test_manifest_carries_condition_and_source(self, tiny_sequence, tmp_path):
        src, _, _ = tiny_sequence
        out = tmp_path / "deg4"
        m = degrade_sequence(src, out, NoiseParams(rng_seed=3), "natural")
        assert m.condition == "natural_noise"
        assert Path(m.source) == Path(src)
        data = json.loads((out / "manifest.json").read_text())
        assert data["condition"] == "natural_noise"

    def test_judge_reports_one_json_object_per_frame(self, tiny_sequence, tmp_path):
        src, scene, _ = tiny_sequence
        out = tmp_path / "deg5"
        degrade_sequence(src, out, NoiseParams(rng_seed=4), "noise_lowlight")
        lines = (out / "reports.jsonl").read_text().splitlines()
        assert len(lines) == scene.frames
        reports = [json.loads(l) for l in lines]
        assert all("mu_L" in r and "trigger" in r for r in reports)
        assert [r["frame"] for r in reports] == list(range(scene.frames))

    def test_unknown_kind_rejected(self, tiny_sequence, tmp_path):
        src, _, _ = tiny_sequence
        with pytest.raises(DataError):
            degrade_sequence(src, tmp_path / "x", NoiseParams(), "sepia")
