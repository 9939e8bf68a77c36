import numpy as np
import pytest

from roger.core import CameraPose, GaussianMap, Intrinsics, quat_normalize


def random_pose(rng) -> CameraPose:
    return CameraPose(quat_normalize(rng.normal(0, 1, 4)), rng.normal(0, 0.5, 3))


def random_map(rng, n=5, depth=2.0, spread=0.4) -> GaussianMap:
    return GaussianMap(
        means=rng.normal([0, 0, depth], [spread, spread, spread], (n, 3)),
        log_scales=rng.normal(np.log(0.08), 0.3, (n, 3)),
        rotations=quat_normalize(rng.normal(0, 1, (n, 4))),
        opacity_logits=rng.normal(0.0, 1.0, n),
        colors=rng.uniform(0.1, 0.9, (n, 3)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_intrinsics():
    return Intrinsics(30.0, 30.0, 3.5, 3.5, 8, 8)
