import numpy as np
import pytest

from covox.geometry import Pose


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random proper rotation via QR with sign fixing."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_pose(rng: np.random.Generator, span: float = 10.0) -> Pose:
    return Pose.from_rt(random_rotation(rng), rng.uniform(-span, span, 3))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
