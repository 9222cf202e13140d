import numpy as np
import pytest

from posechat.corpus import default_vocab


def random_rotations(n, rng):
    """Uniform random rotations via normalized quaternions (oracle-side
    construction, independent of the package's conversion code)."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def quaternion_from_axis_angle(v):
    """Independent axis-angle -> quaternion -> matrix oracle."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v)
    if theta < 1e-300:
        return np.eye(3)
    axis = v / theta
    w = np.cos(theta / 2.0)
    x, y, z = np.sin(theta / 2.0) * axis
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@pytest.fixture(scope="session")
def vocab():
    return default_vocab()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
