import numpy as np
import pytest

from dvs.geometry import CameraView


def make_camera(view_id=0, time_index=0, f=100.0, c=None, R=None, C=None,
                width=128, height=128):
    if c is None:
        c = ((width - 1) / 2.0, (height - 1) / 2.0)
    K = np.array([[f, 0.0, c[0]], [0.0, f, c[1]], [0.0, 0.0, 1.0]])
    return CameraView(
        view_id=view_id, time_index=time_index, intrinsics=K,
        rotation=np.eye(3) if R is None else R,
        center=np.zeros(3) if C is None else np.asarray(C, dtype=float),
        width=width, height=height)


def identity_camera(width=4, height=4, view_id=0, time_index=0, C=None):
    """K = I camera used by the hand-arithmetic cases."""
    return CameraView(
        view_id=view_id, time_index=time_index, intrinsics=np.eye(3),
        rotation=np.eye(3), center=np.zeros(3) if C is None else np.asarray(C, float),
        width=width, height=height)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
