import numpy as np
import pytest

from lagodom import geometry, kernels


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)


def random_pose(rng, max_angle=2.0, scale=5.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    twist = np.concatenate([axis * angle, rng.uniform(-scale, scale, 3)])
    return geometry.exp(twist)


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # trigger jit compilation once so timed tests measure steady state
    pts = np.array([[3.0, 0.1 * i, 0.0] for i in range(24)])
    offsets = np.array([0, 12, 24], dtype=np.int64)
    valid = np.ones(24, dtype=bool)
    valid[:5] = valid[7:17] = valid[19:] = False
    kappa = kernels.curvature(pts, offsets, valid, 5)
    kernels.select_features(kappa, valid, offsets, 2, 3, 2, 1.0, 5, True)
    kernels.plane_normals(
        pts,
        offsets,
        np.ones(24, dtype=bool),
        np.array([6], dtype=np.int64),
        np.array([0], dtype=np.int64),
        1.0,
        5,
    )
    rot = np.stack([np.eye(3)] * 2)
    tra = np.zeros((2, 3))
    kinds = np.array([0, 1], dtype=np.int64)
    k = np.array([0, 0], dtype=np.int64)
    i = np.array([1, 1], dtype=np.int64)
    pk = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    nk = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    kernels.match_system(rot, tra, kinds, k, i, pk, pk.copy(), nk, 2)
    kernels.match_cost(rot, tra, kinds, k, i, pk, pk.copy(), nk)
    kernels.raycast(
        np.zeros(3),
        np.array([[1.0, 0.0, 0.0]]),
        np.array([[5.0, 0.0, 0.0]]),
        np.array([[0.0, 1.0, 0.0]]),
        np.array([[0.0, 0.0, 1.0]]),
        np.array([[1.0, 0.0, 0.0]]),
        np.array([[2.0, 2.0]]),
        np.zeros((0, 2)),
        np.zeros(0),
        np.zeros(0),
        np.zeros(0),
    )
