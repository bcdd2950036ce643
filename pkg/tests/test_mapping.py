"""Map rebuild, exact matching, and insertion gating."""

import numpy as np

from lagodom import mapping as M
from lagodom.features import FeatureSet
from lagodom.geometry import Pose, identity
from lagodom.mapping import MapScan, ScanIndexedMap, nearest, rebuild, select_insertions

from conftest import random_pose


def single_point_map(p=(0.0, 0.0, 0.0), kind=M.PLANAR):
    ms = MapScan(scan_id=0)
    if kind == M.PLANAR:
        ms.planar_local = np.array([p], dtype=np.float64)
        ms.planar_normals = np.array([[0.0, 0.0, 1.0]])
    else:
        ms.point_local = np.array([p], dtype=np.float64)
    return rebuild([ms], {0: identity()})


class TestNearest:
    def test_hit_within_gate(self):
        m = single_point_map()
        got = nearest(m, np.array([0.5, 0.0, 0.0]), 0.8, M.PLANAR)
        assert got is not None
        mp, dist = got
        assert abs(dist - 0.5) < 1e-12
        assert mp.scan_id == 0 and mp.kind == M.PLANAR
        np.testing.assert_array_equal(mp.local, [0.0, 0.0, 0.0])

    def test_miss_outside_gate(self):
        m = single_point_map()
        assert nearest(m, np.array([1.0, 0.0, 0.0]), 0.8, M.PLANAR) is None

    def test_kind_segregation(self):
        ms = MapScan(
            scan_id=0,
            planar_local=np.array([[2.0, 0.0, 0.0]]),
            planar_normals=np.array([[0.0, 0.0, 1.0]]),
            point_local=np.array([[0.1, 0.0, 0.0]]),
        )
        m = rebuild([ms], {0: identity()})
        got = nearest(m, np.zeros(3), 5.0, M.PLANAR)
        assert got is not None and abs(got[1] - 2.0) < 1e-12
        got = nearest(m, np.zeros(3), 5.0, M.POINT)
        assert got is not None and abs(got[1] - 0.1) < 1e-12

    def test_matches_linear_scan_oracle(self, rng):
        pts = rng.uniform(-20, 20, (10_000, 3))
        ms = MapScan(scan_id=0, point_local=pts)
        m = rebuild([ms], {0: identity()})
        queries = rng.uniform(-22, 22, (1_000, 3))
        rows, dist = m.nearest_batch(queries, 3.0, M.POINT)
        kind_rows = np.flatnonzero(m.kinds == M.POINT)
        assert np.array_equal(kind_rows, np.arange(len(pts)))
        d2 = np.linalg.norm(queries[:, None, :] - pts[None, :, :], axis=2)
        brute_idx = np.argmin(d2, axis=1)
        brute_dist = d2[np.arange(len(queries)), brute_idx]
        for q in range(len(queries)):
            if brute_dist[q] <= 3.0:
                assert rows[q] == brute_idx[q]
                assert abs(dist[q] - brute_dist[q]) < 1e-12
            else:
                assert rows[q] == -1 and np.isinf(dist[q])

    def test_empty_map(self):
        m = rebuild([], {})
        rows, dist = m.nearest_batch(np.zeros((4, 3)), 1.0, M.PLANAR)
        assert np.all(rows == -1) and np.all(np.isinf(dist))
        assert nearest(m, np.zeros(3), 1.0, M.POINT) is None


class TestRebuild:
    def make_scans(self, rng):
        return [
            MapScan(
                scan_id=s,
                planar_local=rng.uniform(-5, 5, (30, 3)),
                planar_normals=np.tile([[0.0, 0.0, 1.0]], (30, 1)),
                point_local=rng.uniform(-5, 5, (10, 3)),
            )
            for s in range(3)
        ]

    def test_idempotent(self, rng):
        scans = self.make_scans(rng)
        poses = {s: random_pose(rng) for s in range(3)}
        a = rebuild(scans, poses, generation=1)
        b = rebuild(scans, poses, generation=1)
        np.testing.assert_array_equal(a.world, b.world)
        np.testing.assert_array_equal(a.scan_ids, b.scan_ids)
        np.testing.assert_array_equal(a.kinds, b.kinds)
        assert a.generation == b.generation == 1

    def test_translated_pose_shifts_points(self, rng):
        scans = self.make_scans(rng)
        poses = {s: identity() for s in range(3)}
        before = rebuild(scans, poses)
        t = np.array([0.3, -0.2, 0.1])
        poses2 = dict(poses)
        poses2[1] = Pose(np.eye(3), t)
        after = rebuild(scans, poses2, generation=before.generation + 1)
        moved = after.scan_ids == 1
        np.testing.assert_allclose(
            after.world[moved], before.world[moved] + t, atol=1e-15
        )
        np.testing.assert_array_equal(after.world[~moved], before.world[~moved])
        assert after.generation == before.generation + 1

    def test_local_world_roundtrip(self, rng):
        scans = self.make_scans(rng)
        poses = {s: random_pose(rng) for s in range(3)}
        m = rebuild(scans, poses)
        for s in range(3):
            rows = m.scan_ids == s
            p = poses[s]
            back = (m.world[rows] - p.translation) @ p.rotation
            np.testing.assert_allclose(back, m.local[rows], atol=1e-12)

    def test_normals_kept_scan_local(self, rng):
        scans = self.make_scans(rng)
        poses = {s: random_pose(rng) for s in range(3)}
        m = rebuild(scans, poses)
        planar = m.kinds == M.PLANAR
        np.testing.assert_array_equal(
            m.normals[planar][:30], scans[0].planar_normals
        )


class TestSelectInsertions:
    def fs(self, n_planar, n_point):
        return FeatureSet(
            scan_index=0,
            planar_points=np.zeros((n_planar, 3)),
            planar_normals=np.tile([[0.0, 0.0, 1.0]], (n_planar, 1)),
            point_points=np.zeros((n_point, 3)),
        )

    def test_all_close_matches_empty(self):
        fs = self.fs(4, 0)
        keep_planar, keep_point = select_insertions(
            fs, np.full(4, 0.05), np.zeros(0), 0.1
        )
        assert len(keep_planar) == 0 and len(keep_point) == 0

    def test_no_matches_all_kept(self):
        fs = self.fs(3, 2)
        keep_planar, keep_point = select_insertions(
            fs, np.full(3, np.inf), np.full(2, np.inf), 0.1
        )
        np.testing.assert_array_equal(keep_planar, [0, 1, 2])
        np.testing.assert_array_equal(keep_point, [0, 1])

    def test_straddling_threshold(self):
        fs = self.fs(5, 0)
        dist = np.array([0.05, 0.1, 0.15, np.inf, 0.0])
        keep_planar, _ = select_insertions(fs, dist, None, 0.1)
        np.testing.assert_array_equal(keep_planar, [2, 3])

    def test_none_distances_keep_all(self):
        fs = self.fs(2, 3)
        keep_planar, keep_point = select_insertions(fs, None, None, 0.1)
        np.testing.assert_array_equal(keep_planar, [0, 1])
        np.testing.assert_array_equal(keep_point, [0, 1, 2])


def test_export_rows(rng):
    ms = MapScan(
        scan_id=7,
        planar_local=np.array([[1.0, 2.0, 3.0]]),
        planar_normals=np.array([[0.0, 0.0, 1.0]]),
        point_local=np.array([[4.0, 5.0, 6.0]]),
    )
    m = rebuild([ms], {7: Pose(np.eye(3), np.array([10.0, 0.0, 0.0]))})
    rows = m.rows()
    assert rows[0] == (11.0, 2.0, 3.0, 7, M.PLANAR)
    assert rows[1] == (14.0, 5.0, 6.0, 7, M.POINT)
