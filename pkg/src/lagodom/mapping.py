"""Scan-indexed world map: local-frame storage, rebuilds, exact matching.

Map points live in their source scan's frame and carry a cached world
position. Rebuilding from updated poses only refreshes the cache and the
search trees, which is what lets smoothed poses repair the map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .features import FeatureSet
from .geometry import Pose, transform_points

__all__ = [
    "MapPoint",
    "MapScan",
    "ScanIndexedMap",
    "rebuild",
    "nearest",
    "select_insertions",
]

PLANAR = 0
POINT = 1


@dataclass
class MapPoint:
    """Single-point view into the map."""

    local: np.ndarray
    world: np.ndarray
    scan_id: int
    kind: int
    normal: np.ndarray | None


@dataclass
class MapScan:
    """Features of one scan retained for map insertion, scan-local."""

    scan_id: int
    planar_local: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    planar_normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    point_local: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @classmethod
    def from_features(cls, fs: FeatureSet, planar_keep=None, point_keep=None):
        planar_keep = slice(None) if planar_keep is None else planar_keep
        point_keep = slice(None) if point_keep is None else point_keep
        return cls(
            scan_id=fs.scan_index,
            planar_local=fs.planar_points[planar_keep].copy(),
            planar_normals=fs.planar_normals[planar_keep].copy(),
            point_local=fs.point_points[point_keep].copy(),
        )

    @property
    def size(self):
        return len(self.planar_local) + len(self.point_local)


class ScanIndexedMap:
    """Immutable world-frame point set with per-kind exact search trees."""

    def __init__(self, local, world, scan_ids, kinds, normals, generation=0):
        self.local = local
        self.world = world
        self.scan_ids = scan_ids
        self.kinds = kinds
        self.normals = normals
        self.generation = generation
        self._index = {}
        for kind in (PLANAR, POINT):
            rows = np.flatnonzero(kinds == kind)
            tree = cKDTree(world[rows]) if len(rows) else None
            self._index[kind] = (rows, tree)

    def __len__(self):
        return len(self.world)

    def count(self, kind):
        return len(self._index[kind][0])

    def point(self, row) -> MapPoint:
        kind = int(self.kinds[row])
        return MapPoint(
            local=self.local[row],
            world=self.world[row],
            scan_id=int(self.scan_ids[row]),
            kind=kind,
            normal=self.normals[row] if kind == PLANAR else None,
        )

    def nearest_batch(self, queries, delta_match, kind):
        """(rows, distances) of same-kind nearest neighbors within gate.

        rows are indices into the map arrays, -1 where nothing lies within
        delta_match; distances are +inf there.
        """
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        rows_of_kind, tree = self._index[kind]
        out_rows = np.full(len(queries), -1, dtype=np.int64)
        out_dist = np.full(len(queries), np.inf)
        if tree is None or len(queries) == 0:
            return out_rows, out_dist
        dist, idx = tree.query(queries, k=1, distance_upper_bound=delta_match)
        hit = np.isfinite(dist)
        out_rows[hit] = rows_of_kind[idx[hit]]
        out_dist[hit] = dist[hit]
        return out_rows, out_dist

    def rows(self):
        """(x, y, z, scan_id, kind) per point, for the ASCII export."""
        return [
            (
                float(self.world[r, 0]),
                float(self.world[r, 1]),
                float(self.world[r, 2]),
                int(self.scan_ids[r]),
                int(self.kinds[r]),
            )
            for r in range(len(self.world))
        ]


def rebuild(map_scans, poses, generation=0) -> ScanIndexedMap:
    """Fresh map from retained features and the current pose estimates."""
    locals_, worlds, ids, kinds, normals = [], [], [], [], []
    for ms in sorted(map_scans, key=lambda m: m.scan_id):
        pose: Pose = poses[ms.scan_id]
        for arr, kind, nrm in (
            (ms.planar_local, PLANAR, ms.planar_normals),
            (ms.point_local, POINT, None),
        ):
            if len(arr) == 0:
                continue
            locals_.append(arr)
            worlds.append(transform_points(pose, arr))
            ids.append(np.full(len(arr), ms.scan_id, dtype=np.int64))
            kinds.append(np.full(len(arr), kind, dtype=np.int64))
            normals.append(nrm if nrm is not None else np.zeros((len(arr), 3)))
    if locals_:
        return ScanIndexedMap(
            np.concatenate(locals_),
            np.concatenate(worlds),
            np.concatenate(ids),
            np.concatenate(kinds),
            np.concatenate(normals),
            generation,
        )
    empty = np.zeros((0, 3))
    return ScanIndexedMap(
        empty, empty.copy(), np.zeros(0, dtype=np.int64),
        np.zeros(0, dtype=np.int64), empty.copy(), generation,
    )


def nearest(map_: ScanIndexedMap, q, delta_match, kind=PLANAR):
    """Exact nearest same-kind map point within delta_match, or None."""
    rows, dist = map_.nearest_batch(np.asarray(q)[None, :], delta_match, kind)
    if rows[0] < 0:
        return None
    return map_.point(int(rows[0])), float(dist[0])


def select_insertions(features: FeatureSet, planar_dist, point_dist, delta_map):
    """Indices of features to insert: unmatched or matched too far away.

    Distances are per-feature match distances with +inf (or None arrays)
    standing for "no match".
    """
    def keep(n, dist):
        if dist is None:
            return np.arange(n, dtype=np.int64)
        dist = np.asarray(dist, dtype=np.float64)
        return np.flatnonzero(~np.isfinite(dist) | (dist > delta_map))

    return (
        keep(features.n_planar, planar_dist),
        keep(features.n_point, point_dist),
    )
