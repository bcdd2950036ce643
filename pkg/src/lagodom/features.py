"""Scanline feature extraction: validity, curvature, selection, normals.

A scan is stored flat: all returned points concatenated line by line, with
an offsets array delimiting lines. Missed beams are simply absent, so index
neighbors are consecutive returns on the same line.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import Config

__all__ = [
    "Scan",
    "FeatureSet",
    "mark_validity",
    "in_range_mask",
    "curvature_at",
    "compute_curvature",
    "select_planar_features",
    "select_point_features",
    "estimate_normal",
    "extract_features",
]

# A neighborhood supports a plane fit only if it is genuinely
# two-dimensional: the middle scatter eigenvalue must clear the smallest by
# this factor, else the normal direction is decided by range noise.
MIN_SPREAD_RATIO = 10.0


@dataclass
class Scan:
    """One revolution of a rotating multi-beam sensor, sensor frame.

    points: (N, 3) float64, line-major, azimuth order within each line.
    ranges: (N,) distances from the sensor origin.
    offsets: (L + 1,) int64; line j occupies points[offsets[j]:offsets[j+1]].
    """

    points: np.ndarray
    ranges: np.ndarray
    offsets: np.ndarray
    index: int
    timestamp: float

    @classmethod
    def from_rows(cls, rows, index=0, timestamp=0.0, ranges=None):
        """Build from a list of per-line (n_j, 3) arrays."""
        rows = [np.asarray(r, dtype=np.float64).reshape(-1, 3) for r in rows]
        counts = [len(r) for r in rows]
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        points = (
            np.concatenate(rows, axis=0) if offsets[-1] else np.zeros((0, 3))
        )
        if ranges is None:
            ranges = np.linalg.norm(points, axis=1)
        else:
            ranges = np.asarray(ranges, dtype=np.float64).reshape(-1)
        return cls(points, ranges, offsets, index, timestamp)

    @property
    def n_points(self) -> int:
        return int(self.offsets[-1]) if len(self.offsets) else 0

    @property
    def n_lines(self) -> int:
        return len(self.offsets) - 1

    def line(self, j: int) -> np.ndarray:
        return self.points[self.offsets[j] : self.offsets[j + 1]]

    def line_of(self, flat_index) -> np.ndarray:
        """Scanline id(s) for flat point index(es)."""
        return np.searchsorted(self.offsets, flat_index, side="right") - 1


@dataclass
class FeatureSet:
    """Selected features of one scan, coordinates in the scan frame."""

    scan_index: int
    planar_points: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 3))
    )
    planar_normals: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 3))
    )
    point_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    planar_indices: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )
    point_indices: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )

    @property
    def n_planar(self) -> int:
        return len(self.planar_points)

    @property
    def n_point(self) -> int:
        return len(self.point_points)

    @property
    def size(self) -> int:
        return self.n_planar + self.n_point


def in_range_mask(scan: Scan, min_range: float, max_range: float) -> np.ndarray:
    return (scan.ranges >= min_range) & (scan.ranges <= max_range)


def mark_validity(
    scan: Scan, min_range: float, max_range: float, n_neighbor: int
) -> np.ndarray:
    """Per-point validity for curvature evaluation.

    A point is valid iff it is in range, at least n_neighbor indices from
    both ends of its line, and no out-of-range point sits within n_neighbor
    indices of it on the same line.
    """
    ok = in_range_mask(scan, min_range, max_range)
    valid = np.zeros(scan.n_points, dtype=bool)
    kernel = np.ones(2 * n_neighbor + 1)
    for j in range(scan.n_lines):
        lo, hi = int(scan.offsets[j]), int(scan.offsets[j + 1])
        width = hi - lo
        if width < 2 * n_neighbor + 1:
            continue
        bad = (~ok[lo:hi]).astype(np.float64)
        contaminated = np.convolve(bad, kernel, mode="same") > 0.0
        v = ok[lo:hi] & ~contaminated
        v[:n_neighbor] = False
        v[width - n_neighbor :] = False
        valid[lo:hi] = v
    return valid


def curvature_at(row: np.ndarray, i: int, n_neighbor: int) -> float:
    """Mean symmetric second difference magnitude at one point of a line."""
    j = np.arange(1, n_neighbor + 1)
    acc = row[i + j] + row[i - j] - 2.0 * row[i]
    return float(np.linalg.norm(np.sum(acc, axis=0) / n_neighbor))


def compute_curvature(scan: Scan, valid: np.ndarray, n_neighbor: int) -> np.ndarray:
    """Curvature for every valid point; +inf where not evaluated."""
    return kernels.curvature(scan.points, scan.offsets, valid, n_neighbor)


def select_planar_features(
    scan: Scan, curvatures: np.ndarray, valid: np.ndarray, cfg: Config
) -> np.ndarray:
    """Flat indices of planar features, smallest-curvature-first per sector."""
    planar, _ = kernels.select_features(
        curvatures,
        valid,
        scan.offsets,
        cfg.n_sectors,
        cfg.n_planar,
        0,
        cfg.delta_planar,
        cfg.n_neighbor,
        False,
    )
    return planar


def select_point_features(
    scan: Scan, valid: np.ndarray, planar_indices: np.ndarray, cfg: Config
) -> np.ndarray:
    """Flat indices of point features given an already-selected planar set.

    Per sector, up to n_point valid points at an even stride, each at least
    n_neighbor indices from every feature of either kind on its line.
    """
    n = cfg.n_neighbor
    selected = []
    planar_indices = np.asarray(planar_indices, dtype=np.int64)
    for j in range(scan.n_lines):
        lo, hi = int(scan.offsets[j]), int(scan.offsets[j + 1])
        width = hi - lo
        if width == 0:
            continue
        blocked = np.zeros(width, dtype=bool)
        on_line = planar_indices[(planar_indices >= lo) & (planar_indices < hi)] - lo
        for col in on_line:
            blocked[max(0, col - n + 1) : col + n] = True
        cols = np.flatnonzero(valid[lo:hi])
        if len(cols) == 0:
            continue
        base, extra = divmod(len(cols), cfg.n_sectors)
        bounds = np.cumsum([0] + [base + 1] * extra + [base] * (cfg.n_sectors - extra))
        for s in range(cfg.n_sectors):
            sector = cols[bounds[s] : bounds[s + 1]]
            m = len(sector)
            if m == 0:
                continue
            taken = 0
            for q in range(cfg.n_point):
                start = (q * m) // cfg.n_point
                for p in range(start, m):
                    col = sector[p]
                    if not blocked[col]:
                        selected.append(lo + col)
                        taken += 1
                        blocked[max(0, col - n + 1) : col + n] = True
                        break
                if taken >= cfg.n_point:
                    break
    return np.array(sorted(selected), dtype=np.int64)


def estimate_normal(
    scan: Scan,
    flat_index: int,
    delta_radius: float,
    n_neighbor: int,
    in_range: np.ndarray | None = None,
):
    """Surface normal at one feature point, or None when support is thin.

    Gathers up to n_neighbor same-line neighbors within delta_radius of the
    feature plus, per adjacent line reaching within delta_radius, up to
    n_neighbor points around that line's nearest point; needs more than 5
    neighbors and a two-dimensional spread to accept. The normal is the
    smallest-eigenvalue eigenvector of the neighborhood covariance about
    the feature, oriented toward the sensor.
    """
    if in_range is None:
        in_range = np.ones(scan.n_points, dtype=bool)
    feat = np.array([flat_index], dtype=np.int64)
    line = np.array([scan.line_of(flat_index)], dtype=np.int64)
    normals, counts, spread = kernels.plane_normals(
        scan.points, scan.offsets, in_range, feat, line, delta_radius, n_neighbor
    )
    if counts[0] <= 5 or spread[0, 1] <= MIN_SPREAD_RATIO * spread[0, 0]:
        return None
    return normals[0]


def extract_features(scan: Scan, cfg: Config) -> FeatureSet:
    """Full extraction: validity, curvature, selection, normals, filtering.

    Planar candidates without enough neighborhood support are dropped after
    selection (their spacing slot stays consumed). Point features are
    skipped entirely when cfg.point_features is off.
    """
    if scan.n_points == 0:
        return FeatureSet(scan_index=scan.index)
    valid = mark_validity(scan, cfg.min_range, cfg.max_range, cfg.n_neighbor)
    kappa = compute_curvature(scan, valid, cfg.n_neighbor)
    planar_idx, point_idx = kernels.select_features(
        kappa,
        valid,
        scan.offsets,
        cfg.n_sectors,
        cfg.n_planar,
        cfg.n_point,
        cfg.delta_planar,
        cfg.n_neighbor,
        cfg.point_features,
    )
    ok = in_range_mask(scan, cfg.min_range, cfg.max_range)
    if len(planar_idx):
        lines = scan.line_of(planar_idx).astype(np.int64)
        normals, counts, spread = kernels.plane_normals(
            scan.points,
            scan.offsets,
            ok,
            planar_idx,
            lines,
            cfg.delta_radius,
            cfg.n_neighbor,
        )
        keep = (counts > 5) & (spread[:, 1] > MIN_SPREAD_RATIO * spread[:, 0])
        planar_idx = planar_idx[keep]
        normals = normals[keep]
    else:
        normals = np.zeros((0, 3))
    return FeatureSet(
        scan_index=scan.index,
        planar_points=scan.points[planar_idx].copy(),
        planar_normals=normals,
        point_points=scan.points[point_idx].copy(),
        planar_indices=planar_idx,
        point_indices=point_idx,
    )
