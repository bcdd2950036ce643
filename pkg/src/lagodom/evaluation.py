"""Trajectory comparison: association, windowed relative error, timing.

The headline metric is the windowed relative translation error: over every
subsequence whose ground-truth path length first reaches a window of j
meters, compare the relative motion of the estimate against the relative
motion of the truth, and report the RMS of the translation error norms.
Relative motions cancel any global frame offset, so no alignment step is
needed beyond timestamp association.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, relative

__all__ = [
    "EvaluationError",
    "TimingStats",
    "Trajectory",
    "associate",
    "evaluate_windows",
    "extract_subsequences",
    "timing_stats",
    "wrte",
]


class EvaluationError(ValueError):
    """Raised when an evaluation has no usable data."""


@dataclass
class Trajectory:
    """Timestamped pose sequence; timestamps must strictly increase."""

    timestamps: np.ndarray
    poses: list

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses must align")
        if np.any(np.diff(self.timestamps) <= 0.0):
            raise ValueError("timestamps must strictly increase")

    @classmethod
    def from_rows(cls, rows) -> "Trajectory":
        """Build from an iterable of (timestamp, Pose)."""
        rows = list(rows)
        return cls(
            np.array([t for t, _ in rows], dtype=np.float64),
            [p for _, p in rows],
        )

    def __len__(self) -> int:
        return len(self.poses)

    def take(self, indices) -> "Trajectory":
        idx = np.asarray(indices, dtype=np.int64)
        return Trajectory(self.timestamps[idx], [self.poses[i] for i in idx])

    def arc_lengths(self) -> np.ndarray:
        """Cumulative translation path length; entry 0 is 0."""
        pts = np.array([p.translation for p in self.poses]).reshape(-1, 3)
        steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])


def associate(gt: Trajectory, est: Trajectory, max_dt: float) -> np.ndarray:
    """Nearest-timestamp (gt index, est index) pairs within max_dt seconds.

    Each ground-truth pose pairs with at most one estimate; when several
    estimates prefer the same ground-truth stamp the closest in time wins.
    Poses with no partner inside the tolerance are dropped.
    """
    if len(gt) == 0 or len(est) == 0:
        raise EvaluationError("cannot associate empty trajectories")
    t_gt, t_est = gt.timestamps, est.timestamps
    pos = np.searchsorted(t_gt, t_est)
    lo = np.clip(pos - 1, 0, len(t_gt) - 1)
    hi = np.clip(pos, 0, len(t_gt) - 1)
    pick = np.where(
        np.abs(t_gt[hi] - t_est) < np.abs(t_gt[lo] - t_est), hi, lo
    )
    dt = np.abs(t_gt[pick] - t_est)
    best: dict[int, int] = {}
    for ei in np.flatnonzero(dt <= max_dt):
        gi = int(pick[ei])
        if gi not in best or dt[ei] < dt[best[gi]]:
            best[gi] = int(ei)
    if not best:
        raise EvaluationError(f"no timestamp pairs within {max_dt:g} s")
    return np.array(sorted(best.items()), dtype=np.int64)


def extract_subsequences(traj: Trajectory, j: float) -> list:
    """(start, end) index pairs whose path length first reaches j meters.

    Every pose starts a candidate subsequence; its end is the first later
    pose where the cumulative path length has grown by at least j. A
    candidate whose end pose repeats the previously kept end pose is
    dropped, so a stationary stretch contributes one subsequence, not many.
    """
    if j <= 0.0:
        raise ValueError("window length must be positive")
    arcs = traj.arc_lengths()
    ends = np.searchsorted(arcs, arcs + j)
    out = []
    prev: Pose | None = None
    for start, end in enumerate(ends):
        if end >= len(traj):
            break
        pose = traj.poses[end]
        if prev is not None and np.array_equal(
            pose.translation, prev.translation
        ) and np.array_equal(pose.rotation, prev.rotation):
            continue
        out.append((start, int(end)))
        prev = pose
    return out


def _rotation_angle(rotation: np.ndarray) -> float:
    return float(np.arccos(np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)))


def wrte(gt: Trajectory, est: Trajectory, j: float,
         rotational: bool = False) -> float:
    """RMS relative-pose error over all window-j subsequences.

    gt and est must already be associated index-for-index. Per subsequence
    the error is the translation of delta_gt^-1 * delta_est, where each
    delta is the relative pose from the subsequence start to its end; with
    rotational=True the rotation angle of that error is measured instead.
    """
    if len(gt) != len(est):
        raise EvaluationError("trajectories must be associated first")
    subs = extract_subsequences(gt, j)
    if not subs:
        raise EvaluationError(f"no subsequences of length {j:g} m")
    total = 0.0
    for start, end in subs:
        delta = relative(gt.poses[start], gt.poses[end])
        delta_hat = relative(est.poses[start], est.poses[end])
        err = relative(delta, delta_hat)
        if rotational:
            total += _rotation_angle(err.rotation) ** 2
        else:
            total += float(err.translation @ err.translation)
    return float(np.sqrt(total / len(subs)))


@dataclass(frozen=True)
class TimingStats:
    mean_hz: float
    min_hz: float
    n_scans: int


def timing_stats(seconds) -> TimingStats:
    """Throughput summary of per-scan processing times."""
    t = np.asarray(list(seconds), dtype=np.float64)
    if len(t) == 0:
        raise EvaluationError("no timings to summarize")
    return TimingStats(
        mean_hz=len(t) / float(t.sum()),
        min_hz=1.0 / float(t.max()),
        n_scans=len(t),
    )


def evaluate_windows(gt: Trajectory, est: Trajectory, windows,
                     max_dt: float = 0.05) -> list:
    """Associate, then one (j, error or None, subsequence count) per window.

    Windows too long for the shared trajectory give (j, None, 0) rather
    than an error so a sweep over window sizes degrades gracefully.
    """
    pairs = associate(gt, est, max_dt)
    g = gt.take(pairs[:, 0])
    e = est.take(pairs[:, 1])
    rows = []
    for j in windows:
        subs = extract_subsequences(g, j)
        if not subs:
            rows.append((j, None, 0))
        else:
            rows.append((j, wrte(g, e, j), len(subs)))
    return rows
