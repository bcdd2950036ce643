"""Plain-text file formats: scans, trajectories, maps, result CSVs.

Everything is line-oriented ASCII so tests and shell tools can inspect it.
Floats are written with enough digits to round-trip float64 exactly; the
formats carry no binary sections.
"""

from __future__ import annotations

import numpy as np

from .evaluation import Trajectory
from .features import Scan
from .geometry import Pose, quaternion_from_rotation, rotation_from_quaternion

__all__ = [
    "FileFormatError",
    "read_scan",
    "read_trajectory",
    "write_eval_csv",
    "write_map",
    "write_scan",
    "write_timing_csv",
    "write_trajectory",
]

SCAN_MAGIC = "scanfile v1"


class FileFormatError(ValueError):
    """Raised with a file:line locus for unreadable inputs."""


def _fail(source, lineno, message):
    raise FileFormatError(f"{source}:{lineno}: {message}")


def write_scan(path, scan: Scan, min_range: float = 0.0,
               max_range: float = float("inf")) -> None:
    """Write one scan: a small header, then 'line point x y z' rows."""
    counts = np.diff(scan.offsets)
    with open(path, "w") as fh:
        fh.write(f"{SCAN_MAGIC}\n")
        fh.write(f"beams {scan.n_lines}\n")
        fh.write(f"samples {int(counts.max()) if len(counts) else 0}\n")
        fh.write(f"min_range {min_range:.17g}\n")
        fh.write(f"max_range {max_range:.17g}\n")
        fh.write(f"index {scan.index}\n")
        fh.write(f"timestamp {scan.timestamp:.17g}\n")
        for j in range(scan.n_lines):
            for k, p in enumerate(scan.line(j)):
                fh.write(f"{j} {k} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def read_scan(path) -> Scan:
    """Parse a scan file; malformed content names its file and line."""
    source = str(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != SCAN_MAGIC:
        _fail(source, 1, f"expected header '{SCAN_MAGIC}'")
    header = {}
    body_start = None
    for lineno, raw in enumerate(lines[1:], start=2):
        fields = raw.split()
        if not fields:
            continue
        try:
            int(fields[0])
        except ValueError:
            # a header line; data rows always start with a line index
            if len(fields) != 2:
                _fail(source, lineno, f"header key '{fields[0]}' needs one value")
            header[fields[0]] = (fields[1], lineno)
            continue
        body_start = lineno
        break
    for key in ("beams", "index", "timestamp"):
        if key not in header:
            _fail(source, 1, f"missing header key '{key}'")

    def header_int(key):
        value, lineno = header[key]
        try:
            return int(value)
        except ValueError:
            _fail(source, lineno, f"header key '{key}' expects an integer")

    beams = header_int("beams")
    index = header_int("index")
    try:
        timestamp = float(header["timestamp"][0])
    except ValueError:
        _fail(source, header["timestamp"][1], "timestamp expects a number")
    rows = [[] for _ in range(beams)]
    last_point = [-1] * beams
    if body_start is not None:
        for lineno, raw in enumerate(
            lines[body_start - 1:], start=body_start
        ):
            fields = raw.split()
            if not fields:
                continue
            if len(fields) != 5:
                _fail(source, lineno, "expected 'line point x y z'")
            try:
                j = int(fields[0])
                k = int(fields[1])
                xyz = [float(v) for v in fields[2:]]
            except ValueError:
                _fail(source, lineno, "non-numeric scan row")
            if not 0 <= j < beams:
                _fail(source, lineno, f"line index {j} outside 0..{beams - 1}")
            if k <= last_point[j]:
                _fail(
                    source, lineno,
                    f"point index {k} not increasing on line {j}",
                )
            last_point[j] = k
            rows[j].append(xyz)
    return Scan.from_rows(
        [np.array(r, dtype=np.float64).reshape(-1, 3) for r in rows],
        index=index,
        timestamp=timestamp,
    )


def write_trajectory(path, traj: Trajectory) -> None:
    """One 'timestamp tx ty tz qx qy qz qw' row per pose."""
    with open(path, "w") as fh:
        for t, pose in zip(traj.timestamps, traj.poses):
            q = quaternion_from_rotation(pose.rotation)
            tx, ty, tz = pose.translation
            fh.write(
                f"{t:.17g} {tx:.17g} {ty:.17g} {tz:.17g} "
                f"{q[0]:.17g} {q[1]:.17g} {q[2]:.17g} {q[3]:.17g}\n"
            )


def read_trajectory(path) -> Trajectory:
    source = str(path)
    stamps = []
    poses = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            fields = raw.split()
            if not fields or fields[0].startswith("#"):
                continue
            if len(fields) != 8:
                _fail(
                    source, lineno,
                    "expected 'timestamp tx ty tz qx qy qz qw'",
                )
            try:
                values = [float(v) for v in fields]
            except ValueError:
                _fail(source, lineno, "non-numeric trajectory row")
            q = np.array(values[4:8])
            if abs(np.linalg.norm(q) - 1.0) > 1e-6:
                _fail(source, lineno, "quaternion is not unit norm")
            if stamps and values[0] <= stamps[-1]:
                _fail(source, lineno, "timestamps must strictly increase")
            stamps.append(values[0])
            poses.append(
                Pose(rotation_from_quaternion(q), np.array(values[1:4]))
            )
    if not stamps:
        _fail(source, 1, "empty trajectory")
    return Trajectory(np.array(stamps), poses)


def write_eval_csv(path, rows) -> None:
    """Rows of (window meters, error meters or None, subsequence count)."""
    with open(path, "w") as fh:
        fh.write("j_meters,rte_meters,n_subsequences\n")
        for j, rte, count in rows:
            mid = "" if rte is None else f"{rte:.9g}"
            fh.write(f"{j:g},{mid},{count}\n")


def write_timing_csv(path, estimates) -> None:
    with open(path, "w") as fh:
        fh.write("scan_id,seconds\n")
        for est in estimates:
            fh.write(f"{est.scan_id},{est.seconds:.9g}\n")


def write_map(path, scan_map) -> None:
    """World-frame map dump: 'x y z scan_id kind' per point."""
    with open(path, "w") as fh:
        fh.write("# x y z scan_id kind\n")
        for w, sid, kind in zip(
            scan_map.world, scan_map.scan_ids, scan_map.kinds
        ):
            fh.write(
                f"{w[0]:.17g} {w[1]:.17g} {w[2]:.17g} {int(sid)} {int(kind)}\n"
            )
