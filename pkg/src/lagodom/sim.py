"""Synthetic rotating-LiDAR worlds: scenes, sensor model, trajectories.

Everything here is deterministic given its seeds, which is what makes the
pipeline-level tests reproducible. Scenes are finite rectangles plus
vertical cylinder poles; ray casting is exact nearest-hit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .features import Scan
from .geometry import Pose, yaw_rotation

__all__ = [
    "Plane",
    "Pole",
    "Scene",
    "SensorModel",
    "TrajectorySpec",
    "SimSpec",
    "make_plane",
    "scene_preset",
    "generate_trajectory",
    "simulate_scan",
    "parse_sim_spec",
    "load_sim_spec",
]


@dataclass
class Plane:
    """Finite rectangle: center, two in-plane unit axes, normal, half extents."""

    center: np.ndarray
    u: np.ndarray
    v: np.ndarray
    normal: np.ndarray
    half: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.half) <= 0):
            raise ValueError("plane extents must be positive")


@dataclass
class Pole:
    """Vertical cylinder side wall: base center, radius, height."""

    center: np.ndarray
    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("pole radius and height must be positive")


@dataclass
class Scene:
    planes: list = field(default_factory=list)
    poles: list = field(default_factory=list)

    def arrays(self):
        """Pack surfaces into the arrays the ray-cast kernel consumes."""
        if self.planes:
            pl_c = np.array([p.center for p in self.planes], dtype=np.float64)
            pl_u = np.array([p.u for p in self.planes], dtype=np.float64)
            pl_v = np.array([p.v for p in self.planes], dtype=np.float64)
            pl_n = np.array([p.normal for p in self.planes], dtype=np.float64)
            pl_half = np.array([p.half for p in self.planes], dtype=np.float64)
        else:
            pl_c = pl_u = pl_v = pl_n = np.zeros((0, 3))
            pl_half = np.zeros((0, 2))
        if self.poles:
            po_c = np.array([p.center[:2] for p in self.poles], dtype=np.float64)
            po_r = np.array([p.radius for p in self.poles], dtype=np.float64)
            po_z0 = np.array([p.center[2] for p in self.poles], dtype=np.float64)
            po_z1 = po_z0 + np.array([p.height for p in self.poles])
        else:
            po_c = np.zeros((0, 2))
            po_r = po_z0 = po_z1 = np.zeros(0)
        return pl_c, pl_u, pl_v, pl_n, pl_half, po_c, po_r, po_z0, po_z1


def make_plane(point, normal, extent, u_hint=None):
    """Rectangle through point with the given outward normal and full extents."""
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    if u_hint is None:
        u_hint = np.array([1.0, 0.0, 0.0])
        if abs(normal @ u_hint) > 0.9:
            u_hint = np.array([0.0, 1.0, 0.0])
    u = np.asarray(u_hint, dtype=np.float64) - (u_hint @ normal) * normal
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    return Plane(
        center=np.asarray(point, dtype=np.float64),
        u=u,
        v=v,
        normal=normal,
        half=0.5 * np.asarray(extent, dtype=np.float64),
    )


@dataclass
class SensorModel:
    beams: int = 16
    samples: int = 512
    vertical_fov: float = 30.0  # degrees, centered on the horizon
    min_range: float = 0.5
    max_range: float = 100.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.beams < 2:
            raise ValueError("sensor needs at least 2 beams")
        if self.noise_sigma < 0:
            raise ValueError("range noise sigma must be >= 0")

    def directions(self):
        """(beams, samples, 3) unit ray directions in the sensor frame."""
        el = np.radians(
            np.linspace(-self.vertical_fov / 2, self.vertical_fov / 2, self.beams)
        )
        az = -np.pi + 2 * np.pi * np.arange(self.samples) / self.samples
        ce, se = np.cos(el), np.sin(el)
        ca, sa = np.cos(az), np.sin(az)
        dirs = np.empty((self.beams, self.samples, 3))
        dirs[:, :, 0] = ce[:, None] * ca[None, :]
        dirs[:, :, 1] = ce[:, None] * sa[None, :]
        dirs[:, :, 2] = se[:, None] * np.ones_like(ca)[None, :]
        return dirs


@dataclass
class TrajectorySpec:
    kind: str = "static"
    speed: float = 1.0
    rate: float = 10.0
    duration: float = 10.0
    pose_noise: float = 0.0
    start: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.5]))
    direction: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    radius: float = 20.0
    yaw: float = 0.0
    waypoints: list = field(default_factory=list)

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("trajectory rate must be positive")


def _waypoint_pose(waypoints, arc, default_yaw):
    """Pose at path length arc along the piecewise-linear waypoint chain."""
    pts = [np.asarray(w, dtype=np.float64) for w in waypoints]
    segs = [(a, b, np.linalg.norm(b - a)) for a, b in zip(pts[:-1], pts[1:])]
    total = sum(s[2] for s in segs)
    s = min(arc, total)
    for a, b, length in segs:
        if s <= length or (a, b, length) is segs[-1]:
            frac = 0.0 if length == 0 else min(s / length, 1.0)
            pos = a + frac * (b - a)
            d = b - a
            yaw = np.arctan2(d[1], d[0]) if length > 0 else default_yaw
            return pos, yaw
        s -= length
    return pts[-1], default_yaw


def generate_trajectory(spec: TrajectorySpec, seed: int = 0):
    """[(timestamp, Pose)] sampled at spec.rate; deterministic given seed."""
    n = int(round(spec.duration * spec.rate))
    times = np.arange(n) / spec.rate
    poses = []
    start = np.asarray(spec.start, dtype=np.float64)
    if spec.kind == "static":
        for t in times:
            poses.append(Pose(yaw_rotation(spec.yaw), start.copy()))
    elif spec.kind == "line":
        d = np.asarray(spec.direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        yaw = np.arctan2(d[1], d[0])
        for t in times:
            poses.append(Pose(yaw_rotation(yaw), start + spec.speed * t * d))
    elif spec.kind == "arc":
        omega = spec.speed / spec.radius
        center = start + np.array([0.0, spec.radius, 0.0])
        for t in times:
            phi = -np.pi / 2 + omega * t
            pos = center + spec.radius * np.array([np.cos(phi), np.sin(phi), 0.0])
            poses.append(Pose(yaw_rotation(phi + np.pi / 2), pos))
    elif spec.kind == "waypoints":
        if len(spec.waypoints) < 2:
            raise ValueError("waypoint trajectory needs at least 2 waypoints")
        for t in times:
            pos, yaw = _waypoint_pose(spec.waypoints, spec.speed * t, spec.yaw)
            poses.append(Pose(yaw_rotation(yaw), pos))
    else:
        raise ValueError(f"unknown trajectory kind {spec.kind!r}")
    if spec.pose_noise > 0:
        rng = np.random.default_rng(seed)
        from . import geometry

        poses = [
            geometry.retract(p, spec.pose_noise * rng.standard_normal(6))
            for p in poses
        ]
    return list(zip(times.tolist(), poses))


def simulate_scan(scene: Scene, sensor: SensorModel, pose: Pose, seed: int,
                  index: int = 0, timestamp: float = 0.0) -> Scan:
    """One revolution from the given pose; misses and far hits are dropped."""
    dirs_local = sensor.directions()
    b, s, _ = dirs_local.shape
    flat_local = dirs_local.reshape(-1, 3)
    flat_world = flat_local @ pose.rotation.T
    t = kernels.raycast(pose.translation, flat_world, *scene.arrays())
    noise = np.zeros(b * s)
    if sensor.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noise = sensor.noise_sigma * rng.standard_normal(b * s)
    hit = np.isfinite(t) & (t <= sensor.max_range)
    r = np.where(hit, t + noise, np.inf).reshape(b, s)
    hit = hit.reshape(b, s)
    rows = []
    ranges = []
    for line in range(b):
        m = hit[line]
        rows.append(dirs_local[line, m] * r[line, m, None])
        ranges.append(r[line, m])
    return Scan.from_rows(
        rows, index=index, timestamp=timestamp,
        ranges=np.concatenate(ranges) if rows else None,
    )


def scene_preset(name: str, **params) -> Scene:
    """Built-in scenes; pole layouts use a fixed internal seed."""
    if name == "room":
        length = params.pop("length", 90.0)
        width = params.pop("width", 20.0)
        height = params.pop("height", 8.0)
        _reject_params(name, params)
        hx, hy = length / 2, width / 2
        return Scene(planes=[
            make_plane([0, 0, 0], [0, 0, 1], [length, width]),
            make_plane([hx, 0, height / 2], [-1, 0, 0], [width, height], [0, 1, 0]),
            make_plane([-hx, 0, height / 2], [1, 0, 0], [width, height], [0, 1, 0]),
            make_plane([0, hy, height / 2], [0, -1, 0], [length, height]),
            make_plane([0, -hy, height / 2], [0, 1, 0], [length, height]),
        ])
    if name == "corridor":
        length = params.pop("length", 70.0)
        width = params.pop("width", 8.0)
        height = params.pop("height", 5.0)
        _reject_params(name, params)
        hy = width / 2
        return Scene(planes=[
            make_plane([length / 2 - 10, 0, 0], [0, 0, 1], [length, width]),
            make_plane([length / 2 - 10, hy, height / 2], [0, -1, 0], [length, height]),
            make_plane([length / 2 - 10, -hy, height / 2], [0, 1, 0], [length, height]),
            make_plane([length - 10, 0, height / 2], [-1, 0, 0], [width, height], [0, 1, 0]),
        ])
    if name == "forest":
        n_poles = int(params.pop("n_poles", 140))
        radius = params.pop("radius", 0.22)
        clearance = params.pop("clearance", 4.5)
        _reject_params(name, params)
        rng = np.random.default_rng(90210)
        poles = []
        placed = []
        while len(poles) < n_poles:
            x = rng.uniform(-15.0, 75.0)
            y = rng.uniform(-20.0, 20.0)
            # keep a pole-free corridor along the x axis, and poles apart
            if abs(y) < clearance:
                continue
            if any((x - a) ** 2 + (y - b) ** 2 < 2.0**2 for a, b in placed):
                continue
            placed.append((x, y))
            poles.append(Pole(np.array([x, y, -1.0]), radius, 10.0))
        return Scene(poles=poles)
    if name == "mixed":
        width = params.pop("width", 12.0)
        _reject_params(name, params)
        corridor = Scene(planes=[
            make_plane([30, 0, 0], [0, 0, 1], [100, width]),
            make_plane([30, width / 2, 2.5], [0, -1, 0], [100, 5.0]),
            make_plane([30, -width / 2, 2.5], [0, 1, 0], [100, 5.0]),
        ])
        rng = np.random.default_rng(424242)
        poles = []
        placed = []
        while len(poles) < 60:
            x = rng.uniform(-15.0, 75.0)
            y = rng.uniform(-18.0, 18.0)
            if abs(y) < width / 2 + 0.8:
                continue
            if any((x - a) ** 2 + (y - b) ** 2 < 2.0**2 for a, b in placed):
                continue
            placed.append((x, y))
            poles.append(Pole(np.array([x, y, -1.0]), 0.22, 10.0))
        return Scene(planes=corridor.planes, poles=poles)
    raise ValueError(f"unknown scene preset {name!r}")


def _reject_params(name, params):
    if params:
        raise ValueError(f"unknown {name} scene parameters: {sorted(params)}")


# accepted spec-file keys per preset, mirroring scene_preset's keyword args
_SCENE_PARAMS = {
    "room": ("length", "width", "height"),
    "corridor": ("length", "width", "height"),
    "forest": ("n_poles", "radius", "clearance"),
    "mixed": ("width",),
}


@dataclass
class SimSpec:
    scene: Scene
    sensor: SensorModel
    trajectory: TrajectorySpec
    scene_name: str = ""


class SimSpecError(ValueError):
    pass


def _parse_vector(raw):
    return np.array([float(x) for x in raw.replace(",", " ").split()])


def parse_sim_spec(text: str, source: str = "<spec>") -> SimSpec:
    """Parse the 'formsim v1' scene/sensor/trajectory description."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != "formsim v1":
        raise SimSpecError(f"{source}:1: expected header 'formsim v1'")
    sections = {"scene": {}, "sensor": {}, "trajectory": {}}
    current = None
    for lineno, line in enumerate(lines[1:], start=2):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("[") and body.endswith("]"):
            current = body[1:-1].strip()
            if current not in sections:
                raise SimSpecError(f"{source}:{lineno}: unknown section [{current}]")
            continue
        if current is None or "=" not in body:
            raise SimSpecError(f"{source}:{lineno}: expected 'key = value' in a section")
        key, _, raw = body.partition("=")
        key = key.strip()
        if key in sections[current]:
            raise SimSpecError(f"{source}:{lineno}: duplicate key {key!r}")
        sections[current][key] = (raw.strip(), lineno)

    def take(section, key, cast, default):
        if key not in sections[section]:
            return default, False
        raw, lineno = sections[section].pop(key)
        try:
            return cast(raw), True
        except (ValueError, TypeError):
            raise SimSpecError(
                f"{source}:{lineno}: bad value for {key!r}: {raw!r}"
            ) from None

    preset_line = sections["scene"].get("preset", ("", 1))[1]
    preset, _ = take("scene", "preset", str, "room")
    if preset not in _SCENE_PARAMS:
        raise SimSpecError(f"{source}:{preset_line}: unknown scene preset {preset!r}")
    scene_params = {}
    for key in list(sections["scene"]):
        raw, lineno = sections["scene"].pop(key)
        if key not in _SCENE_PARAMS[preset]:
            raise SimSpecError(
                f"{source}:{lineno}: unknown key {key!r} for {preset} scenes"
            )
        try:
            scene_params[key] = float(raw)
        except ValueError:
            raise SimSpecError(
                f"{source}:{lineno}: bad value for {key!r}: {raw!r}"
            ) from None
    scene = scene_preset(preset, **scene_params)

    sensor = SensorModel(
        beams=take("sensor", "beams", int, 16)[0],
        samples=take("sensor", "samples", int, 512)[0],
        vertical_fov=take("sensor", "vfov", float, 30.0)[0],
        min_range=take("sensor", "min_range", float, 0.5)[0],
        max_range=take("sensor", "max_range", float, 100.0)[0],
        noise_sigma=take("sensor", "noise", float, 0.0)[0],
        seed=take("sensor", "seed", int, 0)[0],
    )
    kind, _ = take("trajectory", "kind", str, "static")
    waypoints_raw, has_wp = take("trajectory", "waypoints", str, "")
    waypoints = []
    if has_wp:
        for chunk in waypoints_raw.split(";"):
            chunk = chunk.strip()
            if chunk:
                waypoints.append(_parse_vector(chunk))
    trajectory = TrajectorySpec(
        kind=kind,
        speed=take("trajectory", "speed", float, 1.0)[0],
        rate=take("trajectory", "rate", float, 10.0)[0],
        duration=take("trajectory", "duration", float, 10.0)[0],
        pose_noise=take("trajectory", "pose_noise", float, 0.0)[0],
        start=take("trajectory", "start", _parse_vector, np.array([0.0, 0.0, 1.5]))[0],
        direction=take("trajectory", "direction", _parse_vector, np.array([1.0, 0.0, 0.0]))[0],
        radius=take("trajectory", "radius", float, 20.0)[0],
        yaw=take("trajectory", "yaw", float, 0.0)[0],
        waypoints=waypoints,
    )
    for section, entries in sections.items():
        for key, (_, lineno) in entries.items():
            raise SimSpecError(f"{source}:{lineno}: unknown key {key!r} in [{section}]")
    return SimSpec(scene=scene, sensor=sensor, trajectory=trajectory, scene_name=preset)


def load_sim_spec(path) -> SimSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_sim_spec(fh.read(), source=str(path))
