"""Per-scan odometry loop over a sliding window of poses.

Each scan runs: feature extraction, constant-velocity initialization, an
ICP loop of match + semi-linearized solves, one full nonlinear smoothing
pass, window bookkeeping (keyscan promotion, marginalization), and a map
regeneration from the freshly smoothed poses.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .factors import (
    PLANAR,
    POINT,
    DegenerateGeometryError,
    FactorBatch,
    Graph,
    MatchFactor,
    OptimizeSettings,
    PriorFactor,
    linearize_batches,
    marginalize,
    optimize,
)
from .features import FeatureSet, Scan, extract_features
from .geometry import (
    Pose,
    compose,
    identity,
    local,
    project_rotation,
    relative,
    transform_points,
)
from .mapping import MapScan, ScanIndexedMap, rebuild, select_insertions

log = logging.getLogger(__name__)


@dataclass
class PoseEstimate:
    """World-frame pose emitted immediately after a scan is processed."""

    scan_id: int
    timestamp: float
    pose: Pose
    seconds: float


@dataclass
class WindowScan:
    """Bookkeeping for one scan held in the window."""

    scan_id: int
    n_features: int
    map_scan: MapScan
    last_matched: int


@dataclass
class MatchResult:
    """Factor batch from one matching pass plus per-feature distances."""

    batch: FactorBatch | None
    planar_dist: np.ndarray
    point_dist: np.ndarray

    @property
    def n_matches(self) -> int:
        return 0 if self.batch is None else len(self.batch)

    def factors(self):
        if self.batch is None:
            return []
        b = self.batch
        return [
            MatchFactor(
                kind=int(b.kinds[r]),
                k=int(b.k_ids[r]),
                i=int(b.i_ids[r]),
                p_k=b.p_k[r],
                p_i=b.p_i[r],
                n_k=b.n_k[r] if b.kinds[r] == PLANAR else None,
            )
            for r in range(len(b))
        ]


def match_scan(features: FeatureSet, guess: Pose, map_: ScanIndexedMap,
               delta_match: float) -> MatchResult:
    """Gate-limited nearest-map-point association at the given pose guess."""
    wp = transform_points(guess, features.planar_points)
    wq = transform_points(guess, features.point_points)
    rows_p, dist_p = map_.nearest_batch(wp, delta_match, PLANAR)
    rows_q, dist_q = map_.nearest_batch(wq, delta_match, POINT)
    hit_p = rows_p >= 0
    hit_q = rows_q >= 0
    n = int(hit_p.sum() + hit_q.sum())
    if n == 0:
        return MatchResult(None, dist_p, dist_q)
    mp, mq = rows_p[hit_p], rows_q[hit_q]
    sid = features.scan_index
    batch = FactorBatch(
        kinds=np.concatenate([
            np.full(len(mp), PLANAR, dtype=np.int64),
            np.full(len(mq), POINT, dtype=np.int64),
        ]),
        k_ids=np.concatenate([map_.scan_ids[mp], map_.scan_ids[mq]]),
        i_ids=np.full(n, sid, dtype=np.int64),
        p_k=np.concatenate([map_.local[mp], map_.local[mq]]),
        p_i=np.concatenate([
            features.planar_points[hit_p], features.point_points[hit_q]
        ]),
        n_k=np.concatenate([map_.normals[mp], np.zeros((len(mq), 3))]),
    )
    return MatchResult(batch, dist_p, dist_q)


@dataclass
class SessionResult:
    estimates: list
    map: ScanIndexedMap
    window_poses: dict


class OdometrySession:
    """Streaming odometry: push scans in index order, read poses back."""

    def __init__(self, config: Config | None = None):
        self.config = config or Config()
        self.config.validate()
        self.graph = Graph()
        self.map = rebuild([], {})
        self.keyscans: list[WindowScan] = []
        self.recent: list[WindowScan] = []
        self.estimates: list[PoseEstimate] = []
        self._history: list[tuple[int, Pose]] = []  # last two emitted poses
        self._step = -1
        self._icp_settings = OptimizeSettings(max_iters=8, step_tol=1e-6)
        self._full_settings = OptimizeSettings()

    # -- initialization ------------------------------------------------

    def _resolve(self, sid: int, fallback: Pose) -> Pose:
        return self.graph.values.get(sid, fallback)

    def initialize_pose(self) -> Pose:
        """Constant-velocity prediction from the previous two poses.

        The prediction is reprojected onto the rotation manifold: this
        recurrence otherwise compounds the tiny orthonormality defect of its
        own output by more than double per scan, and once the defect times
        the map lever arm clears the noise floor the whole estimator walks
        off exponentially.
        """
        if not self._history:
            return identity()
        if len(self._history) == 1:
            sid, pose = self._history[-1]
            return self._resolve(sid, pose)
        (s2, p2), (s1, p1) = self._history[-2], self._history[-1]
        prev2 = self._resolve(s2, p2)
        prev1 = self._resolve(s1, p1)
        pred = compose(prev1, relative(prev2, prev1))
        return Pose(project_rotation(pred.rotation), pred.translation)

    # -- window helpers ------------------------------------------------

    def _window(self) -> list[WindowScan]:
        return self.keyscans + self.recent

    def _constrained_ids(self, batches, prior) -> set:
        ids = set()
        for b in batches:
            ids.update(int(k) for k in b.k_ids)
            ids.update(int(i) for i in b.i_ids)
        if prior is not None:
            ids.update(prior.ids)
        return ids

    def _fixed_for(self, graph: Graph, newest: int) -> list:
        """Poses to hold constant: everything but newest when smoothing is
        off, plus any pose no factor or prior touches (zero gradient)."""
        constrained = self._constrained_ids(graph.batches, graph.prior)
        for lf in graph.linear_factors:
            constrained.update(lf.ids)
        fixed = [
            pid for pid in graph.values
            if pid != newest and (
                not self.config.smoothing or pid not in constrained
            )
        ]
        return fixed

    # -- the per-scan loop ----------------------------------------------

    def push(self, scan: Scan) -> PoseEstimate:
        t0 = time.perf_counter()
        cfg = self.config
        sid = scan.index
        if sid != self._step + 1:
            raise ValueError(f"scan index {sid} does not follow {self._step}")
        if self.estimates and scan.timestamp <= self.estimates[-1].timestamp:
            raise ValueError("scan timestamps must strictly increase")
        self._step = sid

        features = extract_features(scan, cfg)
        guess = self.initialize_pose()
        first = not self.graph.values
        self.graph.add_pose(sid, guess)
        if first:
            # soft anchor; keeps the gauge fixed through later marginalization
            self.graph.set_prior(PriorFactor(
                ids=(sid,),
                sqrt_info=1e3 * np.eye(6),
                offset=np.zeros(6),
                lin_values={sid: guess},
            ))

        batch = None
        if not first and features.size > 0 and len(self.map):
            guess, batch = self._icp(features, guess)
        elif not first:
            log.warning(
                "scan %d: no map matches; keeping constant-velocity pose", sid
            )
        self.graph.values[sid] = guess

        if batch is not None:
            self.graph.add_batch(batch)
            snapshot = dict(self.graph.values)
            try:
                optimize(
                    self.graph, mode="full", settings=self._full_settings,
                    fixed_ids=self._fixed_for(self.graph, sid),
                )
            except DegenerateGeometryError as err:
                log.warning(
                    "scan %d: degenerate geometry in smoothing (pose %s); "
                    "keeping matched pose", sid, err.pose_id,
                )
                self.graph.batches.pop()
                batch = None
                self.graph.values = snapshot
                self.graph.values[sid] = guess

        pose = self.graph.values[sid]

        # bookkeeping: scans targeted by this step's surviving factors
        if batch is not None:
            targets = set(int(k) for k in batch.k_ids)
            for ws in self._window():
                if ws.scan_id in targets:
                    ws.last_matched = sid
        self.recent.append(WindowScan(
            scan_id=sid,
            n_features=features.size,
            map_scan=self._insertions(features, pose),
            last_matched=sid,
        ))

        self._manage_window(sid)

        self.map = rebuild(
            [ws.map_scan for ws in self._window()],
            self.graph.values,
            generation=sid,
        )

        n_active = len(self.graph.values)
        if n_active > cfg.n_key + cfg.n_recent + 1:
            raise RuntimeError(f"window overflow: {n_active} active poses")

        est = PoseEstimate(sid, scan.timestamp, pose, time.perf_counter() - t0)
        self.estimates.append(est)
        self._history = (self._history + [(sid, pose)])[-2:]
        return est

    def _icp(self, features: FeatureSet, guess: Pose):
        """Match/solve loop; returns the refined guess and the last batch."""
        cfg = self.config
        sid = features.scan_index
        stale = None
        if cfg.smoothing and self.graph.batches:
            stale = linearize_batches(self.graph.batches, self.graph.values)
        batch = None
        for _ in range(cfg.n_icp):
            result = match_scan(features, guess, self.map, cfg.delta_match)
            if result.batch is None:
                if batch is None:
                    log.warning(
                        "scan %d: no map matches; keeping constant-velocity "
                        "pose", sid,
                    )
                return guess, batch
            batch = result.batch
            # old poses restart from the last full optimization each pass
            temp = Graph(
                values={**self.graph.values, sid: guess},
                batches=[batch],
                linear_factors=[stale] if stale is not None else [],
                prior=self.graph.prior,
            )
            try:
                optimize(
                    temp, mode="full", settings=self._icp_settings,
                    fixed_ids=self._fixed_for(temp, sid),
                )
            except DegenerateGeometryError as err:
                log.warning(
                    "scan %d: degenerate geometry while matching (pose %s)",
                    sid, err.pose_id,
                )
                return guess, None
            step = np.linalg.norm(local(guess, temp.values[sid]))
            guess = temp.values[sid]
            if step < cfg.delta_icp:
                break
        return guess, batch

    def _insertions(self, features: FeatureSet, pose: Pose) -> MapScan:
        """Keep only features that land in unseen space of the current map."""
        cfg = self.config
        planar_dist = point_dist = None
        if len(self.map) and features.size:
            wp = transform_points(pose, features.planar_points)
            wq = transform_points(pose, features.point_points)
            planar_dist = self.map.nearest_batch(wp, cfg.delta_map, PLANAR)[1]
            point_dist = self.map.nearest_batch(wq, cfg.delta_map, POINT)[1]
        keep_p, keep_q = select_insertions(
            features, planar_dist, point_dist, cfg.delta_map
        )
        return MapScan.from_features(features, keep_p, keep_q)

    def _manage_window(self, sid: int):
        cfg = self.config
        # overflow of the recent list: promote or marginalize the oldest
        while len(self.recent) > cfg.n_recent:
            cand = self.recent.pop(0)
            recent_ids = {ws.scan_id for ws in self.recent}
            n_match = 0
            for b in self.graph.batches:
                n_match += int(np.count_nonzero(
                    (b.k_ids == cand.scan_id) & np.isin(b.i_ids, list(recent_ids))
                ))
            ratio = n_match / (cfg.n_recent * max(cand.n_features, 1))
            if ratio >= cfg.delta_key:
                self.keyscans.append(cand)
            else:
                marginalize(self.graph, {cand.scan_id})
        # keyscans nobody has matched lately, then the oldest over the cap
        stale_ids = {
            ws.scan_id for ws in self.keyscans
            if sid - ws.last_matched > cfg.n_marg
        }
        keep = [ws for ws in self.keyscans if ws.scan_id not in stale_ids]
        while len(keep) > cfg.n_key:
            stale_ids.add(keep.pop(0).scan_id)
        if stale_ids:
            marginalize(self.graph, stale_ids)
            self.keyscans = keep

    def finish(self) -> SessionResult:
        """Immediate trajectory, final map, and the smoothed window poses."""
        return SessionResult(
            estimates=list(self.estimates),
            map=self.map,
            window_poses=dict(self.graph.values),
        )


def create(config: Config | None = None) -> OdometrySession:
    return OdometrySession(config)
