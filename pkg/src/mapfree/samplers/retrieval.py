"""Expert-trajectory database: binning, clustering, and initial-state retrieval.

Binary layout (little-endian)::

    magic        8s   b"MFXDB\\x00\\x01\\x00"
    count        u32  number of stored trajectories N
    steps        u32  waypoints per trajectory (30)
    bin_sizes    3f8  v, a, kappa bin widths
    betas        3f8  distance weights
    threshold    f8   retrieval radius
    max_clusters u32
    seed         u32
    states       N*3 f8     (v0, a0, kappa0)
    bins         N*3 i8     bin indices
    tags         N*2 u1     maneuver and source indices
    waypoints    N*30*5 f8  t, x, y, heading, v in the start-aligned frame
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.spatial import cKDTree

from ..config import DT, HORIZON_STEPS
from ..core import MANEUVERS, SOURCES, CandidateSet, EgoState, Trajectory
from ..geometry import from_fixed_oriented, three_point_curvature, to_fixed_oriented

MAGIC = b"MFXDB\x00\x02\x00"
# magic, count, steps, bin sizes, betas, threshold, max clusters, seed, config hash
_HEADER = struct.Struct("<8sII3d3ddII16s")
BIN_SIZES = (1.0, 0.5, 0.01)
BETAS = (1.0, 5.0, 40.0)
THRESHOLD = 1.0
MAX_CLUSTERS = 50


class ExpertDBError(ValueError):
    pass


def initial_state(traj: Trajectory) -> tuple[float, float, float]:
    """(v0, a0, kappa0) at the start of a raw trajectory.

    Requires the t = 0 origin; acceleration is the first forward difference
    and curvature the circumcircle through the origin and first two waypoints.
    """
    if traj.origin is None:
        raise ExpertDBError("expert trajectory has no start pose; initial state not derivable")
    v0 = float(traj.origin[3])
    a0 = float((traj.waypoints[0, 4] - v0) / DT)
    k0 = three_point_curvature(traj.origin[:2], traj.waypoints[0, 1:3], traj.waypoints[1, 1:3])
    return v0, a0, float(k0)


def bin_key(state, bin_sizes=BIN_SIZES) -> tuple[int, int, int]:
    """Bin indices with edges at integer multiples of the bin size, [k*w, (k+1)*w).

    A relative nudge of 1e-9 keeps values that sit on an edge up to rounding
    (0.03 / 0.01 = 2.9999999999999996) in the upper bin.
    """
    return tuple(int(math.floor(x / w + 1e-9)) for x, w in zip(state, bin_sizes))


@dataclass(frozen=True, eq=False)
class ExpertTrajectoryDB:
    states: np.ndarray        # (N, 3)
    bins: np.ndarray          # (N, 3) int
    trajectories: tuple[Trajectory, ...]  # start-aligned: origin at (0, 0, 0)
    bin_sizes: tuple[float, float, float] = BIN_SIZES
    betas: tuple[float, float, float] = BETAS
    threshold: float = THRESHOLD
    max_clusters: int = MAX_CLUSTERS
    seed: int = 0
    config_hash: str = ""
    _tree: cKDTree | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        states = np.asarray(self.states, float).reshape(-1, 3)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "bins", np.asarray(self.bins, np.int64).reshape(-1, 3))
        if len(states):
            object.__setattr__(self, "_tree", cKDTree(states * np.asarray(self.betas)))

    def __len__(self) -> int:
        return len(self.trajectories)

    def distances(self, query) -> np.ndarray:
        q = np.asarray(query, float)
        return np.abs(self.states - q) @ np.asarray(self.betas)

    def query(self, query) -> np.ndarray:
        """Indices of stored trajectories with weighted L1 distance < threshold."""
        if self._tree is None:
            return np.zeros(0, int)
        q = np.asarray(query, float) * np.asarray(self.betas)
        idx = np.array(sorted(self._tree.query_ball_point(q, r=self.threshold * (1 + 1e-9), p=1)), int)
        if len(idx):
            idx = idx[self.distances(query)[idx] < self.threshold]
        return idx


def _cluster(members: list[int], paths: np.ndarray, max_clusters: int, rng: np.random.Generator) -> list[int]:
    data = paths[members]
    uniq, first = np.unique(data.round(9), axis=0, return_index=True)
    if len(uniq) <= max_clusters:
        return sorted(members[i] for i in first)
    centroids, labels = kmeans2(data, max_clusters, iter=50, minit="++", seed=rng)
    keep = set()
    for k in range(max_clusters):
        inside = np.flatnonzero(labels == k)
        if len(inside) == 0:
            continue
        d = np.linalg.norm(data[inside] - centroids[k], axis=1)
        keep.add(members[int(inside[np.argmin(d)])])
    return sorted(keep)


def build_expert_db(trajectories: Sequence[Trajectory], bin_sizes=BIN_SIZES, max_clusters: int = MAX_CLUSTERS,
                    betas=BETAS, threshold: float = THRESHOLD, seed: int = 0) -> ExpertTrajectoryDB:
    """Bin raw expert trajectories by initial state and keep at most
    ``max_clusters`` cluster medoids per bin (deterministic for a fixed seed)."""
    if any(w <= 0 for w in bin_sizes):
        raise ExpertDBError("bin sizes must be positive")
    if max_clusters < 1:
        raise ExpertDBError("max_clusters must be >= 1")
    if len(trajectories) == 0:
        raise ExpertDBError("cannot build an expert database from no trajectories")
    aligned, states, keys = [], [], []
    for traj in trajectories:
        st = initial_state(traj)
        o = traj.origin
        anchor = EgoState(float(o[0]), float(o[1]), float(o[2]), float(o[3]))
        aligned.append(to_fixed_oriented(traj, anchor))
        states.append(st)
        keys.append(bin_key(st, bin_sizes))
    paths = np.array([t.xy.ravel() for t in aligned])
    groups: dict[tuple[int, int, int], list[int]] = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    rng = np.random.default_rng(seed)
    kept: list[int] = []
    for k in sorted(groups):
        kept.extend(_cluster(groups[k], paths, max_clusters, rng))
    return ExpertTrajectoryDB(
        np.array([states[i] for i in kept]).reshape(-1, 3),
        np.array([keys[i] for i in kept]).reshape(-1, 3),
        tuple(aligned[i] for i in kept),
        tuple(bin_sizes), tuple(betas), threshold, max_clusters, seed,
    )


def ego_initial_state(ego: EgoState) -> tuple[float, float, float]:
    return ego.v, ego.a, ego.kappa


def retrieval_sampler(ego: EgoState, db: ExpertTrajectoryDB) -> CandidateSet:
    """Stored trajectories whose initial state is within the threshold of the
    ego's, rigidly moved to start at the ego pose."""
    idx = db.query(ego_initial_state(ego))
    if len(idx) == 0:
        return CandidateSet([], "retrieval: no stored trajectory within the distance threshold")
    out = []
    for i in idx:
        placed = from_fixed_oriented(db.trajectories[i], ego)
        out.append(placed.with_tags(source="retrieval", label=f"db#{int(i)}"))
    return CandidateSet(out)


def save_expert_db(db: ExpertTrajectoryDB, path: str | Path, config_hash: str = "") -> None:
    n = len(db)
    head = _HEADER.pack(MAGIC, n, HORIZON_STEPS, *db.bin_sizes, *db.betas, db.threshold, db.max_clusters, db.seed,
                        config_hash.encode("ascii")[:16])
    tags = np.array([[MANEUVERS.index(t.maneuver), SOURCES.index(t.source)] for t in db.trajectories],
                    np.uint8).reshape(n, 2)
    wps = np.array([t.waypoints for t in db.trajectories], "<f8").reshape(n, HORIZON_STEPS, 5)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(db.states.astype("<f8").tobytes())
        fh.write(db.bins.astype("<i8").tobytes())
        fh.write(tags.tobytes())
        fh.write(wps.tobytes())


def load_expert_db(path: str | Path) -> ExpertTrajectoryDB:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ExpertDBError("file too short for an expert database header")
    magic, n, steps, *rest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ExpertDBError("not an expert database file (bad magic)")
    if steps != HORIZON_STEPS:
        raise ExpertDBError(f"database stores {steps}-step trajectories, expected {HORIZON_STEPS}")
    bin_sizes, betas = tuple(rest[0:3]), tuple(rest[3:6])
    threshold, max_clusters, seed = rest[6], rest[7], rest[8]
    config_hash = rest[9].rstrip(b"\x00").decode("ascii")
    off = _HEADER.size
    sizes = [n * 3 * 8, n * 3 * 8, n * 2, n * steps * 5 * 8]
    if len(raw) != off + sum(sizes):
        raise ExpertDBError("expert database payload has the wrong size")
    states = np.frombuffer(raw, "<f8", n * 3, off).reshape(n, 3)
    off += sizes[0]
    bins = np.frombuffer(raw, "<i8", n * 3, off).reshape(n, 3)
    off += sizes[1]
    tags = np.frombuffer(raw, np.uint8, n * 2, off).reshape(n, 2)
    off += sizes[2]
    wps = np.frombuffer(raw, "<f8", n * steps * 5, off).reshape(n, steps, 5)
    trajs = tuple(
        Trajectory(wps[i].copy(), MANEUVERS[tags[i, 0]], SOURCES[tags[i, 1]], origin=(0.0, 0.0, 0.0, states[i, 0]))
        for i in range(n)
    )
    return ExpertTrajectoryDB(states.copy(), bins.copy(), trajs, bin_sizes, betas, threshold, max_clusters, seed,
                              config_hash=config_hash)
