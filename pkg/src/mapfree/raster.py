"""BEV rasterisation, grid geometry and occupancy handling.

Grids index ``(row, col)`` with rows increasing northwards (+y) and columns
eastwards (+x); ``origin`` is the world position of the centre of cell
``(0, 0)``.  This is not image convention: flip rows before viewing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .config import GRID_COLS, GRID_RESOLUTION, GRID_ROWS, RASTER_CHANNELS
from .core import AgentTrack, EgoState, Landmark, Route
from .geometry import box_corners

CHANNELS = ("landmarks", "agents", "ego", "static", "route")
FADE_ALPHA = 0.05

FREE, STATIC, MOVABLE = 0, 1, 2
LABELS = {"free": FREE, "static": STATIC, "movable": MOVABLE}
STOP_LINE_INTENSITY = {"permitted": 0.0, "yield": 0.5, "prohibited": 1.0}


class OutOfGridError(IndexError):
    """A finite point fell outside the grid extent."""


class RasterExtentError(ValueError):
    """Strict-mode rasterisation met a polygon wholly outside the raster."""


@dataclass(frozen=True)
class GridGeometry:
    rows: int = GRID_ROWS
    cols: int = GRID_COLS
    resolution: float = GRID_RESOLUTION
    origin: tuple[float, float] = (-0.5 * (GRID_COLS - 1) * GRID_RESOLUTION,
                                   -0.5 * (GRID_ROWS - 1) * GRID_RESOLUTION)

    @classmethod
    def centered(cls, x: float, y: float, rows: int = GRID_ROWS, cols: int = GRID_COLS,
                 resolution: float = GRID_RESOLUTION) -> "GridGeometry":
        return cls(rows, cols, resolution,
                   (x - 0.5 * (cols - 1) * resolution, y - 0.5 * (rows - 1) * resolution))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the cell edges."""
        h = 0.5 * self.resolution
        x0, y0 = self.origin
        return (x0 - h, x0 + (self.cols - 1) * self.resolution + h,
                y0 - h, y0 + (self.rows - 1) * self.resolution + h)

    def continuous(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Fractional (row, col) coordinates; cell centres are integers."""
        pts = np.asarray(points, float)
        col = (pts[..., 0] - self.origin[0]) / self.resolution
        row = (pts[..., 1] - self.origin[1]) / self.resolution
        return row, col

    def inside(self, points) -> np.ndarray:
        row, col = self.continuous(points)
        return (row >= -0.5) & (row < self.rows - 0.5) & (col >= -0.5) & (col < self.cols - 0.5)

    def world_to_cell(self, point) -> tuple[int, int]:
        p = np.asarray(point, float)
        if p.shape != (2,) or not np.all(np.isfinite(p)):
            raise ValueError(f"invalid point {point!r}")
        row, col = self.continuous(p)
        r, c = int(math.floor(row + 0.5)), int(math.floor(col + 0.5))
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise OutOfGridError(f"point {tuple(p)} outside grid")
        return r, c

    def cell_to_world(self, row, col) -> np.ndarray:
        return np.stack([self.origin[0] + np.asarray(col, float) * self.resolution,
                         self.origin[1] + np.asarray(row, float) * self.resolution], axis=-1)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + np.arange(self.cols) * self.resolution
        ys = self.origin[1] + np.arange(self.rows) * self.resolution
        return xs, ys


def fill_polygon(geom: GridGeometry, polygon, mask: np.ndarray | None = None) -> np.ndarray:
    """Scanline fill; a cell is inside when its centre is inside the polygon."""
    if mask is None:
        mask = np.zeros(geom.shape, dtype=bool)
    poly = np.asarray(polygon, float)
    row, col = geom.continuous(poly)
    r0 = max(int(math.ceil(row.min())), 0)
    r1 = min(int(math.floor(row.max())), geom.rows - 1)
    if r1 < r0:
        return mask
    ra, ca = row, col
    rb, cb = np.roll(row, -1), np.roll(col, -1)
    for r in range(r0, r1 + 1):
        # half-open rule so shared vertices are counted once
        hit = ((ra <= r) & (rb > r)) | ((rb <= r) & (ra > r))
        if not np.any(hit):
            continue
        xs = np.sort(ca[hit] + (r - ra[hit]) * (cb[hit] - ca[hit]) / (rb[hit] - ra[hit]))
        for xa, xb in zip(xs[0::2], xs[1::2]):
            c0 = max(int(math.ceil(xa)), 0)
            c1 = min(int(math.floor(xb)), geom.cols - 1)
            if c1 >= c0:
                mask[r, c0:c1 + 1] = True
    return mask


def polygon_outside(geom: GridGeometry, polygon) -> bool:
    poly = np.asarray(polygon, float)
    xmin, xmax, ymin, ymax = geom.extent
    return (poly[:, 0].max() < xmin or poly[:, 0].min() > xmax
            or poly[:, 1].max() < ymin or poly[:, 1].min() > ymax)


def polyline_cells(geom: GridGeometry, polyline) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cells touched by a densely sampled polyline, with the arc length of the
    first sample landing in each cell.  Returns (rows, cols, arc)."""
    line = np.asarray(polyline, float)
    seg = np.diff(line, axis=0)
    seglen = np.linalg.norm(seg, axis=1)
    step = 0.25 * geom.resolution
    pts, arcs = [line[:1]], [np.zeros(1)]
    base = 0.0
    for p, d, n in zip(line[:-1], seg, seglen):
        k = max(int(math.ceil(n / step)), 1)
        f = np.arange(1, k + 1) / k
        pts.append(p + f[:, None] * d)
        arcs.append(base + f * n)
        base += n
    pts = np.vstack(pts)
    arcs = np.concatenate(arcs)
    row, col = geom.continuous(pts)
    r = np.floor(row + 0.5).astype(int)
    c = np.floor(col + 0.5).astype(int)
    ok = (r >= 0) & (r < geom.rows) & (c >= 0) & (c < geom.cols)
    r, c, arcs = r[ok], c[ok], arcs[ok]
    flat = r * geom.cols + c
    _, first = np.unique(flat, return_index=True)
    return r[first], c[first], arcs[first]


def fade_brightness(age_steps, alpha: float = FADE_ALPHA):
    """History brightness ``max(0, 1 - age * alpha)``; age 0 is the current frame."""
    return np.maximum(0.0, 1.0 - np.asarray(age_steps, float) * alpha)


@dataclass(frozen=True, eq=False)
class BevRaster:
    data: np.ndarray  # (H, W, C)
    geometry: GridGeometry
    channels: tuple[str, ...] = CHANNELS

    def channel(self, name: str) -> np.ndarray:
        return self.data[:, :, self.channels.index(name)]


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    geometry: GridGeometry
    labels: np.ndarray  # (H, W) uint8 of FREE/STATIC/MOVABLE

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.uint8)
        if labels.shape != self.geometry.shape:
            raise ValueError("occupancy labels do not match grid geometry")
        if np.any(labels > MOVABLE):
            raise ValueError("occupancy labels must be free/static/movable")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def empty(cls, geometry: GridGeometry) -> "OccupancyGrid":
        return cls(geometry, np.zeros(geometry.shape, np.uint8))

    @classmethod
    def from_polygons(cls, geometry: GridGeometry, static: Sequence = (), movable: Sequence = ()) -> "OccupancyGrid":
        labels = np.zeros(geometry.shape, np.uint8)
        for poly in movable:
            labels[fill_polygon(geometry, poly)] = MOVABLE
        for poly in static:
            labels[fill_polygon(geometry, poly)] = STATIC
        return cls(geometry, labels)

    def static_mask(self) -> np.ndarray:
        return self.labels == STATIC

    def occupied_mask(self, include_movable: bool = True) -> np.ndarray:
        return (self.labels != FREE) if include_movable else (self.labels == STATIC)


def inflate(mask: np.ndarray, resolution: float, inflation: float) -> np.ndarray:
    """Linear decay from 1 on ``mask`` to 0 at ``inflation`` metres away."""
    out = np.zeros(mask.shape, float)
    if not mask.any():
        return out
    if inflation <= 0:
        out[mask] = 1.0
        return out
    pad = int(math.ceil(inflation / resolution)) + 1
    rows, cols = np.nonzero(mask)
    r0, r1 = max(rows.min() - pad, 0), min(rows.max() + pad + 1, mask.shape[0])
    c0, c1 = max(cols.min() - pad, 0), min(cols.max() + pad + 1, mask.shape[1])
    sub = mask[r0:r1, c0:c1]
    dist = ndimage.distance_transform_edt(~sub, sampling=resolution)
    out[r0:r1, c0:c1] = np.clip(1.0 - dist / inflation, 0.0, 1.0)
    return out


def occupancy_cost_field(occ: OccupancyGrid, inflation: float, include_movable: bool = True) -> np.ndarray:
    """Per-cell cost: 1 on occupied cells, linear decay to 0 over ``inflation`` m."""
    if inflation < 0:
        raise ValueError("inflation must be >= 0")
    return inflate(occ.occupied_mask(include_movable), occ.geometry.resolution, inflation)


# -- scene rasterisation -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SceneFrame:
    """What perception hands to the planner at one instant."""

    ego: EgoState
    route: Route | None = None
    ego_history: np.ndarray | None = None  # (n, 3) x, y, heading; oldest first, last = current
    ego_size: tuple[float, float] = (4.8, 1.9)
    agents: tuple[AgentTrack, ...] = ()
    landmarks: tuple[Landmark, ...] = ()
    static_obstacles: tuple[np.ndarray, ...] = ()
    occupancy: OccupancyGrid | None = None
    time: float = 0.0


def _paint(channel: np.ndarray, mask: np.ndarray, value: float) -> None:
    np.maximum(channel, np.where(mask, value, 0.0), out=channel)


def rasterize_scene(frame: SceneFrame, geometry: GridGeometry | None = None,
                    alpha: float = FADE_ALPHA, strict: bool = False) -> BevRaster:
    """Render a frame into the 5-channel BEV raster.

    Channels: landmarks and road boundaries, agents with fading history, ego
    with fading history, static obstacles plus static occupancy (and stop
    lines), route.
    """
    geom = geometry or GridGeometry.centered(frame.ego.x, frame.ego.y)
    data = np.zeros((geom.rows, geom.cols, RASTER_CHANNELS))
    lm_ch, ag_ch, ego_ch, st_ch, rt_ch = (data[:, :, i] for i in range(RASTER_CHANNELS))

    def polygon(poly, channel, value):
        if polygon_outside(geom, poly):
            if strict:
                raise RasterExtentError("polygon lies wholly outside the raster extent")
            return
        _paint(channel, fill_polygon(geom, poly), value)

    for lm in frame.landmarks:
        if lm.label == "stop_line":
            continue
        r, c, _ = polyline_cells(geom, lm.points)
        lm_ch[r, c] = 1.0

    for agent in frame.agents:
        t_now = agent.history[-1, 0]
        for row in agent.history:
            age = int(round((t_now - row[0]) / 0.1))
            b = float(fade_brightness(age, alpha))
            if b <= 0:
                continue
            polygon(box_corners(row[1], row[2], row[3], agent.length, agent.width), ag_ch, b)

    hist = frame.ego_history
    if hist is None or len(hist) == 0:
        hist = np.array([[frame.ego.x, frame.ego.y, frame.ego.heading]])
    n = len(hist)
    for k, (x, y, h) in enumerate(hist):
        b = float(fade_brightness(n - 1 - k, alpha))
        if b > 0:
            polygon(box_corners(x, y, h, *frame.ego_size), ego_ch, b)

    for poly in frame.static_obstacles:
        polygon(poly, st_ch, 1.0)
    if frame.occupancy is not None:
        if frame.occupancy.geometry != geom:
            raise ValueError("occupancy grid geometry differs from raster geometry")
        _paint(st_ch, frame.occupancy.static_mask(), 1.0)

    if frame.route is not None:
        r, c, _ = polyline_cells(geom, frame.route.points)
        rt_ch[r, c] = 1.0

    # Stop lines are drawn as static polygons; unless the light permits passage
    # they also mask the route where they cross it.
    for lm in frame.landmarks:
        if lm.label != "stop_line":
            continue
        value = STOP_LINE_INTENSITY[lm.state]
        poly = stop_line_polygon(lm.points, geom.resolution)
        if polygon_outside(geom, poly):
            continue
        mask = fill_polygon(geom, poly)
        if value > 0:
            _paint(st_ch, mask, value)
            rt_ch[mask] = 0.0

    return BevRaster(data, geom)


def stop_line_polygon(points, resolution: float) -> np.ndarray:
    """Thin rectangle around a two-point stop line (one cell thick)."""
    a, b = np.asarray(points[0], float), np.asarray(points[-1], float)
    d = b - a
    n = np.array([-d[1], d[0]]) / max(np.linalg.norm(d), 1e-12)
    w = 0.75 * resolution
    return np.array([a + w * n, b + w * n, b - w * n, a - w * n])


# -- exports ---------------------------------------------------------------------

def write_pgm(path: str | Path, image: np.ndarray, comment: str = "") -> None:
    """Binary 8-bit PGM; values in [0, 1], north at the top."""
    img = np.clip(np.flipud(np.asarray(image, float)), 0.0, 1.0)
    px = np.round(img * 255).astype(np.uint8)
    header = "P5\n"
    if comment:
        header += "".join(f"# {line}\n" for line in comment.splitlines())
    header += f"{px.shape[1]} {px.shape[0]}\n255\n"
    Path(path).write_bytes(header.encode() + px.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode())
        pos = end
    pos += 1
    w, h = int(tokens[1]), int(tokens[2])
    px = np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
    return np.flipud(px.astype(float) / 255.0)


def export_raster(raster: BevRaster, out_dir: str | Path, stem: str = "raster", provenance: str = "") -> list[Path]:
    """One PGM per channel plus a flat CSV of non-zero cells."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, name in enumerate(raster.channels):
        p = out / f"{stem}_{i}_{name}.pgm"
        write_pgm(p, raster.data[:, :, i], provenance)
        written.append(p)
    csv_path = out / f"{stem}.csv"
    rows, cols = np.nonzero(np.any(raster.data > 0, axis=2))
    with csv_path.open("w") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        fh.write("row,col,x,y," + ",".join(raster.channels) + "\n")
        xy = raster.geometry.cell_to_world(rows, cols)
        for r, c, (x, y) in zip(rows, cols, xy):
            vals = ",".join(f"{v:.4f}" for v in raster.data[r, c])
            fh.write(f"{r},{c},{x:.3f},{y:.3f},{vals}\n")
    written.append(csv_path)
    return written
