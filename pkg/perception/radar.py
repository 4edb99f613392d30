# perception/radar.py
"""
Fan-beam radar obstacle localization: CA-CFAR detection in polar space,
projection to a Cartesian grid, morphological cleanup and per-component
convex hull / centroid extraction.
"""

import logging
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import ndimage
from skimage.measure import label as label_components
from skimage.morphology import disk

from common.errors import ParameterError
from perception.labels import GridGeometry

logger = logging.getLogger(__name__)


# --- Domain Types ---

class RadarImage(BaseModel):
    """
    Polar power image, rows = range bins, columns = azimuth bins.
    Range bin i spans [min_range + i*res, min_range + (i+1)*res); azimuth bin j
    is centred on -pi + j*azimuth_resolution, counter-clockwise from +x.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    intensities: np.ndarray
    range_resolution: float = Field(gt=0)
    min_range: float = Field(ge=0)
    azimuth_resolution: float = Field(gt=0)

    @field_validator("intensities")
    @classmethod
    def _intensities_valid(cls, v):
        v = np.asarray(v, dtype=float)
        if v.ndim != 2:
            raise ValueError("radar intensities must be a 2D range x azimuth array")
        if np.any(v < 0):
            raise ValueError("radar intensities must be non-negative")
        return v

    @classmethod
    def full_circle(cls, intensities: np.ndarray, range_resolution: float, min_range: float) -> "RadarImage":
        intensities = np.asarray(intensities, dtype=float)
        if intensities.ndim != 2:
            raise ParameterError("radar intensities must be a 2D range x azimuth array")
        if np.any(intensities < 0):
            raise ParameterError("radar intensities must be non-negative")
        return cls(
            intensities=intensities,
            range_resolution=range_resolution,
            min_range=min_range,
            azimuth_resolution=2 * math.pi / intensities.shape[1],
        )

    @property
    def range_bins(self) -> int:
        return int(self.intensities.shape[0])

    @property
    def azimuth_bins(self) -> int:
        return int(self.intensities.shape[1])

    @property
    def max_range(self) -> float:
        return self.min_range + self.range_bins * self.range_resolution

    def bin_of(self, r: np.ndarray, azimuth: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(range_bin, azimuth_bin, valid) for polar coordinates."""
        r = np.asarray(r, dtype=float)
        i = np.floor((r - self.min_range) / self.range_resolution).astype(np.int64)
        valid = (r >= self.min_range) & (i >= 0) & (i < self.range_bins)
        j = np.rint((np.asarray(azimuth, dtype=float) + math.pi) / self.azimuth_resolution).astype(np.int64)
        j = np.mod(j, self.azimuth_bins)
        return i, j, valid

    def range_centers(self) -> np.ndarray:
        return self.min_range + (np.arange(self.range_bins) + 0.5) * self.range_resolution

    def azimuth_centers(self) -> np.ndarray:
        return -math.pi + np.arange(self.azimuth_bins) * self.azimuth_resolution


class CartesianRadarGrid(BaseModel):
    """Nearest-neighbour resampling of a RadarImage; invalid cells hold 0 and bin index -1."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    geometry: GridGeometry
    extent: float
    intensities: np.ndarray
    valid: np.ndarray
    range_bin: np.ndarray
    azimuth_bin: np.ndarray

    def project(self, polar_mask: np.ndarray) -> np.ndarray:
        """Carries a polar detection mask onto the Cartesian cells."""
        out = np.zeros(self.geometry.shape, dtype=bool)
        v = self.valid
        out[v] = np.asarray(polar_mask, dtype=bool)[self.range_bin[v], self.azimuth_bin[v]]
        return out


class CfarParams(BaseModel):
    n_train: int = Field(default=8, ge=1, description="Training cells per side")
    n_guard: int = Field(default=2, ge=0, description="Guard cells per side")
    p_fa: float = Field(default=1e-2, gt=0, lt=1, description="Target false-alarm probability")

    @property
    def window(self) -> int:
        """Full window length in range bins, cell under test included."""
        return 2 * (self.n_train + self.n_guard) + 1


class MorphParams(BaseModel):
    open_radius: int = Field(default=1, ge=0)
    min_area: int = Field(default=10, ge=0, description="Cells; smaller components are removed")
    close_radius: int = Field(default=1, ge=0)


class RadarDetectionParams(BaseModel):
    cfar: CfarParams = Field(default_factory=CfarParams)
    morph: MorphParams = Field(default_factory=MorphParams)
    cell_size: float = Field(default=0.05, gt=0)
    extent: float = Field(default=40.0, gt=0, description="Half-width of the Cartesian grid, m")
    closest: int = Field(default=3, ge=1, description="Obstacles reported as the nearest set")


class RadarObstacle(BaseModel):
    model_config = ConfigDict(frozen=True)

    hull: list[tuple[float, float]] = Field(description="Counter-clockwise convex polygon")
    centroid: tuple[float, float]
    area: float
    member_cells: int

    @property
    def range(self) -> float:
        return math.hypot(*self.centroid)


# --- Polar / Cartesian ---

def polar_to_cartesian(img: RadarImage, cell_size: float, extent: Optional[float] = None) -> CartesianRadarGrid:
    if not cell_size > 0:
        raise ParameterError(f"cell_size must be > 0, got {cell_size}")
    extent = img.max_range if extent is None else extent
    n = int(math.ceil(2 * extent / cell_size))
    geometry = GridGeometry(origin_x=-extent, origin_y=-extent, cell_size=cell_size, n_rows=n, n_cols=n)
    cx, cy = geometry.centers()
    i, j, valid = img.bin_of(np.hypot(cx, cy), np.arctan2(cy, cx))
    intensities = np.zeros(geometry.shape)
    intensities[valid] = img.intensities[i[valid], j[valid]]
    return CartesianRadarGrid(
        geometry=geometry,
        extent=extent,
        intensities=intensities,
        valid=valid,
        range_bin=np.where(valid, i, -1),
        azimuth_bin=np.where(valid, j, -1),
    )


# --- CFAR ---

def cfar_alpha(n: int | np.ndarray, p_fa: float) -> np.ndarray:
    """CA-CFAR scale for n averaged exponential training cells."""
    n = np.asarray(n, dtype=float)
    return n * (p_fa ** (-1.0 / n) - 1.0)


def cfar_threshold(img: RadarImage, params: CfarParams) -> np.ndarray:
    """Cell-averaging CFAR along range, per azimuth column. Edge cells use one-sided windows."""
    n_range = img.range_bins
    t, g = params.n_train, params.n_guard
    if n_range <= params.window:
        raise ParameterError(f"CFAR window of {params.window} cells does not fit {n_range} range bins")

    x = img.intensities
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    idx = np.arange(n_range)

    lead_end = np.clip(idx - g, 0, n_range)
    lead_start = np.clip(idx - g - t, 0, n_range)
    lag_start = np.clip(idx + g + 1, 0, n_range)
    lag_end = np.clip(idx + g + t + 1, 0, n_range)

    total = (csum[lead_end] - csum[lead_start]) + (csum[lag_end] - csum[lag_start])
    count = (lead_end - lead_start) + (lag_end - lag_start)
    noise = total / count[:, None]
    alpha = cfar_alpha(count, params.p_fa)[:, None]
    return x > alpha * noise


# --- Morphology ---

def _footprint(radius: int) -> np.ndarray:
    return disk(radius).astype(bool)


def binary_open(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return mask.copy()
    fp = _footprint(radius)
    padded = np.pad(mask, radius)
    out = ndimage.binary_dilation(ndimage.binary_erosion(padded, structure=fp), structure=fp)
    return out[radius:-radius, radius:-radius]


def binary_close(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return mask.copy()
    fp = _footprint(radius)
    padded = np.pad(mask, radius)
    out = ndimage.binary_erosion(ndimage.binary_dilation(padded, structure=fp), structure=fp)
    return out[radius:-radius, radius:-radius]


def remove_small_components(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Drops 8-connected components with fewer than `min_area` cells."""
    if min_area <= 1 or not mask.any():
        return mask.copy()
    labels = label_components(mask, connectivity=2)
    sizes = np.bincount(labels.reshape(-1))
    keep = sizes >= min_area
    keep[0] = False
    return keep[labels]


def morph_filter(mask: np.ndarray, open_radius: int, min_area: int, close_radius: int) -> np.ndarray:
    """Opening, small-component removal, then closing."""
    if open_radius < 0 or close_radius < 0:
        raise ParameterError("morphology radii must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    out = binary_open(mask, open_radius)
    out = remove_small_components(out, min_area)
    return binary_close(out, close_radius)


# --- Geometry ---

def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Monotone-chain hull, counter-clockwise, collinear points dropped."""
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) <= 2:
        return pts
    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return hull if len(hull) >= 2 else pts[:1]


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(p[:, 0] - a[0], p[:, 1] - a[1])
    t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.hypot(p[:, 0] - closest[:, 0], p[:, 1] - closest[:, 1])


def hull_distance(points: np.ndarray, hull: Sequence[tuple[float, float]]) -> np.ndarray:
    """Euclidean distance from each (x, y) to the hull; 0 inside or on it."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    h = np.asarray(hull, dtype=float).reshape(-1, 2)
    if h.shape[0] == 0:
        return np.full(p.shape[0], np.inf)
    if h.shape[0] == 1:
        return np.hypot(p[:, 0] - h[0, 0], p[:, 1] - h[0, 1])
    edges = list(zip(h, np.roll(h, -1, axis=0))) if h.shape[0] > 2 else [(h[0], h[1])]
    dist = np.min(np.vstack([_segment_distance(p, a, b) for a, b in edges]), axis=0)
    if h.shape[0] > 2:
        inside = np.ones(p.shape[0], dtype=bool)
        for a, b in edges:
            inside &= (b[0] - a[0]) * (p[:, 1] - a[1]) - (b[1] - a[1]) * (p[:, 0] - a[0]) >= 0
        dist[inside] = 0.0
    return dist


def point_in_hull(point: tuple[float, float], hull: Sequence[tuple[float, float]], tol: float = 1e-9) -> bool:
    return bool(hull_distance(np.asarray([point]), hull)[0] <= tol)


def polygon_area(hull: Sequence[tuple[float, float]]) -> float:
    if len(hull) < 3:
        return 0.0
    h = np.asarray(hull, dtype=float)
    x, y = h[:, 0], h[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


# --- Obstacles ---

def extract_obstacles(mask: np.ndarray, geometry: GridGeometry) -> list[RadarObstacle]:
    """8-connected components as obstacles, nearest centroid first."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    labels = label_components(mask, connectivity=2)
    rows, cols = np.nonzero(labels)
    comp = labels[rows, cols]
    xs = geometry.origin_x + (cols + 0.5) * geometry.cell_size
    ys = geometry.origin_y + (rows + 0.5) * geometry.cell_size
    order = np.argsort(comp, kind="stable")
    comp, xs, ys = comp[order], xs[order], ys[order]
    splits = np.flatnonzero(np.diff(comp)) + 1

    obstacles = []
    for cx, cy in zip(np.split(xs, splits), np.split(ys, splits)):
        obstacles.append(
            RadarObstacle(
                hull=convex_hull(zip(cx, cy)),
                centroid=(float(cx.mean()), float(cy.mean())),
                area=float(cx.size * geometry.cell_size ** 2),
                member_cells=int(cx.size),
            )
        )
    obstacles.sort(key=lambda o: o.range)
    return obstacles


def closest_obstacles(obstacles: Sequence[RadarObstacle], n: int = 3) -> list[RadarObstacle]:
    return sorted(obstacles, key=lambda o: o.range)[:n]


def detect_obstacles(
    img: RadarImage, params: RadarDetectionParams
) -> tuple[CartesianRadarGrid, np.ndarray, list[RadarObstacle]]:
    """CFAR in polar space, projection, morphology, then component geometry."""
    polar = cfar_threshold(img, params.cfar)
    grid = polar_to_cartesian(img, params.cell_size, params.extent)
    mask = morph_filter(grid.project(polar), params.morph.open_radius, params.morph.min_area, params.morph.close_radius)
    obstacles = extract_obstacles(mask, grid.geometry)
    logger.info(
        f"radar: {int(polar.sum())} polar detections -> {int(mask.sum())} cells -> {len(obstacles)} obstacles"
    )
    return grid, mask, obstacles


# --- Text / Image Formats ---

def write_radar_image(img: RadarImage, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"range_bins {img.range_bins}",
        f"azimuth_bins {img.azimuth_bins}",
        f"range_resolution_m {img.range_resolution:.17g}",
        f"min_range_m {img.min_range:.17g}",
    ]
    lines.extend(" ".join(f"{v:.17g}" for v in row) for row in img.intensities)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_radar_image(path: str | Path) -> RadarImage:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"radar image file not found: {path}")
    header: dict[str, str] = {}
    values: list[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        if len(header) < 4 and key in ("range_bins", "azimuth_bins", "range_resolution_m", "min_range_m"):
            header[key] = rest.strip()
        else:
            values.extend(line.split())
    missing = {"range_bins", "azimuth_bins", "range_resolution_m", "min_range_m"} - header.keys()
    if missing:
        raise ParameterError(f"{path}: missing radar header fields {sorted(missing)}")
    n_r, n_a = int(header["range_bins"]), int(header["azimuth_bins"])
    data = np.array(values, dtype=float)
    if data.size != n_r * n_a:
        raise ParameterError(f"{path}: expected {n_r * n_a} intensities, found {data.size}")
    return RadarImage.full_circle(
        data.reshape(n_r, n_a), float(header["range_resolution_m"]), float(header["min_range_m"])
    )


def write_mask_pgm(mask: np.ndarray, path: str | Path) -> Path:
    """8-bit PGM, +y rows at the top."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.flipud(np.asarray(mask, dtype=bool)).astype(np.uint8) * 255
    Image.fromarray(pixels).save(path, format="PPM")
    return path
