# perception/geo3d.py
"""
Point-cloud geometry: voxel downsampling, horizontal patch gridding,
total-least-squares plane fitting and per-patch geometric features.
"""

import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from common.errors import DegenerateGeometryError, EmptyPatchError, ParameterError
from perception.labels import GridGeometry

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("mean_height", "height_std", "height_range", "normal_z", "fit_residual")
FEATURE_DIM = len(FEATURE_NAMES)

# Relative eigenvalue floor below which a point set counts as collinear.
_RANK_TOL = 1e-12


# --- Domain Types ---

class Point3(BaseModel):
    """A single point in the vehicle frame (x forward, y left, z up)."""
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    z: float
    color: Optional[tuple[float, float, float]] = Field(default=None, description="RGB in [0,1]")
    temperature: Optional[float] = Field(default=None, gt=0, description="Kelvin")

    @field_validator("color")
    @classmethod
    def _color_range(cls, v):
        if v is not None and not all(0.0 <= c <= 1.0 for c in v):
            raise ValueError(f"color channels must lie in [0,1], got {v}")
        return v


class PointCloud(BaseModel):
    """
    Column-oriented point set. Missing color / temperature on a point is a NaN
    row / entry; a cloud without any such data stores None.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    xyz: np.ndarray = Field(description="(N, 3) float coordinates, m")
    color: Optional[np.ndarray] = Field(default=None, description="(N, 3) RGB in [0,1], NaN where absent")
    temperature: Optional[np.ndarray] = Field(default=None, description="(N,) kelvin, NaN where absent")
    frame_id: int = 0

    @field_validator("xyz")
    @classmethod
    def _xyz_shape(cls, v):
        v = np.asarray(v, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("point coordinates must be finite")
        return v

    @field_validator("color")
    @classmethod
    def _color_shape(cls, v):
        return None if v is None else np.asarray(v, dtype=float).reshape(-1, 3)

    @field_validator("temperature")
    @classmethod
    def _temperature_shape(cls, v):
        return None if v is None else np.asarray(v, dtype=float).reshape(-1)

    @classmethod
    def empty(cls, frame_id: int = 0) -> "PointCloud":
        return cls(xyz=np.zeros((0, 3)), frame_id=frame_id)

    @classmethod
    def from_points(cls, points: Iterable[Point3], frame_id: int = 0) -> "PointCloud":
        points = list(points)
        xyz = np.array([[p.x, p.y, p.z] for p in points], dtype=float).reshape(-1, 3)
        color = None
        temperature = None
        if any(p.color is not None for p in points):
            color = np.array([p.color if p.color is not None else (np.nan,) * 3 for p in points], dtype=float)
        if any(p.temperature is not None for p in points):
            temperature = np.array([p.temperature if p.temperature is not None else np.nan for p in points])
        return cls(xyz=xyz, color=color, temperature=temperature, frame_id=frame_id)

    def to_points(self) -> list[Point3]:
        out = []
        for i in range(len(self)):
            color = None
            if self.color is not None and np.all(np.isfinite(self.color[i])):
                color = tuple(float(c) for c in self.color[i])
            temp = None
            if self.temperature is not None and np.isfinite(self.temperature[i]):
                temp = float(self.temperature[i])
            x, y, z = (float(v) for v in self.xyz[i])
            out.append(Point3(x=x, y=y, z=z, color=color, temperature=temp))
        return out

    def __len__(self) -> int:
        return int(self.xyz.shape[0])

    def subset(self, index: np.ndarray) -> "PointCloud":
        """Rows selected by a boolean mask or integer index array."""
        return PointCloud(
            xyz=self.xyz[index],
            color=None if self.color is None else self.color[index],
            temperature=None if self.temperature is None else self.temperature[index],
            frame_id=self.frame_id,
        )

    def with_temperature(self, temperature: np.ndarray) -> "PointCloud":
        return self.model_copy(update={"temperature": np.asarray(temperature, dtype=float).reshape(-1)})

    def with_color(self, color: np.ndarray) -> "PointCloud":
        return self.model_copy(update={"color": np.asarray(color, dtype=float).reshape(-1, 3)})

    def has_color(self) -> np.ndarray:
        if self.color is None:
            return np.zeros(len(self), dtype=bool)
        return np.all(np.isfinite(self.color), axis=1)

    def has_temperature(self) -> np.ndarray:
        if self.temperature is None:
            return np.zeros(len(self), dtype=bool)
        return np.isfinite(self.temperature)


def concat_clouds(clouds: Sequence[PointCloud], frame_id: Optional[int] = None) -> PointCloud:
    """Stacks clouds; color / temperature become NaN where a source lacks them."""
    clouds = list(clouds)
    if not clouds:
        return PointCloud.empty(frame_id or 0)
    xyz = np.vstack([c.xyz for c in clouds])
    color = None
    temperature = None
    if any(c.color is not None for c in clouds):
        color = np.vstack([c.color if c.color is not None else np.full((len(c), 3), np.nan) for c in clouds])
    if any(c.temperature is not None for c in clouds):
        temperature = np.concatenate(
            [c.temperature if c.temperature is not None else np.full(len(c), np.nan) for c in clouds]
        )
    fid = clouds[0].frame_id if frame_id is None else frame_id
    return PointCloud(xyz=xyz, color=color, temperature=temperature, frame_id=fid)


class VoxelGridParams(BaseModel):
    voxel_size: float = Field(default=0.1, gt=0, description="Voxel edge, m")


class Plane(BaseModel):
    """Plane n·p = offset with unit normal, normal_z >= 0."""
    model_config = ConfigDict(frozen=True)

    normal: tuple[float, float, float]
    offset: float

    @classmethod
    def horizontal(cls, z: float = 0.0) -> "Plane":
        return cls(normal=(0.0, 0.0, 1.0), offset=z)

    def signed_distance(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz, dtype=float).reshape(-1, 3) @ np.asarray(self.normal) - self.offset


class GeoFeatures(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_points: int
    mean_height: float
    height_std: float = Field(ge=0)
    height_range: float = Field(ge=0)
    normal_z: float = Field(ge=0, le=1)
    fit_residual: float = Field(ge=0)
    degenerate: bool = Field(default=False, description="Plane fields use the flat fallback")

    def vector(self) -> np.ndarray:
        """Features in FEATURE_NAMES order."""
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=float)


class PatchGrid(BaseModel):
    """Point indices per patch, flat row-major over `geometry`."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    geometry: GridGeometry
    patches: list[np.ndarray]
    dropped: int = Field(default=0, description="Points outside the grid bounds")

    def members(self, row: int, col: int) -> np.ndarray:
        return self.patches[row * self.geometry.n_cols + col]

    def counts(self) -> np.ndarray:
        return np.array([len(p) for p in self.patches], dtype=np.int64).reshape(self.geometry.shape)


# --- Operations ---

def _as_xyz(points) -> np.ndarray:
    if isinstance(points, PointCloud):
        return points.xyz
    if isinstance(points, np.ndarray):
        return points.astype(float).reshape(-1, 3)
    return np.array([[p.x, p.y, p.z] for p in points], dtype=float).reshape(-1, 3)


def voxel_downsample(cloud: PointCloud, params: VoxelGridParams) -> PointCloud:
    """One point per non-empty voxel, at the centroid of its members."""
    size = params.voxel_size
    if not size > 0:
        raise ParameterError(f"voxel_size must be > 0, got {size}")
    n = len(cloud)
    if n == 0:
        return PointCloud.empty(cloud.frame_id)

    keys = np.floor(cloud.xyz / size).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    n_vox = counts.shape[0]

    def _mean(values: np.ndarray) -> np.ndarray:
        return np.bincount(inverse, weights=values, minlength=n_vox) / counts

    xyz = np.column_stack([_mean(cloud.xyz[:, k]) for k in range(3)])
    # a rounded centroid can leave its members' span; pin it back inside
    lo = np.full((n_vox, 3), np.inf)
    hi = np.full((n_vox, 3), -np.inf)
    np.minimum.at(lo, inverse, cloud.xyz)
    np.maximum.at(hi, inverse, cloud.xyz)
    xyz = np.clip(xyz, lo, hi)

    color = None
    if cloud.color is not None:
        ok = cloud.has_color()
        full = np.bincount(inverse, weights=ok.astype(float), minlength=n_vox) == counts
        filled = np.where(ok[:, None], cloud.color, 0.0)
        color = np.column_stack([_mean(filled[:, k]) for k in range(3)])
        color[~full] = np.nan

    temperature = None
    if cloud.temperature is not None:
        ok = cloud.has_temperature()
        full = np.bincount(inverse, weights=ok.astype(float), minlength=n_vox) == counts
        temperature = _mean(np.where(ok, cloud.temperature, 0.0))
        temperature[~full] = np.nan

    logger.debug(f"voxel_downsample: {n} points -> {n_vox} voxels at {size} m")
    return PointCloud(xyz=xyz, color=color, temperature=temperature, frame_id=cloud.frame_id)


def build_patch_grid(
    cloud: PointCloud,
    origin: tuple[float, float],
    patch_size: float,
    n_rows: int,
    n_cols: int,
) -> PatchGrid:
    geometry = GridGeometry.checked(origin, patch_size, n_rows, n_cols)
    if len(cloud) == 0:
        return PatchGrid(geometry=geometry, patches=[np.zeros(0, dtype=np.int64)] * geometry.n_cells)

    row, col, inside = geometry.locate(cloud.xyz[:, 0], cloud.xyz[:, 1])
    flat = np.where(inside, geometry.flat_index(row, col), -1)
    order = np.argsort(flat, kind="stable")
    sorted_flat = flat[order]
    bounds = np.searchsorted(sorted_flat, np.arange(geometry.n_cells + 1))
    patches = [order[bounds[k]:bounds[k + 1]] for k in range(geometry.n_cells)]
    dropped = int(np.count_nonzero(~inside))
    if dropped:
        logger.debug(f"build_patch_grid: {dropped} of {len(cloud)} points outside grid bounds")
    return PatchGrid(geometry=geometry, patches=patches, dropped=dropped)


def fit_plane_lsq(points) -> Plane:
    """Total-least-squares plane through `points` (PointCloud, (N,3) array or Point3 list)."""
    xyz = _as_xyz(points)
    if xyz.shape[0] < 3:
        raise DegenerateGeometryError(f"plane fit needs >= 3 points, got {xyz.shape[0]}")
    mean = xyz.mean(axis=0)
    centered = xyz - mean
    cov = centered.T @ centered / xyz.shape[0]
    w, v = np.linalg.eigh(cov)
    if w[2] <= 0.0 or w[1] <= _RANK_TOL * w[2]:
        raise DegenerateGeometryError("points are collinear or coincident")

    normal = v[:, 0]
    normal = normal / np.linalg.norm(normal)
    if normal[2] < 0:
        normal = -normal
    elif normal[2] == 0:
        if normal[0] < 0 or (normal[0] == 0 and normal[1] < 0):
            normal = -normal
    normal = normal + 0.0  # drop negative zeros
    return Plane(normal=tuple(float(c) for c in normal), offset=float(normal @ mean))


def compute_patch_features(points) -> GeoFeatures:
    xyz = _as_xyz(points)
    n = xyz.shape[0]
    if n == 0:
        raise EmptyPatchError("cannot compute features of an empty patch")
    z = xyz[:, 2]
    mean_height = float(z.mean())
    height_std = float(z.std())
    height_range = float(z.max() - z.min())
    try:
        plane = fit_plane_lsq(xyz)
    except DegenerateGeometryError:
        return GeoFeatures(
            n_points=n,
            mean_height=mean_height,
            height_std=height_std,
            height_range=height_range,
            normal_z=0.0,
            fit_residual=height_std,
            degenerate=True,
        )
    dist = plane.signed_distance(xyz)
    return GeoFeatures(
        n_points=n,
        mean_height=mean_height,
        height_std=height_std,
        height_range=height_range,
        normal_z=float(min(max(plane.normal[2], 0.0), 1.0)),
        fit_residual=float(np.sqrt(np.mean(dist ** 2))),
    )


def patch_features(cloud: PointCloud, grid: PatchGrid, min_points: int = 1) -> list[Optional[GeoFeatures]]:
    """Features per patch (flat row-major); None where a patch has fewer than `min_points`."""
    out: list[Optional[GeoFeatures]] = []
    for members in grid.patches:
        if len(members) < max(min_points, 1):
            out.append(None)
        else:
            out.append(compute_patch_features(cloud.xyz[members]))
    return out


# --- Text Format ---

def read_points(path: str | Path, frame_id: int = 0) -> PointCloud:
    """
    Reads `x y z [r g b] [t]` lines. Rows have 3, 4 (x y z t), 6 or 7 columns;
    `#` starts a comment.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"point file not found: {path}")
    try:
        df = pd.read_csv(path, sep=r"\s+", comment="#", header=None, names=list(range(7)), dtype=float)
    except pd.errors.EmptyDataError:
        return PointCloud.empty(frame_id)
    if df.empty:
        return PointCloud.empty(frame_id)
    values = df.to_numpy()
    ncols = np.isfinite(values).sum(axis=1)
    bad = ~np.isin(ncols, (3, 4, 6, 7))
    if np.any(bad):
        raise ParameterError(f"{path}: rows must have 3, 4, 6 or 7 columns (first bad row {int(np.argmax(bad))})")

    xyz = values[:, :3]
    color = np.full((len(values), 3), np.nan)
    temperature = np.full(len(values), np.nan)
    has_rgb = ncols >= 6
    color[has_rgb] = values[has_rgb, 3:6]
    temperature[ncols == 4] = values[ncols == 4, 3]
    temperature[ncols == 7] = values[ncols == 7, 6]
    return PointCloud(
        xyz=xyz,
        color=color if has_rgb.any() else None,
        temperature=temperature if np.isfinite(temperature).any() else None,
        frame_id=frame_id,
    )


def write_points(cloud: PointCloud, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    has_color = cloud.has_color()
    has_temp = cloud.has_temperature()
    lines = [f"# frame {cloud.frame_id}: x y z [r g b] [t]"]
    for i in range(len(cloud)):
        fields = list(cloud.xyz[i])
        if has_color[i]:
            fields.extend(cloud.color[i])
        if has_temp[i]:
            fields.append(cloud.temperature[i])
        lines.append(" ".join(f"{v:.17g}" for v in fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
