# sim/sensors.py
"""
Sensor models over a Scene: pinhole stereo (single and multi-baseline),
ring-scanning LIDAR, fan-beam radar, thermal annotation, bracketed exposures,
and two idealized samplers used by controlled benchmarks.
"""

import logging
import math
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from common.rng import substream
from perception.cells import ExposureStack
from perception.geo3d import PointCloud
from perception.labels import GridGeometry
from perception.radar import RadarImage
from sim.scene import Scene, Surface

logger = logging.getLogger(__name__)

Mount = tuple[float, float, float]


# --- Parameters ---

class StereoHeadParams(BaseModel):
    baseline: float = Field(default=0.24, gt=0, description="m")
    focal_px: float = Field(default=246.0, gt=0)
    width: int = Field(default=320, ge=1)
    height: int = Field(default=240, ge=1)
    disparity_noise: float = Field(default=0.25, ge=0, description="Disparity error sigma, px")
    point_noise: float = Field(default=0.0, ge=0, description="Extra isotropic position sigma, m")
    mount: Mount = (0.0, 0.0, 1.5)
    pitch_deg: float = Field(default=5.0, description="Downward tilt")
    yaw_deg: float = 0.0
    min_range: float = Field(default=2.0, ge=0)
    max_range: float = Field(default=30.0, gt=0)
    march_step: float = Field(default=0.2, gt=0)

    @classmethod
    def short_head(cls, baseline: float = 0.24, **overrides) -> "StereoHeadParams":
        """Wide head, about 66 x 50 degrees, usable 2-30 m."""
        return cls(baseline=baseline, **overrides)

    @classmethod
    def long_head(cls, baseline: float = 0.80, **overrides) -> "StereoHeadParams":
        """Narrow head, about 30 x 23 degrees, usable 6-60 m."""
        values = {"focal_px": 597.0, "min_range": 6.0, "max_range": 60.0, **overrides}
        return cls(baseline=baseline, **values)

    def depth_sigma(self, depth) -> np.ndarray:
        return np.asarray(depth, dtype=float) ** 2 / (self.focal_px * self.baseline) * self.disparity_noise


class LidarParams(BaseModel):
    rings: int = Field(default=64, ge=1)
    min_elevation_deg: float = -30.0
    max_elevation_deg: float = -2.0
    azimuth_resolution_deg: float = Field(default=0.5, gt=0)
    azimuth_fov_deg: float = Field(default=360.0, gt=0, le=360)
    mount: Mount = (0.0, 0.0, 1.0)
    min_range: float = Field(default=0.5, ge=0)
    max_range: float = Field(default=17.0, gt=0)
    range_noise: float = Field(default=0.02, ge=0)
    water_return: float = Field(default=0.1, ge=0, le=1, description="Return probability off water")
    march_step: float = Field(default=0.2, gt=0)


class RadarParams(BaseModel):
    range_resolution: float = Field(default=0.1, gt=0)
    azimuth_bins: int = Field(default=1440, ge=8)
    min_range: float = Field(default=3.0, ge=0)
    max_range: float = Field(default=100.0, gt=0)
    clutter_mean: float = Field(default=1.0, gt=0)
    target_gain: float = Field(default=10.0, gt=0, description="Intensity per metre of visible height")
    vertical_fov_deg: float = Field(default=25.0, gt=0, lt=180)
    mount_height: float = 0.8
    footprint_spacing: float = Field(default=0.02, gt=0)

    @property
    def range_bins(self) -> int:
        return int(round((self.max_range - self.min_range) / self.range_resolution))


class ThermalParams(BaseModel):
    hfov_deg: float = Field(default=40.0, gt=0, lt=180)
    vfov_deg: float = Field(default=30.0, gt=0, lt=180)
    min_range: float = Field(default=2.0, ge=0)
    max_range: float = Field(default=20.0, gt=0)
    noise: float = Field(default=0.5, ge=0, description="Temperature sigma, K")
    tolerance: float = Field(default=0.1, gt=0, description="Surface association distance, m")
    mount: Mount = (0.0, 0.0, 1.5)
    pitch_deg: float = 5.0


class SurfaceScanParams(BaseModel):
    """Ideal 2.5D scan: one return per lattice column from its highest surface."""
    region: tuple[float, float, float, float] = Field(description="(x_min, x_max, y_min, y_max)")
    spacing: float = Field(default=0.05, gt=0)
    origin: tuple[float, float] = (0.0, 0.0)
    min_range: float = Field(default=0.0, ge=0)
    max_range: float = Field(default=1e9, gt=0)
    noise: float = Field(default=0.02, ge=0, description="Height sigma at zero range, m")
    noise_growth: float = Field(default=0.0, ge=0, description="Added sigma per squared metre of range")


class CellSamplingParams(BaseModel):
    points_per_cell: int = Field(default=200, ge=1)
    mount: Mount = (0.0, 0.0, 1.5)
    height_noise: float = Field(default=0.02, ge=0)
    color_noise: float = Field(default=0.02, ge=0)
    thermal_noise: float = Field(default=0.5, ge=0)
    crop_gap: float = Field(default=0.2, ge=0, le=1, description="Share of crop columns showing the ground")
    overhang_ground: float = Field(default=0.5, ge=0, le=1, description="Share of columns under an overhang showing the ground")


class SensorParams(BaseModel):
    stereo: StereoHeadParams = Field(default_factory=StereoHeadParams.short_head)
    stereo_long: StereoHeadParams = Field(default_factory=StereoHeadParams.long_head)
    split_range: float = Field(default=12.0, gt=0, description="Short head below, long head above, m")
    lidar: LidarParams = Field(default_factory=LidarParams)
    radar: RadarParams = Field(default_factory=RadarParams)
    thermal: ThermalParams = Field(default_factory=ThermalParams)
    cells: CellSamplingParams = Field(default_factory=CellSamplingParams)


# --- Camera geometry ---

def camera_axes(pitch_deg: float, yaw_deg: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward, right and image-down unit vectors for a camera pitched down by pitch_deg."""
    th = math.radians(pitch_deg)
    ps = math.radians(yaw_deg)
    forward = np.array([math.cos(th) * math.cos(ps), math.cos(th) * math.sin(ps), -math.sin(th)])
    right = np.array([math.sin(ps), -math.cos(ps), 0.0])
    down = np.array([-math.sin(th) * math.cos(ps), -math.sin(th) * math.sin(ps), -math.cos(th)])
    return forward, right, down


def pixel_rays(params: StereoHeadParams) -> np.ndarray:
    """(H*W, 3) ray directions, row-major, scaled so that depth equals the ray parameter."""
    forward, right, down = camera_axes(params.pitch_deg, params.yaw_deg)
    u = (np.arange(params.width) + 0.5 - params.width / 2) / params.focal_px
    v = (np.arange(params.height) + 0.5 - params.height / 2) / params.focal_px
    uu, vv = np.meshgrid(u, v)
    return forward + uu.reshape(-1, 1) * right + vv.reshape(-1, 1) * down


def _seed(scene: Scene, seed: Optional[int]) -> int:
    return scene.spec.seed if seed is None else seed


# --- Stereo ---

def _cast_camera(scene: Scene, params: StereoHeadParams, seed: int, frame: int, stream: str):
    dirs = pixel_rays(params)
    hits = scene.raycast(
        params.mount,
        dirs,
        params.max_range,
        rng=substream(seed, stream, frame, "canopy"),
        march_step=params.march_step,
    )
    return dirs, hits


def render_stereo_cloud(
    scene: Scene,
    params: StereoHeadParams,
    seed: Optional[int] = None,
    frame: int = 0,
    stream: str = "stereo",
) -> PointCloud:
    """
    Ray-cast triangulated points. Depth error sigma grows as depth^2 / (f*b)
    and is applied along the ray; the range window is applied to true depth,
    so renders differing only in noise settings are point-aligned.
    """
    seed = _seed(scene, seed)
    dirs, hits = _cast_camera(scene, params, seed, frame, stream)
    keep = hits.hit & (hits.t >= params.min_range)
    t = hits.t[keep]
    d = dirs[keep]
    if params.disparity_noise > 0:
        eps = substream(seed, stream, frame, "depth").standard_normal(t.size)
        t = t + eps * params.depth_sigma(t)
    xyz = np.asarray(params.mount) + t[:, None] * d
    if params.point_noise > 0:
        xyz = xyz + substream(seed, stream, frame, "point").normal(0.0, params.point_noise, xyz.shape)
    color = np.clip(scene.surface_albedo(hits.surface[keep], hits.index[keep]), 0.0, 1.0)
    logger.debug(f"stereo b={params.baseline}: {t.size} points of {dirs.shape[0]} rays")
    return PointCloud(xyz=xyz, color=color, frame_id=frame)


def render_multibaseline_cloud(
    scene: Scene,
    sensors: SensorParams,
    seed: Optional[int] = None,
    frame: int = 0,
) -> PointCloud:
    """Short-head points up to split_range in depth, long-head points beyond."""
    parts = []
    for head, stream, near in ((sensors.stereo, "stereo-short", True), (sensors.stereo_long, "stereo-long", False)):
        cloud = render_stereo_cloud(scene, head, seed, frame, stream)
        forward, _, _ = camera_axes(head.pitch_deg, head.yaw_deg)
        depth = (cloud.xyz - np.asarray(head.mount)) @ forward
        parts.append(cloud.subset(depth <= sensors.split_range if near else depth > sensors.split_range))
    return PointCloud(
        xyz=np.vstack([p.xyz for p in parts]),
        color=np.vstack([p.color for p in parts]),
        frame_id=frame,
    )


# --- LIDAR ---

def lidar_directions(params: LidarParams) -> np.ndarray:
    el = np.radians(np.linspace(params.min_elevation_deg, params.max_elevation_deg, params.rings))
    n_az = max(1, int(round(params.azimuth_fov_deg / params.azimuth_resolution_deg)))
    az = np.radians(np.arange(n_az) * params.azimuth_resolution_deg - params.azimuth_fov_deg / 2)
    ee, aa = np.meshgrid(el, az, indexing="ij")
    return np.column_stack(
        [(np.cos(ee) * np.cos(aa)).ravel(), (np.cos(ee) * np.sin(aa)).ravel(), np.sin(ee).ravel()]
    )


def render_lidar_scan(
    scene: Scene,
    params: LidarParams,
    seed: Optional[int] = None,
    frame: int = 0,
) -> PointCloud:
    """Ring scan with range noise along each beam and a hard cutoff at max_range."""
    seed = _seed(scene, seed)
    dirs = lidar_directions(params)
    hits = scene.raycast(
        params.mount, dirs, params.max_range, rng=substream(seed, "lidar", frame, "canopy"), march_step=params.march_step
    )
    keep = hits.hit & (hits.t >= params.min_range)
    wet = hits.surface == Surface.WATER
    if wet.any():
        returned = substream(seed, "lidar", frame, "water").random(dirs.shape[0]) < params.water_return
        keep &= ~wet | returned
    t = hits.t[keep]
    if params.range_noise > 0:
        t = t + substream(seed, "lidar", frame, "range").normal(0.0, params.range_noise, t.size)
    xyz = np.asarray(params.mount) + t[:, None] * dirs[keep]
    logger.debug(f"lidar: {t.size} returns of {dirs.shape[0]} beams")
    return PointCloud(xyz=xyz, frame_id=frame)


# --- Radar ---

def footprint_samples(obstacle, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Lattice points covering an obstacle footprint, always including its centre."""
    x0, y0, x1, y1 = obstacle.footprint()
    xs = np.arange(x0 + spacing / 2, x1, spacing)
    ys = np.arange(y0 + spacing / 2, y1, spacing)
    gx, gy = (a.ravel() for a in np.meshgrid(xs, ys))
    if obstacle.round:
        inside = np.hypot(gx - obstacle.x, gy - obstacle.y) <= obstacle.radius
        gx, gy = gx[inside], gy[inside]
    return np.append(gx, obstacle.x), np.append(gy, obstacle.y)


def render_radar_image(
    scene: Scene,
    params: RadarParams,
    seed: Optional[int] = None,
    frame: int = 0,
) -> RadarImage:
    """
    Exponential clutter plus, in every bin an obstacle footprint touches, a
    gain proportional to reflectivity and the obstacle height inside the
    vertical fan. The radar sits at the vehicle origin.
    """
    seed = _seed(scene, seed)
    n_range = params.range_bins
    intensities = substream(seed, "radar", frame).exponential(params.clutter_mean, (n_range, params.azimuth_bins))
    probe = RadarImage.full_circle(np.zeros((n_range, params.azimuth_bins)), params.range_resolution, params.min_range)
    tan_half = math.tan(math.radians(params.vertical_fov_deg) / 2)
    for i, ob in enumerate(scene.spec.obstacles):
        xs, ys = footprint_samples(ob, params.footprint_spacing)
        ri, ai, ok = probe.bin_of(np.hypot(xs, ys), np.arctan2(ys, xs))
        if not ok.any():
            continue
        reach = math.hypot(ob.x, ob.y) * tan_half
        z_lo, z_hi = scene.obstacle_extent(i)
        visible = max(0.0, min(z_hi, params.mount_height + reach) - max(z_lo, params.mount_height - reach))
        gain = params.target_gain * ob.reflectivity * visible
        flat = np.unique(ri[ok] * params.azimuth_bins + ai[ok])
        intensities.reshape(-1)[flat] += gain
        logger.debug(f"radar: obstacle {i} adds {gain:.2f} to {flat.size} bins")
    return RadarImage.full_circle(intensities, params.range_resolution, params.min_range)


# --- Thermal ---

def render_thermal_points(
    scene: Scene,
    params: ThermalParams,
    cloud: PointCloud,
    seed: Optional[int] = None,
    frame: int = 0,
) -> PointCloud:
    """Scene temperature plus noise for points inside the thermal camera's view; NaN elsewhere."""
    seed = _seed(scene, seed)
    forward, right, down = camera_axes(params.pitch_deg)
    rel = cloud.xyz - np.asarray(params.mount)
    fwd = rel @ forward
    dist = np.linalg.norm(rel, axis=1)
    in_view = (
        (fwd > 0)
        & (np.abs(np.arctan2(rel @ right, fwd)) <= math.radians(params.hfov_deg) / 2)
        & (np.abs(np.arctan2(rel @ down, fwd)) <= math.radians(params.vfov_deg) / 2)
        & (dist >= params.min_range)
        & (dist <= params.max_range)
    )
    temps = np.full(len(cloud), np.nan)
    if in_view.any():
        p = cloud.xyz[in_view]
        t = scene.temperature(p[:, 0], p[:, 1], p[:, 2], params.tolerance)
        if params.noise > 0:
            t = t + substream(seed, "thermal", frame).normal(0.0, params.noise, t.size)
        temps[in_view] = t
    return cloud.with_temperature(temps)


# --- Exposures ---

def scene_radiance(
    scene: Scene,
    params: StereoHeadParams,
    sky_radiance: float = 2.0,
    seed: Optional[int] = None,
    frame: int = 0,
) -> np.ndarray:
    """(height, width) radiance: mean albedo where a ray hits, sky_radiance elsewhere."""
    dirs, hits = _cast_camera(scene, params, _seed(scene, seed), frame, "stereo")
    albedo = scene.surface_albedo(hits.surface, hits.index).mean(axis=1)
    radiance = np.where(hits.hit, albedo, sky_radiance)
    return radiance.reshape(params.height, params.width)


def render_exposure_stack(
    scene: Scene,
    params: StereoHeadParams,
    times: Sequence[float] = (0.25, 1.0, 4.0),
    sky_radiance: float = 2.0,
    seed: Optional[int] = None,
    frame: int = 0,
) -> ExposureStack:
    """Bracketed exposures of a linear sensor clipping at 1."""
    radiance = scene_radiance(scene, params, sky_radiance, seed, frame)
    return ExposureStack(images=[np.clip(radiance * t, 0.0, 1.0) for t in times], times=list(times))


# --- Idealized samplers ---

def render_surface_scan(
    scene: Scene,
    params: SurfaceScanParams,
    seed: Optional[int] = None,
    frame: int = 0,
    stream: str = "scan",
) -> PointCloud:
    """
    Highest surface per lattice column inside the range window, height noise
    sigma = noise + noise_growth * range^2. No occlusion between columns.
    """
    seed = _seed(scene, seed)
    x_min, x_max, y_min, y_max = params.region
    xs = np.arange(x_min + params.spacing / 2, x_max, params.spacing)
    ys = np.arange(y_min + params.spacing / 2, y_max, params.spacing)
    x, y = (a.ravel() for a in np.meshgrid(xs, ys))
    r = np.hypot(x - params.origin[0], y - params.origin[1])
    window = (r >= params.min_range) & (r <= params.max_range)
    x, y, r = x[window], y[window], r[window]

    z = scene.height(x, y)
    water = scene.in_water(x, y)
    surface = np.where(water >= 0, Surface.WATER, Surface.GROUND).astype(np.int8)
    index = water.copy()
    for j in range(len(scene.spec.crops)):
        inside = scene.in_crop(j, x, y)
        canopy = np.where(inside, scene.height(x, y) + scene.canopy_top(j, x, y), -np.inf)
        higher = canopy > z
        z = np.where(higher, canopy, z)
        surface[higher] = Surface.CROP
        index[higher] = j
    for i, ob in enumerate(scene.spec.obstacles):
        x0, y0, x1, y1 = ob.footprint()
        if ob.round:
            inside = np.hypot(x - ob.x, y - ob.y) <= ob.radius
        else:
            inside = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
        top = scene.obstacle_extent(i)[1]
        higher = inside & (top > z)
        z = np.where(higher, top, z)
        surface[higher] = Surface.OBSTACLE
        index[higher] = i

    sigma = params.noise + params.noise_growth * r ** 2
    z = z + substream(seed, stream, frame).standard_normal(z.size) * sigma
    color = np.clip(scene.surface_albedo(surface, index), 0.0, 1.0)
    return PointCloud(xyz=np.column_stack([x, y, z]), color=color, frame_id=frame)


def sample_cell_points(
    scene: Scene,
    geometry: GridGeometry,
    params: CellSamplingParams,
    seed: Optional[int] = None,
    frame: int = 0,
) -> PointCloud:
    """
    Registered colour + thermal points, `points_per_cell` random columns per
    cell. A column shows an obstacle body if it lies in one (overhangs show the
    ground beneath part of the time), else crop canopy (or the ground through a
    gap), else the ground. Points hidden from the sensor by terrain are dropped.
    """
    rng = substream(_seed(scene, seed), "cells", frame)
    n_per = params.points_per_cell
    rows, cols = np.divmod(np.repeat(np.arange(geometry.n_cells), n_per), geometry.n_cols)
    n = rows.size
    x = geometry.origin_x + (cols + rng.random(n)) * geometry.cell_size
    y = geometry.origin_y + (rows + rng.random(n)) * geometry.cell_size
    ground = scene.height(x, y)
    z = ground.copy()
    water = scene.in_water(x, y)
    surface = np.where(water >= 0, Surface.WATER, Surface.GROUND).astype(np.int8)
    index = water.copy()

    for j in range(len(scene.spec.crops)):
        gap = rng.random(n)
        shape = rng.standard_normal(n)
        canopy = scene.in_crop(j, x, y) & (gap >= params.crop_gap)
        top = scene.canopy_top(j, x, y)
        h = np.clip(top * (0.55 + 0.2 * shape), 0.05 * top, top)
        z = np.where(canopy, ground + h, z)
        surface[canopy] = Surface.CROP
        index[canopy] = j

    for i, ob in enumerate(scene.spec.obstacles):
        pick = rng.random(n)
        along = rng.random(n)
        x0, y0, x1, y1 = ob.footprint()
        if ob.round:
            inside = np.hypot(x - ob.x, y - ob.y) <= ob.radius
        else:
            inside = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
        if ob.elevation > 0:
            inside &= pick >= params.overhang_ground
        z_lo, z_hi = scene.obstacle_extent(i)
        z = np.where(inside, z_lo + along * (z_hi - z_lo), z)
        surface[inside] = Surface.OBSTACLE
        index[inside] = i

    height_eps = rng.standard_normal(n)
    color_eps = rng.standard_normal((n, 3))
    temp_eps = rng.standard_normal(n)
    xyz = np.column_stack([x, y, z])
    visible = scene.line_of_sight(params.mount, xyz)
    xyz[:, 2] += params.height_noise * height_eps
    color = np.clip(scene.surface_albedo(surface, index) + params.color_noise * color_eps, 0.0, 1.0)
    temps = scene.surface_temperature(surface, index) + params.thermal_noise * temp_eps
    logger.debug(f"sample_cell_points: {int(visible.sum())} of {n} columns visible")
    return PointCloud(xyz=xyz[visible], color=color[visible], temperature=temps[visible], frame_id=frame)
