# perception/radarstereo.py
"""
Radar-supervised stereo analysis: cut the stereo cloud around each radar
obstacle and measure it in 3D.
"""

import logging
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from common.errors import EmptyObstacleError, NoReferenceError, ParameterError
from perception.fuse import TraversabilityMap
from perception.geo3d import PointCloud
from perception.labels import Label
from perception.radar import RadarObstacle, hull_distance

logger = logging.getLogger(__name__)

DEFAULT_MARGIN = 0.5
DEFAULT_ANNULUS = 2.0


# --- Domain Types ---

class SubCloud(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    points: PointCloud
    source_obstacle: RadarObstacle
    margin: float


class GroundReference(BaseModel):
    z0: float
    low_confidence: bool = False
    support: int = Field(default=0, description="Points the reference was computed from")


class ObstacleInfo(BaseModel):
    obstacle_id: int = 0
    centroid_2d: tuple[float, float]
    max_height: float = Field(ge=0)
    bbox_min: tuple[float, float, float]
    bbox_max: tuple[float, float, float]
    mean_color: Optional[tuple[float, float, float]] = None
    point_count: int
    ground_z: float = 0.0
    low_confidence: bool = False


class RadarStereoParams(BaseModel):
    margin: float = Field(default=DEFAULT_MARGIN, ge=0)
    annulus: float = Field(default=DEFAULT_ANNULUS, gt=0)
    height_quantile: float = Field(default=0.99, gt=0, le=1)


# --- Operations ---

def extract_subcloud(cloud: PointCloud, obstacle: RadarObstacle, margin: float = DEFAULT_MARGIN) -> SubCloud:
    """Points inside the hull or within `margin` of it, in the horizontal plane."""
    if margin < 0:
        raise ParameterError(f"margin must be >= 0, got {margin}")
    if len(cloud) == 0:
        return SubCloud(points=cloud, source_obstacle=obstacle, margin=margin)
    dist = hull_distance(cloud.xyz[:, :2], obstacle.hull)
    return SubCloud(points=cloud.subset(dist <= margin), source_obstacle=obstacle, margin=margin)


def estimate_ground_level(
    tmap: TraversabilityMap,
    cloud: PointCloud,
    obstacle: RadarObstacle,
    margin: float = DEFAULT_MARGIN,
    annulus: float = DEFAULT_ANNULUS,
) -> GroundReference:
    """
    Median z of Ground-labelled points in the annulus around the dilated hull.
    Falls back to the sub-cloud minimum, flagged low-confidence.
    """
    if len(cloud):
        xy = cloud.xyz[:, :2]
        dist = hull_distance(xy, obstacle.hull)
        ring = (dist > margin) & (dist <= margin + annulus)
        row, col, inside = tmap.geometry.locate(xy[:, 0], xy[:, 1])
        on_ground = np.zeros(len(cloud), dtype=bool)
        on_ground[inside] = tmap.labels[row[inside], col[inside]] == Label.GROUND
        support = ring & on_ground
        if support.any():
            return GroundReference(z0=float(np.median(cloud.xyz[support, 2])), support=int(support.sum()))

    sub = extract_subcloud(cloud, obstacle, margin)
    if len(sub.points) == 0:
        raise NoReferenceError(f"no ground points and no sub-cloud near obstacle at {obstacle.centroid}")
    logger.warning(f"No ground labels near obstacle at {obstacle.centroid}; using sub-cloud minimum")
    return GroundReference(z0=float(sub.points.xyz[:, 2].min()), low_confidence=True, support=len(sub.points))


def characterize(sub: SubCloud, z0: float, height_quantile: float = 1.0) -> ObstacleInfo:
    """
    Height above z0 (clamped at 0), bounding box and mean color. With
    height_quantile < 1 the top is that quantile of z instead of the maximum.
    """
    pts = sub.points
    if len(pts) == 0:
        raise EmptyObstacleError(f"empty sub-cloud for obstacle at {sub.source_obstacle.centroid}")
    z = pts.xyz[:, 2]
    top = float(z.max()) if height_quantile >= 1.0 else float(np.quantile(z, height_quantile))
    mean_color = None
    has_color = pts.has_color()
    if has_color.any():
        mean_color = tuple(float(c) for c in pts.color[has_color].mean(axis=0))
    return ObstacleInfo(
        centroid_2d=sub.source_obstacle.centroid,
        max_height=max(top - z0, 0.0),
        bbox_min=tuple(float(v) for v in pts.xyz.min(axis=0)),
        bbox_max=tuple(float(v) for v in pts.xyz.max(axis=0)),
        mean_color=mean_color,
        point_count=len(pts),
        ground_z=z0,
    )


def analyze_obstacles(
    cloud: PointCloud,
    obstacles: Sequence[RadarObstacle],
    tmap: TraversabilityMap,
    params: Optional[RadarStereoParams] = None,
) -> list[ObstacleInfo]:
    """Sub-cloud, ground reference and characterization for each obstacle; empty ones are skipped."""
    params = params or RadarStereoParams()
    infos = []
    for k, obstacle in enumerate(obstacles):
        sub = extract_subcloud(cloud, obstacle, params.margin)
        if len(sub.points) == 0:
            logger.debug(f"obstacle {k} at {obstacle.centroid}: no stereo points")
            continue
        ref = estimate_ground_level(tmap, cloud, obstacle, params.margin, params.annulus)
        info = characterize(sub, ref.z0, params.height_quantile)
        infos.append(info.model_copy(update={"obstacle_id": k, "low_confidence": ref.low_confidence}))
    return infos


# --- Evaluation ---

def localization_rms(
    estimates: Sequence[tuple[float, float]],
    truths: Sequence[tuple[float, float]],
    max_match: float = 1.0,
) -> tuple[float, int]:
    """
    RMS horizontal error after matching each truth to its nearest estimate.
    Returns (rms, matched count); truths without an estimate within `max_match` are unmatched.
    """
    est = np.asarray(estimates, dtype=float).reshape(-1, 2)
    errors = []
    for t in np.asarray(truths, dtype=float).reshape(-1, 2):
        if est.shape[0] == 0:
            continue
        d = np.hypot(est[:, 0] - t[0], est[:, 1] - t[1])
        if d.min() <= max_match:
            errors.append(d.min())
    if not errors:
        return float("nan"), 0
    return float(np.sqrt(np.mean(np.square(errors)))), len(errors)


def reconstruction_error(measured: PointCloud, reference: PointCloud) -> tuple[float, float]:
    """Mean and standard deviation of per-point position error between aligned clouds."""
    if len(measured) != len(reference):
        raise ParameterError(f"clouds are not aligned: {len(measured)} vs {len(reference)} points")
    if len(measured) == 0:
        raise EmptyObstacleError("no points to compare")
    err = np.linalg.norm(measured.xyz - reference.xyz, axis=1)
    return float(err.mean()), float(err.std())
