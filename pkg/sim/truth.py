# sim/truth.py
"""Analytic ground-truth labels and obstacle geometry, computed from the scene spec alone."""

import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from perception.fuse import TraversabilityMap
from perception.labels import GridGeometry, Label
from sim.scene import ObstacleSpec, Scene

logger = logging.getLogger(__name__)

DEFAULT_CLEARANCE = 2.5
DEFAULT_SLOPE_LIMIT = 0.5
DEFAULT_MIN_OBSTACLE_HEIGHT = 0.1
_SLOPE_SAMPLES = 9
_HULL_VERTICES = 16
# footprint edges that coincide with cell edges, up to rounding, do not count as overlap
_OVERLAP_EPS = 1e-9


class ObstacleTruth(BaseModel):
    obstacle_id: int
    kind: str
    centroid: tuple[float, float]
    hull: list[tuple[float, float]]
    height: float = Field(description="Top above the ground at the centre, m")


class GroundTruth(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    geometry: GridGeometry
    labels: np.ndarray = Field(description="(n_rows, n_cols) int8, GROUND or NON_GROUND")
    obstacles: list[ObstacleTruth]

    def as_map(self) -> TraversabilityMap:
        return TraversabilityMap.from_labels(self.geometry, self.labels, sensor="truth")


def obstacle_hull(ob: ObstacleSpec) -> list[tuple[float, float]]:
    if ob.round:
        ang = 2 * math.pi * np.arange(_HULL_VERTICES) / _HULL_VERTICES
        return [(ob.x + ob.radius * math.cos(a), ob.y + ob.radius * math.sin(a)) for a in ang]
    x0, y0, x1, y1 = ob.footprint()
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _footprint_overlap(ob: ObstacleSpec, geometry: GridGeometry) -> np.ndarray:
    """Cells whose open interior meets the obstacle footprint."""
    s = geometry.cell_size
    cols = np.arange(geometry.n_cols)
    rows = np.arange(geometry.n_rows)
    cx0 = geometry.origin_x + cols * s
    cy0 = geometry.origin_y + rows * s
    x0, y0, x1, y1 = ob.footprint()
    ox = np.minimum(cx0 + s, x1) - np.maximum(cx0, x0)
    oy = np.minimum(cy0 + s, y1) - np.maximum(cy0, y0)
    rect = (oy[:, None] > _OVERLAP_EPS) & (ox[None, :] > _OVERLAP_EPS)
    if not ob.round:
        return rect
    # nearest point of each cell to the disc centre
    nx = np.clip(ob.x, cx0, cx0 + s)
    ny = np.clip(ob.y, cy0, cy0 + s)
    return rect & ((nx[None, :] - ob.x) ** 2 + (ny[:, None] - ob.y) ** 2 < ob.radius ** 2)


def _max_slope(scene: Scene, geometry: GridGeometry) -> np.ndarray:
    s = geometry.cell_size
    offsets = (np.arange(_SLOPE_SAMPLES) + 0.5) / _SLOPE_SAMPLES * s
    x0 = geometry.origin_x + np.arange(geometry.n_cols) * s
    y0 = geometry.origin_y + np.arange(geometry.n_rows) * s
    x = x0[None, :, None, None] + offsets[None, None, None, :]
    y = y0[:, None, None, None] + offsets[None, None, :, None]
    return scene.slope(x, y).max(axis=(2, 3))


def ground_truth(
    scene: Scene,
    geometry: GridGeometry,
    clearance: float = DEFAULT_CLEARANCE,
    slope_limit: float = DEFAULT_SLOPE_LIMIT,
    min_obstacle_height: float = DEFAULT_MIN_OBSTACLE_HEIGHT,
) -> GroundTruth:
    """
    A cell is NonGround when an obstacle at least min_obstacle_height tall
    overlaps it with its underside below the clearance, when the terrain slope
    in it exceeds slope_limit, or when it holds water.
    """
    blocked = _max_slope(scene, geometry) > slope_limit
    obstacles = []
    for i, ob in enumerate(scene.spec.obstacles):
        bottom, top = scene.obstacle_extent(i)
        ground_z = float(scene.height(ob.x, ob.y))
        if ob.height >= min_obstacle_height and bottom - ground_z < clearance:
            blocked |= _footprint_overlap(ob, geometry)
        obstacles.append(
            ObstacleTruth(
                obstacle_id=i,
                kind=ob.kind,
                centroid=(ob.x, ob.y),
                hull=obstacle_hull(ob),
                height=top - ground_z,
            )
        )
    for w in scene.spec.water:
        blocked |= _footprint_overlap(
            ObstacleSpec(kind="box", x=(w.x_min + w.x_max) / 2, y=(w.y_min + w.y_max) / 2,
                         size_x=w.x_max - w.x_min, size_y=w.y_max - w.y_min),
            geometry,
        )
    labels = np.where(blocked, Label.NON_GROUND, Label.GROUND).astype(np.int8)
    logger.debug(f"ground_truth: {int(blocked.sum())} of {geometry.n_cells} cells NonGround")
    return GroundTruth(geometry=geometry, labels=labels, obstacles=obstacles)
