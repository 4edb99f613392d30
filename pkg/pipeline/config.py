# pipeline/config.py
"""
Run configuration: one TOML file, one pydantic model per section. Every
parameter is checked here, before any frame is rendered.
"""

import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, model_validator

from common.config import settings
from common.errors import ConfigurationError
from perception.cells import DEFAULT_CELL_SIZE, DEFAULT_MIN_SAMPLES, DEFAULT_THRESHOLD, FeatureWeights
from perception.fuse import DEFAULT_LIDAR_WEIGHTS, DEFAULT_STEREO_WEIGHTS, ClassifierWeights
from perception.geo3d import FEATURE_DIM
from perception.ground import DEFAULT_CAPACITY, DEFAULT_CONFIDENCE, StartRegion
from perception.labels import GridGeometry
from perception.radar import RadarDetectionParams
from perception.radarstereo import RadarStereoParams
from sim.scene import SceneSpec, load_scene_spec
from sim.sensors import SensorParams, SurfaceScanParams
from sim.truth import DEFAULT_CLEARANCE, DEFAULT_MIN_OBSTACLE_HEIGHT, DEFAULT_SLOPE_LIMIT

logger = logging.getLogger(__name__)

Method = Literal["simulate", "ground", "fuse", "radar", "radarstereo", "cells"]
ALL_METHODS: tuple[str, ...] = ("simulate", "ground", "fuse", "radar", "radarstereo", "cells")
DEFAULT_METHODS: tuple[str, ...] = ("ground", "fuse", "radar", "radarstereo", "cells")


# --- Sections ---

class SceneConfig(BaseModel):
    file: Path = Field(description="TOML scene file, relative to the config file")
    drift_offset: float = Field(default=0.0, description="Terrain height added by the last frame, m")
    drift_slope: float = Field(default=0.0, description="Terrain x-slope added by the last frame")


class GeometryConfig(BaseModel):
    origin_x: float = 2.0
    origin_y: float = -4.0
    cell_size: float = Field(default=0.4, gt=0)
    n_rows: int = Field(default=20, ge=1)
    n_cols: int = Field(default=30, ge=1)

    def to_geometry(self) -> GridGeometry:
        return GridGeometry(**self.model_dump())


class ScanConfig(BaseModel):
    """2.5D surface scans standing in for the two range sensors; the region defaults to the grid."""
    stereo: SurfaceScanParams = Field(
        default_factory=lambda: SurfaceScanParams(
            region=(0.0, 1.0, 0.0, 1.0), spacing=0.05, min_range=2.0, max_range=30.0, noise=0.01, noise_growth=1e-4
        )
    )
    lidar: SurfaceScanParams = Field(
        default_factory=lambda: SurfaceScanParams(
            region=(0.0, 1.0, 0.0, 1.0), spacing=0.1, min_range=0.5, max_range=17.0, noise=0.02
        )
    )
    fit_region_to_grid: bool = True


class GroundConfig(BaseModel):
    source: Literal["render", "scan"] = Field(
        default="render", description="Ray-cast sensor models, or 2.5D surface scans"
    )
    voxel_size: Optional[float] = Field(default=0.1, gt=0, description="None skips downsampling")
    capacity: int = Field(default=DEFAULT_CAPACITY, ge=FEATURE_DIM + 1)
    confidence: float = Field(default=DEFAULT_CONFIDENCE, gt=0, lt=1)
    min_points: int = Field(default=3, ge=3)
    frozen: bool = False
    start_region: StartRegion = Field(default_factory=StartRegion)


class FusionConfig(BaseModel):
    lidar: ClassifierWeights = ClassifierWeights(p=DEFAULT_LIDAR_WEIGHTS[0], rp=DEFAULT_LIDAR_WEIGHTS[1])
    stereo: ClassifierWeights = ClassifierWeights(p=DEFAULT_STEREO_WEIGHTS[0], rp=DEFAULT_STEREO_WEIGHTS[1])
    calibrate: bool = Field(default=False, description="Derive weights from frame 0 against ground truth")
    threshold: Optional[float] = Field(default=None, ge=0, description="None uses the mean of the two thresholds")

    @model_validator(mode="after")
    def _weights_not_degenerate(self) -> "FusionConfig":
        if self.lidar.p + self.stereo.p == 0 or self.lidar.rp + self.stereo.rp == 0:
            raise ValueError("fusion weights for one label are zero for both sensors")
        return self


class CellsConfig(BaseModel):
    origin_x: float = 4.0
    origin_y: float = -3.0
    cell_size: float = Field(default=DEFAULT_CELL_SIZE, gt=0)
    n_rows: int = Field(default=10, ge=1)
    n_cols: int = Field(default=10, ge=1)
    k_max: int = Field(default=3, ge=1, le=3)
    threshold: float = Field(default=DEFAULT_THRESHOLD, gt=0)
    min_samples: int = Field(default=DEFAULT_MIN_SAMPLES, ge=2)
    weights: FeatureWeights = Field(default_factory=FeatureWeights)
    clearance: float = Field(default=DEFAULT_CLEARANCE, gt=0, description="Vehicle clearance, m")
    train_region: StartRegion = Field(default_factory=lambda: StartRegion(x_min=4.0, x_max=6.4, y_min=-3.0, y_max=3.0))
    occlusion: bool = True
    edge_of_view: bool = True

    @model_validator(mode="after")
    def _weights_select_an_axis(self) -> "CellsConfig":
        self.weights.axis_weights()
        return self

    def to_geometry(self) -> GridGeometry:
        return GridGeometry(
            origin_x=self.origin_x,
            origin_y=self.origin_y,
            cell_size=self.cell_size,
            n_rows=self.n_rows,
            n_cols=self.n_cols,
        )


class TruthConfig(BaseModel):
    clearance: float = Field(default=DEFAULT_CLEARANCE, gt=0)
    slope_limit: float = Field(default=DEFAULT_SLOPE_LIMIT, gt=0)
    min_obstacle_height: float = Field(default=DEFAULT_MIN_OBSTACLE_HEIGHT, ge=0)


class RunConfig(BaseModel):
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0, lt=2 ** 64)
    frames: int = Field(default=1, ge=1)
    out_dir: Optional[Path] = None
    methods: list[Method] = Field(default_factory=lambda: list(DEFAULT_METHODS), min_length=1)


class PipelineConfig(BaseModel):
    scene: SceneConfig
    sensors: SensorParams = Field(default_factory=SensorParams)
    scan: ScanConfig = Field(default_factory=ScanConfig)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    ground: GroundConfig = Field(default_factory=GroundConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    radar: RadarDetectionParams = Field(default_factory=RadarDetectionParams)
    radarstereo: RadarStereoParams = Field(default_factory=RadarStereoParams)
    cells: CellsConfig = Field(default_factory=CellsConfig)
    truth: TruthConfig = Field(default_factory=TruthConfig)
    run: RunConfig = Field(default_factory=RunConfig)

    @model_validator(mode="after")
    def _ranges_ordered(self) -> "PipelineConfig":
        heads = {"stereo": self.sensors.stereo, "stereo_long": self.sensors.stereo_long, "lidar": self.sensors.lidar}
        for name, head in heads.items():
            if head.min_range >= head.max_range:
                raise ValueError(f"sensors.{name}: min_range must be below max_range")
        for name, sensor in (("radar", self.sensors.radar), ("thermal", self.sensors.thermal)):
            if sensor.min_range >= sensor.max_range:
                raise ValueError(f"sensors.{name}: min_range must be below max_range")
        r = self.ground.start_region
        if r.x_min >= r.x_max or r.y_min >= r.y_max:
            raise ValueError("ground.start_region is empty")
        if self.sensors.lidar.min_elevation_deg > self.sensors.lidar.max_elevation_deg:
            raise ValueError("sensors.lidar: min_elevation_deg must not exceed max_elevation_deg")
        if self.sensors.radar.range_bins <= self.radar.cfar.window:
            raise ValueError(
                f"radar.cfar: window of {self.radar.cfar.window} cells does not fit "
                f"{self.sensors.radar.range_bins} radar range bins"
            )
        return self

    @property
    def methods(self) -> set[str]:
        """Requested methods plus the stages they depend on."""
        chosen = set(self.run.methods)
        if "fuse" in chosen or "radarstereo" in chosen:
            chosen.add("ground")
        if "radarstereo" in chosen:
            chosen.add("radar")
        return chosen

    def scan_params(self) -> tuple[SurfaceScanParams, SurfaceScanParams]:
        """(stereo, lidar) surface-scan parameters, regions fitted to the grid when asked."""
        stereo, lidar = self.scan.stereo, self.scan.lidar
        if self.scan.fit_region_to_grid:
            g = self.geometry.to_geometry()
            region = (g.origin_x, g.x_max, g.origin_y, g.y_max)
            stereo = stereo.model_copy(update={"region": region})
            lidar = lidar.model_copy(update={"region": region})
        return stereo, lidar

    def scene_spec(self) -> SceneSpec:
        return load_scene_spec(self.scene.file)


# --- Loading ---

def _apply_overrides(data: dict[str, Any], seed: Optional[int], out: Optional[Path], frames: Optional[int],
                     methods: Optional[list[str]]) -> dict[str, Any]:
    run = dict(data.get("run", {}))
    if seed is not None:
        run["seed"] = seed
    if out is not None:
        run["out_dir"] = out
    if frames is not None:
        run["frames"] = frames
    if methods is not None:
        run["methods"] = methods
    return {**data, "run": run}


def load_pipeline_config(
    path: str | Path,
    seed: Optional[int] = None,
    out: Optional[Path] = None,
    frames: Optional[int] = None,
    methods: Optional[list[str]] = None,
) -> PipelineConfig:
    """
    Reads and validates a pipeline config. Command-line overrides replace the
    [run] values before validation; the scene path resolves against the
    config file's directory and must exist.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"invalid config file {path}: {e}") from e

    data = _apply_overrides(data, seed, out, frames, methods)
    scene = data.get("scene")
    if not isinstance(scene, dict) or "file" not in scene:
        raise ConfigurationError(f"{path}: [scene] must name a scene file")
    scene_file = Path(scene["file"])
    if not scene_file.is_absolute():
        scene_file = path.parent / scene_file
    if not scene_file.is_file():
        raise ConfigurationError(f"scene file not found: {scene_file}")
    data["scene"] = {**scene, "file": scene_file}

    try:
        config = PipelineConfig(**data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid config file {path}: {e}") from e
    # the scene file is validated as part of the config
    config.scene_spec()
    logger.info(f"Loaded pipeline config {path} (seed {config.run.seed}, {config.run.frames} frames)")
    return config
