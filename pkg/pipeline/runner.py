# pipeline/runner.py
"""
Stage orchestration. Frames are rendered (optionally on a worker pool), then
each requested method runs over them in frame order and writes its artifacts
under the output directory. Every random draw comes from the run seed.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from common.config import settings
from common.errors import ParameterError, PerceptionError, StageError
from perception.cells import (
    CellGrid,
    GaussianMixture,
    accumulate_cell_samples,
    classify_cells,
    designate_driven,
    invalidate_edge_cells,
    mark_occlusion_shadows,
    save_library,
    train_library,
)
from perception.fuse import (
    ClassifierWeights,
    ConfusionMatrix,
    MetricReport,
    TraversabilityMap,
    co_observed,
    confusion,
    fuse_maps,
    metrics,
    weights_from_groundtruth,
)
from perception.geo3d import Plane, PointCloud, VoxelGridParams
from perception.ground import SelfLearningGroundClassifier, save_model
from perception.labels import GridGeometry
from perception.radar import RadarImage, closest_obstacles, detect_obstacles
from perception.radarstereo import analyze_obstacles, localization_rms
from pipeline.config import PipelineConfig
from pipeline.export import cell_map, export_artifact, export_map, read_map_csv
from sim.scene import Scene, SceneSpec, generate_scene
from sim.sensors import (
    CellSamplingParams,
    render_lidar_scan,
    render_multibaseline_cloud,
    render_radar_image,
    render_surface_scan,
    render_thermal_points,
    sample_cell_points,
)
from sim.truth import GroundTruth, ground_truth

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("precision", "rejection_precision", "recall", "specificity", "accuracy", "f1")
AGGREGATE_FRAME = -1


# --- Report ---

class MetricRow(BaseModel):
    """One confusion matrix and its rates. `scope` is `all` or `co_observed`."""
    frame: int
    method: str
    scope: str = "all"
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    unknown: int = 0
    precision: Optional[float] = None
    rejection_precision: Optional[float] = None
    recall: Optional[float] = None
    specificity: Optional[float] = None
    accuracy: Optional[float] = None
    f1: Optional[float] = None

    @classmethod
    def from_confusion(cls, frame: int, method: str, cm: ConfusionMatrix, scope: str = "all") -> "MetricRow":
        return cls(frame=frame, method=method, scope=scope, **cm.model_dump(), **metrics(cm).model_dump())

    def confusion(self) -> ConfusionMatrix:
        return ConfusionMatrix(tp=self.tp, fp=self.fp, tn=self.tn, fn=self.fn, unknown=self.unknown)

    def report(self) -> MetricReport:
        return MetricReport(**{name: getattr(self, name) for name in METRIC_FIELDS})


class ObstacleRow(BaseModel):
    frame: int
    obstacle_id: int
    cx: float
    cy: float
    max_height: float
    bbox_min_x: float
    bbox_min_y: float
    bbox_min_z: float
    bbox_max_x: float
    bbox_max_y: float
    bbox_max_z: float
    r: Optional[float] = None
    g: Optional[float] = None
    b: Optional[float] = None
    n_points: int
    ground_z: float
    low_confidence: bool


class RadarRow(BaseModel):
    frame: int
    detections: int
    truths: int
    matched: int
    rms: Optional[float] = Field(default=None, description="Centroid RMS error of matched truths, m")
    closest: list[tuple[float, float]] = Field(default_factory=list)


def aggregate_rows(rows: Sequence[MetricRow]) -> list[MetricRow]:
    """Sums confusion matrices per (method, scope); rates are recomputed from the sums."""
    totals: dict[tuple[str, str], ConfusionMatrix] = {}
    for row in rows:
        key = (row.method, row.scope)
        totals[key] = totals.get(key, ConfusionMatrix()) + row.confusion()
    return [MetricRow.from_confusion(AGGREGATE_FRAME, method, cm, scope) for (method, scope), cm in totals.items()]


class RunReport(BaseModel):
    seed: int
    frames: int
    rows: list[MetricRow] = Field(default_factory=list)
    obstacles: list[ObstacleRow] = Field(default_factory=list)
    radar: list[RadarRow] = Field(default_factory=list)
    timings: dict[str, float] = Field(default_factory=dict, description="Seconds per stage; not written to disk")
    artifacts: list[Path] = Field(default_factory=list)

    def aggregates(self) -> list[MetricRow]:
        return aggregate_rows(self.rows)

    def metric(self, method: str, scope: str = "all", frame: Optional[int] = None) -> MetricReport:
        """Rates for one method, aggregated over frames unless `frame` is given."""
        rows = [r for r in self.rows if r.method == method and r.scope == scope and (frame is None or r.frame == frame)]
        if not rows:
            raise KeyError(f"no metric rows for method '{method}' scope '{scope}'")
        return aggregate_rows(rows)[0].report()


# --- Frames ---

class FrameData(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    frame: int
    scene: Scene
    truth: Optional[GroundTruth] = None
    cell_truth: Optional[GroundTruth] = None
    clouds: dict[str, PointCloud] = Field(default_factory=dict)
    radar: Optional[RadarImage] = None
    cell_cloud: Optional[PointCloud] = None


def frame_spec(base: SceneSpec, frame: int, n_frames: int, seed: int, drift_offset: float = 0.0,
               drift_slope: float = 0.0) -> SceneSpec:
    """The scene at `frame`: terrain offset and slope ramp linearly to their drift by the last frame."""
    share = frame / max(n_frames - 1, 1)
    ground = base.ground.model_copy(
        update={
            "z0": base.ground.z0 + drift_offset * share,
            "slope_x": base.ground.slope_x + drift_slope * share,
        }
    )
    return base.model_copy(update={"name": f"{base.name}-{frame}", "ground": ground, "seed": seed})


def grid_from_cloud(
    scene: Scene,
    cloud: PointCloud,
    geometry: GridGeometry,
    mount: tuple[float, float, float],
    clearance: Optional[float],
) -> CellGrid:
    """Cell samples with heights measured from the ground under the sensor."""
    plane = Plane.horizontal(float(scene.height(mount[0], mount[1])))
    return accumulate_cell_samples(cloud, CellGrid.empty(geometry), plane, clearance)


def cell_grid_for_scene(
    scene: Scene,
    geometry: GridGeometry,
    params: CellSamplingParams,
    clearance: Optional[float],
    seed: Optional[int] = None,
    frame: int = 0,
) -> CellGrid:
    cloud = sample_cell_points(scene, geometry, params, seed, frame)
    return grid_from_cloud(scene, cloud, geometry, params.mount, clearance)


def _masked_confusion(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> ConfusionMatrix:
    return confusion(np.asarray(pred)[mask], np.asarray(truth)[mask])


# --- Runner ---

class PipelineRunner:
    """Runs the configured methods once; not reusable across runs."""

    def __init__(self, config: PipelineConfig, out_dir: Optional[Path] = None):
        self.config = config
        self.methods = config.methods
        self.seed = config.run.seed
        self.n_frames = config.run.frames
        self.out_dir = Path(out_dir or config.run.out_dir or settings.OUTPUT_DIR)
        self.geometry = config.geometry.to_geometry()
        self.cell_geometry = config.cells.to_geometry()
        self.report = RunReport(seed=self.seed, frames=self.n_frames)
        self.ground_maps: dict[str, list[TraversabilityMap]] = {}
        self.detections: dict[int, list] = {}

    @contextmanager
    def _stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        logger.info(f"--- Stage: {name} ---")
        try:
            yield
        except StageError:
            raise
        except PerceptionError as e:
            logger.error(f"Stage '{name}' failed: {e}")
            raise StageError(name, e) from e
        finally:
            elapsed = time.perf_counter() - start
            self.report.timings[name] = self.report.timings.get(name, 0.0) + elapsed
            logger.info(f"Stage '{name}' took {elapsed:.2f}s")

    def _write(self, obj, relative: str) -> Path:
        path = export_artifact(obj, self.out_dir / relative)
        self.report.artifacts.append(path)
        return path

    def _write_map(self, tmap: TraversabilityMap, stem: str) -> None:
        self.report.artifacts.extend(export_map(tmap, self.out_dir / "maps" / stem))

    # --- Rendering ---

    def _needs(self) -> dict[str, bool]:
        m = self.methods
        return {
            "stereo": bool({"simulate", "ground", "radarstereo"} & m),
            "lidar": bool({"simulate", "fuse"} & m),
            "radar": bool({"simulate", "radar"} & m),
            "cells": bool({"simulate", "cells"} & m),
        }

    def _render_frame(self, frame: int, base: SceneSpec) -> FrameData:
        cfg = self.config
        spec = frame_spec(base, frame, self.n_frames, self.seed, cfg.scene.drift_offset, cfg.scene.drift_slope)
        scene = generate_scene(spec)
        needs = self._needs()
        data = FrameData(frame=frame, scene=scene)
        truth_args = cfg.truth.model_dump()
        data.truth = ground_truth(scene, self.geometry, **truth_args)

        if cfg.ground.source == "scan":
            stereo_scan, lidar_scan = cfg.scan_params()
            if needs["stereo"]:
                data.clouds["stereo"] = render_surface_scan(scene, stereo_scan, self.seed, frame, stream="scan-stereo")
            if needs["lidar"]:
                data.clouds["lidar"] = render_surface_scan(scene, lidar_scan, self.seed, frame, stream="scan-lidar")
        else:
            if needs["stereo"]:
                data.clouds["stereo"] = render_multibaseline_cloud(scene, cfg.sensors, self.seed, frame)
            if needs["lidar"]:
                data.clouds["lidar"] = render_lidar_scan(scene, cfg.sensors.lidar, self.seed, frame)
        if needs["radar"]:
            data.radar = render_radar_image(scene, cfg.sensors.radar, self.seed, frame)
        if needs["cells"]:
            data.cell_cloud = sample_cell_points(scene, self.cell_geometry, cfg.sensors.cells, self.seed, frame)
            data.cell_truth = ground_truth(scene, self.cell_geometry, **truth_args)
        logger.info(f"frame {frame}: rendered {', '.join(f'{k} {len(v)} pts' for k, v in data.clouds.items()) or 'no clouds'}")
        return data

    def render_frames(self) -> list[FrameData]:
        base = self.config.scene_spec()
        workers = max(1, settings.WORKERS)
        frames = range(self.n_frames)
        if workers == 1:
            return [self._render_frame(f, base) for f in frames]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda f: self._render_frame(f, base), frames))

    # --- Stages ---

    def simulate(self, frames: Sequence[FrameData]) -> None:
        thermal = self.config.sensors.thermal
        for fd in frames:
            tag = f"frame_{fd.frame:03d}"
            if "stereo" in fd.clouds:
                stereo = render_thermal_points(fd.scene, thermal, fd.clouds["stereo"], self.seed, fd.frame)
                self._write(stereo, f"sim/{tag}_stereo.xyz")
            if "lidar" in fd.clouds:
                self._write(fd.clouds["lidar"], f"sim/{tag}_lidar.xyz")
            if fd.radar is not None:
                self._write(fd.radar, f"sim/{tag}_radar.txt")
            if fd.cell_cloud is not None:
                self._write(fd.cell_cloud, f"sim/{tag}_cells.xyz")
            self._write_map(fd.truth.as_map(), f"{tag}_truth")

    def _classifier(self, sensor: str) -> SelfLearningGroundClassifier:
        g = self.config.ground
        return SelfLearningGroundClassifier(
            self.geometry,
            start_region=g.start_region,
            voxel=VoxelGridParams(voxel_size=g.voxel_size) if g.voxel_size else None,
            capacity=g.capacity,
            confidence=g.confidence,
            min_points=g.min_points,
            frozen=g.frozen,
            sensor=sensor,
        )

    def ground(self, frames: Sequence[FrameData]) -> None:
        """One self-learning classifier per range sensor; frames strictly in order."""
        sensors = [s for s in ("stereo", "lidar") if s in frames[0].clouds]
        for sensor in sensors:
            clf = self._classifier(sensor)
            maps = []
            for fd in frames:
                tmap = clf.process(fd.clouds[sensor])
                maps.append(tmap)
                row = MetricRow.from_confusion(fd.frame, sensor, confusion(tmap.labels, fd.truth.labels))
                self.report.rows.append(row)
                logger.info(f"frame {fd.frame} [{sensor}]: accuracy {row.accuracy}")
                self._write_map(tmap, f"frame_{fd.frame:03d}_{sensor}")
            self.ground_maps[sensor] = maps
            self.report.artifacts.append(save_model(clf.model, self.out_dir / "models" / f"ground_{sensor}.txt"))

    def _fusion_weights(self, frames: Sequence[FrameData]) -> tuple[ClassifierWeights, ClassifierWeights]:
        cfg = self.config.fusion
        if not cfg.calibrate:
            return cfg.lidar, cfg.stereo
        truth = frames[0].truth.labels
        w_l = weights_from_groundtruth(confusion(self.ground_maps["lidar"][0].labels, truth))
        w_s = weights_from_groundtruth(confusion(self.ground_maps["stereo"][0].labels, truth))
        logger.info(f"calibrated fusion weights: lidar {w_l}, stereo {w_s}")
        return w_l, w_s

    def fuse(self, frames: Sequence[FrameData]) -> None:
        weights = self._fusion_weights(frames)
        for fd, map_l, map_s in zip(frames, self.ground_maps["lidar"], self.ground_maps["stereo"]):
            fused = fuse_maps(map_l, map_s, weights, self.config.fusion.threshold)
            truth = fd.truth.labels
            self.report.rows.append(MetricRow.from_confusion(fd.frame, "fused", confusion(fused.labels, truth)))
            both = co_observed(map_l, map_s)
            for method, tmap in (("lidar", map_l), ("stereo", map_s), ("fused", fused)):
                cm = _masked_confusion(tmap.labels, truth, both)
                self.report.rows.append(MetricRow.from_confusion(fd.frame, method, cm, scope="co_observed"))
            self._write_map(fused, f"frame_{fd.frame:03d}_fused")

    def radar(self, frames: Sequence[FrameData]) -> None:
        cfg = self.config.radar
        for fd in frames:
            _, mask, obstacles = detect_obstacles(fd.radar, cfg)
            self.detections[fd.frame] = obstacles
            self._write(mask, f"radar/frame_{fd.frame:03d}_mask.pgm")
            truths = [
                o.centroid for o in fd.truth.obstacles
                if fd.radar.min_range <= float(np.hypot(*o.centroid)) < min(fd.radar.max_range, cfg.extent)
            ]
            rms, matched = localization_rms([o.centroid for o in obstacles], truths)
            self.report.radar.append(
                RadarRow(
                    frame=fd.frame,
                    detections=len(obstacles),
                    truths=len(truths),
                    matched=matched,
                    rms=None if matched == 0 else rms,
                    closest=[o.centroid for o in closest_obstacles(obstacles, cfg.closest)],
                )
            )

    def radarstereo(self, frames: Sequence[FrameData]) -> None:
        for fd, tmap in zip(frames, self.ground_maps["stereo"]):
            infos = analyze_obstacles(fd.clouds["stereo"], self.detections[fd.frame], tmap, self.config.radarstereo)
            for info in infos:
                color = info.mean_color or (None, None, None)
                self.report.obstacles.append(
                    ObstacleRow(
                        frame=fd.frame,
                        obstacle_id=info.obstacle_id,
                        cx=info.centroid_2d[0],
                        cy=info.centroid_2d[1],
                        max_height=info.max_height,
                        bbox_min_x=info.bbox_min[0],
                        bbox_min_y=info.bbox_min[1],
                        bbox_min_z=info.bbox_min[2],
                        bbox_max_x=info.bbox_max[0],
                        bbox_max_y=info.bbox_max[1],
                        bbox_max_z=info.bbox_max[2],
                        r=color[0],
                        g=color[1],
                        b=color[2],
                        n_points=info.point_count,
                        ground_z=info.ground_z,
                        low_confidence=info.low_confidence,
                    )
                )

    def cells(self, frames: Sequence[FrameData]) -> None:
        """Library from the driven cells of frame 0, then every frame classified against it."""
        cfg = self.config.cells
        mount = self.config.sensors.cells.mount
        grids = [grid_from_cloud(fd.scene, fd.cell_cloud, self.cell_geometry, mount, cfg.clearance) for fd in frames]

        cx, cy = self.cell_geometry.centers()
        driven = designate_driven(grids[0], cfg.train_region.contains(cx, cy), cfg.min_samples)
        library: list[GaussianMixture] = train_library(
            [driven], cfg.weights, min_samples=cfg.min_samples, k_max=cfg.k_max, seed=self.seed
        )
        self.report.artifacts.append(save_library(library, self.out_dir / "models" / "cell_library.txt"))

        for fd, grid in zip(frames, grids):
            grid = classify_cells(
                grid, library, cfg.threshold, cfg.weights, cfg.min_samples, k_max=cfg.k_max, seed=self.seed
            )
            if cfg.occlusion:
                grid = mark_occlusion_shadows(grid, (mount[0], mount[1]))
            if cfg.edge_of_view:
                thermal = self.config.sensors.thermal
                grid = invalidate_edge_cells(grid, (thermal.mount[0], thermal.mount[1]), thermal.hfov_deg)
            tmap = cell_map(grid, cfg.threshold)
            self.report.rows.append(MetricRow.from_confusion(fd.frame, "cells", confusion(tmap.labels, fd.cell_truth.labels)))
            self._write_map(tmap, f"frame_{fd.frame:03d}_cells")

    # --- Tables ---

    def _write_tables(self) -> None:
        if self.report.rows:
            # per-frame rows, then one aggregate footer row per (method, scope) tagged with AGGREGATE_FRAME
            rows = [*self.report.rows, *self.report.aggregates()]
            self._write(pd.DataFrame([r.model_dump() for r in rows]), "metrics.csv")
        if "radarstereo" in self.methods:
            columns = list(ObstacleRow.model_fields)
            self._write(pd.DataFrame([r.model_dump() for r in self.report.obstacles], columns=columns), "obstacles.csv")
        if "radar" in self.methods:
            rows = [r.model_dump(exclude={"closest"}) for r in self.report.radar]
            self._write(pd.DataFrame(rows, columns=["frame", "detections", "truths", "matched", "rms"]), "radar.csv")

    def run(self) -> RunReport:
        logger.info(f"Run: methods {sorted(self.methods)}, seed {self.seed}, {self.n_frames} frames -> {self.out_dir}")
        with self._stage("render"):
            frames = self.render_frames()
        for name in ("simulate", "ground", "fuse", "radar", "radarstereo", "cells"):
            if name in self.methods:
                with self._stage(name):
                    getattr(self, name)(frames)
        self._write_tables()
        logger.info(f"Run finished: {len(self.report.artifacts)} artifacts, timings {self.report.timings}")
        return self.report


def run(config: PipelineConfig, out_dir: Optional[Path] = None) -> RunReport:
    return PipelineRunner(config, out_dir).run()


# --- Evaluation ---

def evaluate_map_files(pred_path: str | Path, truth_path: str | Path) -> tuple[ConfusionMatrix, MetricReport]:
    """Scores a predicted map file against a truth map file of the same geometry."""
    pred = read_map_csv(pred_path, sensor="pred")
    truth = read_map_csv(truth_path, sensor="truth")
    if pred.geometry != truth.geometry:
        raise ParameterError(f"map geometries differ: {pred.geometry} vs {truth.geometry}")
    cm = confusion(pred.labels, truth.labels)
    return cm, metrics(cm)
