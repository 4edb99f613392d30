# pipeline/export.py
"""
Artifact writers, looked up by (object type, file suffix). Every writer is
deterministic: the same object always produces the same bytes.
"""

import logging
import math
from pathlib import Path
from typing import Any, Optional, Protocol, Type

import numpy as np
import pandas as pd
from PIL import Image

from common.errors import ParameterError
from perception.cells import CellGrid
from perception.fuse import TraversabilityMap
from perception.geo3d import PointCloud, write_points
from perception.labels import GridGeometry, Label
from perception.radar import RadarImage, write_mask_pgm, write_radar_image

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

LABEL_COLORS: dict[int, tuple[int, int, int]] = {
    Label.UNKNOWN: (128, 128, 128),
    Label.GROUND: (0, 200, 0),
    Label.NON_GROUND: (220, 0, 0),
    Label.OCCLUDED: (128, 0, 160),
}

_MAP_HEADER = "# map"


# --- Exporter Protocol & Implementations ---

class Exporter(Protocol):
    """Writes one kind of object to one kind of file."""

    def write(self, obj: Any, path: Path) -> Path:
        ...


class MapImageExporter(Exporter):
    """One pixel per cell, +y rows at the top."""

    def write(self, obj: TraversabilityMap, path: Path) -> Path:
        labels = np.flipud(np.asarray(obj.labels, dtype=np.int8))
        rgb = np.zeros(labels.shape + (3,), dtype=np.uint8)
        for label, color in LABEL_COLORS.items():
            rgb[labels == label] = color
        Image.fromarray(rgb).save(path, format="PPM")
        return path


class MapTableExporter(Exporter):
    """
    `row, col, label, score`, one line per cell, after a comment line holding
    the grid geometry and threshold. NaN scores are written as empty fields.
    """

    def write(self, obj: TraversabilityMap, path: Path) -> Path:
        g = obj.geometry
        rows, cols = np.indices(g.shape)
        table = pd.DataFrame(
            {
                "row": rows.reshape(-1),
                "col": cols.reshape(-1),
                "label": np.asarray(obj.labels, dtype=np.int64).reshape(-1),
                "score": np.asarray(obj.scores, dtype=float).reshape(-1),
            }
        )
        header = (
            f"{_MAP_HEADER} origin_x={g.origin_x:.17g} origin_y={g.origin_y:.17g} cell_size={g.cell_size:.17g} "
            f"n_rows={g.n_rows} n_cols={g.n_cols} threshold={obj.threshold:.17g}\n"
        )
        with path.open("w", encoding="utf-8", newline="") as f:
            f.write(header)
            table.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return path


class MaskImageExporter(Exporter):
    def write(self, obj: np.ndarray, path: Path) -> Path:
        return write_mask_pgm(obj, path)


class PointCloudExporter(Exporter):
    def write(self, obj: PointCloud, path: Path) -> Path:
        return write_points(obj, path)


class RadarImageExporter(Exporter):
    def write(self, obj: RadarImage, path: Path) -> Path:
        return write_radar_image(obj, path)


class TableExporter(Exporter):
    def write(self, obj: pd.DataFrame, path: Path) -> Path:
        obj.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return path


# --- Registry ---

EXPORTERS: dict[tuple[Type, str], Exporter] = {
    (TraversabilityMap, ".ppm"): MapImageExporter(),
    (TraversabilityMap, ".csv"): MapTableExporter(),
    (np.ndarray, ".pgm"): MaskImageExporter(),
    (PointCloud, ".xyz"): PointCloudExporter(),
    (RadarImage, ".txt"): RadarImageExporter(),
    (pd.DataFrame, ".csv"): TableExporter(),
}


def get_exporter(obj: Any, path: Path) -> Exporter:
    exporter = EXPORTERS.get((type(obj), path.suffix.lower()))
    if exporter is None:
        raise ParameterError(f"no exporter for {type(obj).__name__} to '{path.suffix}' files")
    return exporter


def export_artifact(obj: Any, path: str | Path) -> Path:
    """Writes `obj` with the exporter registered for its type and the path's suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = get_exporter(obj, path).write(obj, path)
    logger.debug(f"wrote {written}")
    return written


def export_map(tmap: TraversabilityMap, stem: str | Path) -> tuple[Path, Path]:
    """The PPM image and the CSV table of a map, `stem` plus each suffix."""
    stem = Path(stem)
    return (
        export_artifact(tmap, stem.with_name(stem.name + ".ppm")),
        export_artifact(tmap, stem.with_name(stem.name + ".csv")),
    )


# --- Import ---

def _parse_header(line: str, path: Path) -> dict[str, str]:
    if not line.startswith(_MAP_HEADER):
        raise ParameterError(f"{path}: missing map header line")
    fields = dict(item.split("=", 1) for item in line[len(_MAP_HEADER):].split())
    missing = {"origin_x", "origin_y", "cell_size", "n_rows", "n_cols"} - fields.keys()
    if missing:
        raise ParameterError(f"{path}: map header lacks {sorted(missing)}")
    return fields


def read_map_csv(path: str | Path, sensor: str = "map") -> TraversabilityMap:
    """Inverse of the CSV map export; labels and scores come back exactly."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"map file not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        fields = _parse_header(f.readline().strip(), path)
        table = pd.read_csv(f, float_precision="round_trip")
    geometry = GridGeometry(
        origin_x=float(fields["origin_x"]),
        origin_y=float(fields["origin_y"]),
        cell_size=float(fields["cell_size"]),
        n_rows=int(fields["n_rows"]),
        n_cols=int(fields["n_cols"]),
    )
    labels = np.full(geometry.shape, Label.UNKNOWN, dtype=np.int8)
    scores = np.full(geometry.shape, np.nan)
    rows = table["row"].to_numpy(dtype=np.int64)
    cols = table["col"].to_numpy(dtype=np.int64)
    if np.any((rows < 0) | (rows >= geometry.n_rows) | (cols < 0) | (cols >= geometry.n_cols)):
        raise ParameterError(f"{path}: cell index outside the {geometry.n_rows}x{geometry.n_cols} grid")
    labels[rows, cols] = table["label"].to_numpy(dtype=np.int8)
    scores[rows, cols] = table["score"].to_numpy(dtype=float)
    threshold = float(fields.get("threshold", "0"))
    return TraversabilityMap(
        geometry=geometry,
        labels=labels,
        scores=scores,
        observed={sensor: labels != Label.UNKNOWN},
        threshold=0.0 if math.isnan(threshold) else threshold,
    )


def cell_map(grid: CellGrid, threshold: Optional[float] = None) -> TraversabilityMap:
    """A cell grid's labels and scores as a traversability map."""
    return TraversabilityMap(
        geometry=grid.geometry,
        labels=np.asarray(grid.labels, dtype=np.int8),
        scores=np.asarray(grid.scores, dtype=float),
        observed={"cells": grid.labels != Label.UNKNOWN},
        threshold=0.0 if threshold is None else threshold,
    )
