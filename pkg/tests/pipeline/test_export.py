# tests/pipeline/test_export.py

import numpy as np
import pandas as pd
import pytest
from PIL import Image

from common.errors import ParameterError
from perception.fuse import TraversabilityMap
from perception.labels import GridGeometry, Label
from pipeline.export import LABEL_COLORS, export_artifact, export_map, read_map_csv

GRID_2X2 = GridGeometry(origin_x=0.0, origin_y=0.0, cell_size=0.5, n_rows=2, n_cols=2)


def _map(labels, scores=None, threshold: float = 0.0, geometry: GridGeometry = GRID_2X2) -> TraversabilityMap:
    return TraversabilityMap.from_labels(geometry, np.asarray(labels), scores=scores, threshold=threshold)


def test_all_ground_map_is_green(tmp_path):
    """Tests that a 2x2 all-Ground map writes four Ground-coloured pixels."""
    path = export_artifact(_map(np.full((2, 2), Label.GROUND)), tmp_path / "map.ppm")
    with Image.open(path) as image:
        assert image.size == (2, 2)
        pixels = list(image.convert("RGB").getdata())
    assert pixels == [LABEL_COLORS[Label.GROUND]] * 4


def test_occluded_cell_colour_and_orientation(tmp_path):
    """Tests the occluded colour and that grid row 0 is the bottom image row."""
    labels = np.array([[Label.OCCLUDED, Label.GROUND], [Label.NON_GROUND, Label.UNKNOWN]])
    path = export_artifact(_map(labels), tmp_path / "map.ppm")
    with Image.open(path) as image:
        rgb = image.convert("RGB")
        assert rgb.getpixel((0, 1)) == LABEL_COLORS[Label.OCCLUDED]
        assert rgb.getpixel((1, 1)) == LABEL_COLORS[Label.GROUND]
        assert rgb.getpixel((0, 0)) == LABEL_COLORS[Label.NON_GROUND]
        assert rgb.getpixel((1, 0)) == LABEL_COLORS[Label.UNKNOWN]


def test_map_csv_reads_back_exactly(tmp_path):
    """Tests that labels, scores, geometry and threshold come back from the CSV table."""
    geometry = GridGeometry(origin_x=-1.3, origin_y=2.7, cell_size=0.4, n_rows=2, n_cols=3)
    labels = np.array([[1, 2, 0], [3, 1, 2]])
    scores = np.array([[0.1, 1.0 / 3.0, np.nan], [7e-12, 2.5, 1e6]])
    original = _map(labels, scores, threshold=0.7, geometry=geometry)

    png, csv = export_map(original, tmp_path / "maps" / "frame_000")
    assert png.name == "frame_000.ppm" and csv.name == "frame_000.csv"
    restored = read_map_csv(csv)

    assert restored.geometry == geometry
    assert restored.threshold == 0.7
    np.testing.assert_array_equal(restored.labels, labels)
    np.testing.assert_array_equal(restored.scores, scores)


def test_map_csv_is_deterministic(tmp_path):
    """Tests that the same map always produces the same bytes."""
    tmap = _map(np.array([[1, 2], [0, 1]]), np.array([[0.25, 3.0], [np.nan, 0.1]]))
    a = export_artifact(tmap, tmp_path / "a.csv").read_bytes()
    b = export_artifact(tmap, tmp_path / "b.csv").read_bytes()
    assert a == b
    assert a.splitlines()[0].startswith(b"# map origin_x=0 origin_y=0 cell_size=0.5 n_rows=2 n_cols=2")


def test_read_map_csv_errors(tmp_path):
    """Tests missing files, missing headers and out-of-grid cells."""
    with pytest.raises(FileNotFoundError):
        read_map_csv(tmp_path / "absent.csv")

    bare = tmp_path / "bare.csv"
    bare.write_text("row,col,label,score\n0,0,1,0.5\n")
    with pytest.raises(ParameterError, match="missing map header"):
        read_map_csv(bare)

    outside = tmp_path / "outside.csv"
    outside.write_text("# map origin_x=0 origin_y=0 cell_size=1 n_rows=1 n_cols=1\nrow,col,label,score\n0,3,1,0.5\n")
    with pytest.raises(ParameterError, match="outside"):
        read_map_csv(outside)


def test_tables_and_unknown_formats(tmp_path):
    """Tests data-frame export and the error for an unregistered object or suffix."""
    path = export_artifact(pd.DataFrame({"a": [1, 2], "b": [0.5, None]}), tmp_path / "nested" / "t.csv")
    assert path.read_text() == "a,b\n1,0.5\n2,\n"

    with pytest.raises(ParameterError, match="no exporter"):
        export_artifact("text", tmp_path / "x.txt")
    with pytest.raises(ParameterError, match="no exporter"):
        export_artifact(_map(np.ones((2, 2))), tmp_path / "map.png")
