# tests/pipeline/test_main.py

import numpy as np
import pytest
from typer.testing import CliRunner

from perception.fuse import TraversabilityMap
from perception.labels import GridGeometry, Label
from pipeline.export import export_artifact
from pipeline.main import app

runner = CliRunner()

GRID = GridGeometry(origin_x=0.0, origin_y=0.0, cell_size=1.0, n_rows=10, n_cols=15)


def _write(tmp_path, name: str, labels: np.ndarray, geometry: GridGeometry = GRID):
    return export_artifact(TraversabilityMap.from_labels(geometry, labels), tmp_path / f"{name}.csv")


def test_eval_identical_maps(tmp_path):
    """Tests that a map scored against itself is fully accurate."""
    labels = np.where(np.arange(GRID.n_cells) % 3 == 0, Label.NON_GROUND, Label.GROUND).reshape(GRID.shape)
    path = _write(tmp_path, "truth", labels)
    result = runner.invoke(app, ["eval", str(path), str(path)])
    assert result.exit_code == 0, result.output
    assert "1.000" in result.output
    assert "fp=0" in result.output and "fn=0" in result.output


def test_eval_inverted_map(tmp_path):
    """Tests that a map with every label flipped scores zero accuracy."""
    truth = np.full(GRID.shape, Label.GROUND)
    pred = np.full(GRID.shape, Label.NON_GROUND)
    result = runner.invoke(app, ["eval", str(_write(tmp_path, "pred", pred)), str(_write(tmp_path, "truth", truth))])
    assert result.exit_code == 0, result.output
    assert "tp=0 fp=0 tn=0 fn=150 unknown=0" in result.output


def test_eval_reference_counts(tmp_path):
    """Tests the rates for 90 true Ground, 10 false Ground, 45 true NonGround and 5 missed Ground cells."""
    truth = np.array([Label.GROUND] * 90 + [Label.NON_GROUND] * 10 + [Label.NON_GROUND] * 45 + [Label.GROUND] * 5)
    pred = np.array([Label.GROUND] * 90 + [Label.GROUND] * 10 + [Label.NON_GROUND] * 45 + [Label.NON_GROUND] * 5)
    out = tmp_path / "eval"
    result = runner.invoke(app, [
        "eval",
        str(_write(tmp_path, "pred", pred.reshape(GRID.shape))),
        str(_write(tmp_path, "truth", truth.reshape(GRID.shape))),
        "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    assert "tp=90 fp=10 tn=45 fn=5 unknown=0" in result.output
    row = (out / "eval.csv").read_text().splitlines()
    assert row[0].startswith("tp,fp,tn,fn,unknown,precision,rejection_precision,recall")
    values = dict(zip(row[0].split(","), row[1].split(",")))
    assert float(values["precision"]) == pytest.approx(0.9)
    assert float(values["rejection_precision"]) == pytest.approx(0.9)
    assert float(values["recall"]) == pytest.approx(90 / 95)
    assert float(values["specificity"]) == pytest.approx(45 / 55)
    assert float(values["accuracy"]) == pytest.approx(0.9)


def test_eval_errors(tmp_path):
    """Tests exit code 1 for a missing file and for mismatched geometries."""
    path = _write(tmp_path, "a", np.full(GRID.shape, Label.GROUND))
    missing = runner.invoke(app, ["eval", str(path), str(tmp_path / "absent.csv")])
    assert missing.exit_code == 1

    other = GridGeometry(origin_x=0.0, origin_y=0.0, cell_size=1.0, n_rows=15, n_cols=10)
    b = _write(tmp_path, "b", np.full(other.shape, Label.GROUND), geometry=other)
    mismatch = runner.invoke(app, ["eval", str(path), str(b)])
    assert mismatch.exit_code == 1
    assert "geometries differ" in mismatch.output


def test_bad_config_exits_with_code_2(tmp_path):
    """Tests that a missing config file is a usage error."""
    result = runner.invoke(app, ["radar", "--config", str(tmp_path / "absent.toml")])
    assert result.exit_code == 2
    assert "config file not found" in result.output


def test_unknown_demo_method_exits_with_code_2():
    """Tests that the demo rejects an unknown method name."""
    result = runner.invoke(app, ["demo", "--method", "teleport"])
    assert result.exit_code == 2
    assert "teleport" in result.output


def test_radar_command_prints_summary(demo_config_path, tmp_path):
    """Tests a one-frame radar run through the command line."""
    result = runner.invoke(app, ["radar", "--config", str(demo_config_path), "--frames", "1", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "radar obstacles" in result.output
    assert (tmp_path / "radar.csv").is_file()


@pytest.mark.parametrize(
    "args, expected",
    [
        (["radar"], ["radar"]),
        (["radar", "--method", "cells"], ["radar", "cells"]),
        (["cells", "--method", "cells", "--method", "ground"], ["cells", "ground"]),
        (["simulate", "--method", "fuse"], ["simulate", "fuse"]),
        (["demo", "--method", "radar"], ["radar"]),
    ],
)
def test_method_flag_on_every_run_command(mocker, args, expected):
    """Tests that --method adds methods to any run command, and limits the demo."""
    execute = mocker.patch("pipeline.main._execute")
    result = runner.invoke(app, args)
    assert result.exit_code == 0, result.output
    assert execute.call_args.args[-1] == expected


def test_unknown_method_on_a_method_command_exits_with_code_2(mocker):
    """Tests that a method command also rejects an unknown --method name."""
    execute = mocker.patch("pipeline.main._execute")
    result = runner.invoke(app, ["ground", "--method", "teleport"])
    assert result.exit_code == 2
    assert "teleport" in result.output
    execute.assert_not_called()
