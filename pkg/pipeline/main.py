# pipeline/main.py
"""Command-line entry point: one subcommand per method, plus simulate, eval and demo."""

import logging
from pathlib import Path
from typing import Optional

import pandas as pd
import typer

from common.config import PROJECT_ROOT, settings
from common.errors import ConfigurationError, PerceptionError
from perception.fuse import MetricReport
from pipeline.config import ALL_METHODS, DEFAULT_METHODS, load_pipeline_config
from pipeline.export import export_artifact
from pipeline.runner import METRIC_FIELDS, RunReport, evaluate_map_files, run

logger = logging.getLogger(__name__)

DEMO_CONFIG = PROJECT_ROOT / "configs" / "demo.toml"

app = typer.Typer(help="Multi-sensor traversability toolkit.", no_args_is_help=True, add_completion=False)

ConfigOption = typer.Option(DEMO_CONFIG, "--config", help="Pipeline config (TOML).")
SeedOption = typer.Option(None, "--seed", min=0, help="Overrides [run].seed.")
OutOption = typer.Option(None, "--out", help="Output directory, overrides [run].out_dir.")
FramesOption = typer.Option(None, "--frames", min=1, help="Overrides [run].frames.")
MethodOption = typer.Option(None, "--method", help="Extra methods to run alongside the command's own; repeatable.")


@app.callback()
def main() -> None:
    logging.basicConfig(
        level=settings.LOG_LEVEL.upper(),
        format="%(levelname)-8s %(name)s:%(lineno)d - %(message)s",
    )


def metric_table(reports: dict[str, MetricReport]) -> str:
    """Methods as rows, rates as columns; undefined rates print as n/a."""
    table = pd.DataFrame(
        [[getattr(r, f) for f in METRIC_FIELDS] for r in reports.values()],
        index=list(reports),
        columns=["P", "RP", "Recall", "Specificity", "Accuracy", "F1"],
        dtype=float,
    )
    return table.to_string(float_format=lambda v: f"{v:.3f}", na_rep="n/a")


def _summary(report: RunReport) -> str:
    reports = {
        (row.method if row.scope == "all" else f"{row.method} ({row.scope})"): row.report()
        for row in report.aggregates()
    }
    return metric_table(reports) if reports else "no metrics"


def _methods(own: list[str], extra: Optional[list[str]]) -> list[str]:
    """The command's own methods followed by any --method additions; unknown names exit with code 2."""
    methods = list(own)
    for name in extra or []:
        if name not in ALL_METHODS:
            typer.echo(f"error: unknown method '{name}'; choose from {list(ALL_METHODS)}", err=True)
            raise typer.Exit(code=2)
        if name not in methods:
            methods.append(name)
    return methods


def _execute(config_path: Path, seed: Optional[int], out: Optional[Path], frames: Optional[int],
             methods: list[str]) -> None:
    try:
        config = load_pipeline_config(config_path, seed=seed, out=out, frames=frames, methods=methods)
    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}", exc_info=True)
        typer.echo(f"error: {e.message}", err=True)
        raise typer.Exit(code=2)
    try:
        report = run(config)
    except PerceptionError as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(code=1)
    typer.echo(_summary(report))
    for row in report.radar:
        rms = "n/a" if row.rms is None else f"{row.rms:.3f} m"
        typer.echo(f"frame {row.frame}: {row.detections} radar obstacles, {row.matched}/{row.truths} matched, rms {rms}")


@app.command()
def simulate(config: Path = ConfigOption, seed: Optional[int] = SeedOption, out: Optional[Path] = OutOption,
             frames: Optional[int] = FramesOption, method: Optional[list[str]] = MethodOption) -> None:
    """Render every sensor and write the raw point clouds, radar images and truth maps."""
    _execute(config, seed, out, frames, _methods(["simulate"], method))


@app.command()
def ground(config: Path = ConfigOption, seed: Optional[int] = SeedOption, out: Optional[Path] = OutOption,
           frames: Optional[int] = FramesOption, method: Optional[list[str]] = MethodOption) -> None:
    """Self-learning ground classification over the frame sequence."""
    _execute(config, seed, out, frames, _methods(["ground"], method))


@app.command()
def fuse(config: Path = ConfigOption, seed: Optional[int] = SeedOption, out: Optional[Path] = OutOption,
         frames: Optional[int] = FramesOption, method: Optional[list[str]] = MethodOption) -> None:
    """LIDAR and stereo ground maps, fused."""
    _execute(config, seed, out, frames, _methods(["fuse"], method))


@app.command()
def radar(config: Path = ConfigOption, seed: Optional[int] = SeedOption, out: Optional[Path] = OutOption,
          frames: Optional[int] = FramesOption, method: Optional[list[str]] = MethodOption) -> None:
    """Radar CFAR obstacle detection."""
    _execute(config, seed, out, frames, _methods(["radar"], method))


@app.command()
def radarstereo(config: Path = ConfigOption, seed: Optional[int] = SeedOption, out: Optional[Path] = OutOption,
                frames: Optional[int] = FramesOption, method: Optional[list[str]] = MethodOption) -> None:
    """Radar obstacles measured in the stereo cloud."""
    _execute(config, seed, out, frames, _methods(["radarstereo"], method))


@app.command()
def cells(config: Path = ConfigOption, seed: Optional[int] = SeedOption, out: Optional[Path] = OutOption,
          frames: Optional[int] = FramesOption, method: Optional[list[str]] = MethodOption) -> None:
    """Cell classification against a library learned from driven cells."""
    _execute(config, seed, out, frames, _methods(["cells"], method))


@app.command()
def demo(
    config: Path = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    frames: Optional[int] = FramesOption,
    method: Optional[list[str]] = typer.Option(None, "--method", help="Limit the demo to these methods; repeatable."),
) -> None:
    """Every method end to end on the bundled demo scene."""
    methods = _methods([], method) if method else list(DEFAULT_METHODS)
    _execute(config, seed, out, frames, methods)


@app.command("eval")
def evaluate(
    pred: Path = typer.Argument(..., help="Predicted map CSV."),
    truth: Path = typer.Argument(..., help="Truth map CSV."),
    out: Optional[Path] = OutOption,
) -> None:
    """Metrics of a predicted map against a truth map."""
    try:
        cm, report = evaluate_map_files(pred, truth)
    except (PerceptionError, FileNotFoundError) as e:
        logger.error(f"Evaluation failed: {e}", exc_info=True)
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(code=1)
    typer.echo(metric_table({"map": report}))
    typer.echo(f"tp={cm.tp} fp={cm.fp} tn={cm.tn} fn={cm.fn} unknown={cm.unknown}")
    if out is not None:
        row = {**cm.model_dump(), **report.model_dump()}
        export_artifact(pd.DataFrame([row]), Path(out) / "eval.csv")


if __name__ == "__main__":
    app()
