# sim/scenarios.py
"""
Canned scenes: the drifting-terrain sequence, the two-sensor fusion benchmark,
the radar pole field, cell-classifier scenes (person in maize, overhang) and
the known-failure scenes (water, negative cliff, warm jacket).
"""

import math

import numpy as np

from common.rng import substream
from perception.labels import GridGeometry
from sim.scene import CropSpec, GroundSpec, ObstacleSpec, SceneSpec, WaterSpec
from sim.sensors import SurfaceScanParams

GRASS = (0.3, 0.5, 0.2)


def _extent(geometry: GridGeometry) -> tuple[float, float, float, float]:
    return geometry.origin_x, geometry.x_max, geometry.origin_y, geometry.y_max


def _patch_boxes(geometry: GridGeometry, cells: np.ndarray, size: float, height: float) -> list[ObstacleSpec]:
    """One box centred in each (row, col) cell."""
    cx, cy = geometry.centers()
    return [
        ObstacleSpec(kind="box", x=float(cx[r, c]), y=float(cy[r, c]), size_x=size, size_y=size, height=height)
        for r, c in cells
    ]


def _pick_cells(rng: np.random.Generator, geometry: GridGeometry, n: int, col_range: tuple[int, int]) -> np.ndarray:
    cols = np.arange(col_range[0], col_range[1])
    candidates = np.array([(r, c) for r in range(geometry.n_rows) for c in cols])
    return candidates[rng.choice(len(candidates), size=n, replace=False)]


# --- Self-learning ground sequence ---

DRIFT_GEOMETRY = GridGeometry(origin_x=2.0, origin_y=-4.0, cell_size=0.4, n_rows=20, n_cols=30)


def drift_sequence(
    n_frames: int = 50,
    seed: int = 0,
    final_offset: float = 0.5,
    final_slope: float = 0.02,
    boxes_per_frame: int = 8,
) -> list[SceneSpec]:
    """
    Rutted terrain whose height offset and slope ramp linearly over the
    sequence. Frame 0 is obstacle-free; later frames hold small boxes centred
    in random patches.
    """
    frames = []
    span = max(n_frames - 1, 1)
    for f in range(n_frames):
        ground = GroundSpec(
            kind="rutted",
            z0=final_offset * f / span,
            slope_x=final_slope * f / span,
            rut_amplitude=0.05,
            rut_wavelength=1.6,
        )
        boxes = []
        if f > 0:
            cells = _pick_cells(substream(seed, "drift", f), DRIFT_GEOMETRY, boxes_per_frame, (0, DRIFT_GEOMETRY.n_cols))
            boxes = _patch_boxes(DRIFT_GEOMETRY, cells, size=0.3, height=0.6)
        frames.append(SceneSpec(name=f"drift-{f}", ground=ground, obstacles=boxes, seed=seed + f))
    return frames


def drift_scan_params() -> SurfaceScanParams:
    return SurfaceScanParams(region=_extent(DRIFT_GEOMETRY), spacing=0.05, noise=0.02)


# --- Fusion benchmark ---

FUSION_GEOMETRY = GridGeometry(origin_x=3.0, origin_y=-6.0, cell_size=0.4, n_rows=30, n_cols=40)


def fusion_benchmark(seed: int, n_boxes: int = 12) -> tuple[SceneSpec, SceneSpec]:
    """(bootstrap scene, test scene) over the same rutted terrain; only the test scene holds boxes."""
    ground = GroundSpec(kind="rutted", rut_amplitude=0.05, rut_wavelength=1.6)
    cells = _pick_cells(substream(seed, "fusion", "boxes"), FUSION_GEOMETRY, n_boxes, (3, 33))
    bootstrap = SceneSpec(name=f"fusion-bootstrap-{seed}", ground=ground, seed=seed)
    test = SceneSpec(
        name=f"fusion-test-{seed}",
        ground=ground,
        obstacles=_patch_boxes(FUSION_GEOMETRY, cells, size=0.3, height=0.5),
        seed=seed + 1,
    )
    return bootstrap, test


def fusion_scan_params() -> tuple[SurfaceScanParams, SurfaceScanParams]:
    """(stereo, lidar): dense with error growing with range, vs sparse, accurate and capped at 17 m."""
    region = _extent(FUSION_GEOMETRY)
    stereo = SurfaceScanParams(region=region, spacing=0.05, min_range=2.0, max_range=30.0, noise=0.01, noise_growth=1e-4)
    lidar = SurfaceScanParams(region=region, spacing=0.1, min_range=0.5, max_range=17.0, noise=0.02)
    return stereo, lidar


# --- Radar pole field ---

def pole_field(
    seed: int,
    n_poles: int = 4,
    height: float = 3.0,
    radius: float = 0.15,
    ranges: tuple[float, float] = (8.0, 25.0),
    max_bearing_deg: float = 20.0,
    min_separation_deg: float = 4.0,
    reflectivity: float = 1.0,
) -> SceneSpec:
    """Flat ground with poles in front of the vehicle, separated in bearing so none hides another."""
    rng = substream(seed, "poles")
    bearings: list[float] = []
    while len(bearings) < n_poles:
        b = float(rng.uniform(-max_bearing_deg, max_bearing_deg))
        if all(abs(b - other) >= min_separation_deg for other in bearings):
            bearings.append(b)
    poles = []
    for b in bearings:
        r = float(rng.uniform(*ranges))
        poles.append(
            ObstacleSpec(
                kind="cylinder",
                x=r * math.cos(math.radians(b)),
                y=r * math.sin(math.radians(b)),
                radius=radius,
                height=height,
                reflectivity=reflectivity,
            )
        )
    return SceneSpec(name=f"poles-{seed}", obstacles=poles, seed=seed)


# --- Cell-classifier scenes ---

CELL_GEOMETRY = GridGeometry(origin_x=4.0, origin_y=-3.0, cell_size=0.6, n_rows=10, n_cols=10)
CENTRE_CELL = (5, 5)


def _cell_centre(cell: tuple[int, int] = CENTRE_CELL) -> tuple[float, float]:
    cx, cy = CELL_GEOMETRY.centers()
    return float(cx[cell]), float(cy[cell])


def grass_field(seed: int) -> SceneSpec:
    return SceneSpec(name=f"grass-{seed}", ground=GroundSpec(kind="flat", albedo=GRASS), seed=seed)


def person_in_maize(seed: int, with_person: bool = True) -> SceneSpec:
    """Maize over the whole cell grid, optionally with a person in the centre cell."""
    x, y = _cell_centre()
    x0, x1, y0, y1 = _extent(CELL_GEOMETRY)
    crop = CropSpec(x_min=x0 - 0.5, x_max=x1 + 0.5, y_min=y0 - 0.5, y_max=y1 + 0.5)
    obstacles = [ObstacleSpec(kind="person", x=x, y=y, radius=0.25, height=1.7)] if with_person else []
    return SceneSpec(name=f"maize-{seed}", ground=GroundSpec(albedo=GRASS), crops=[crop], obstacles=obstacles, seed=seed)


def overhang(elevation: float, seed: int = 0, thickness: float = 0.2) -> SceneSpec:
    """A 1.2 m slab over the four cells around the centre, `elevation` above the ground."""
    x, y = _cell_centre()
    slab = ObstacleSpec(
        kind="slab", x=x - 0.3, y=y - 0.3, size_x=1.2, size_y=1.2, height=thickness, elevation=elevation
    )
    return grass_field(seed).model_copy(update={"name": f"overhang-{elevation}", "obstacles": [slab]})


OVERHANG_CELLS = [(4, 4), (4, 5), (5, 4), (5, 5)]


# --- Known failures ---

def water_puddle(seed: int = 0) -> SceneSpec:
    """Still water, at ambient temperature, over the four centre cells."""
    x, y = _cell_centre()
    puddle = WaterSpec(x_min=x - 0.9, x_max=x + 0.3, y_min=y - 0.9, y_max=y + 0.3)
    return grass_field(seed).model_copy(update={"name": "water", "water": [puddle]})


def negative_cliff(seed: int = 0, drop: float = 2.0) -> SceneSpec:
    """Flat ground ending in a drop that starts in the middle of the centre column."""
    x, _ = _cell_centre()
    ground = GroundSpec(kind="cliff", cliff_x=x, cliff_drop=drop, cliff_width=0.2, albedo=GRASS)
    return SceneSpec(name="cliff", ground=ground, seed=seed)


def warm_jacket(seed: int = 0, temperature: float = 305.0) -> SceneSpec:
    """A thin, warm, harmless object lying in the centre cell."""
    x, y = _cell_centre()
    jacket = ObstacleSpec(
        kind="slab", x=x, y=y, size_x=0.5, size_y=0.5, height=0.03, temperature=temperature, albedo=(0.1, 0.1, 0.4)
    )
    return grass_field(seed).model_copy(update={"name": "jacket", "obstacles": [jacket]})
