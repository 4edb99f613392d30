# sim/scene.py
"""
Analytic synthetic scenes: a height-field ground, parametric obstacles, crop
canopies and water regions, with point queries and vectorized ray casting.
"""

import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import IntEnum
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from common.errors import ConfigurationError, ParameterError
from common.rng import substream

logger = logging.getLogger(__name__)

DEFAULT_AMBIENT = 288.0
PERSON_TEMPERATURE = 310.0
_T_EPS = 1e-9
_BISECT_STEPS = 48
_CANOPY_DRAWS = 16

RGB = tuple[float, float, float]


# --- Scene Spec ---

class GroundSpec(BaseModel):
    """
    flat: z0. sloped: z0 + slope_x*x + slope_y*y. rutted: sloped plus a
    sinusoid across y. cliff: sloped with a smooth drop of cliff_drop starting
    at x = cliff_x over cliff_width.
    """
    kind: Literal["flat", "sloped", "rutted", "cliff"] = "flat"
    z0: float = 0.0
    slope_x: float = 0.0
    slope_y: float = 0.0
    rut_amplitude: float = Field(default=0.05, ge=0)
    rut_wavelength: float = Field(default=1.6, gt=0)
    cliff_x: float = 10.0
    cliff_drop: float = Field(default=2.0, ge=0)
    cliff_width: float = Field(default=0.2, gt=0)
    albedo: RGB = (0.45, 0.38, 0.25)
    temperature: Optional[float] = Field(default=None, gt=0)


class ObstacleSpec(BaseModel):
    """
    Box and slab footprints are axis-aligned size_x x size_y rectangles;
    cylinder and person footprints are discs of `radius`. The body spans
    `height` upward from `elevation` above the ground at its centre.
    """
    kind: Literal["box", "cylinder", "person", "slab"] = "box"
    x: float
    y: float
    size_x: float = Field(default=1.0, gt=0)
    size_y: float = Field(default=1.0, gt=0)
    radius: float = Field(default=0.15, gt=0)
    height: float = Field(default=1.0, gt=0)
    elevation: float = Field(default=0.0, ge=0)
    reflectivity: float = Field(default=1.0, gt=0)
    temperature: Optional[float] = Field(default=None, gt=0)
    albedo: RGB = (0.35, 0.3, 0.3)

    @property
    def round(self) -> bool:
        return self.kind in ("cylinder", "person")

    def footprint(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) of the footprint's bounding rectangle."""
        hx = self.radius if self.round else self.size_x / 2
        hy = self.radius if self.round else self.size_y / 2
        return self.x - hx, self.y - hy, self.x + hx, self.y + hy


class CropSpec(BaseModel):
    """Tall vegetation over a rectangle; canopy tops vary per `tile` square."""
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    height: float = Field(default=2.0, gt=0)
    height_std: float = Field(default=0.1, ge=0)
    tile: float = Field(default=0.5, gt=0)
    mean_free_path: float = Field(default=0.3, gt=0, description="Canopy penetration depth for ray hits, m")
    albedo: RGB = (0.25, 0.5, 0.15)
    temperature: Optional[float] = Field(default=None, gt=0)


class WaterSpec(BaseModel):
    """Ground-level water surface; dark and a weak return for active sensors."""
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    albedo: RGB = (0.1, 0.12, 0.15)
    temperature: Optional[float] = Field(default=None, gt=0)


class SceneSpec(BaseModel):
    name: str = "scene"
    bounds: tuple[float, float, float, float] = Field(
        default=(-5.0, 110.0, -60.0, 60.0), description="(x_min, x_max, y_min, y_max)"
    )
    ground: GroundSpec = Field(default_factory=GroundSpec)
    obstacles: list[ObstacleSpec] = Field(default_factory=list)
    crops: list[CropSpec] = Field(default_factory=list)
    water: list[WaterSpec] = Field(default_factory=list)
    ambient_temperature: float = Field(default=DEFAULT_AMBIENT, gt=0)
    seed: int = Field(default=0, ge=0)


def load_scene_spec(path: str | Path) -> SceneSpec:
    """Reads a TOML scene file ([ground], [[obstacles]], [[crops]], [[water]])."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"scene file not found: {path}")
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
        return SceneSpec(**data)
    except (tomllib.TOMLDecodeError, ValidationError) as e:
        raise ConfigurationError(f"invalid scene file {path}: {e}") from e


# --- Scene ---

class Surface(IntEnum):
    NONE = 0
    GROUND = 1
    WATER = 2
    OBSTACLE = 3
    CROP = 4


class RayHits(BaseModel):
    """Nearest hit per ray; `t` is inf and `surface` NONE where nothing was hit."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    t: np.ndarray
    surface: np.ndarray
    index: np.ndarray = Field(description="Obstacle / crop / water index, -1 for ground")

    @property
    def hit(self) -> np.ndarray:
        return self.surface != Surface.NONE


def _slab_interval(o: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Entry / exit parameters of rays o + t*d through an axis-aligned box."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    return np.max(np.fmin(t1, t2), axis=1), np.min(np.fmax(t1, t2), axis=1)


class Scene:
    """
    Immutable analytic scene built by generate_scene. All queries take
    broadcastable arrays.
    """

    def __init__(self, spec: SceneSpec, canopy_tops: list[np.ndarray]):
        self.spec = spec
        self.canopy_tops = canopy_tops
        self.obstacle_base = np.array(
            [float(self.height(o.x, o.y)) + o.elevation for o in spec.obstacles], dtype=float
        )

    # --- terrain ---

    @property
    def planar(self) -> bool:
        return self.spec.ground.kind in ("flat", "sloped")

    def height(self, x, y) -> np.ndarray:
        g = self.spec.ground
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = np.full(np.broadcast(x, y).shape, g.z0)
        if g.kind == "flat":
            return z
        z = z + g.slope_x * x + g.slope_y * y
        if g.kind == "rutted":
            z = z + g.rut_amplitude * np.sin(2 * math.pi * y / g.rut_wavelength)
        elif g.kind == "cliff":
            t = np.clip((x - g.cliff_x) / g.cliff_width, 0.0, 1.0)
            z = z - g.cliff_drop * (3 * t ** 2 - 2 * t ** 3)
        return z

    def gradient(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        g = self.spec.ground
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        gx = np.zeros(shape)
        gy = np.zeros(shape)
        if g.kind == "flat":
            return gx, gy
        gx = gx + g.slope_x
        gy = gy + g.slope_y
        if g.kind == "rutted":
            k = 2 * math.pi / g.rut_wavelength
            gy = gy + g.rut_amplitude * k * np.cos(k * y)
        elif g.kind == "cliff":
            t = np.clip((x - g.cliff_x) / g.cliff_width, 0.0, 1.0)
            gx = gx - g.cliff_drop * (6 * t - 6 * t ** 2) / g.cliff_width
        return gx, gy

    def slope(self, x, y) -> np.ndarray:
        gx, gy = self.gradient(x, y)
        return np.hypot(gx, gy)

    # --- volumes ---

    def obstacle_extent(self, i: int) -> tuple[float, float]:
        """(bottom, top) z of obstacle i."""
        base = float(self.obstacle_base[i])
        return base, base + self.spec.obstacles[i].height

    def _obstacle_distance(self, i: int, x, y, z) -> np.ndarray:
        o = self.spec.obstacles[i]
        z_lo, z_hi = self.obstacle_extent(i)
        dz = np.maximum.reduce([z_lo - z, np.zeros_like(z), z - z_hi])
        if o.round:
            dr = np.maximum(np.hypot(x - o.x, y - o.y) - o.radius, 0.0)
            return np.hypot(dr, dz)
        x0, y0, x1, y1 = o.footprint()
        dx = np.maximum.reduce([x0 - x, np.zeros_like(x), x - x1])
        dy = np.maximum.reduce([y0 - y, np.zeros_like(y), y - y1])
        return np.sqrt(dx ** 2 + dy ** 2 + dz ** 2)

    def occupancy(self, x, y, z) -> np.ndarray:
        """True inside (or on) any obstacle body."""
        x, y, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, z)))
        out = np.zeros(x.shape, dtype=bool)
        for i in range(len(self.spec.obstacles)):
            out |= self._obstacle_distance(i, x, y, z) <= 0.0
        return out

    def in_crop(self, j: int, x, y) -> np.ndarray:
        c = self.spec.crops[j]
        return (x >= c.x_min) & (x <= c.x_max) & (y >= c.y_min) & (y <= c.y_max)

    def canopy_top(self, j: int, x, y) -> np.ndarray:
        """Canopy height above ground for crop j at (x, y)."""
        c = self.spec.crops[j]
        tops = self.canopy_tops[j]
        ix = np.clip(np.floor((np.asarray(x) - c.x_min) / c.tile).astype(np.int64), 0, tops.shape[1] - 1)
        iy = np.clip(np.floor((np.asarray(y) - c.y_min) / c.tile).astype(np.int64), 0, tops.shape[0] - 1)
        return tops[iy, ix]

    def in_water(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.full(np.broadcast(x, y).shape, -1, dtype=np.int64)
        for k, w in enumerate(self.spec.water):
            out[(x >= w.x_min) & (x <= w.x_max) & (y >= w.y_min) & (y <= w.y_max)] = k
        return out

    # --- materials ---

    def material(self, x, y, z, tol: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
        """(Surface, index) of the surface nearest each point; obstacles win over crops, crops over ground."""
        x, y, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, z)))
        surface = np.full(x.shape, Surface.GROUND, dtype=np.int8)
        index = np.full(x.shape, -1, dtype=np.int64)
        ground = self.height(x, y)
        water = self.in_water(x, y)
        wet = (water >= 0) & (np.abs(z - ground) <= tol)
        surface[wet] = Surface.WATER
        index[wet] = water[wet]
        for j in range(len(self.spec.crops)):
            inside = self.in_crop(j, x, y)
            if not inside.any():
                continue
            canopy = inside & (z >= ground - tol) & (z <= ground + self.canopy_top(j, x, y) + tol)
            surface[canopy] = Surface.CROP
            index[canopy] = j
        for i in range(len(self.spec.obstacles)):
            near = self._obstacle_distance(i, x, y, z) <= tol
            surface[near] = Surface.OBSTACLE
            index[near] = i
        return surface, index

    def surface_temperature(self, surface: np.ndarray, index: np.ndarray) -> np.ndarray:
        spec = self.spec
        amb = spec.ambient_temperature
        out = np.full(surface.shape, spec.ground.temperature or amb)
        for k, w in enumerate(spec.water):
            out[(surface == Surface.WATER) & (index == k)] = w.temperature or amb
        for j, c in enumerate(spec.crops):
            out[(surface == Surface.CROP) & (index == j)] = c.temperature or amb
        for i, o in enumerate(spec.obstacles):
            default = PERSON_TEMPERATURE if o.kind == "person" else amb
            out[(surface == Surface.OBSTACLE) & (index == i)] = o.temperature or default
        return out

    def surface_albedo(self, surface: np.ndarray, index: np.ndarray) -> np.ndarray:
        spec = self.spec
        out = np.tile(np.asarray(spec.ground.albedo, dtype=float), (surface.size, 1)).reshape(surface.shape + (3,))
        for k, w in enumerate(spec.water):
            out[(surface == Surface.WATER) & (index == k)] = w.albedo
        for j, c in enumerate(spec.crops):
            out[(surface == Surface.CROP) & (index == j)] = c.albedo
        for i, o in enumerate(spec.obstacles):
            out[(surface == Surface.OBSTACLE) & (index == i)] = o.albedo
        return out

    def temperature(self, x, y, z, tol: float = 0.1) -> np.ndarray:
        return self.surface_temperature(*self.material(x, y, z, tol))

    # --- ray casting ---

    def _terrain_hit(self, o: np.ndarray, d: np.ndarray, t_max: np.ndarray, step: float) -> np.ndarray:
        g = self.spec.ground
        if self.planar:
            sx, sy = (0.0, 0.0) if g.kind == "flat" else (g.slope_x, g.slope_y)
            den = d[:, 2] - sx * d[:, 0] - sy * d[:, 1]
            num = g.z0 + sx * o[0] + sy * o[1] - o[2]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = num / den
            ok = (den < 0) & (t > _T_EPS) & (t <= t_max)
            return np.where(ok, t, np.inf)

        def above(idx, t):
            p = o + t[:, None] * d[idx]
            return p[:, 2] - self.height(p[:, 0], p[:, 1])

        n = d.shape[0]
        t_hit = np.full(n, np.inf)
        lo = np.full(n, _T_EPS)
        active = above(np.arange(n), lo) > 0
        n_steps = int(math.ceil(float(np.max(t_max, initial=0.0)) / step))
        for k in range(1, n_steps + 1):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            hi = np.minimum(k * step, t_max[idx])
            crossed = above(idx, hi) <= 0
            if crossed.any():
                ci = idx[crossed]
                a = lo[ci]
                b = hi[crossed]
                for _ in range(_BISECT_STEPS):
                    m = 0.5 * (a + b)
                    below = above(ci, m) <= 0
                    b = np.where(below, m, b)
                    a = np.where(below, a, m)
                t_hit[ci] = b
                active[ci] = False
            lo[idx] = hi
            active[idx[hi >= t_max[idx]]] = False
        return t_hit

    def _obstacle_hit(self, i: int, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        ob = self.spec.obstacles[i]
        z_lo, z_hi = self.obstacle_extent(i)
        if not ob.round:
            x0, y0, x1, y1 = ob.footprint()
            t_in, t_out = _slab_interval(o, d, np.array([x0, y0, z_lo]), np.array([x1, y1, z_hi]))
            ok = (t_in <= t_out) & (t_in > _T_EPS)
            return np.where(ok, t_in, np.inf)

        best = np.full(d.shape[0], np.inf)
        ox, oy = o[0] - ob.x, o[1] - ob.y
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2 * (ox * d[:, 0] + oy * d[:, 1])
        c = ox ** 2 + oy ** 2 - ob.radius ** 2
        disc = b ** 2 - 4 * a * c
        with np.errstate(divide="ignore", invalid="ignore"):
            t_side = (-b - np.sqrt(disc)) / (2 * a)
        z_side = o[2] + t_side * d[:, 2]
        side = (a > 0) & (disc >= 0) & (t_side > _T_EPS) & (z_side >= z_lo) & (z_side <= z_hi)
        best = np.where(side, t_side, best)
        for z_cap, facing in ((z_hi, d[:, 2] < 0), (z_lo, d[:, 2] > 0)):
            with np.errstate(divide="ignore", invalid="ignore"):
                t_cap = (z_cap - o[2]) / d[:, 2]
            r2 = (ox + t_cap * d[:, 0]) ** 2 + (oy + t_cap * d[:, 1]) ** 2
            cap = facing & (t_cap > _T_EPS) & (r2 <= ob.radius ** 2)
            best = np.where(cap & (t_cap < best), t_cap, best)
        return best

    def _canopy_hit(self, j: int, o: np.ndarray, d: np.ndarray, t_limit: np.ndarray, rng) -> np.ndarray:
        c = self.spec.crops[j]
        big = 1e9
        t_in, t_out = _slab_interval(o, d, np.array([c.x_min, c.y_min, -big]), np.array([c.x_max, c.y_max, big]))
        t_in = np.maximum(t_in, _T_EPS)
        t_end = np.minimum(t_out, t_limit)
        idx = np.flatnonzero(t_in < t_end)
        out = np.full(d.shape[0], np.inf)
        if idx.size == 0:
            return out
        tc = t_in[idx, None] + np.cumsum(rng.exponential(c.mean_free_path, (idx.size, _CANOPY_DRAWS)), axis=1)
        p = o + tc[..., None] * d[idx, None, :]
        ground = self.height(p[..., 0], p[..., 1])
        top = ground + self.canopy_top(j, p[..., 0], p[..., 1])
        ok = (tc < t_end[idx, None]) & (p[..., 2] >= ground) & (p[..., 2] <= top)
        has = ok.any(axis=1)
        first = np.argmax(ok, axis=1)
        out[idx[has]] = tc[has, first[has]]
        return out

    def raycast(
        self,
        origin,
        directions: np.ndarray,
        t_max,
        rng: Optional[np.random.Generator] = None,
        march_step: float = 0.2,
    ) -> RayHits:
        """
        Nearest surface along origin + t*direction for t in (0, t_max]. Crop
        canopies are only hit when an `rng` is given (stochastic penetration).
        """
        o = np.asarray(origin, dtype=float).reshape(3)
        d = np.asarray(directions, dtype=float).reshape(-1, 3)
        n = d.shape[0]
        t_max = np.broadcast_to(np.asarray(t_max, dtype=float), (n,)).copy()

        t = self._terrain_hit(o, d, t_max, march_step)
        surface = np.where(np.isfinite(t), Surface.GROUND, Surface.NONE).astype(np.int8)
        index = np.full(n, -1, dtype=np.int64)
        for i in range(len(self.spec.obstacles)):
            t_i = self._obstacle_hit(i, o, d)
            closer = (t_i < t) & (t_i <= t_max)
            t = np.where(closer, t_i, t)
            surface[closer] = Surface.OBSTACLE
            index[closer] = i
        if rng is not None:
            for j in range(len(self.spec.crops)):
                t_j = self._canopy_hit(j, o, d, np.minimum(t, t_max), rng)
                closer = t_j < t
                t = np.where(closer, t_j, t)
                surface[closer] = Surface.CROP
                index[closer] = j

        on_ground = surface == Surface.GROUND
        if self.spec.water and on_ground.any():
            p = o + t[on_ground, None] * d[on_ground]
            water = self.in_water(p[:, 0], p[:, 1])
            gi = np.flatnonzero(on_ground)
            wet = water >= 0
            surface[gi[wet]] = Surface.WATER
            index[gi[wet]] = water[wet]
        return RayHits(t=t, surface=surface, index=index)

    def line_of_sight(self, origin, points: np.ndarray, samples: int = 64) -> np.ndarray:
        """True where the straight segment from origin to each point stays above the terrain."""
        o = np.asarray(origin, dtype=float).reshape(3)
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        s = (np.arange(1, samples) / samples)[None, :, None]
        seg = o + s * (p[:, None, :] - o)
        clearance = seg[..., 2] - self.height(seg[..., 0], seg[..., 1])
        return np.all(clearance >= -1e-9, axis=1)


def generate_scene(spec: SceneSpec) -> Scene:
    """Validates placement and draws the crop canopy tops from the scene seed."""
    x_min, x_max, y_min, y_max = spec.bounds
    if not (x_min < x_max and y_min < y_max):
        raise ParameterError(f"degenerate scene bounds {spec.bounds}")
    for k, o in enumerate(spec.obstacles):
        fx0, fy0, fx1, fy1 = o.footprint()
        if fx0 < x_min or fx1 > x_max or fy0 < y_min or fy1 > y_max:
            raise ParameterError(f"obstacle {k} ({o.kind} at {o.x}, {o.y}) lies outside the scene bounds")
    tops = []
    for j, c in enumerate(spec.crops):
        if not (c.x_min < c.x_max and c.y_min < c.y_max):
            raise ParameterError(f"crop region {j} is empty")
        nx = max(1, math.ceil((c.x_max - c.x_min) / c.tile))
        ny = max(1, math.ceil((c.y_max - c.y_min) / c.tile))
        rng = substream(spec.seed, "crop", j)
        tops.append(np.clip(rng.normal(c.height, c.height_std, (ny, nx)), 0.1 * c.height, None))
    logger.debug(
        f"scene '{spec.name}': {spec.ground.kind} ground, {len(spec.obstacles)} obstacles, "
        f"{len(spec.crops)} crops, {len(spec.water)} water regions"
    )
    return Scene(spec, tops)
