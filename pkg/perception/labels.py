# perception/labels.py

from enum import IntEnum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from common.errors import ParameterError


class Label(IntEnum):
    """Per-cell traversability label. GROUND is the Traversable class."""
    UNKNOWN = 0
    GROUND = 1
    NON_GROUND = 2
    OCCLUDED = 3  # NonGround by occlusion shadow


def as_binary(labels: np.ndarray) -> np.ndarray:
    """Collapses OCCLUDED into NON_GROUND, leaving other labels as they are."""
    out = np.asarray(labels, dtype=np.int8).copy()
    out[out == Label.OCCLUDED] = Label.NON_GROUND
    return out


def _edge_index(v: np.ndarray, origin: float, size: float) -> np.ndarray:
    idx = np.floor((v - origin) / size)
    # division can land just below an exact edge (1.2 / 0.4 -> 2.999...)
    idx = idx + (origin + (idx + 1) * size <= v)
    return np.nan_to_num(idx, nan=-1.0, posinf=-1.0, neginf=-1.0).astype(np.int64)


class GridGeometry(BaseModel):
    """
    Horizontal grid shared by patch grids, traversability maps, cell grids and
    the Cartesian radar grid. Rows index y, columns index x.
    """
    model_config = ConfigDict(frozen=True)

    origin_x: float = Field(description="x of the grid's lower-left corner, m")
    origin_y: float = Field(description="y of the grid's lower-left corner, m")
    cell_size: float = Field(gt=0, description="Square cell edge, m")
    n_rows: int = Field(ge=1, description="Cells along y")
    n_cols: int = Field(ge=1, description="Cells along x")

    @classmethod
    def checked(cls, origin: tuple[float, float], cell_size: float, n_rows: int, n_cols: int) -> "GridGeometry":
        """Builds a geometry, raising ParameterError instead of a validation error."""
        if not cell_size > 0:
            raise ParameterError(f"cell size must be > 0, got {cell_size}")
        if n_rows < 1 or n_cols < 1:
            raise ParameterError(f"grid needs n_rows, n_cols >= 1, got {n_rows}x{n_cols}")
        return cls(origin_x=origin[0], origin_y=origin[1], cell_size=cell_size, n_rows=n_rows, n_cols=n_cols)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def x_max(self) -> float:
        return self.origin_x + self.n_cols * self.cell_size

    @property
    def y_max(self) -> float:
        return self.origin_y + self.n_rows * self.cell_size

    def locate(self, x, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Returns (row, col, inside) for each (x, y). Points on a cell edge fall
        in the higher-index cell; points on the far grid edge are outside.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        col = _edge_index(x, self.origin_x, self.cell_size)
        row = _edge_index(y, self.origin_y, self.cell_size)
        inside = (col >= 0) & (col < self.n_cols) & (row >= 0) & (row < self.n_rows)
        return row, col, inside

    def flat_index(self, row, col) -> np.ndarray:
        return np.asarray(row) * self.n_cols + np.asarray(col)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates as two (n_rows, n_cols) arrays (x, y)."""
        xs = self.origin_x + (np.arange(self.n_cols) + 0.5) * self.cell_size
        ys = self.origin_y + (np.arange(self.n_rows) + 0.5) * self.cell_size
        cx, cy = np.meshgrid(xs, ys)
        return cx, cy

    def cell_bounds(self, row: int, col: int) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) of one cell."""
        x0 = self.origin_x + col * self.cell_size
        y0 = self.origin_y + row * self.cell_size
        return x0, y0, x0 + self.cell_size, y0 + self.cell_size
