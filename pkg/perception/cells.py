# perception/cells.py
"""
Cell classifier over (chroma r', chroma g', height, temperature) samples:
HDR exposure fusion, per-cell Gaussian mixtures fitted by EM, Bhattacharyya
scoring against a library of traversable terrain, and occlusion shadows.
"""

import logging
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg
from scipy.special import logsumexp

from common.errors import (
    ConfigurationError,
    EmptyCellError,
    InsufficientTrainingError,
    NumericError,
    ParameterError,
)
from perception.geo3d import Plane, PointCloud
from perception.labels import GridGeometry, Label

logger = logging.getLogger(__name__)

SAMPLE_FEATURES = ("chroma_r", "chroma_g", "height", "temperature")
SAMPLE_DIM = len(SAMPLE_FEATURES)
SATURATION_LEVEL = 0.99
EM_EPSILON = 1e-6
DEFAULT_THRESHOLD = 0.25
DEFAULT_MIN_SAMPLES = 20
DEDUP_DISTANCE = 0.05
DEFAULT_CELL_SIZE = 0.6


# --- Domain Types ---

class ExposureStack(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    images: list[np.ndarray] = Field(description="Intensity grids in [0,1], identical shapes")
    times: list[float] = Field(description="Exposure times, strictly increasing, s")


class CellSample(BaseModel):
    chroma: tuple[float, float]
    height: float
    temperature: float = Field(gt=0)

    def vector(self) -> np.ndarray:
        return np.array([self.chroma[0], self.chroma[1], self.height, self.temperature], dtype=float)


class GaussianComponent(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weight: float = Field(gt=0, le=1)
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


class GaussianMixture(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    components: list[GaussianComponent]
    log_likelihoods: tuple[float, ...] = Field(default=(), description="Per EM iteration, fitting axes only")
    converged: bool = True

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim


class FeatureWeights(BaseModel):
    """Per-feature weights; chroma weight covers both chroma axes."""
    model_config = ConfigDict(frozen=True)

    w_chroma: float = Field(default=0.0, ge=0)
    w_height: float = Field(default=1.0, ge=0)
    w_temp: float = Field(default=1.0, ge=0)

    def axis_weights(self) -> np.ndarray:
        w = np.array([self.w_chroma, self.w_chroma, self.w_height, self.w_temp], dtype=float)
        if not np.any(w > 0):
            raise ParameterError("feature weights must not all be zero")
        return w

    def active_axes(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.axis_weights() > 0))


class CellGrid(BaseModel):
    """Samples are stored flat with the flat cell index of each row."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    geometry: GridGeometry
    samples: np.ndarray = Field(description="(N, 4) rows of SAMPLE_FEATURES")
    sample_cell: np.ndarray = Field(description="(N,) flat cell index per sample")
    labels: np.ndarray = Field(description="(n_rows, n_cols) int8 Label values")
    scores: np.ndarray = Field(description="(n_rows, n_cols) float, NaN when unscored")
    mixtures: dict[int, GaussianMixture] = Field(default_factory=dict)

    @classmethod
    def empty(cls, geometry: GridGeometry) -> "CellGrid":
        return cls(
            geometry=geometry,
            samples=np.zeros((0, SAMPLE_DIM)),
            sample_cell=np.zeros(0, dtype=np.int64),
            labels=np.zeros(geometry.shape, dtype=np.int8),
            scores=np.full(geometry.shape, np.nan),
        )

    def counts(self) -> np.ndarray:
        return np.bincount(self.sample_cell, minlength=self.geometry.n_cells).reshape(self.geometry.shape)

    def cell_samples(self, flat: int) -> np.ndarray:
        return self.samples[self.sample_cell == flat]

    def grouped(self) -> dict[int, np.ndarray]:
        order = np.argsort(self.sample_cell, kind="stable")
        cells = self.sample_cell[order]
        rows = self.samples[order]
        splits = np.flatnonzero(np.diff(cells)) + 1
        return {int(c[0]): r for c, r in zip(np.split(cells, splits), np.split(rows, splits)) if c.size}


def new_cell_grid(origin: tuple[float, float], n_rows: int, n_cols: int, cell_size: float = DEFAULT_CELL_SIZE) -> CellGrid:
    return CellGrid.empty(GridGeometry.checked(origin, cell_size, n_rows, n_cols))


# --- HDR ---

def fuse_exposures(stack: ExposureStack) -> np.ndarray:
    """Hat-weighted radiance over unsaturated exposures, linear response."""
    if len(stack.images) < 2 or len(stack.images) != len(stack.times):
        raise ParameterError("an exposure stack needs >= 2 images, one time per image")
    shapes = {np.shape(im) for im in stack.images}
    if len(shapes) != 1:
        raise ParameterError(f"exposure images differ in shape: {sorted(shapes)}")
    times = np.asarray(stack.times, dtype=float)
    if np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ParameterError("exposure times must be positive and strictly increasing")

    v = np.stack([np.asarray(im, dtype=float) for im in stack.images])
    t = times.reshape((-1,) + (1,) * (v.ndim - 1))
    unsat = v < SATURATION_LEVEL
    w = np.where(unsat, np.minimum(v, 1.0 - v), 0.0)
    ratio = v / t
    num = (w * ratio).sum(axis=0)
    den = w.sum(axis=0)
    n_unsat = unsat.sum(axis=0)

    with np.errstate(invalid="ignore", divide="ignore"):
        radiance = num / den
        plain = np.where(unsat, ratio, 0.0).sum(axis=0) / n_unsat
    radiance = np.where(den > 0, radiance, plain)
    return np.where(n_unsat > 0, radiance, ratio[0])


# --- Samples ---

def chromaticity(color: np.ndarray) -> np.ndarray:
    """(r', g') per RGB row; black maps to (1/3, 1/3)."""
    color = np.asarray(color, dtype=float).reshape(-1, 3)
    s = color.sum(axis=1)
    out = np.full((color.shape[0], 2), 1.0 / 3.0)
    ok = s > 0
    out[ok] = color[ok, :2] / s[ok, None]
    return out


def accumulate_cell_samples(
    cloud: PointCloud,
    grid: CellGrid,
    plane: Plane,
    clearance: Optional[float] = None,
) -> CellGrid:
    """
    Adds one sample per colored, temperature-annotated point inside the grid.
    Points higher than `clearance` above the plane are left out.
    """
    usable = cloud.has_color() & cloud.has_temperature()
    if not usable.any():
        return grid
    pts = cloud.subset(usable)
    height = plane.signed_distance(pts.xyz)
    row, col, inside = grid.geometry.locate(pts.xyz[:, 0], pts.xyz[:, 1])
    keep = inside
    if clearance is not None:
        keep = keep & (height <= clearance)
    if not keep.any():
        return grid
    rows = np.column_stack([chromaticity(pts.color[keep]), height[keep], pts.temperature[keep]])
    flat = grid.geometry.flat_index(row[keep], col[keep])
    logger.debug(f"accumulate_cell_samples: {int(keep.sum())} samples from {len(cloud)} points")
    return grid.model_copy(
        update={
            "samples": np.vstack([grid.samples, rows]),
            "sample_cell": np.concatenate([grid.sample_cell, flat]),
            "mixtures": {},
        }
    )


# --- EM ---

def _log_gaussian(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    chol = linalg.cholesky(cov, lower=True)
    sol = linalg.solve_triangular(chol, (x - mean).T, lower=True)
    maha = np.sum(sol ** 2, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (x.shape[1] * math.log(2 * math.pi) + logdet + maha)


def _weighted_log_prob(x, weights, means, covs) -> np.ndarray:
    return np.column_stack([np.log(w) + _log_gaussian(x, m, c) for w, m, c in zip(weights, means, covs)])


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.shape[0])]]
    for _ in range(1, k):
        d2 = np.min([np.sum((x - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(x.shape[0])])
        else:
            centers.append(x[rng.choice(x.shape[0], p=d2 / total)])
    return np.array(centers)


def _m_step(x: np.ndarray, resp: np.ndarray, epsilon: float):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / nk.sum()
    means = (resp.T @ x) / nk[:, None]
    covs = []
    for j in range(resp.shape[1]):
        centered = x - means[j]
        cov = (resp[:, j, None] * centered).T @ centered / nk[j]
        cov = 0.5 * (cov + cov.T) + epsilon * np.eye(x.shape[1])
        covs.append(cov)
    return weights, means, covs


def fit_gmm_em(
    samples,
    k: int,
    max_iter: int = 100,
    tol: float = 1e-6,
    seed: int | Sequence[int] = 0,
    epsilon: float = EM_EPSILON,
    axes: Optional[Sequence[int]] = None,
) -> GaussianMixture:
    """
    EM with k-means++ seeding. With `axes`, EM runs on those columns only and
    the full-dimensional components are the weighted moments of the final
    responsibilities. An iteration that would lower the log-likelihood is
    discarded and fitting stops.
    """
    if isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], CellSample):
        samples = [s.vector() for s in samples]
    x_full = np.asarray(samples, dtype=float)
    if x_full.ndim == 1:
        x_full = x_full.reshape(-1, 1)
    n = x_full.shape[0]
    if n == 0:
        raise EmptyCellError("cannot fit a mixture to an empty sample set")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    x = x_full if axes is None else x_full[:, list(axes)]
    d = x.shape[1]
    if n < k * (d + 1):
        logger.debug(f"fit_gmm_em: {n} samples too few for k={k}; falling back to k=1")
        k = 1

    rng = np.random.default_rng(seed)
    means = _kmeans_pp(x, k, rng)
    centered = x - x.mean(axis=0)
    global_cov = centered.T @ centered / n + epsilon * np.eye(d)
    weights = np.full(k, 1.0 / k)
    covs = [global_cov.copy() for _ in range(k)]

    history: list[float] = []
    previous = None
    converged = False
    resp = None
    for it in range(max_iter + 1):
        log_prob = _weighted_log_prob(x, weights, means, covs)
        per_sample = logsumexp(log_prob, axis=1)
        ll = float(per_sample.sum())
        if history and ll < history[-1]:
            weights, means, covs, resp = previous
            converged = True
            break
        history.append(ll)
        resp = np.exp(log_prob - per_sample[:, None])
        if len(history) > 1 and ll - history[-2] < tol:
            converged = True
            break
        if it == max_iter:
            break
        previous = (weights, means, covs, resp)
        weights, means, covs = _m_step(x, resp, epsilon)

    if axes is not None:
        _, full_means, full_covs = _m_step(x_full, resp, epsilon)
    else:
        full_means, full_covs = means, covs
    components = [
        GaussianComponent(weight=float(w), mean=np.asarray(m, dtype=float), covariance=np.asarray(c, dtype=float))
        for w, m, c in zip(weights, full_means, full_covs)
    ]
    return GaussianMixture(components=components, log_likelihoods=tuple(history), converged=converged)


def _bic(mixture: GaussianMixture, n: int, d: int) -> float:
    k = mixture.k
    n_params = (k - 1) + k * d + k * d * (d + 1) / 2
    return -2.0 * mixture.log_likelihoods[-1] + n_params * math.log(n)


def fit_cell_mixture(
    samples: np.ndarray,
    k_max: int = 3,
    seed: int | Sequence[int] = 0,
    axes: Optional[Sequence[int]] = None,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> GaussianMixture:
    """Best of k = 1..k_max by minimum BIC."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    d = samples.shape[1] if axes is None else len(axes)
    best, best_bic = None, math.inf
    for k in range(1, k_max + 1):
        if k > 1 and n < k * (d + 1):
            break
        mixture = fit_gmm_em(samples, k, max_iter=max_iter, tol=tol, seed=seed, axes=axes)
        bic = _bic(mixture, n, d)
        if bic < best_bic:
            best, best_bic = mixture, bic
    return best


def fit_cell_mixtures(
    grid: CellGrid,
    weights: Optional[FeatureWeights] = None,
    k_max: int = 3,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    seed: int = 0,
) -> CellGrid:
    """Fits every cell with at least `min_samples` samples, on the weighted axes."""
    axes = (weights or FeatureWeights()).active_axes()
    mixtures = {}
    for flat, rows in grid.grouped().items():
        if rows.shape[0] >= min_samples:
            mixtures[flat] = fit_cell_mixture(rows, k_max=k_max, seed=(seed, flat), axes=axes)
    logger.debug(f"fit_cell_mixtures: {len(mixtures)} cells fitted")
    return grid.model_copy(update={"mixtures": mixtures})


# --- Bhattacharyya ---

def _select(component: GaussianComponent, axis_weights: Optional[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    if axis_weights is None:
        return component.mean, component.covariance
    keep = np.flatnonzero(axis_weights > 0)
    scale = axis_weights[keep]
    mean = component.mean[keep] * scale
    cov = component.covariance[np.ix_(keep, keep)] * np.outer(scale, scale)
    return mean, cov


def _axis_weights(weights) -> Optional[np.ndarray]:
    if weights is None:
        return None
    if isinstance(weights, FeatureWeights):
        return weights.axis_weights()
    return np.asarray(weights, dtype=float)


def _logdet(cov: np.ndarray) -> float:
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as e:
        raise NumericError(f"covariance is not positive definite: {e}") from e
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def bhattacharyya_gaussian(a: GaussianComponent, b: GaussianComponent, weights=None) -> float:
    """Closed-form Bhattacharyya distance; weights scale axes and zero weights drop them."""
    if a.dim != b.dim:
        raise ParameterError(f"component dimensions differ: {a.dim} vs {b.dim}")
    w = _axis_weights(weights)
    if w is not None and w.shape[0] != a.dim:
        raise ParameterError(f"{w.shape[0]} weights for {a.dim}-dimensional components")
    mu_a, cov_a = _select(a, w)
    mu_b, cov_b = _select(b, w)
    cov = 0.5 * (cov_a + cov_b)
    try:
        factor = linalg.cho_factor(cov, lower=True)
    except linalg.LinAlgError as e:
        raise NumericError(f"singular average covariance: {e}") from e
    diff = mu_a - mu_b
    quad = float(diff @ linalg.cho_solve(factor, diff))
    logdet_mean = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    value = quad / 8.0 + 0.5 * (logdet_mean - 0.5 * (_logdet(cov_a) + _logdet(cov_b)))
    return max(value, 0.0)


def gmm_distance(p: GaussianMixture, q: GaussianMixture, weights=None) -> float:
    """Each component of p matched to its nearest component of q, weighted by p's weights."""
    total = 0.0
    for pc in p.components:
        total += pc.weight * min(bhattacharyya_gaussian(pc, qc, weights) for qc in q.components)
    return total


# --- Classification ---

def library_score(mixture: GaussianMixture, library: Sequence[GaussianMixture], weights=None) -> float:
    return min(gmm_distance(mixture, entry, weights) for entry in library)


def classify_cells(
    grid: CellGrid,
    library: Sequence[GaussianMixture],
    threshold: float = DEFAULT_THRESHOLD,
    weights: Optional[FeatureWeights] = None,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    obstacle_library: Optional[Sequence[GaussianMixture]] = None,
    k_max: int = 3,
    seed: int = 0,
) -> CellGrid:
    """
    Traversable iff the closest library entry is within `threshold`. A cell
    closer to an obstacle-library entry (also within threshold) is NotTraversable.
    Cells with too few samples are Unknown.
    """
    if not library:
        raise ConfigurationError("cell classification needs a non-empty traversable library")
    weights = weights or FeatureWeights()
    counts = grid.counts().reshape(-1)
    need_fit = [f for f in range(grid.geometry.n_cells) if counts[f] >= min_samples and f not in grid.mixtures]
    if need_fit:
        grid = fit_cell_mixtures(grid, weights, k_max=k_max, min_samples=min_samples, seed=seed)

    labels = np.full(grid.geometry.n_cells, Label.UNKNOWN, dtype=np.int8)
    scores = np.full(grid.geometry.n_cells, np.nan)
    for flat, mixture in grid.mixtures.items():
        if counts[flat] < min_samples:
            continue
        score = library_score(mixture, library, weights)
        label = Label.GROUND if score <= threshold else Label.NON_GROUND
        if obstacle_library:
            obstacle_score = library_score(mixture, obstacle_library, weights)
            if obstacle_score < score and obstacle_score <= threshold:
                label = Label.NON_GROUND
        labels[flat] = label
        scores[flat] = score
    shape = grid.geometry.shape
    logger.info(
        f"classify_cells: {int(np.sum(labels == Label.GROUND))} traversable, "
        f"{int(np.sum(labels == Label.NON_GROUND))} not traversable, {int(np.sum(labels == Label.UNKNOWN))} unknown"
    )
    return grid.model_copy(update={"labels": labels.reshape(shape), "scores": scores.reshape(shape)})


def designate_driven(grid: CellGrid, mask: Optional[np.ndarray] = None, min_samples: int = DEFAULT_MIN_SAMPLES) -> CellGrid:
    """Marks cells as trusted Traversable (driven over): `mask` cells, or every cell with enough samples."""
    enough = grid.counts() >= min_samples
    chosen = enough if mask is None else enough & np.asarray(mask, dtype=bool)
    labels = np.where(chosen, Label.GROUND, Label.UNKNOWN).astype(np.int8)
    return grid.model_copy(update={"labels": labels})


def train_library(
    grids: Sequence[CellGrid],
    weights: Optional[FeatureWeights] = None,
    dedup: float = DEDUP_DISTANCE,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    k_max: int = 3,
    seed: int = 0,
) -> list[GaussianMixture]:
    """One mixture per trusted Traversable cell, skipping near-duplicates of earlier entries."""
    weights = weights or FeatureWeights()
    library: list[GaussianMixture] = []
    n_cells = 0
    for grid in grids:
        trusted = np.flatnonzero(grid.labels.reshape(-1) == Label.GROUND)
        groups = grid.grouped()
        for flat in trusted:
            rows = groups.get(int(flat))
            if rows is None or rows.shape[0] < min_samples:
                continue
            n_cells += 1
            mixture = grid.mixtures.get(int(flat))
            if mixture is None:
                mixture = fit_cell_mixture(rows, k_max=k_max, seed=(seed, int(flat)), axes=weights.active_axes())
            if any(gmm_distance(mixture, entry, weights) < dedup for entry in library):
                continue
            library.append(mixture)
    if not library:
        raise InsufficientTrainingError("no trusted traversable cells with enough samples to train on")
    logger.info(f"train_library: {len(library)} entries from {n_cells} training cells")
    return library


# --- Occlusion / field of view ---

def _ray_hits(origin_x, origin_y, dx, dy, x0, y0, x1, y1) -> np.ndarray:
    """Whether the ray (origin + t*d, t >= 0) meets each closed box."""
    t_lo = np.full(x0.shape, -np.inf)
    t_hi = np.full(x0.shape, np.inf)
    ok = np.ones(x0.shape, dtype=bool)
    for o, d, lo, hi in ((origin_x, dx, x0, x1), (origin_y, dy, y0, y1)):
        if d == 0.0:
            ok &= (o >= lo) & (o <= hi)
        else:
            a = (lo - o) / d
            b = (hi - o) / d
            t_lo = np.maximum(t_lo, np.minimum(a, b))
            t_hi = np.minimum(t_hi, np.maximum(a, b))
    return ok & (t_hi >= np.maximum(t_lo, 0.0))


def mark_occlusion_shadows(grid: CellGrid, sensor_origin: tuple[float, float]) -> CellGrid:
    """Every cell the ray from the sensor meets beyond a NotTraversable cell's center becomes OCCLUDED."""
    labels = grid.labels.copy()
    sources = np.argwhere(grid.labels == Label.NON_GROUND)
    if sources.size == 0:
        return grid
    g = grid.geometry
    rows, cols = np.indices(g.shape)
    x0 = g.origin_x + cols * g.cell_size
    y0 = g.origin_y + rows * g.cell_size
    x1 = x0 + g.cell_size
    y1 = y0 + g.cell_size
    shadow = np.zeros(g.shape, dtype=bool)
    for r, c in sources:
        cx = g.origin_x + (c + 0.5) * g.cell_size
        cy = g.origin_y + (r + 0.5) * g.cell_size
        dx, dy = cx - sensor_origin[0], cy - sensor_origin[1]
        if dx == 0.0 and dy == 0.0:
            continue
        shadow |= _ray_hits(cx, cy, dx, dy, x0, y0, x1, y1)
    target = shadow & (grid.labels != Label.NON_GROUND)
    labels[target] = Label.OCCLUDED
    logger.debug(f"mark_occlusion_shadows: {len(sources)} obstacle cells shadow {int(target.sum())} cells")
    return grid.model_copy(update={"labels": labels})


def invalidate_edge_cells(
    grid: CellGrid,
    sensor_origin: tuple[float, float],
    hfov_deg: float,
    heading_deg: float = 0.0,
) -> CellGrid:
    """Resets to Unknown every labelled cell not wholly inside the camera's horizontal field of view."""
    g = grid.geometry
    rows, cols = np.indices(g.shape)
    half = math.radians(hfov_deg) / 2.0
    heading = math.radians(heading_deg)
    inside = np.ones(g.shape, dtype=bool)
    for dr in (0, 1):
        for dc in (0, 1):
            x = g.origin_x + (cols + dc) * g.cell_size - sensor_origin[0]
            y = g.origin_y + (rows + dr) * g.cell_size - sensor_origin[1]
            ang = np.angle(np.exp(1j * (np.arctan2(y, x) - heading)))
            inside &= np.abs(ang) <= half
    labels = grid.labels.copy()
    labels[~inside] = Label.UNKNOWN
    scores = grid.scores.copy()
    scores[~inside] = np.nan
    return grid.model_copy(update={"labels": labels, "scores": scores})


# --- Library persistence ---

def save_library(library: Sequence[GaussianMixture], path: str | Path) -> Path:
    """Text: mixture count, then per mixture k and one line per component (weight, mean, covariance)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# gmm library: n / k / weight mean... covariance(row-major)...", str(len(library))]
    for mixture in library:
        lines.append(str(mixture.k))
        for c in mixture.components:
            values = np.concatenate([[c.weight], c.mean, c.covariance.reshape(-1)])
            lines.append(" ".join(f"{v:.17g}" for v in values))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_library(path: str | Path, dim: int = SAMPLE_DIM) -> list[GaussianMixture]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"library file not found: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        it = iter(lines)
        n = int(next(it))
        library = []
        for _ in range(n):
            k = int(next(it))
            comps = []
            for _ in range(k):
                values = np.array(next(it).split(), dtype=float)
                comps.append(
                    GaussianComponent(
                        weight=values[0],
                        mean=values[1:1 + dim],
                        covariance=values[1 + dim:1 + dim + dim * dim].reshape(dim, dim),
                    )
                )
            library.append(GaussianMixture(components=comps))
    except (StopIteration, ValueError) as e:
        raise ParameterError(f"malformed library file {path}: {e}") from e
    return library
