# perception/ground.py
"""
Self-learning ground classifier: a Gaussian model of ground patch features,
bootstrapped from an obstacle-free start region, scored by squared Mahalanobis
distance and refreshed from a rolling buffer of recent Ground patches.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg
from scipy.stats import chi2

from common.errors import InsufficientBootstrapError, ParameterError
from perception.fuse import TraversabilityMap
from perception.geo3d import (
    FEATURE_DIM,
    GeoFeatures,
    PointCloud,
    VoxelGridParams,
    build_patch_grid,
    patch_features,
    voxel_downsample,
)
from perception.labels import GridGeometry, Label

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 1000
DEFAULT_CONFIDENCE = 0.95
DEFAULT_EPSILON = 1e-6


# --- Domain Types ---

class GroundModel(BaseModel):
    """Mean and regularized covariance of the rolling ground-feature buffer."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray = Field(description="Inverse of `covariance`")
    buffer: np.ndarray = Field(description="(n, d) FIFO, oldest row first")
    capacity: int
    threshold: float = Field(ge=0, description="Bound on the squared distance")
    confidence: float
    epsilon: float = DEFAULT_EPSILON

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


class PatchLabel(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: Label
    score: float = Field(description="Squared Mahalanobis distance; NaN when Unknown")


def chi2_threshold(confidence: float, dim: int = FEATURE_DIM) -> float:
    if not 0.0 < confidence < 1.0:
        raise ParameterError(f"confidence must lie in (0,1), got {confidence}")
    return float(chi2.ppf(confidence, dim))


def _as_rows(features) -> np.ndarray:
    rows = [f.vector() if isinstance(f, GeoFeatures) else np.asarray(f, dtype=float) for f in features]
    if not rows:
        return np.zeros((0, 0))
    return np.vstack(rows).astype(float)


def _fit(buffer: np.ndarray, capacity: int, threshold: float, confidence: float, epsilon: float) -> GroundModel:
    d = buffer.shape[1]
    mean = buffer.mean(axis=0)
    cov = np.atleast_2d(np.cov(buffer, rowvar=False, ddof=1)) + epsilon * np.eye(d)
    cov = 0.5 * (cov + cov.T)
    return GroundModel(
        mean=mean,
        covariance=cov,
        precision=linalg.inv(cov),
        buffer=buffer,
        capacity=capacity,
        threshold=threshold,
        confidence=confidence,
        epsilon=epsilon,
    )


# --- Operations ---

def bootstrap(
    model_capacity: int,
    bootstrap_features: Sequence,
    confidence: float = DEFAULT_CONFIDENCE,
    epsilon: float = DEFAULT_EPSILON,
) -> GroundModel:
    """Seeds the model from features of the declared obstacle-free start region."""
    rows = _as_rows(bootstrap_features)
    n = rows.shape[0]
    d = rows.shape[1] if n else FEATURE_DIM
    if n < d + 1:
        raise InsufficientBootstrapError(f"bootstrap needs at least {d + 1} feature vectors, got {n}")
    if model_capacity < d + 1:
        raise ParameterError(f"model capacity must be >= {d + 1}, got {model_capacity}")
    if not np.all(np.isfinite(rows)):
        raise ParameterError("bootstrap features must be finite")
    threshold = chi2_threshold(confidence, d)
    model = _fit(rows[-model_capacity:], model_capacity, threshold, confidence, epsilon)
    logger.info(f"Bootstrapped ground model from {n} patches (d={d}, threshold={threshold:.3f})")
    return model


def mahalanobis_score(model: GroundModel, x) -> float:
    x = x.vector() if isinstance(x, GeoFeatures) else np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != model.dim:
        raise ParameterError(f"feature dimension {x.shape[0]} does not match model dimension {model.dim}")
    diff = x - model.mean
    return max(float(diff @ model.precision @ diff), 0.0)


def mahalanobis_scores(model: GroundModel, rows: np.ndarray) -> np.ndarray:
    """Batched squared distances for an (n, d) array."""
    rows = np.asarray(rows, dtype=float).reshape(-1, model.dim)
    centered = rows - model.mean
    return np.maximum(((centered @ model.precision) * centered).sum(axis=1), 0.0)


def classify(model: GroundModel, features: Optional[GeoFeatures]) -> PatchLabel:
    if features is None or features.degenerate:
        return PatchLabel(label=Label.UNKNOWN, score=float("nan"))
    score = mahalanobis_score(model, features)
    return PatchLabel(label=Label.GROUND if score <= model.threshold else Label.NON_GROUND, score=score)


def update(model: GroundModel, new_ground_features: Sequence) -> GroundModel:
    """Pushes Ground-labelled features into the FIFO and refits; the threshold stays fixed."""
    rows = _as_rows(new_ground_features)
    if rows.shape[0] == 0:
        return model
    if rows.shape[1] != model.dim:
        raise ParameterError(f"feature dimension {rows.shape[1]} does not match model dimension {model.dim}")
    buffer = np.vstack([model.buffer, rows])[-model.capacity:]
    return _fit(buffer, model.capacity, model.threshold, model.confidence, model.epsilon)


# --- Persistence ---

def save_model(model: GroundModel, path: str | Path) -> Path:
    """Writes d, W, threshold, mean, row-major covariance, then buffer rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def fmt(values) -> str:
        return " ".join(f"{v:.17g}" for v in np.asarray(values, dtype=float).reshape(-1))

    lines = [
        "# ground model: d W / threshold confidence epsilon / mean / covariance / n / buffer rows",
        f"{model.dim} {model.capacity}",
        fmt([model.threshold, model.confidence, model.epsilon]),
        fmt(model.mean),
        fmt(model.covariance),
        f"{model.buffer.shape[0]}",
    ]
    lines.extend(fmt(row) for row in model.buffer)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_model(path: str | Path) -> GroundModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"ground model file not found: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        d, capacity = (int(v) for v in lines[0].split())
        threshold, confidence, epsilon = (float(v) for v in lines[1].split())
        mean = np.array(lines[2].split(), dtype=float)
        cov = np.array(lines[3].split(), dtype=float).reshape(d, d)
        n = int(lines[4])
        buffer = np.array([ln.split() for ln in lines[5:5 + n]], dtype=float).reshape(n, d)
    except (IndexError, ValueError) as e:
        raise ParameterError(f"malformed ground model file {path}: {e}") from e
    return GroundModel(
        mean=mean,
        covariance=cov,
        precision=linalg.inv(cov),
        buffer=buffer,
        capacity=capacity,
        threshold=threshold,
        confidence=confidence,
        epsilon=epsilon,
    )


# --- Self-learning frame loop ---

class StartRegion(BaseModel):
    """Axis-aligned rectangle declared free of obstacles at start-up."""
    x_min: float = 2.0
    x_max: float = 6.0
    y_min: float = -2.0
    y_max: float = 2.0

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)


class SelfLearningGroundClassifier:
    """
    Per-frame driver: grids a cloud, classifies every patch, then feeds that
    frame's Ground patches back into the model. Single writer: frames must be
    processed in order by one caller.
    """

    def __init__(
        self,
        geometry: GridGeometry,
        start_region: Optional[StartRegion] = None,
        voxel: Optional[VoxelGridParams] = VoxelGridParams(),
        capacity: int = DEFAULT_CAPACITY,
        confidence: float = DEFAULT_CONFIDENCE,
        min_points: int = 3,
        frozen: bool = False,
        sensor: str = "stereo",
        model: Optional[GroundModel] = None,
    ):
        self.geometry = geometry
        self.start_region = start_region or StartRegion()
        self.voxel = voxel
        self.capacity = capacity
        self.confidence = confidence
        self.min_points = min_points
        self.frozen = frozen
        self.sensor = sensor
        self.model = model
        self.frames_seen = 0

    @classmethod
    def from_state(cls, state: Optional[Dict[str, Any]]) -> "SelfLearningGroundClassifier":
        if not state:
            raise ParameterError("classifier state is empty")
        model = None
        if state.get("model"):
            m = state["model"]
            cov = np.asarray(m["covariance"], dtype=float)
            model = GroundModel(
                mean=np.asarray(m["mean"], dtype=float),
                covariance=cov,
                precision=linalg.inv(cov),
                buffer=np.asarray(m["buffer"], dtype=float).reshape(-1, len(m["mean"])),
                capacity=m["capacity"],
                threshold=m["threshold"],
                confidence=m["confidence"],
                epsilon=m.get("epsilon", DEFAULT_EPSILON),
            )
        voxel = state.get("voxel_size")
        clf = cls(
            geometry=GridGeometry(**state["geometry"]),
            start_region=StartRegion(**state["start_region"]),
            voxel=VoxelGridParams(voxel_size=voxel) if voxel else None,
            capacity=state.get("capacity", DEFAULT_CAPACITY),
            confidence=state.get("confidence", DEFAULT_CONFIDENCE),
            min_points=state.get("min_points", 3),
            frozen=state.get("frozen", False),
            sensor=state.get("sensor", "stereo"),
            model=model,
        )
        clf.frames_seen = state.get("frames_seen", 0)
        return clf

    def to_state(self) -> Dict[str, Any]:
        model = None
        if self.model is not None:
            model = {
                "mean": self.model.mean.tolist(),
                "covariance": self.model.covariance.tolist(),
                "buffer": self.model.buffer.tolist(),
                "capacity": self.model.capacity,
                "threshold": self.model.threshold,
                "confidence": self.model.confidence,
                "epsilon": self.model.epsilon,
            }
        return {
            "geometry": self.geometry.model_dump(),
            "start_region": self.start_region.model_dump(),
            "voxel_size": self.voxel.voxel_size if self.voxel else None,
            "capacity": self.capacity,
            "confidence": self.confidence,
            "min_points": self.min_points,
            "frozen": self.frozen,
            "sensor": self.sensor,
            "frames_seen": self.frames_seen,
            "model": model,
        }

    def patch_features(self, cloud: PointCloud) -> list[Optional[GeoFeatures]]:
        if self.voxel is not None:
            cloud = voxel_downsample(cloud, self.voxel)
        g = self.geometry
        grid = build_patch_grid(cloud, (g.origin_x, g.origin_y), g.cell_size, g.n_rows, g.n_cols)
        return patch_features(cloud, grid, min_points=self.min_points)

    def _bootstrap(self, features: list[Optional[GeoFeatures]]) -> None:
        cx, cy = self.geometry.centers()
        in_region = self.start_region.contains(cx.reshape(-1), cy.reshape(-1))
        seeds = [f for f, inside in zip(features, in_region) if inside and f is not None and not f.degenerate]
        self.model = bootstrap(self.capacity, seeds, confidence=self.confidence)

    def process(self, cloud: PointCloud) -> TraversabilityMap:
        features = self.patch_features(cloud)
        if self.model is None:
            self._bootstrap(features)

        labels = np.full(self.geometry.n_cells, Label.UNKNOWN, dtype=np.int8)
        scores = np.full(self.geometry.n_cells, np.nan)
        usable = [i for i, f in enumerate(features) if f is not None and not f.degenerate]
        if usable:
            rows = np.vstack([features[i].vector() for i in usable])
            s = mahalanobis_scores(self.model, rows)
            idx = np.asarray(usable)
            scores[idx] = s
            labels[idx] = np.where(s <= self.model.threshold, Label.GROUND, Label.NON_GROUND)

        n_ground = int(np.count_nonzero(labels == Label.GROUND))
        if not self.frozen:
            ground_rows = [features[i].vector() for i in usable if labels[i] == Label.GROUND]
            self.model = update(self.model, ground_rows)
        self.frames_seen += 1
        logger.debug(
            f"frame {cloud.frame_id} [{self.sensor}]: {len(usable)} classified, {n_ground} ground, "
            f"buffer {self.model.buffer.shape[0]}"
        )
        return TraversabilityMap(
            geometry=self.geometry,
            labels=labels.reshape(self.geometry.shape),
            scores=scores.reshape(self.geometry.shape),
            observed={self.sensor: (labels != Label.UNKNOWN).reshape(self.geometry.shape)},
            threshold=self.model.threshold,
        )
