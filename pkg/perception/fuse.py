# perception/fuse.py
"""
Confusion statistics, classification metrics and weighted-sum fusion of two
sensors' classifier scores into one traversability map.
"""

import logging
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from common.errors import DegenerateWeightsError, InsufficientGroundTruthError, ParameterError
from perception.labels import GridGeometry, Label, as_binary

logger = logging.getLogger(__name__)

# Precision / rejection-precision weights measured for each sensor, used when
# no calibration run is configured.
DEFAULT_LIDAR_WEIGHTS = (0.973, 0.836)
DEFAULT_STEREO_WEIGHTS = (0.969, 0.826)


# --- Domain Types ---

class ConfusionMatrix(BaseModel):
    """Counts under the Ground-positive convention. `unknown` counts excluded predictions."""
    tp: int = Field(default=0, ge=0)
    fp: int = Field(default=0, ge=0)
    tn: int = Field(default=0, ge=0)
    fn: int = Field(default=0, ge=0)
    unknown: int = Field(default=0, ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            tn=self.tn + other.tn,
            fn=self.fn + other.fn,
            unknown=self.unknown + other.unknown,
        )


class MetricReport(BaseModel):
    """Rates in [0,1]; None marks a rate whose denominator is zero."""
    precision: Optional[float] = None
    rejection_precision: Optional[float] = None
    recall: Optional[float] = None
    specificity: Optional[float] = None
    accuracy: Optional[float] = None
    f1: Optional[float] = None


class ClassifierWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float = Field(ge=0.0, le=1.0, description="Precision weight, used for Ground labels")
    rp: float = Field(ge=0.0, le=1.0, description="Rejection-precision weight, used otherwise")

    def for_label(self, label: int) -> float:
        return self.p if label == Label.GROUND else self.rp


class TraversabilityMap(BaseModel):
    """
    Labels and scores over a grid. `observed` holds one mask per contributing
    sensor; `threshold` is the decision threshold the scores were compared to.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    geometry: GridGeometry
    labels: np.ndarray = Field(description="(n_rows, n_cols) int8 Label values")
    scores: np.ndarray = Field(description="(n_rows, n_cols) float, NaN where Unknown")
    observed: dict[str, np.ndarray] = Field(default_factory=dict)
    threshold: float = 0.0

    @classmethod
    def from_labels(
        cls,
        geometry: GridGeometry,
        labels: np.ndarray,
        scores: Optional[np.ndarray] = None,
        sensor: str = "truth",
        threshold: float = 0.0,
    ) -> "TraversabilityMap":
        labels = np.asarray(labels, dtype=np.int8).reshape(geometry.shape)
        if scores is None:
            scores = np.where(labels == Label.UNKNOWN, np.nan, 0.0)
        return cls(
            geometry=geometry,
            labels=labels,
            scores=np.asarray(scores, dtype=float).reshape(geometry.shape),
            observed={sensor: labels != Label.UNKNOWN},
            threshold=threshold,
        )

    def observed_mask(self) -> np.ndarray:
        return self.labels != Label.UNKNOWN


# --- Operations ---

def confusion(pred: Sequence[int], truth: Sequence[int]) -> ConfusionMatrix:
    pred = np.asarray(pred, dtype=np.int8).reshape(-1)
    truth = np.asarray(truth, dtype=np.int8).reshape(-1)
    if pred.shape != truth.shape:
        raise ParameterError(f"label length mismatch: {pred.size} predictions vs {truth.size} truth labels")
    pred = as_binary(pred)
    truth = as_binary(truth)
    known = pred != Label.UNKNOWN
    scored = known & (truth != Label.UNKNOWN)
    p_ground = pred == Label.GROUND
    t_ground = truth == Label.GROUND
    return ConfusionMatrix(
        tp=int(np.count_nonzero(scored & p_ground & t_ground)),
        fp=int(np.count_nonzero(scored & p_ground & ~t_ground)),
        tn=int(np.count_nonzero(scored & ~p_ground & ~t_ground)),
        fn=int(np.count_nonzero(scored & ~p_ground & t_ground)),
        unknown=int(np.count_nonzero(~known)),
    )


def _rate(num: float, den: float) -> Optional[float]:
    return None if den == 0 else num / den


def metrics(cm: ConfusionMatrix) -> MetricReport:
    precision = _rate(cm.tp, cm.tp + cm.fp)
    recall = _rate(cm.tp, cm.tp + cm.fn)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricReport(
        precision=precision,
        rejection_precision=_rate(cm.tn, cm.tn + cm.fn),
        recall=recall,
        specificity=_rate(cm.tn, cm.tn + cm.fp),
        accuracy=_rate(cm.tp + cm.tn, cm.total),
        f1=f1,
    )


def weights_from_groundtruth(cm: ConfusionMatrix) -> ClassifierWeights:
    if cm.tp + cm.fp == 0 or cm.tn + cm.fn == 0:
        raise InsufficientGroundTruthError(
            f"need both Ground and NonGround predictions to weight a sensor (tp+fp={cm.tp + cm.fp}, tn+fn={cm.tn + cm.fn})"
        )
    return ClassifierWeights(p=cm.tp / (cm.tp + cm.fp), rp=cm.tn / (cm.tn + cm.fn))


def fuse_scores(
    score_l: float,
    label_l: int,
    score_s: float,
    label_s: int,
    weights_l: ClassifierWeights,
    weights_s: ClassifierWeights,
) -> float:
    """Weighted mean of two squared Mahalanobis scores; each weight follows its sensor's label."""
    w_l = weights_l.for_label(label_l)
    w_s = weights_s.for_label(label_s)
    if w_l + w_s == 0:
        raise DegenerateWeightsError("both fusion weights are zero")
    return (w_l * score_l + w_s * score_s) / (w_l + w_s)


def fused_threshold(map_l: TraversabilityMap, map_s: TraversabilityMap) -> float:
    return 0.5 * (map_l.threshold + map_s.threshold)


def fuse_maps(
    map_l: TraversabilityMap,
    map_s: TraversabilityMap,
    weights: tuple[ClassifierWeights, ClassifierWeights],
    threshold: Optional[float] = None,
) -> TraversabilityMap:
    """
    Fuses co-observed cells; cells seen by one sensor keep that sensor's label,
    cells seen by neither stay Unknown. Every co-observed label comes from the
    fused score against the fused threshold, agreeing or not.
    """
    if map_l.geometry != map_s.geometry:
        raise ParameterError("cannot fuse maps with different grid geometry")
    weights_l, weights_s = weights
    threshold = fused_threshold(map_l, map_s) if threshold is None else threshold

    lab_l = as_binary(map_l.labels)
    lab_s = as_binary(map_s.labels)
    seen_l = lab_l != Label.UNKNOWN
    seen_s = lab_s != Label.UNKNOWN
    both = seen_l & seen_s

    w_l = np.where(lab_l == Label.GROUND, weights_l.p, weights_l.rp)
    w_s = np.where(lab_s == Label.GROUND, weights_s.p, weights_s.rp)
    w_sum = w_l + w_s
    if np.any(both & (w_sum == 0)):
        raise DegenerateWeightsError("both fusion weights are zero on a co-observed cell")

    labels = np.full(map_l.geometry.shape, Label.UNKNOWN, dtype=np.int8)
    scores = np.full(map_l.geometry.shape, np.nan)

    only_l = seen_l & ~seen_s
    only_s = seen_s & ~seen_l
    labels[only_l] = map_l.labels[only_l]
    scores[only_l] = map_l.scores[only_l]
    labels[only_s] = map_s.labels[only_s]
    scores[only_s] = map_s.scores[only_s]

    with np.errstate(invalid="ignore", divide="ignore"):
        fused = (w_l * map_l.scores + w_s * map_s.scores) / w_sum
    scores[both] = fused[both]
    decided = np.where(fused <= threshold, Label.GROUND, Label.NON_GROUND).astype(np.int8)
    labels[both] = decided[both]

    observed = {**map_l.observed, **map_s.observed}
    logger.debug(
        f"fuse_maps: {int(both.sum())} co-observed, {int(only_l.sum())} first-only, {int(only_s.sum())} second-only cells"
    )
    return TraversabilityMap(
        geometry=map_l.geometry,
        labels=labels,
        scores=scores,
        observed=observed,
        threshold=threshold,
    )


def coverage(tmap: TraversabilityMap) -> dict[str, float]:
    """Fraction of cells labelled, overall and per contributing sensor."""
    n = tmap.geometry.n_cells
    out = {"labelled": float(np.count_nonzero(tmap.observed_mask())) / n}
    for sensor, mask in tmap.observed.items():
        out[sensor] = float(np.count_nonzero(mask)) / n
    return out


def co_observed(map_a: TraversabilityMap, map_b: TraversabilityMap) -> np.ndarray:
    return map_a.observed_mask() & map_b.observed_mask()
