# tests/perception/test_fuse.py

from fractions import Fraction

import numpy as np
import pytest

from common.errors import DegenerateWeightsError, InsufficientGroundTruthError, ParameterError
from perception.fuse import (
    DEFAULT_LIDAR_WEIGHTS,
    DEFAULT_STEREO_WEIGHTS,
    ClassifierWeights,
    ConfusionMatrix,
    TraversabilityMap,
    co_observed,
    confusion,
    coverage,
    fuse_maps,
    fuse_scores,
    metrics,
    weights_from_groundtruth,
)
from perception.ground import SelfLearningGroundClassifier, StartRegion
from perception.labels import GridGeometry, Label
from sim.scenarios import FUSION_GEOMETRY, fusion_benchmark, fusion_scan_params
from sim.scene import generate_scene
from sim.sensors import SensorParams, render_lidar_scan, render_stereo_cloud, render_surface_scan
from sim.truth import ground_truth

G, N, U, O = Label.GROUND, Label.NON_GROUND, Label.UNKNOWN, Label.OCCLUDED
LIDAR = ClassifierWeights(p=DEFAULT_LIDAR_WEIGHTS[0], rp=DEFAULT_LIDAR_WEIGHTS[1])
STEREO = ClassifierWeights(p=DEFAULT_STEREO_WEIGHTS[0], rp=DEFAULT_STEREO_WEIGHTS[1])


# --- Confusion & metrics ---

def test_confusion_counts_and_exclusions():
    """Tests the Ground-positive counts, Unknown exclusion and Occluded folding."""
    pred = [G, G, N, N, U, O, G]
    truth = [G, N, N, G, G, N, U]
    cm = confusion(pred, truth)
    assert (cm.tp, cm.fp, cm.tn, cm.fn, cm.unknown) == (1, 1, 2, 1, 1)
    assert cm.total == 5


def test_confusion_length_mismatch():
    """Tests that prediction and truth lengths must agree."""
    with pytest.raises(ParameterError, match="length"):
        confusion([G, N], [G])


def test_metrics_worked_example():
    """Tests the 90/10/45/5 example."""
    report = metrics(ConfusionMatrix(tp=90, fp=10, tn=45, fn=5))
    assert report.precision == pytest.approx(0.9, abs=1e-12)
    assert report.rejection_precision == pytest.approx(0.9, abs=1e-12)
    assert report.recall == pytest.approx(90 / 95, abs=1e-12)
    assert report.specificity == pytest.approx(45 / 55, abs=1e-12)
    assert report.accuracy == pytest.approx(135 / 150, abs=1e-12)
    assert report.f1 == pytest.approx(0.9231, abs=1e-4)


def test_metrics_match_exact_rationals(rng):
    """Tests every rate against exact rational arithmetic on 20 random matrices."""
    for _ in range(20):
        tp, fp, tn, fn = (int(v) for v in rng.integers(1, 500, size=4))
        report = metrics(ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn))
        p, r = Fraction(tp, tp + fp), Fraction(tp, tp + fn)
        expected = {
            "precision": p,
            "rejection_precision": Fraction(tn, tn + fn),
            "recall": r,
            "specificity": Fraction(tn, tn + fp),
            "accuracy": Fraction(tp + tn, tp + fp + tn + fn),
            "f1": 2 * p * r / (p + r),
        }
        for name, value in expected.items():
            assert getattr(report, name) == pytest.approx(float(value), abs=1e-12), name


def test_metrics_undefined_rates_are_none():
    """Tests that zero denominators yield None rather than an error."""
    report = metrics(ConfusionMatrix(tn=5))
    assert report.precision is None
    assert report.recall is None
    assert report.f1 is None
    assert report.specificity == 1.0
    assert metrics(ConfusionMatrix()).accuracy is None


def test_confusion_matrices_add():
    """Tests field-wise addition of confusion matrices."""
    total = ConfusionMatrix(tp=1, fp=2, tn=3, fn=4, unknown=5) + ConfusionMatrix(tp=10, unknown=1)
    assert total.model_dump() == {"tp": 11, "fp": 2, "tn": 3, "fn": 4, "unknown": 6}


def test_weights_from_groundtruth():
    """Tests P and RP as weights, and the error when one label was never predicted."""
    w = weights_from_groundtruth(ConfusionMatrix(tp=90, fp=10, tn=45, fn=5))
    assert (w.p, w.rp) == (pytest.approx(0.9), pytest.approx(0.9))
    with pytest.raises(InsufficientGroundTruthError):
        weights_from_groundtruth(ConfusionMatrix(tp=10, fp=2))


# --- Score fusion ---

def test_fuse_scores_reference_value():
    """Tests the two-sensor example with precision weights."""
    fused = fuse_scores(2.0, G, 4.0, G, LIDAR, STEREO)
    assert fused == pytest.approx(2.9979, abs=1e-4)


def test_fuse_scores_random_tuples(rng):
    """Tests hand evaluation, the convex bound and sensor-swap symmetry on 100 random tuples."""
    for _ in range(100):
        wl = ClassifierWeights(p=rng.uniform(0.01, 1), rp=rng.uniform(0.01, 1))
        ws = ClassifierWeights(p=rng.uniform(0.01, 1), rp=rng.uniform(0.01, 1))
        ml, ms = rng.uniform(0, 50, size=2)
        ll, ls = rng.choice([G, N], size=2)

        fused = fuse_scores(ml, ll, ms, ls, wl, ws)
        a, b = wl.for_label(ll), ws.for_label(ls)

        assert fused == pytest.approx((a * ml + b * ms) / (a + b), abs=1e-12)
        assert min(ml, ms) - 1e-12 <= fused <= max(ml, ms) + 1e-12
        assert fuse_scores(ms, ls, ml, ll, ws, wl) == pytest.approx(fused, abs=1e-12)


def test_fuse_scores_single_sensor_limit():
    """Tests that a zero weight leaves the other sensor's score."""
    zero = ClassifierWeights(p=0.0, rp=0.0)
    assert fuse_scores(3.5, G, 9.0, N, LIDAR, zero) == 3.5


def test_fuse_scores_degenerate_weights():
    """Tests that two zero weights are rejected."""
    zero = ClassifierWeights(p=0.0, rp=0.0)
    with pytest.raises(DegenerateWeightsError):
        fuse_scores(1.0, G, 2.0, N, zero, zero)


# --- Map fusion ---

LINE = GridGeometry(origin_x=0.0, origin_y=0.0, cell_size=1.0, n_rows=1, n_cols=5)


def _line_map(labels, scores, sensor, threshold=10.0) -> TraversabilityMap:
    return TraversabilityMap.from_labels(LINE, np.array(labels), np.array(scores, dtype=float), sensor, threshold)


def test_fuse_maps_cell_rules():
    """Tests agreement, disagreement, single-sensor pass-through and unseen cells."""
    nan = np.nan
    lidar = _line_map([G, G, N, U, U], [1.0, 2.0, 30.0, nan, nan], "lidar")
    stereo = _line_map([G, N, G, N, U], [3.0, 12.0, 8.0, 15.0, nan], "stereo", threshold=12.0)

    fused = fuse_maps(lidar, stereo, (LIDAR, STEREO))

    assert fused.threshold == pytest.approx(11.0)
    w_l, w_s = LIDAR.p, STEREO.rp
    assert fused.scores[0, 1] == pytest.approx((w_l * 2.0 + w_s * 12.0) / (w_l + w_s))
    assert fused.labels[0].tolist() == [G, G, N, N, U]
    assert np.isnan(fused.scores[0, 4])
    assert fused.scores[0, 3] == 15.0
    assert set(fused.observed) == {"lidar", "stereo"}


def test_fuse_maps_agreeing_labels_follow_fused_score():
    """Tests that two Ground votes still become NonGround when the fused score exceeds the fused threshold."""
    lidar = _line_map([G, G, U, U, U], [11.0, 1.0, np.nan, np.nan, np.nan], "lidar", threshold=11.0)
    stereo = _line_map([G, G, U, U, U], [0.9, 0.5, np.nan, np.nan, np.nan], "stereo", threshold=1.0)
    weights = (ClassifierWeights(p=1.0, rp=1.0), ClassifierWeights(p=0.1, rp=0.1))

    fused = fuse_maps(lidar, stereo, weights)

    assert fused.threshold == pytest.approx(6.0)
    assert fused.scores[0, 0] == pytest.approx((11.0 + 0.1 * 0.9) / 1.1)
    assert fused.labels[0, 0] == N
    assert fused.labels[0, 1] == G


def test_fuse_maps_agreement_with_consistent_scores_is_preserved():
    """Tests that agreeing maps keep their labels when scores sit on the same side of both thresholds."""
    lidar = _line_map([G, N, G, N, U], [2.0, 20.0, 4.0, 25.0, np.nan], "lidar")
    stereo = _line_map([G, N, G, N, U], [3.0, 18.0, 1.0, 30.0, np.nan], "stereo")
    fused = fuse_maps(lidar, stereo, (LIDAR, STEREO))
    assert fused.labels[0].tolist() == [G, N, G, N, U]


def test_fuse_maps_never_labels_unseen_cells(rng):
    """Tests that cells unobserved by both sensors stay Unknown."""
    labels_l = rng.choice([G, N, U], size=5)
    labels_s = rng.choice([G, N, U], size=5)
    scores = rng.uniform(0, 20, size=5)
    fused = fuse_maps(_line_map(labels_l, scores, "lidar"), _line_map(labels_s, scores, "stereo"), (LIDAR, STEREO))
    unseen = (labels_l == U) & (labels_s == U)
    assert np.all(fused.labels[0][unseen] == U)
    assert np.all(fused.labels[0][~unseen] != U)


def test_fuse_maps_geometry_mismatch():
    """Tests that maps over different grids cannot be fused."""
    other = GridGeometry(origin_x=1.0, origin_y=0.0, cell_size=1.0, n_rows=1, n_cols=5)
    a = _line_map([G] * 5, [1.0] * 5, "lidar")
    b = TraversabilityMap.from_labels(other, np.full(5, G), sensor="stereo")
    with pytest.raises(ParameterError, match="geometry"):
        fuse_maps(a, b, (LIDAR, STEREO))


def test_coverage_and_co_observed():
    """Tests the labelled fractions and the co-observed mask."""
    a = _line_map([G, G, N, U, U], [1, 1, 20, np.nan, np.nan], "lidar")
    b = _line_map([U, N, G, G, U], [np.nan, 20, 1, 1, np.nan], "stereo")
    assert coverage(a) == {"labelled": 0.6, "lidar": 0.6}
    assert co_observed(a, b)[0].tolist() == [False, True, True, False, False]


# --- Complementary-noise benchmark ---

def _accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    return metrics(confusion(pred, truth)).accuracy


def _benchmark(seed: int) -> tuple[float, float, float]:
    """(lidar, stereo, fused) accuracy on co-observed cells for one seed."""
    g = FUSION_GEOMETRY
    region = StartRegion(x_min=g.origin_x, x_max=g.x_max, y_min=g.origin_y, y_max=g.y_max)
    bootstrap_spec, test_spec = fusion_benchmark(seed)
    bootstrap_scene, test_scene = generate_scene(bootstrap_spec), generate_scene(test_spec)
    stereo_params, lidar_params = fusion_scan_params()

    maps = {}
    for sensor, params in (("lidar", lidar_params), ("stereo", stereo_params)):
        clf = SelfLearningGroundClassifier(g, start_region=region, voxel=None, confidence=0.95, sensor=sensor)
        clf.process(render_surface_scan(bootstrap_scene, params, seed, 0, stream=f"bootstrap-{sensor}"))
        maps[sensor] = clf.process(render_surface_scan(test_scene, params, seed, 1, stream=sensor))

    fused = fuse_maps(maps["lidar"], maps["stereo"], (LIDAR, STEREO))
    truth = ground_truth(test_scene, g).labels
    mask = co_observed(maps["lidar"], maps["stereo"])
    return tuple(_accuracy(m.labels[mask], truth[mask]) for m in (maps["lidar"], maps["stereo"], fused))


@pytest.mark.slow
def test_fusion_dominates_single_sensors():
    """Tests that fused accuracy on co-observed cells never trails the best sensor and usually beats it."""
    strictly_better = 0
    for seed in range(20):
        acc_l, acc_s, acc_f = _benchmark(seed)
        best = max(acc_l, acc_s)
        assert acc_f >= best - 0.001, f"seed {seed}: fused {acc_f:.4f} vs best {best:.4f}"
        strictly_better += acc_f > best
    assert strictly_better >= 15


@pytest.mark.slow
def test_fusion_benchmark_with_ray_cast_sensors():
    """Tests the fusion benchmark scenes through the ray-cast stereo and LIDAR renderers."""
    seed = 0
    g = FUSION_GEOMETRY
    region = StartRegion(x_min=g.origin_x, x_max=g.x_max, y_min=g.origin_y, y_max=g.y_max)
    bootstrap_spec, test_spec = fusion_benchmark(seed)
    bootstrap_scene, test_scene = generate_scene(bootstrap_spec), generate_scene(test_spec)
    sensors = SensorParams()
    renderers = {
        "lidar": lambda scene, frame: render_lidar_scan(scene, sensors.lidar, seed, frame),
        "stereo": lambda scene, frame: render_stereo_cloud(scene, sensors.stereo, seed, frame),
    }

    maps = {}
    for sensor, render in renderers.items():
        clf = SelfLearningGroundClassifier(g, start_region=region, confidence=0.95, sensor=sensor)
        clf.process(render(bootstrap_scene, 0))
        maps[sensor] = clf.process(render(test_scene, 1))

    fused = fuse_maps(maps["lidar"], maps["stereo"], (LIDAR, STEREO))
    mask = co_observed(maps["lidar"], maps["stereo"])
    assert mask.sum() > 0
    assert set(np.unique(fused.labels[mask])) <= {G, N}
    # equal thresholds: a weighted mean of two scores on one side of the threshold stays there
    agree = mask & (maps["lidar"].labels == maps["stereo"].labels)
    np.testing.assert_array_equal(fused.labels[agree], maps["lidar"].labels[agree])
    truth = ground_truth(test_scene, g).labels
    assert _accuracy(fused.labels[mask], truth[mask]) >= 0.5
