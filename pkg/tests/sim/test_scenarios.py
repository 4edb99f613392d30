# tests/sim/test_scenarios.py

import math

import numpy as np
import pytest

from sim.scenarios import (
    DRIFT_GEOMETRY,
    FUSION_GEOMETRY,
    drift_sequence,
    fusion_benchmark,
    fusion_scan_params,
    person_in_maize,
    pole_field,
)
from sim.scene import generate_scene


def test_drift_sequence_ramps_terrain():
    """Tests that frame 0 is obstacle-free and the terrain offset and slope ramp linearly."""
    frames = drift_sequence(n_frames=5, seed=2, final_offset=0.4, final_slope=0.02)
    assert len(frames) == 5
    assert frames[0].obstacles == []
    assert [f.ground.z0 for f in frames] == pytest.approx([0.0, 0.1, 0.2, 0.3, 0.4])
    assert frames[-1].ground.slope_x == pytest.approx(0.02)
    assert all(len(f.obstacles) == 8 for f in frames[1:])


def test_drift_boxes_are_centred_in_cells_and_reproducible():
    """Tests that boxes sit on cell centres and the same seed yields the same boxes."""
    a = drift_sequence(n_frames=3, seed=7)
    b = drift_sequence(n_frames=3, seed=7)
    assert a == b
    cx, cy = DRIFT_GEOMETRY.centers()
    centres = set(zip(np.round(cx.ravel(), 9), np.round(cy.ravel(), 9)))
    for ob in a[1].obstacles:
        assert (round(ob.x, 9), round(ob.y, 9)) in centres
    for spec in a:
        generate_scene(spec)


def test_fusion_benchmark_pair():
    """Tests that only the test scene holds boxes and both share the terrain."""
    bootstrap, test = fusion_benchmark(seed=3)
    assert bootstrap.obstacles == []
    assert len(test.obstacles) == 12
    assert bootstrap.ground == test.ground
    cx, _ = FUSION_GEOMETRY.centers()
    assert min(ob.x for ob in test.obstacles) >= cx[0, 3] - 1e-9
    stereo, lidar = fusion_scan_params()
    assert lidar.max_range == 17.0
    assert stereo.spacing < lidar.spacing


def test_pole_field_separation():
    """Tests pole count, range and bearing separation."""
    spec = pole_field(seed=5, n_poles=4)
    assert len(spec.obstacles) == 4
    bearings = [math.degrees(math.atan2(o.y, o.x)) for o in spec.obstacles]
    ranges = [math.hypot(o.x, o.y) for o in spec.obstacles]
    assert all(8.0 - 1e-9 <= r <= 25.0 + 1e-9 for r in ranges)
    assert all(abs(b) <= 20.0 + 1e-9 for b in bearings)
    for i in range(4):
        for j in range(i + 1, 4):
            assert abs(bearings[i] - bearings[j]) >= 4.0 - 1e-9


def test_person_in_maize_toggle():
    """Tests that the person is the only difference between the two maize scenes."""
    with_person = person_in_maize(seed=1)
    without = person_in_maize(seed=1, with_person=False)
    assert [o.kind for o in with_person.obstacles] == ["person"]
    assert without.obstacles == []
    assert with_person.crops == without.crops
