# tests/common/test_rng.py

import numpy as np

from common.rng import stream_key, substream


def test_stream_key_is_stable():
    """Tests that stream keys do not depend on the process (no salted hashing)."""
    assert stream_key("stereo") == stream_key("stereo")
    assert stream_key("stereo") != stream_key("lidar")
    assert 0 <= stream_key("radar") < 2 ** 32


def test_substream_is_reproducible():
    """Tests that the same seed and names give the same draws."""
    a = substream(7, "stereo", 3).standard_normal(100)
    b = substream(7, "stereo", 3).standard_normal(100)
    np.testing.assert_array_equal(a, b)


def test_substreams_are_independent():
    """Tests that different names or seeds give different draws."""
    base = substream(7, "stereo", 3).standard_normal(100)
    assert not np.array_equal(base, substream(7, "lidar", 3).standard_normal(100))
    assert not np.array_equal(base, substream(7, "stereo", 4).standard_normal(100))
    assert not np.array_equal(base, substream(8, "stereo", 3).standard_normal(100))
