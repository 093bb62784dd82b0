import numpy as np
import pytest

from fmri2ges.rng import stream, subseed


def test_same_names_same_stream():
    assert np.array_equal(stream(3, "a", 1).random(5), stream(3, "a", 1).random(5))


def test_names_separate_streams():
    a = stream(3, "a").random(1000)
    b = stream(3, "b").random(1000)
    c = stream(4, "a").random(1000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1
    assert not np.array_equal(a, c)


def test_subseed_deterministic():
    assert subseed(1, "x", 2) == subseed(1, "x", 2)
    assert subseed(1, "x", 2) != subseed(1, "x", 3)


def test_generator_rejected():
    with pytest.raises(TypeError):
        stream(np.random.default_rng(0))
