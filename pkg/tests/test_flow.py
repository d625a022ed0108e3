import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from asfderain.flow import BlockMatchingFlow, estimate_flow, make_estimator, zero_flow
from asfderain.rainsim import background_clip


@pytest.mark.parametrize("speed", [(2.0, 1.0), (-3.0, 0.0), (0.0, -2.0), (5.0, 4.0)])
def test_recovers_integer_translation(speed):
    # band-limited texture: survives the coarse pyramid levels
    a = gaussian_filter(np.random.default_rng(4).uniform(0, 1, (48, 48, 3)), (1.5, 1.5, 0))
    b = np.roll(a, (int(speed[1]), int(speed[0])), axis=(0, 1))
    flow = BlockMatchingFlow()(a, b)
    m = 9
    assert np.all(flow[0, m:-m, m:-m] == speed[0])
    assert np.all(flow[1, m:-m, m:-m] == speed[1])


def test_smooth_texture_mostly_recovered():
    clip = background_clip(2, (48, 48), seed=4, speed=(-3.0, 0.0))
    flow = BlockMatchingFlow()(clip.frames[0], clip.frames[1])
    ok = (flow[0] == -3) & (flow[1] == 0)
    assert ok.mean() > 0.9


def test_identical_frames_give_zero_flow(rng):
    f = rng.uniform(0, 1, (20, 20, 3))
    assert np.all(BlockMatchingFlow()(f, f) == 0)


def test_flat_frames_resolve_ties_to_zero():
    f = np.full((16, 16, 3), 0.3)
    assert np.all(estimate_flow(f, f.copy()) == 0)


def test_flow_shape_and_dtype(rng):
    a = rng.uniform(0, 1, (17, 23, 3))
    flow = estimate_flow(a, a[::-1].copy())
    assert flow.shape == (2, 17, 23) and flow.dtype == np.float64


def test_registry():
    assert make_estimator("zero") is zero_flow
    with pytest.raises(ValueError):
        make_estimator("farneback")
    with pytest.raises(ValueError):
        zero_flow(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
