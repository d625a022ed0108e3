import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asfderain.rede import (
    MixCoefficients,
    Ranges,
    ReDeDraw,
    TransformChain,
    TransformOp,
    apply_chain,
    apply_draw,
    rede,
    sample_chain,
)


def _layers(seed, shape=(3, 16, 16, 3)):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 0.6, shape), rng.uniform(0, 0.6, shape)


def test_same_seed_same_output():
    s_u, s_l = _layers(0)
    a = rede(s_u, s_l, np.random.default_rng(9))
    b = rede(s_u, s_l, np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_output_in_unit_range(seed):
    rng = np.random.default_rng(seed)
    s_u = rng.uniform(0, 1.5, (2, 12, 12, 3))  # even out-of-range inputs stay bounded
    s_l = rng.uniform(0, 1.5, (2, 12, 12, 3))
    out = rede(s_u, s_l, rng)
    assert out.min() >= 0.0 and out.max() <= 1.0


@pytest.mark.parametrize("use_real", [True, False])
def test_identity_at_m_one(use_real):
    s_u, s_l = _layers(1)
    ident = TransformChain.identity()
    draw = ReDeDraw(use_real, ident, ident, MixCoefficients((0.3, 0.7), 1.0))
    expect = s_u if use_real else s_l
    np.testing.assert_array_equal(apply_draw(s_u, s_l, draw), expect)


def test_identity_chain_is_exact():
    s, _ = _layers(2)
    np.testing.assert_array_equal(apply_chain(s, TransformChain.identity()), s)


def test_single_pixel_translation_closed_form():
    s = np.zeros((9, 9, 3))
    s[4, 4] = 0.8
    t1 = TransformChain([TransformOp("translation", (2.0, 0.0))])
    t2 = TransformChain([TransformOp("translation", (-1.0, 3.0))])
    u, m = 0.25, 0.4
    out = apply_draw(s, np.zeros_like(s), ReDeDraw(True, t1, t2, MixCoefficients((u, 1 - u), m)))
    expect = np.zeros_like(s)
    expect[4, 4] = m * 0.8
    expect[4, 6] = (1 - m) * u * 0.8  # moved +2 in x
    expect[7, 3] = (1 - m) * (1 - u) * 0.8  # moved -1 in x, +3 in y
    np.testing.assert_allclose(out, expect, rtol=0, atol=1e-12)


def test_rotation_by_ninety_degrees():
    s = np.zeros((5, 5, 1))
    s[0, 2] = 1.0  # above the centre
    out = apply_chain(s, TransformChain([TransformOp("rotation", (90.0,))]))
    # x' = -y, y' = x about (2, 2): (2, 0) -> (4, 2)
    assert out[2, 4, 0] == pytest.approx(1.0)
    assert out.sum() == pytest.approx(1.0)


def test_zoom_about_centre_keeps_centre():
    s = np.zeros((7, 7, 1))
    s[3, 3] = 1.0
    out = apply_chain(s, TransformChain([TransformOp("zoom", (2.0,))]))
    assert out[3, 3, 0] == pytest.approx(1.0)


def test_chain_composes_in_order():
    a = TransformOp("translation", (1.0, 0.0))
    b = TransformOp("rotation", (90.0,))
    m = TransformChain([a, b]).matrix((5, 5))
    np.testing.assert_allclose(m, b.matrix((5, 5)) @ a.matrix((5, 5)))


def test_chain_length_distribution():
    rng = np.random.default_rng(0)
    n = 3000
    lengths = np.array([len(sample_chain(rng).ops) for _ in range(n)])
    assert set(lengths) == {1, 2, 3}
    p = 1 / 3
    sigma = np.sqrt(n * p * (1 - p))
    for k in (1, 2, 3):
        assert abs((lengths == k).sum() - n * p) < 3 * sigma


def test_sampled_parameters_respect_ranges():
    rng = np.random.default_rng(1)
    r = Ranges()
    for _ in range(300):
        for op in sample_chain(rng, (40, 80), r).ops:
            if op.kind == "rotation":
                assert r.rotation[0] <= op.params[0] <= r.rotation[1]
            elif op.kind == "zoom":
                assert r.zoom[0] <= op.params[0] <= r.zoom[1]
            elif op.kind == "shear":
                assert r.shear[0] <= op.params[0] <= r.shear[1]
            else:
                assert abs(op.params[0]) <= 0.25 * 80 and abs(op.params[1]) <= 0.25 * 40


def test_mix_validation():
    with pytest.raises(ValueError):
        MixCoefficients((0.5, 0.6), 0.5)
    with pytest.raises(ValueError):
        MixCoefficients((0.5, 0.5), 1.5)
    with pytest.raises(ValueError):
        apply_draw(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)),
                   ReDeDraw(True, TransformChain(), TransformChain(), MixCoefficients((1.0, 0.0), 0.0)))
