from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from steerlearn import autodiff as ad
from steerlearn import saliency as sal
from steerlearn.models import GraphBuilder, forward
from steerlearn.synthetic import tiny_conv_model

GOLDEN = Path(__file__).parent / "data"

grads = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)), elements=st.floats(-1e3, 1e3))


def linear_model(shape=(4, 5, 3), seed=0):
    b = GraphBuilder("linear", shape, seed=seed, precision="double")
    b.flatten("flatten")
    b.dense("fc_out", 1)
    b.squeeze()
    return b.finish()


def golden_fixture():
    y, x = np.mgrid[0:48, 0:64]
    image = np.stack([x * 4, y * 5, (x + y) * 2], axis=-1).clip(0, 255).astype(np.uint8)
    smap = np.exp(-((x - 40) ** 2 + (y - 20) ** 2) / 60.0)
    return image, smap / smap.max()


def test_linear_model_gradient_is_weights():
    g = linear_model()
    x = np.random.default_rng(1).normal(size=(4, 5, 3))
    w = g.params["fc_out/kernel"][:, 0].reshape(4, 5, 3)
    assert np.array_equal(sal.input_gradient(g, x), w)


def test_linear_model_saliency_proportional_to_abs_weights():
    g = linear_model(seed=3)
    w = g.params["fc_out/kernel"][:, 0].reshape(4, 5, 3)
    smap = sal.to_map(sal.input_gradient(g, np.zeros((4, 5, 3))))
    want = np.abs(w).max(axis=-1)
    np.testing.assert_allclose(smap, want / want.max(), rtol=0, atol=1e-6)


def test_input_gradient_batch_matches_single():
    g = linear_model()
    xs = np.random.default_rng(2).normal(size=(3, 4, 5, 3))
    batch = sal.input_gradient(g, xs)
    assert batch.shape == xs.shape
    assert all(np.array_equal(batch[i], sal.input_gradient(g, xs[i])) for i in range(3))


def test_constant_head_gives_zero_gradient():
    g = linear_model()
    g.params["fc_out/kernel"][:] = 0
    grad = sal.input_gradient(g, np.ones((4, 5, 3)))
    assert not grad.any()
    assert not sal.to_map(grad).any()


def test_tiny_conv_gradient_matches_finite_differences():
    g = tiny_conv_model(input_shape=(6, 6, 3), precision="double", seed=2)
    x = np.random.default_rng(5).uniform(-1, 1, (6, 6, 3))
    analytic = sal.input_gradient(g, x)
    f = lambda inp: ad.sum(forward(g, ad.reshape(inp, (1, 6, 6, 3))))  # noqa: E731
    rep = ad.finite_diff_check(f, [x], eps=1e-3, richardson=True)
    assert rep.worst_rel < 1e-6
    assert np.abs(analytic).max() > 0


def test_to_map_examples():
    assert not sal.to_map(np.zeros((3, 4, 3))).any()
    grad = np.zeros((3, 4, 3))
    grad[1, 2, 0] = -0.25
    smap = sal.to_map(grad)
    assert smap[1, 2] == 1.0 and smap.sum() == 1.0


@settings(max_examples=60)
@given(grads, st.floats(1e-6, 1e6))
def test_to_map_scale_invariant(grad, k):
    a, b = sal.to_map(grad), sal.to_map(grad * k)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    if a.any():
        assert a.max() == 1.0
        assert np.array_equal(np.flatnonzero(a == a.max()), np.flatnonzero(b == b.max()))


@settings(max_examples=30)
@given(arrays(np.float64, (5, 5, 3, 4, 3), elements=st.floats(-10, 10)))
def test_collapse_is_max_of_frame_maps(frames):
    raw = np.abs(frames).max(axis=-1)
    top = raw.max(axis=(0, 1))
    want = top / top.max() if top.max() > 0 else top
    collapsed = sal.collapse_sequence(frames)
    np.testing.assert_allclose(collapsed, want, rtol=1e-15)
    if raw.max() > 0:
        # monotone: never below any single frame's un-normalized share
        assert np.all(collapsed * raw.max() >= raw - 1e-12)


def test_collapse_examples():
    g = np.random.default_rng(0).normal(size=(3, 4, 3))
    assert np.array_equal(sal.collapse_sequence([g] * 25), sal.to_map(g))
    frames = [g * 1e-3] * 24 + [g]
    assert np.array_equal(sal.collapse_sequence(frames), sal.to_map(g))
    a, b = np.zeros((3, 4, 3)), np.zeros((3, 4, 3))
    a[0, 0, 1], b[2, 3, 2] = 1.0, 0.5
    m = sal.collapse_sequence([a, b] + [np.zeros((3, 4, 3))] * 23)
    assert m[0, 0] == 1.0 and m[2, 3] == 0.5
    with pytest.raises(ValueError):
        sal.collapse_sequence([np.zeros((3, 4, 3)), np.zeros((3, 5, 3))])


def test_zero_map_render_is_input(tmp_path):
    image, _ = golden_fixture()
    out = sal.render(image, np.zeros(image.shape[:2]), tmp_path / "z.png")
    assert np.array_equal(out, image)
    assert np.array_equal(np.asarray(Image.open(tmp_path / "z.png")), image)


def test_dial_markers_coincide_when_equal(tmp_path):
    image, _ = golden_fixture()
    assert sal.dial_position(0.1, image.shape) == sal.dial_position(0.1, image.shape)
    out = sal.render_angle(image, 0.1, 0.1, tmp_path / "a.png")
    red = np.all(out == sal.PRED_COLOR, axis=-1)
    green = np.all(out == sal.TRUE_COLOR, axis=-1)
    assert red.any() and not green.any()  # red is drawn over an identical green marker


def test_dial_geometry():
    x, y = sal.dial_position(0.0, (100, 200))
    assert (x, y) == (99.5, 99 - 40)
    xr, _ = sal.dial_position(10.0, (100, 200))
    assert xr == pytest.approx(99.5 + 40)
    xl, _ = sal.dial_position(-0.1, (100, 200))
    assert xl < 99.5


def test_render_golden(tmp_path):
    image, smap = golden_fixture()
    sal.render(image, smap, tmp_path / "r.png")
    sal.render_angle(image, 0.05, -0.12, tmp_path / "a.png")
    for name, golden in (("r.png", "golden_render.png"), ("a.png", "golden_angle.png")):
        got, want = tmp_path / name, GOLDEN / golden
        assert np.array_equal(np.asarray(Image.open(got)), np.asarray(Image.open(want)))
        assert got.read_bytes() == want.read_bytes()


def test_normalized_to_uint8_inverts_normalize():
    from steerlearn.augment import normalize

    v = np.arange(256, dtype=np.uint8)
    assert np.array_equal(sal.normalized_to_uint8(normalize(v)), v)
