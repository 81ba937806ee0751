import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steerlearn import autodiff as ad
from steerlearn.models import (
    CONV3D_LSTM_PARAM_COUNT,
    NVIDIA_PARAM_COUNT,
    TRANSFER_PARAM_COUNT,
    TRANSFER_PARAM_COUNT_WITH_BN_STATS,
    GraphBuilder,
    build_conv3d_lstm,
    build_nvidia,
    build_transfer,
    forward,
    load_conv3d_lstm_config,
    param_count,
    param_nodes,
)
from steerlearn.tensor_core import ShapeError

DESK_CLIP = (5, 5, 24, 64, 3)
DESK_FRAME = (32, 32, 3)


def desk_transfer(freeze=10, **kw):
    return build_transfer(input_shape=DESK_FRAME, trunk_depth=1, width=4, freeze_layers=freeze, **kw)


def test_param_count_dense_and_conv_by_hand():
    b = GraphBuilder("t", (3,))
    b.dense("fc", 2)
    assert param_count(b.g) == 3 * 2 + 2
    b = GraphBuilder("t", (8, 8, 3))
    b.conv("c", 16, (3, 3))
    assert param_count(b.g) == 3 * 3 * 3 * 16 + 16


def nvidia_count_by_hand():
    total, h, w, c = 0, 120, 320, 3
    for f, k, s in [(24, 5, 2), (36, 5, 2), (48, 5, 2), (64, 3, 1), (64, 3, 1)]:
        total += k * k * c * f + f
        h, w, c = (h - k) // s + 1, (w - k) // s + 1, f
    n = h * w * c
    for units in (100, 50, 10, 1):
        total += n * units + units
        n = units
    return total


def test_nvidia_count_matches_hand_arithmetic():
    g = build_nvidia()
    assert param_count(g) == nvidia_count_by_hand() == NVIDIA_PARAM_COUNT


def test_conv3d_lstm_default_count():
    assert param_count(build_conv3d_lstm()) == CONV3D_LSTM_PARAM_COUNT == 543_131


def test_transfer_full_depth_counts():
    g = build_transfer()
    assert param_count(g) == TRANSFER_PARAM_COUNT
    assert param_count(g, include_buffers=True) == TRANSFER_PARAM_COUNT_WITH_BN_STATS == 24_784_641
    assert g.build_args["trunk_layers"] == 175


def test_transfer_head_widths():
    g = build_transfer()
    assert [g.params[f"{n}/kernel"].shape[1] for n in ("fc1", "fc2", "fc3", "fc_out")] == [512, 256, 64, 1]
    assert g.params["res5c_branch2c/kernel"].shape[-1] == 2048


def test_conv3d_lstm_config_file():
    cfg = load_conv3d_lstm_config()
    assert cfg["residual_blocks"] == 2 and len(cfg["lstm"]) == 2


def test_models_validate():
    for g in (build_nvidia(), build_conv3d_lstm(), desk_transfer()):
        g.validate()
        assert len(set(g.params)) == len(g.params)


@pytest.mark.parametrize("batch", [1, 2, 32])
def test_nvidia_batch_contract(batch):
    g = build_nvidia()
    x = np.random.default_rng(batch).uniform(-1, 1, (batch, 120, 320, 3)).astype(np.float32)
    y = forward(g, x)
    assert y.shape == (batch,) and np.all(np.isfinite(y.value))


@pytest.mark.parametrize("batch", [1, 2, 32])
def test_conv3d_lstm_batch_contract(batch):
    g = build_conv3d_lstm(input_shape=DESK_CLIP)
    x = np.random.default_rng(batch).uniform(-1, 1, (batch, *DESK_CLIP)).astype(np.float32)
    assert forward(g, x).shape == (batch,)
    assert forward(g, x, training=batch > 1).shape == (batch,)


@pytest.mark.parametrize("batch", [1, 2, 32])
def test_transfer_batch_contract(batch):
    g = desk_transfer()
    x = np.random.default_rng(batch).uniform(-1, 1, (batch, *DESK_FRAME)).astype(np.float32)
    assert forward(g, x).shape == (batch,)


def test_full_size_models_single_sample():
    assert forward(build_conv3d_lstm(), np.zeros((1, 5, 5, 120, 320, 3), np.float32)).shape == (1,)
    assert forward(build_transfer(), np.zeros((1, 224, 224, 3), np.float32)).shape == (1,)


def test_zero_image_finite_output():
    g = build_nvidia()
    g.params["fc_out/bias"][:] = 0
    assert np.isfinite(forward(g, np.zeros((1, 120, 320, 3), np.float32)).value).all()


def test_wrong_input_shape_raises():
    with pytest.raises(ShapeError):
        forward(build_nvidia(), np.zeros((1, 66, 200, 3), np.float32))


@pytest.mark.parametrize("builder", [build_nvidia, lambda seed: build_conv3d_lstm(DESK_CLIP, seed=seed), lambda seed: desk_transfer(seed=seed)])
def test_same_seed_same_initial_params(builder):
    a, b, c = builder(seed=3), builder(seed=3), builder(seed=4)
    assert a.params.keys() == b.params.keys()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params if k.endswith("kernel"))


def test_initialization_conventions():
    g = build_conv3d_lstm(DESK_CLIP)
    assert not g.params["fc1/bias"].any()
    assert np.all(g.params["shrink_in1_bn/gamma"] == 1) and not g.params["shrink_in1_bn/beta"].any()
    k = g.params["fc1/kernel"]
    assert abs(k.std() - np.sqrt(2 / k.shape[0])) < 0.2 * np.sqrt(2 / k.shape[0])


def test_conv3d_lstm_gradient_reaches_first_conv():
    g = build_conv3d_lstm(DESK_CLIP, precision="double")
    nodes = param_nodes(g)
    x = np.random.default_rng(0).uniform(-1, 1, (2, *DESK_CLIP))
    out = forward(g, x, training=True, nodes=nodes)
    first = nodes["shrink_in1/kernel"]
    grad = ad.backward(ad.sum(out), wrt=[first])[first.id]
    assert np.abs(grad).max() > 0


def test_freeze_zero_makes_everything_trainable():
    g = desk_transfer(freeze=0)
    assert not g.frozen_names() and g.trainable_names() == list(g.params)


def test_default_freeze_is_45_layers_of_full_trunk():
    g = build_transfer()
    frozen_layers = {n.split("/")[0] for n in g.frozen_names()}
    expected = {p.split("/")[0] for layer in g.layers[:45] for p in layer.params}
    assert frozen_layers == expected
    # the 45th layer is the last conv of the first stage-3 block; its batch norm stays trainable
    assert "res3a_branch2c" in frozen_layers and "bn3a_branch2c" not in frozen_layers


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 55))
def test_frozen_names_are_exactly_first_layers(n):
    g = desk_transfer(freeze=n)
    prefix = {p for layer in g.layers[:n] for p in layer.params}
    assert set(g.frozen_names()) == prefix
    assert set(g.trainable_names()) == set(g.params) - prefix


def test_freeze_out_of_range():
    with pytest.raises(ValueError):
        desk_transfer(freeze=56)
    with pytest.raises(ValueError):
        desk_transfer(freeze=-1)


def test_transfer_trunk_depth_layer_count():
    g = desk_transfer()
    # input, pad, conv, bn, relu, pool, four projected bottlenecks of 13 layers, avg pool
    assert g.build_args["trunk_layers"] == 6 + 4 * 13 + 1 - 4
