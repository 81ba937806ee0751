import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import adam_scalar
from steerlearn import augment as aug
from steerlearn import autodiff as ad
from steerlearn.dataset import ArraySamples
from steerlearn.models import build_transfer, forward
from steerlearn.synthetic import linear_ramp_samples, tiny_conv_model
from steerlearn.train_eval import (
    AdamState,
    DivergenceError,
    History,
    TrainConfig,
    adam_step,
    evaluate,
    mse,
    mse_value,
    rmse,
    train,
    zero_baseline,
)


def test_mse_examples():
    assert mse_value([0.1, 0.2], [0.1, 0.2]) == 0.0
    assert mse_value([0.0, 0.0], [0.3, -0.3]) == pytest.approx(0.09, abs=1e-17)
    assert rmse([0.0, 0.0], [0.3, -0.3]) == pytest.approx(0.3, abs=1e-16)
    with pytest.raises(ValueError):
        mse_value([], [])
    with pytest.raises(ValueError):
        mse(np.zeros(2), np.zeros(3))


def test_mse_gradient_formula_and_checker():
    pred, y = np.array([0.5, -0.2, 0.1]), np.array([0.1, 0.1, 0.1])
    (g,) = ad.grad(lambda p: mse(p, y), pred)
    np.testing.assert_allclose(g, 2 * (pred - y) / 3, rtol=1e-15)
    assert ad.finite_diff_check(lambda p: mse(p, y), [pred]).worst_rel < 1e-8


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.integers(0, 100))
def test_rmse_squared_is_mse(ys, seed):
    pred = np.random.default_rng(seed).normal(size=len(ys))
    m = mse_value(pred, ys)
    assert math.isclose(rmse(pred, ys) ** 2, m, rel_tol=4e-16, abs_tol=1e-300)


def test_zero_baseline_examples():
    assert zero_baseline([0.0, 0.0]) == 0.0
    assert zero_baseline([1.0, -1.0]) == 1.0
    assert zero_baseline(np.array([0.3, -0.3])) == pytest.approx(0.3, abs=1e-16)
    assert zero_baseline(ArraySamples(np.zeros((2, 1)), [3.0, 4.0])) == math.sqrt(12.5)
    with pytest.raises(ValueError):
        zero_baseline([])


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=50))
def test_zero_baseline_is_root_mean_square(ys):
    y = np.array(ys)
    assert zero_baseline(y) == math.sqrt(np.mean(y**2))


def test_adam_matches_scalar_reference_100_steps():
    grads = list(np.random.default_rng(0).normal(size=100))
    ref = adam_scalar(0.5, grads, decay=0.01)
    p = {"w": np.array([0.5])}
    st_ = AdamState(decay=0.01)
    for g, want in zip(grads, ref):
        adam_step(p, {"w": np.array([g])}, st_)
        assert abs(p["w"][0] - want) <= 1e-12
    assert st_.t == 100


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState())
    assert p["w"].tolist() == [1.0, -2.0]


def test_adam_first_step_is_about_lr():
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([1.0])}, AdamState())
    assert p["w"][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)


def test_decay_halves_lr_at_one_over_decay():
    s = AdamState(lr=0.01, decay=0.1)
    assert s.lr_at(10) == 0.005


def test_adam_shape_errors():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())
    with pytest.raises(KeyError):
        adam_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, AdamState())


@settings(max_examples=50)
@given(st.floats(0.1, 10), st.floats(-5, 5), st.floats(-5, 5))
def test_adam_step_decreases_quadratic(a, c, start):
    if abs(start - c) < 1e-2:
        return
    loss = lambda w: a * (w - c) ** 2  # noqa: E731
    p = {"w": np.array([start])}
    adam_step(p, {"w": np.array([2 * a * (start - c)])}, AdamState(lr=1e-3))
    assert loss(p["w"][0]) < loss(start)


def test_v_stays_nonnegative_and_shapes_mirror():
    p = {"a": np.zeros((2, 3)), "b": np.zeros(4)}
    s = AdamState()
    rng = np.random.default_rng(1)
    for _ in range(5):
        adam_step(p, {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=4)}, s)
    assert all(s.m[k].shape == p[k].shape and s.v[k].shape == p[k].shape and (s.v[k] >= 0).all() for k in p)


def test_train_config_decay_modes():
    assert TrainConfig(epochs=32, lr=0.001).decay == 0.001 / 32
    assert TrainConfig(batch_size=16, lr=0.001, decay_mode="per_batch").decay == 0.001 / 16
    assert TrainConfig(decay_mode="none").decay == 0.0
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_overfit_smoke_reaches_one_hundredth():
    data = linear_ramp_samples(16)
    g = tiny_conv_model()
    hist = train(g, data, TrainConfig(epochs=500, batch_size=16))
    assert min(hist.train_rmse) < 0.01
    assert evaluate(g, data) < 0.01


def test_overfit_loss_non_increasing_after_epoch_three():
    hist = train(tiny_conv_model(), linear_ramp_samples(16), TrainConfig(epochs=60, batch_size=16))
    r = hist.train_rmse
    assert all(r[i] <= 1.05 * r[i - 1] for i in range(3, len(r)))
    assert len(r) == len(hist.val_rmse) == len(hist.seconds) == 60


def test_train_is_deterministic(tmp_path):
    cfg = TrainConfig(epochs=3, batch_size=5, seed=4, timing=False)
    data = linear_ramp_samples(16)
    h1 = train(tiny_conv_model(), data, cfg, val_set=data, out_dir=tmp_path / "a")
    h2 = train(tiny_conv_model(), data, cfg, val_set=data, out_dir=tmp_path / "b")
    assert h1.train_rmse == h2.train_rmse and h1.val_rmse == h2.val_rmse
    for f in ("history.csv", "best.stck", "last.stck"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_history_csv_format(tmp_path):
    History([0.5, 0.25], [0.4, 0.3], [1.0, 2.0], seed=7).write_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "# seed=7"
    assert lines[1] == "epoch,train_rmse,val_rmse,seconds"
    assert lines[2] == "1,0.5,0.4,1.000"


def test_divergence_raises_with_context():
    data = ArraySamples(np.full((4, 16, 16, 3), np.nan, np.float32), [0.0] * 4)
    with pytest.raises(DivergenceError) as err:
        train(tiny_conv_model(), data, TrainConfig(epochs=2, batch_size=2))
    assert err.value.epoch == 1 and err.value.batch == 1


def test_frozen_transfer_params_unchanged_over_epoch():
    g = build_transfer(input_shape=(32, 32, 3), trunk_depth=1, width=4, freeze_layers=20)
    before = {k: v.copy() for k, v in g.params.items()}
    rng = np.random.default_rng(0)
    data = ArraySamples(rng.uniform(-1, 1, (12, 32, 32, 3)).astype(np.float32), rng.uniform(-0.3, 0.3, 12))
    train(g, data, TrainConfig(epochs=1, batch_size=4))
    assert all(np.array_equal(g.params[k], before[k]) for k in g.frozen_names())
    assert any(not np.array_equal(g.params[k], before[k]) for k in g.trainable_names())


def test_desk_transfer_overfits_sixteen_samples():
    g = build_transfer(input_shape=(16, 16, 3), trunk_depth=1, width=4, freeze_layers=10)
    data = linear_ramp_samples(16, shape=(16, 16, 3))
    hist = train(g, data, TrainConfig(epochs=150, batch_size=16, lr=0.001))
    assert hist.train_rmse[-1] < 0.01


def test_validation_never_augmented(tmp_path):
    frames = np.random.default_rng(0).integers(0, 256, (6, 20, 24, 3), dtype=np.uint8)
    data = ArraySamples(frames, np.linspace(-0.1, 0.1, 6))
    spec = aug.preset("heavy", seed=1, geometry="none")
    spec.trace = []
    from steerlearn.models import GraphBuilder

    b = GraphBuilder("lin", (20, 24, 3))
    b.flatten("flatten")
    b.dense("fc_out", 1)
    b.squeeze()
    train(b.finish(), data, TrainConfig(epochs=2, batch_size=3), val_set=data, pipeline=spec)
    train_calls = [t for t in spec.trace if t[0] == "train"]
    val_calls = [t for t in spec.trace if t[0] == "validation"]
    assert len(train_calls) == 12 and len(val_calls) == 12
    assert any(kinds for _, _, kinds in train_calls)
    assert all(kinds == () for _, _, kinds in val_calls)


def test_evaluate_examples():
    data = ArraySamples(np.zeros((2, 16, 16, 3), np.float32), [0.3, -0.3])
    g = tiny_conv_model()
    for k in g.params:
        g.params[k][:] = 0
    assert evaluate(g, data) == pytest.approx(0.3, abs=1e-7)
    with pytest.raises(ValueError):
        evaluate(g, ArraySamples(np.zeros((0, 16, 16, 3)), []))


def test_perfect_model_scores_zero():
    from steerlearn.models import GraphBuilder

    b = GraphBuilder("lin", (3,), precision="double")
    b.dense("fc_out", 1)
    b.squeeze()
    g = b.finish()
    x = np.random.default_rng(2).normal(size=(8, 3))
    data = ArraySamples(x, forward(g, x).value)
    assert evaluate(g, data) == 0.0
