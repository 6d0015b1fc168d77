import numpy as np
import pytest

from lfssd.data import Dataset, FullClass, ForgetSplit, make_split, synthesize_blobs
from lfssd.errors import ConfigError, DivergenceError, EmptySelectionError
from lfssd.model import ModelSpec, ParameterVector, init_model
from lfssd.training import TrainConfig, accuracy, finetune_baseline, predict, retrain_baseline, train


@pytest.fixture
def setup():
    ds = synthesize_blobs(3, 40, 4, 6.0, seed=2)
    spec = ModelSpec((4, 16, 3), init_seed=1)
    return spec, ds


def test_zero_learning_rate_is_bitwise_noop(setup):
    spec, ds = setup
    theta0 = init_model(spec)
    theta, _ = train(spec, theta0, ds, np.arange(len(ds)), TrainConfig(epochs=3, learning_rate=0.0))
    assert theta.values.tobytes() == theta0.values.tobytes()


def test_loss_decreases_on_separable_blobs(setup):
    spec, ds = setup
    _, losses = train(spec, init_model(spec), ds, np.arange(len(ds)), TrainConfig(epochs=20, learning_rate=0.02))
    assert losses[-1] < losses[0]
    assert accuracy(spec, _, ds, np.arange(len(ds))) >= 95.0


def test_training_is_deterministic(setup):
    spec, ds = setup
    cfg = TrainConfig(epochs=4, shuffle_seed=11, learning_rate=0.02)
    a, la = train(spec, init_model(spec), ds, np.arange(len(ds)), cfg)
    b, lb = train(spec, init_model(spec), ds, np.arange(len(ds)), cfg)
    assert a.values.tobytes() == b.values.tobytes()
    assert la == lb


def test_index_order_does_not_matter(setup):
    spec, ds = setup
    cfg = TrainConfig(epochs=2, learning_rate=0.02)
    idx = np.arange(len(ds))
    a, _ = train(spec, init_model(spec), ds, idx, cfg)
    b, _ = train(spec, init_model(spec), ds, idx[::-1].copy(), cfg)
    assert a.values.tobytes() == b.values.tobytes()


def test_divergence_is_reported():
    spec = ModelSpec((1, 2), init_seed=0)
    ds = Dataset(np.array([[1.0], [2.0], [3.0], [4.0]]), np.array([0, 1, 0, 1]))
    cfg = TrainConfig(epochs=5, batch_size=1, learning_rate=1e308)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
        train(spec, init_model(spec), ds, np.arange(4), cfg)
    assert info.value.epoch == 0


def test_bad_config_and_empty_indices(setup):
    spec, ds = setup
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(momentum=1.0)
    with pytest.raises(EmptySelectionError):
        train(spec, init_model(spec), ds, [], TrainConfig())


def test_accuracy_counting():
    spec = ModelSpec((1, 2))
    theta = ParameterVector(spec, np.array([0.0, 0.0, 1.0, 0.0]))  # always predicts class 0
    ds = Dataset(np.zeros((4, 1)), np.array([0, 0, 0, 1]))
    assert accuracy(spec, theta, ds, np.arange(4)) == 75.0
    assert accuracy(spec, theta, ds, [3]) == 0.0
    assert accuracy(spec, theta, ds, [0, 1]) == 100.0


def test_argmax_ties_go_to_lowest_index():
    spec = ModelSpec((1, 3))
    theta = ParameterVector(spec, np.zeros(6))
    assert predict(spec, theta, np.ones((2, 1))).tolist() == [0, 0]


def test_retrain_forgets_a_full_class(setup):
    spec, ds = setup
    split = make_split(ds, FullClass(1))
    cfg = TrainConfig(epochs=20, learning_rate=0.02)
    theta = retrain_baseline(spec, ds, split, cfg)
    assert accuracy(spec, theta, ds, split.retain_indices) >= 95.0
    # the forgotten class's output unit is never trained; at most chance
    assert accuracy(spec, theta, ds, split.forget_indices) <= 100.0 / 3


def test_retrain_with_empty_forget_set_equals_plain_training(setup):
    spec, ds = setup
    cfg = TrainConfig(epochs=2, learning_rate=0.02)
    split = ForgetSplit.from_forget(len(ds), [])
    plain, _ = train(spec, init_model(spec), ds, np.arange(len(ds)), cfg)
    assert retrain_baseline(spec, ds, split, cfg).values.tobytes() == plain.values.tobytes()


def test_finetune(setup):
    spec, ds = setup
    cfg = TrainConfig(epochs=20, learning_rate=0.02)
    theta, _ = train(spec, init_model(spec), ds, np.arange(len(ds)), cfg)
    split = make_split(ds, FullClass(0))
    assert finetune_baseline(spec, theta, ds, split, cfg, epochs=0).values.tobytes() == theta.values.tobytes()
    tuned = finetune_baseline(spec, theta, ds, split, cfg, epochs=2)
    before = accuracy(spec, theta, ds, split.retain_indices)
    assert abs(accuracy(spec, tuned, ds, split.retain_indices) - before) <= 5.0
    again = finetune_baseline(spec, theta, ds, split, cfg, epochs=2)
    assert tuned.values.tobytes() == again.values.tobytes()
