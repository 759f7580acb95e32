import csv
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsense import flowgraph as fg
from flowsense import training
from flowsense.model import ModelConfig, forward_windows, init_params, zero_params
from flowsense.neural import AdamState, Tape, Tensor, adam_step, ops
from flowsense.training import (
    HistoryRow,
    SplitSeries,
    TargetScaler,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    fit_target_scaler,
    rmse,
    train,
    write_history_csv,
)

CFG = ModelConfig.desk(hidden_dim=12, embed_dim=8, tf_model_dim=8, tf_ff_dim=16, head_hidden=8, tf_layers=1, tf_heads=2)
FAST = TrainConfig(learning_rate=3e-3, max_epochs=4, patience=10, seed=2)


def test_scaler_example():
    s = fit_target_scaler([1.0, 3.0])
    assert (s.mean, s.std) == (2.0, 1.0)
    assert s.apply(3.0) == 1.0 and s.apply(2.0) == 0.0


@settings(max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30).filter(lambda v: np.std(v) > 1e-6))
def test_scaler_round_trip(values):
    s = fit_target_scaler(values)
    assert np.allclose(s.invert(s.apply(values)), values, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(values))))


@pytest.mark.parametrize("bad", [[5.0, 5.0, 5.0], [1.0], [1.0, float("nan")]])
def test_scaler_rejects_degenerate_targets(bad):
    with pytest.raises(ValueError):
        fit_target_scaler(bad)


def test_rmse_examples():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmse([1, 2, 3], [2, 2, 2]) == pytest.approx(math.sqrt(2 / 3), abs=1e-15)
    assert rmse([0, 0], [1, 1]) == 1.0
    with pytest.raises(ValueError):
        rmse([1, 2], [1])
    with pytest.raises(ValueError):
        rmse([], [])


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(-4000, 4000), st.integers(-4000, 4000)), min_size=1, max_size=20))
def test_rmse_symmetric_and_nonnegative(pairs):
    y, yh = (np.array(v) / 4.0 for v in zip(*pairs))
    r = rmse(y, yh)
    assert r == rmse(yh, y) and r >= 0
    assert (r == 0) == all(a == b for a, b in pairs)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(frozen=("decoder",))


@pytest.fixture(scope="module")
def trained(data_a):
    return train(CFG, FAST, data_a)


def test_training_is_deterministic(trained, data_a):
    params, history = trained
    again, history2 = train(CFG, FAST, data_a)
    assert history == history2
    assert all(np.array_equal(params[k], again[k]) for k in params)


def test_returned_params_are_best_on_validation(trained, data_a):
    params, history = trained
    train_split, val_split, _ = data_a.split()
    scaler = fit_target_scaler(f.target for f in train_split.frames)
    best = evaluate(CFG, params, val_split, scaler)
    assert len(history) == FAST.max_epochs
    assert all(best <= row.val_rmse + 1e-12 for row in history)


def test_early_stopping(data_a):
    _, history = train(CFG, replace(FAST, learning_rate=0.05, max_epochs=50, patience=2), data_a)
    vals = [r.val_rmse for r in history]
    assert len(vals) < 50
    # the run ends exactly when the last two epochs failed to beat the best before them
    assert min(vals[-2:]) >= min(vals[:-2])
    assert all(min(vals[: i - 2]) > min(vals[i - 2 : i]) for i in range(3, len(vals)))


def test_constant_target_dataset_rejected(data_a):
    frames = tuple(replace(f, target=0.9) for f in data_a.frames)
    with pytest.raises(ValueError, match="zero variance"):
        train(CFG, FAST, replace(data_a, frames=frames))


def test_zero_predictor_scores_about_one(data_a):
    train_split = data_a.split()[0]
    scaler = fit_target_scaler(f.target for f in train_split.frames)
    got = evaluate(CFG, zero_params(CFG), train_split, scaler)
    y = scaler.apply([f.target for f in train_split.frames[CFG.lookback - 1 :]])
    assert got == pytest.approx(math.sqrt(np.mean(y**2)), abs=1e-12)
    assert got == pytest.approx(1.0, abs=0.1)


def test_evaluate_is_pure(trained, data_a):
    scaler = TargetScaler(0.98, 0.001)
    split = data_a.split()[1]
    assert evaluate(CFG, trained[0], split, scaler) == evaluate(CFG, trained[0], split, scaler)


def test_single_adam_step_reduces_window_loss(data_a):
    train_split = data_a.split()[0]
    data = SplitSeries.build(train_split, fit_target_scaler(f.target for f in train_split.frames), CFG.lookback)
    ends = data.ends[:1]
    nf, ef, widx = data.series.window_frames(ends, CFG.lookback)
    params = init_params(CFG, 0)

    def loss_and_grads(p):
        tensors = {k: Tensor(v, requires_grad=True) for k, v in p.items()}
        with Tape() as tape:
            loss = ops.mse(forward_windows(CFG, tensors, data.series.graph, nf, ef, widx), data.y[:1])
        return float(loss.value), tape.gradient(loss, tensors)

    before, grads = loss_and_grads(params)
    stepped, _ = adam_step(params, grads, AdamState(learning_rate=1e-6))
    after, _ = loss_and_grads(stepped)
    assert after < before


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_divergence_reports_epoch(data_a, monkeypatch):
    calls = {"n": 0}
    real = training.adam_step

    def poisoned(params, grads, state):
        calls["n"] += 1
        new, st = real(params, grads, state)
        if calls["n"] == 3:
            new = {k: np.full_like(v, np.inf) for k, v in new.items()}
        return new, st

    monkeypatch.setattr(training, "adam_step", poisoned)
    with pytest.raises(TrainingDiverged) as info:
        train(CFG, replace(FAST, max_epochs=10), data_a)
    assert info.value.epoch == 3


def test_few_shot_prefix_and_frozen_groups(data_a):
    init = init_params(CFG, 1)
    params, history = train(CFG, replace(FAST, frozen=("gnn",), max_epochs=2), data_a, init=init, n_windows=7)
    assert len(history) == 2
    for k in init:
        if k.startswith("gnn."):
            assert np.array_equal(params[k], init[k])
    with pytest.raises(ValueError):
        train(CFG, FAST, data_a, n_windows=10_000)


def test_history_csv(tmp_path):
    rows = [HistoryRow(1, 0.5, 0.25), HistoryRow(2, 0.125, 1 / 3)]
    path = tmp_path / "h.csv"
    write_history_csv(path, rows)
    got = list(csv.reader(path.open()))
    assert got[0] == ["epoch", "train_loss", "val_rmse"]
    assert len(got) == 3 and float(got[2][2]) == 1 / 3


def test_log_scale_reexported():
    assert training.log_scale is fg.log_scale
