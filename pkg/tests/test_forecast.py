import numpy as np
import pytest

from fleetlab.forecast import DemandPredictor, fit_predictor, predict
from fleetlab.ingest import DemandTensor


def tensor_with(t, i, j, count, intervals=4, regions=2):
    out = DemandTensor.zeros(intervals, regions)
    out.counts[t, i, j] = count
    out.pool[(t, i, j)] = [(100.0, 60.0)] * count
    return out


def test_single_day_reproduced_exactly():
    day = tensor_with(2, 0, 1, 3)
    pred = fit_predictor([day])
    assert np.array_equal(pred.mean_table, day.counts.astype(float))
    assert pred.training_day_count == 1


def test_two_day_mean():
    pred = fit_predictor([tensor_with(1, 0, 1, 2), tensor_with(1, 0, 1, 4)])
    assert pred.mean_table[1, 0, 1] == 3.0


def test_all_zero_history():
    pred = fit_predictor([DemandTensor.zeros(4, 2), DemandTensor.zeros(4, 2)])
    assert np.all(pred.mean_table == 0.0)


def test_empty_history_rejected():
    with pytest.raises(ValueError):
        fit_predictor([])


def test_training_means_reproduced_in_index_order():
    rng = np.random.default_rng(5)
    days = []
    for _ in range(7):
        day = DemandTensor.zeros(6, 3)
        day.counts[:] = rng.integers(0, 9, size=(6, 3, 3))
        days.append(day)
    pred = fit_predictor(days)
    acc = np.zeros((6, 3, 3))
    for day in days:                       # same index-order summation
        acc += day.counts
    assert np.array_equal(pred.mean_table, acc / 7.0)


def test_predict_slices_and_purity():
    pred = fit_predictor([tensor_with(0, 0, 1, 2), tensor_with(3, 1, 0, 4)])
    first = predict(pred, 0, 1)
    assert first.shape == (1, 2, 2)
    assert first[0, 0, 1] == 1.0
    full = predict(pred, 0, 4)
    assert np.array_equal(full, pred.mean_table)
    assert np.array_equal(predict(pred, 1, 2), predict(pred, 1, 2))


def test_predict_window_validation():
    pred = fit_predictor([DemandTensor.zeros(4, 2)])
    with pytest.raises(ValueError):
        predict(pred, 0, 0)
    with pytest.raises(ValueError):
        predict(pred, 3, 2)


def test_predictor_roundtrip(tmp_path):
    pred = fit_predictor([tensor_with(1, 0, 1, 2), tensor_with(1, 0, 1, 3)])
    path = tmp_path / "predictor.csv"
    pred.save(path)
    back = DemandPredictor.load(path, intervals=4, regions=2)
    assert np.array_equal(back.mean_table, pred.mean_table)
