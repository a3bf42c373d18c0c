import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pigrn.data import NormalizationStats, SequenceBatch, trial_targets
from pigrn.dynamics import default_arm_model
from pigrn.metrics import (
    QUANTITIES,
    MetricReport,
    TrialPrediction,
    evaluate,
    metric_report_to_csv,
    metric_report_to_json,
    pct_rmse,
    pct_rmse_absmax,
    pearson,
    predict_batch,
    rmse,
    write_trial_prediction_csv,
)
from pigrn.nn import init_network
from pigrn.synth import TrialSpec, generate_trial
from pigrn.training import TrainConfig, train

MODEL = default_arm_model()


def make_eval_set(n_trials=3, n_steps=80, seed=0, noise=0.0, loads=None):
    if loads is None:
        loads = [[0.0, 2.0, 4.0][i % 3] for i in range(n_trials)]
    specs = [TrialSpec(load_kg=loads[i], n_total_steps=n_steps,
                       n_active_steps=int(0.6 * n_steps),
                       active_start=(3 * i) % (n_steps - int(0.6 * n_steps)),
                       noise_level=noise, seed=seed + i)
             for i in range(n_trials)]
    trials = [generate_trial(s, MODEL) for s in specs]
    targets = [trial_targets(t.kinematics, t.load_kg, len(t.kinematics))
               for t in trials]
    norm = NormalizationStats.from_training_targets(targets)
    batches = [SequenceBatch(inputs=t.emg.values, targets=norm.normalize(tg),
                             torque_labels=t.torque, load_label=t.load_kg)
               for t, tg in zip(trials, targets)]
    return batches, norm


def test_rmse_examples():
    assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    npt.assert_allclose(rmse([0.0, 1.0, 2.0], [0.0, 1.0, 3.0]),
                        math.sqrt(1.0 / 3.0), rtol=1e-15)


def test_rmse_shift_invariant_and_symmetric():
    rng = np.random.default_rng(0)
    y = rng.normal(size=40)
    yhat = rng.normal(size=40)
    base = rmse(y, yhat)
    npt.assert_allclose(rmse(y + 5.0, yhat + 5.0), base, rtol=1e-12)
    npt.assert_allclose(rmse(yhat, y), base, rtol=1e-15)


def test_rmse_errors():
    with pytest.raises(ValueError):
        rmse([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        rmse([], [])


def test_pct_rmse_example():
    # RMSE sqrt(1/3), max(y) = 2 -> 28.8675%
    value = pct_rmse([0.0, 1.0, 2.0], [0.0, 1.0, 3.0])
    npt.assert_allclose(value, math.sqrt(1.0 / 3.0) * 100.0 / 2.0, rtol=1e-15)
    npt.assert_allclose(value, 28.8675, atol=5e-5)
    assert pct_rmse([1.0, 2.0], [1.0, 2.0]) == 0.0


def test_pct_rmse_scale_invariant():
    rng = np.random.default_rng(1)
    y = rng.random(30) + 0.5
    yhat = y + rng.normal(0, 0.1, 30)
    base = pct_rmse(y, yhat)
    npt.assert_allclose(pct_rmse(3.0 * y, 3.0 * yhat), base, rtol=1e-12)


def test_pct_rmse_uses_signed_max():
    # series with negative maximum: the literal definition divides by a
    # negative number, the absolute variant stays positive
    y = np.array([-4.0, -2.0, -3.0])
    yhat = y + 0.5
    assert pct_rmse(y, yhat) < 0
    assert pct_rmse_absmax(y, yhat) > 0
    # signed max is -2, absolute max is 4: the literal value is twice as big
    npt.assert_allclose(abs(pct_rmse(y, yhat)) / 2.0,
                        pct_rmse_absmax(y, yhat), rtol=1e-12)


def test_pct_rmse_zero_max_error():
    with pytest.raises(ValueError):
        pct_rmse([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        pct_rmse([-1.0, 0.0], [0.0, 0.0])


def test_pearson_examples():
    x = np.arange(10.0)
    npt.assert_allclose(pearson(x, x), 1.0, rtol=1e-15)
    npt.assert_allclose(pearson(x, -x), -1.0, rtol=1e-15)
    # cross-checked against scipy.stats.pearsonr
    from scipy.stats import pearsonr
    x4 = np.array([1.0, 2.0, 3.0, 4.0])
    y4 = np.array([2.0, 4.0, 5.0, 9.0])
    ref = pearsonr(x4, y4).statistic
    npt.assert_allclose(pearson(x4, y4), ref, rtol=1e-12)


def test_pearson_zero_variance_error():
    with pytest.raises(ValueError):
        pearson([1.0, 1.0, 1.0], [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        pearson([0.0, 1.0], [2.0, 2.0])


def test_pearson_permutation_invariant():
    rng = np.random.default_rng(2)
    x = rng.normal(size=50)
    y = x + rng.normal(0, 0.3, 50)
    base = pearson(x, y)
    perm = rng.permutation(50)
    npt.assert_allclose(pearson(x[perm], y[perm]), base, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30),
       st.floats(0.1, 10.0), st.floats(-5.0, 5.0))
def test_pearson_affine_invariance(xs, a, b):
    x = np.asarray(xs)
    y = a * (2.0 * x + 1.0) + b
    # x must keep spread after the affine map's float rounding
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return
    r = pearson(x, y)
    npt.assert_allclose(r, 1.0, atol=1e-6)
    assert abs(r) <= 1.0 + 1e-12


def test_quantities_cover_all_outputs():
    assert QUANTITIES == ("shoulder_angle", "elbow_angle",
                          "shoulder_velocity", "elbow_velocity",
                          "shoulder_acceleration", "elbow_acceleration",
                          "load", "shoulder_torque", "elbow_torque")


def test_evaluate_on_memorized_set():
    # overfit a tiny noiseless set, then evaluate on the same trials;
    # nonzero loads keep the per-trial torque maxima away from zero
    batches, norm = make_eval_set(n_trials=2, n_steps=60, seed=3,
                                  loads=[2.0, 4.0])
    cfg = TrainConfig(epochs=1500, hidden=64, seed=4, dropout_p=0.0, lr=3e-3,
                      lambda_physics=0.0)
    net, _ = train(batches, cfg, MODEL, norm)
    report = evaluate(net, batches, MODEL, norm)
    assert report.n_trials == 2
    for name in QUANTITIES:
        assert abs(report.quantities[name].pct_rmse) < 1.0, name


def test_evaluate_random_network_is_uncorrelated():
    batches, norm = make_eval_set(n_trials=3, n_steps=80, seed=5)
    net = init_network(99, input_size=4, hidden_size=64, output_size=7)
    report = evaluate(net, batches, MODEL, norm)
    assert report.quantities["elbow_angle"].pearson_r < 0.5


def test_evaluate_deterministic(tmp_path):
    batches, norm = make_eval_set(n_trials=2, n_steps=60, seed=6)
    net = init_network(3, input_size=4, hidden_size=16, output_size=7)
    a = evaluate(net, batches, MODEL, norm)
    b = evaluate(net, batches, MODEL, norm)
    pa, pb = tmp_path / "a.json", tmp_path / "b.json"
    metric_report_to_json(a, pa)
    metric_report_to_json(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_predict_batch_contents():
    batches, norm = make_eval_set(n_trials=1, n_steps=60, seed=7)
    net = init_network(4, input_size=4, hidden_size=16, output_size=7)
    pred = predict_batch(net, batches[0], MODEL, norm)
    assert isinstance(pred, TrialPrediction)
    assert pred.truth.shape == (60, 7)
    assert pred.pred.shape == (60, 7)
    assert pred.torque_true.shape == (60, 2)
    assert pred.torque_pred.shape == (60, 2)
    assert pred.load_label == batches[0].load_label
    assert np.isfinite(pred.load_estimate)
    npt.assert_allclose(pred.truth, norm.denormalize(batches[0].targets),
                        rtol=1e-12)


def test_report_csv_and_json_round_trip(tmp_path):
    batches, norm = make_eval_set(n_trials=2, n_steps=60, seed=8)
    net = init_network(5, input_size=4, hidden_size=16, output_size=7)
    report = evaluate(net, batches, MODEL, norm)
    csv_path = tmp_path / "metrics.csv"
    metric_report_to_csv(report, csv_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0].startswith("quantity,")
    assert len(lines) == 1 + len(QUANTITIES)
    json_path = tmp_path / "metrics.json"
    metric_report_to_json(report, json_path)
    assert '"elbow_angle"' in json_path.read_text()
    path = tmp_path / "pred.csv"
    pred = predict_batch(net, batches[0], MODEL, norm)
    write_trial_prediction_csv(pred, 125.0, path)
    header = path.read_text().splitlines()[0]
    assert header.split(",")[0] == "time"
    assert "q2_true" in header and "tau2_pred" in header


def test_metric_report_structure():
    batches, norm = make_eval_set(n_trials=3, n_steps=60, seed=9)
    net = init_network(6, input_size=4, hidden_size=16, output_size=7)
    report = evaluate(net, batches, MODEL, norm)
    assert isinstance(report, MetricReport)
    assert set(report.quantities) == set(QUANTITIES)
    for q in QUANTITIES:
        s = report.quantities[q]
        assert s.rmse >= 0
        assert s.rmse_min <= s.rmse <= s.rmse_max
        assert abs(s.pearson_r) <= 1.0
