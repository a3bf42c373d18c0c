"""Evaluation metrics and the torque-estimation flow.

For each test trial the trained network maps EMG to normalized outputs;
these are denormalized to SI units and pushed through inverse dynamics to
obtain predicted torques, which are compared against the label torques.
RMSE, %RMSE (RMSE * 100 / max of the reference series, taken literally on
the signed values, with an auxiliary variant dividing by max |y|), and
Pearson correlation are reported per quantity as mean and min/max spread
across trials.
"""

import json
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .data import NormalizationStats, SequenceBatch
from .dynamics import ArmModel, inverse_dynamics
from .nn import GruNetwork, network_forward

QUANTITIES = ("shoulder_angle", "elbow_angle", "shoulder_velocity",
              "elbow_velocity", "shoulder_acceleration",
              "elbow_acceleration", "load", "shoulder_torque",
              "elbow_torque")


def rmse(y, yhat) -> float:
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size != yhat.size:
        raise ValueError("length mismatch: %d vs %d" % (y.size, yhat.size))
    if y.size == 0:
        raise ValueError("empty series")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def pct_rmse(y, yhat) -> float:
    """RMSE * 100 / max(y), with the signed maximum taken literally."""
    y = np.asarray(y, dtype=float).ravel()
    peak = float(y.max()) if y.size else 0.0
    if peak == 0.0:
        raise ValueError("reference series has zero maximum")
    return rmse(y, yhat) * 100.0 / peak


def pct_rmse_absmax(y, yhat) -> float:
    """Auxiliary variant normalizing by max |y|."""
    y = np.asarray(y, dtype=float).ravel()
    peak = float(np.abs(y).max()) if y.size else 0.0
    if peak == 0.0:
        raise ValueError("reference series has zero maximum magnitude")
    return rmse(y, yhat) * 100.0 / peak


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError("length mismatch: %d vs %d" % (x.size, y.size))
    if x.size < 2:
        raise ValueError("need at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("zero variance in input series")
    return float(np.sum(dx * dy) / (sx * sy))


def _safe_pearson(x, y) -> float:
    try:
        return pearson(x, y)
    except ValueError:
        return float("nan")


@dataclass
class QuantitySummary:
    rmse: float
    rmse_min: float
    rmse_max: float
    pct_rmse: float
    pct_rmse_min: float
    pct_rmse_max: float
    pct_rmse_absmax: float
    pearson_r: float
    pearson_min: float
    pearson_max: float


@dataclass
class MetricReport:
    quantities: Dict[str, QuantitySummary]
    n_trials: int


@dataclass
class TrialPrediction:
    """Everything evaluated for one trial, in SI units."""

    truth: np.ndarray  # [T x 7]
    pred: np.ndarray  # [T x 7]
    torque_true: np.ndarray  # [T x 2]
    torque_pred: np.ndarray  # [T x 2]
    load_label: float
    load_estimate: float


def predict_batch(net: GruNetwork, batch: SequenceBatch, model: ArmModel,
                  norm: NormalizationStats) -> TrialPrediction:
    """Eval-mode forward pass plus the inverse-dynamics torque path."""
    out, _ = network_forward(net, batch.inputs, mode="eval")
    pred = norm.denormalize(out)
    truth = norm.denormalize(batch.targets)
    torque_pred = inverse_dynamics(model, pred[:, 0:2], pred[:, 2:4],
                                   pred[:, 4:6], pred[:, 6])
    active = np.any(np.abs(truth[:, 2:4]) > 1e-8, axis=1)
    if not active.any():
        active = np.ones(truth.shape[0], bool)
    return TrialPrediction(truth=truth, pred=pred,
                           torque_true=batch.torque_labels,
                           torque_pred=torque_pred,
                           load_label=batch.load_label,
                           load_estimate=float(np.median(pred[active, 6])))


def _series(tp: TrialPrediction, quantity: str):
    idx = {"shoulder_angle": 0, "elbow_angle": 1, "shoulder_velocity": 2,
           "elbow_velocity": 3, "shoulder_acceleration": 4,
           "elbow_acceleration": 5}
    if quantity in idx:
        c = idx[quantity]
        return tp.truth[:, c], tp.pred[:, c]
    if quantity == "shoulder_torque":
        return tp.torque_true[:, 0], tp.torque_pred[:, 0]
    if quantity == "elbow_torque":
        return tp.torque_true[:, 1], tp.torque_pred[:, 1]
    raise ValueError("unknown quantity %r" % quantity)


def evaluate(net: GruNetwork, dataset: List[SequenceBatch], model: ArmModel,
             norm: NormalizationStats, global_max: bool = False,
             predictions: Optional[List[TrialPrediction]] = None
             ) -> MetricReport:
    """Aggregate metrics over a test set.

    Per-trial %RMSE normalizes by that trial's reference maximum unless
    global_max is set, which uses the maximum across all trials. The load
    channel is summarized across trials from per-trial scalar estimates
    (median over the active window), so its spread entries repeat the
    single across-trial value. Pass a list as `predictions` to receive
    the per-trial prediction arrays.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    preds = [predict_batch(net, b, model, norm) for b in dataset]
    if predictions is not None:
        predictions.extend(preds)

    summaries: Dict[str, QuantitySummary] = {}
    for quantity in QUANTITIES:
        if quantity == "load":
            labels = np.array([tp.load_label for tp in preds])
            estimates = np.array([tp.load_estimate for tp in preds])
            r = rmse(labels, estimates)
            peak = float(labels.max())
            pct = r * 100.0 / peak if peak != 0 else float("nan")
            pct_abs = (r * 100.0 / float(np.abs(labels).max())
                       if np.abs(labels).max() != 0 else float("nan"))
            corr = _safe_pearson(labels, estimates) if labels.size >= 2 \
                else float("nan")
            summaries[quantity] = QuantitySummary(
                rmse=r, rmse_min=r, rmse_max=r,
                pct_rmse=pct, pct_rmse_min=pct, pct_rmse_max=pct,
                pct_rmse_absmax=pct_abs,
                pearson_r=corr, pearson_min=corr, pearson_max=corr)
            continue
        peaks = None
        if global_max:
            allref = np.concatenate([_series(tp, quantity)[0] for tp in preds])
            peaks = (float(allref.max()), float(np.abs(allref).max()))
        rmses, pcts, pcts_abs, corrs = [], [], [], []
        for tp in preds:
            ref, est = _series(tp, quantity)
            r = rmse(ref, est)
            rmses.append(r)
            if peaks is None:
                pcts.append(pct_rmse(ref, est))
                pcts_abs.append(pct_rmse_absmax(ref, est))
            else:
                if peaks[0] == 0 or peaks[1] == 0:
                    raise ValueError("degenerate global reference for %s"
                                     % quantity)
                pcts.append(r * 100.0 / peaks[0])
                pcts_abs.append(r * 100.0 / peaks[1])
            corrs.append(_safe_pearson(ref, est))
        summaries[quantity] = QuantitySummary(
            rmse=float(np.mean(rmses)), rmse_min=float(np.min(rmses)),
            rmse_max=float(np.max(rmses)),
            pct_rmse=float(np.mean(pcts)), pct_rmse_min=float(np.min(pcts)),
            pct_rmse_max=float(np.max(pcts)),
            pct_rmse_absmax=float(np.mean(pcts_abs)),
            pearson_r=float(np.mean(corrs)), pearson_min=float(np.min(corrs)),
            pearson_max=float(np.max(corrs)))
    return MetricReport(quantities=summaries, n_trials=len(dataset))


_CSV_FIELDS = ("rmse", "rmse_min", "rmse_max", "pct_rmse", "pct_rmse_min",
               "pct_rmse_max", "pct_rmse_absmax", "pearson_r", "pearson_min",
               "pearson_max")


def metric_report_to_csv(report: MetricReport, path):
    lines = ["quantity," + ",".join(_CSV_FIELDS)]
    for name in QUANTITIES:
        qs = report.quantities[name]
        lines.append(name + "," + ",".join(
            "%.17g" % getattr(qs, f) for f in _CSV_FIELDS))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def metric_report_to_json(report: MetricReport, path):
    doc = {"n_trials": report.n_trials,
           "quantities": {name: {f: getattr(qs, f) for f in _CSV_FIELDS}
                          for name, qs in report.quantities.items()}}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_trial_prediction_csv(tp: TrialPrediction, sample_rate: float, path):
    t = tp.truth.shape[0]
    time = np.arange(t) / sample_rate
    cols = ["time"]
    arrays = [time]
    names = ("q1", "q2", "qd1", "qd2", "qdd1", "qdd2", "load")
    for i, nm in enumerate(names):
        cols += [nm + "_true", nm + "_pred"]
        arrays += [tp.truth[:, i], tp.pred[:, i]]
    for j, nm in enumerate(("tau1", "tau2")):
        cols += [nm + "_true", nm + "_pred"]
        arrays += [tp.torque_true[:, j], tp.torque_pred[:, j]]
    np.savetxt(path, np.column_stack(arrays), delimiter=",", fmt="%.17g",
               header=",".join(cols), comments="")
