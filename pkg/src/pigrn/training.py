"""Combined data + physics training loop.

The objective per sequence is

    L_total = lambda_data * L_data + lambda_physics * L_physics

where L_data sums per-group MSEs over the seven output channels (angles,
velocities, accelerations, load) and L_physics is the mean squared
torque residual: predictions are mapped back to SI units, pushed through
inverse dynamics, and compared against torque labels. The residual
gradient reaches the network through closed-form dynamics jacobians
chained with the normalization scales, so one backward pass handles the
summed gradient.
"""

import json
import os
from dataclasses import dataclass, fields
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import io as kvio
from .data import N_OUTPUTS, NormalizationStats, SequenceBatch
from .dynamics import (
    ArmModel,
    arm_model_from_dict,
    arm_model_to_dict,
    dynamics_jacobians,
    inverse_dynamics,
)
from .nn import (
    AdamState,
    GruNetwork,
    adam_step,
    clip_grad_norm,
    init_network,
    iter_params,
    network_backward,
    network_forward,
)

CHECKPOINT_FORMAT = "pigrn-checkpoint"
CHECKPOINT_VERSION = 1

# column groups of the 7-channel output
_GROUPS = {"L_q": slice(0, 2), "L_qd": slice(2, 4),
           "L_qdd": slice(4, 6), "L_m": slice(6, 7)}


class NonFiniteResidualError(RuntimeError):
    """Physics residual left the finite range: predictions diverged."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, message: str):
        super().__init__("epoch %d: %s" % (epoch, message))
        self.epoch = epoch


class CheckpointFormatError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__("checkpoint field %r: %s" % (field_name, message))
        self.field_name = field_name


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 2000
    dropout_p: float = 0.2
    lambda_physics: float = 1e-3
    lambda_data: float = 1.0
    batch_size: int = 1
    hidden: int = 64
    layers: int = 2
    grad_clip: Optional[float] = 5.0
    seed: int = 0
    physics_mask: bool = False
    early_stop_patience: Optional[int] = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.lambda_physics < 0:
            raise ValueError("lambda_physics must be >= 0")
        if self.lambda_data != 1.0:
            raise ValueError("lambda_data is fixed at 1")
        if self.batch_size != 1:
            raise ValueError("only batch_size 1 is supported")
        if self.hidden < 1 or self.layers < 1:
            raise ValueError("hidden and layers must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive or omitted")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1 or omitted")


def save_train_config(cfg: TrainConfig, path):
    entries = [(f.name, getattr(cfg, f.name)) for f in fields(TrainConfig)]
    kvio.write_keyvalue(path, entries, header="training configuration")


def load_train_config(path) -> TrainConfig:
    values = kvio.read_keyvalue(path)
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError("%s: unknown config keys %s" % (path, sorted(unknown)))
    return TrainConfig(**values)


@dataclass
class DataLossComponents:
    L_q: float
    L_qd: float
    L_qdd: float
    L_m: float
    L_data: float


@dataclass
class LossReport:
    L_q: float
    L_qd: float
    L_qdd: float
    L_m: float
    L_data: float
    L_physics: float
    L_total: float


def data_loss(pred, target) -> DataLossComponents:
    """Per-group MSE: columns {0,1} angles, {2,3} velocities, {4,5}
    accelerations, {6} load; L_data is their sum."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[1] != N_OUTPUTS:
        raise ValueError("pred %s and target %s must both be [T x %d]"
                         % (pred.shape, target.shape, N_OUTPUTS))
    err = pred - target
    parts = {name: float(np.mean(err[:, sl] ** 2)) for name, sl in _GROUPS.items()}
    return DataLossComponents(L_data=sum(parts.values()), **parts)


def data_loss_grad(pred, target):
    """Gradient of L_data with respect to pred, shape [T x 7]."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError("shape mismatch %s vs %s" % (pred.shape, target.shape))
    t = pred.shape[0]
    grad = np.empty_like(pred)
    err = pred - target
    for sl in _GROUPS.values():
        width = sl.stop - sl.start
        grad[:, sl] = 2.0 * err[:, sl] / (t * width)
    return grad


def physics_loss(pred, torque_labels, model: ArmModel, norm: NormalizationStats,
                 mask=None) -> Tuple[float, np.ndarray]:
    """Mean squared torque residual of the predictions, plus its gradient.

    pred is the normalized [T x 7] network output; torque_labels are SI
    N*m. mask, if given, is a boolean [T] selecting the timesteps that
    enter the mean (all steps by default).
    """
    pred = np.asarray(pred, dtype=float)
    torque_labels = np.asarray(torque_labels, dtype=float)
    if pred.ndim != 2 or pred.shape[1] != N_OUTPUTS:
        raise ValueError("pred must be [T x %d], got %s" % (N_OUTPUTS, pred.shape))
    t = pred.shape[0]
    if torque_labels.shape != (t, 2):
        raise ValueError("torque_labels shape %s, expected (%d, 2)"
                         % (torque_labels.shape, t))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (t,):
            raise ValueError("mask shape %s, expected (%d,)" % (mask.shape, t))
        if not mask.any():
            raise ValueError("mask selects no timesteps")

    phys = norm.denormalize(pred)
    q, qd, qdd, m = phys[:, 0:2], phys[:, 2:4], phys[:, 4:6], phys[:, 6]
    residual = inverse_dynamics(model, q, qd, qdd, m) - torque_labels
    if not np.all(np.isfinite(residual)):
        raise NonFiniteResidualError("torque residual is non-finite")

    if mask is None:
        n_entries = residual.size
        weight = 2.0 * residual / n_entries
        loss = float(np.sum(residual ** 2) / n_entries)
    else:
        n_entries = 2 * int(mask.sum())
        weight = np.where(mask[:, None], 2.0 * residual / n_entries, 0.0)
        loss = float(np.sum(residual[mask] ** 2) / n_entries)

    d_q, d_qd, d_qdd, d_m = dynamics_jacobians(model, q, qd, qdd, m)
    grad = np.empty_like(pred)
    grad[:, 0:2] = np.einsum("tj,tjk->tk", weight, d_q)
    grad[:, 2:4] = np.einsum("tj,tjk->tk", weight, d_qd)
    grad[:, 4:6] = np.einsum("tj,tjk->tk", weight, d_qdd)
    grad[:, 6] = np.einsum("tj,tj->t", weight, d_m)
    grad *= norm.scale
    return loss, grad


def combined_loss(data: DataLossComponents, physics: float,
                  cfg: TrainConfig) -> float:
    return cfg.lambda_data * data.L_data + cfg.lambda_physics * physics


def active_mask(batch: SequenceBatch):
    """Timesteps with any nonzero target velocity (the non-rest portion)."""
    return np.any(np.abs(batch.targets[:, 2:4]) > 1e-12, axis=1)


def sequence_loss_and_grads(net: GruNetwork, batch: SequenceBatch,
                            cfg: TrainConfig, model: ArmModel,
                            norm: NormalizationStats, mode: str = "train",
                            dropout_seed: Optional[int] = None):
    """Forward + both losses + one BPTT pass. Returns (report, grads)."""
    pred, cache = network_forward(net, batch.inputs, mode=mode,
                                  dropout_seed=dropout_seed)
    comps = data_loss(pred, batch.targets)
    d_pred = cfg.lambda_data * data_loss_grad(pred, batch.targets)
    if cfg.lambda_physics > 0:
        mask = active_mask(batch) if cfg.physics_mask else None
        phys, phys_grad = physics_loss(pred, batch.torque_labels, model,
                                       norm, mask=mask)
        d_pred += cfg.lambda_physics * phys_grad
    else:
        phys = 0.0
    total = combined_loss(comps, phys, cfg)
    grads = network_backward(net, cache, d_pred)
    report = LossReport(L_q=comps.L_q, L_qd=comps.L_qd, L_qdd=comps.L_qdd,
                        L_m=comps.L_m, L_data=comps.L_data, L_physics=phys,
                        L_total=total)
    return report, grads


def train(dataset: List[SequenceBatch], cfg: TrainConfig, model: ArmModel,
          norm: NormalizationStats, checkpoint_path=None,
          loss_history_path=None,
          log: Optional[Callable[[str], None]] = None,
          log_every: int = 50) -> Tuple[GruNetwork, List[LossReport]]:
    """Train a fresh network on the given sequences.

    Fully determined by (dataset, cfg): parameter init uses cfg.seed, the
    epoch shuffle uses cfg.seed + 1, per-sequence dropout masks derive
    from cfg.seed + 2. Raises TrainingDivergedError when the loss leaves
    the finite range.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    input_size = dataset[0].inputs.shape[1]
    for b in dataset:
        if b.inputs.shape[1] != input_size:
            raise ValueError("inconsistent input channel counts in dataset")
    net = init_network(cfg.seed, input_size=input_size, hidden_size=cfg.hidden,
                       output_size=N_OUTPUTS, n_layers=cfg.layers,
                       dropout_p=cfg.dropout_p)
    opt = AdamState(lr=cfg.lr)
    shuffle_rng = np.random.default_rng(cfg.seed + 1)
    dropout_rng = np.random.default_rng(cfg.seed + 2)

    reports: List[LossReport] = []
    best_total = np.inf
    stall = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(dataset))
        sums = np.zeros(6)  # L_q, L_qd, L_qdd, L_m, L_data, L_physics
        for idx in order:
            seed = int(dropout_rng.integers(0, 2 ** 62))
            try:
                rep, grads = sequence_loss_and_grads(
                    net, dataset[idx], cfg, model, norm, mode="train",
                    dropout_seed=seed)
            except NonFiniteResidualError as exc:
                raise TrainingDivergedError(epoch, str(exc)) from exc
            if cfg.grad_clip is not None:
                clip_grad_norm(grads, cfg.grad_clip)
            adam_step(net, grads, opt)
            sums += (rep.L_q, rep.L_qd, rep.L_qdd, rep.L_m, rep.L_data,
                     rep.L_physics)
        means = sums / len(dataset)
        total = cfg.lambda_data * means[4] + cfg.lambda_physics * means[5]
        report = LossReport(L_q=means[0], L_qd=means[1], L_qdd=means[2],
                            L_m=means[3], L_data=means[4], L_physics=means[5],
                            L_total=total)
        if not np.isfinite(total):
            raise TrainingDivergedError(epoch, "loss became non-finite")
        reports.append(report)
        if log is not None and (epoch % log_every == 0 or epoch == 1
                                or epoch == cfg.epochs):
            log("epoch %d/%d  L_data=%.6g  L_physics=%.6g  L_total=%.6g"
                % (epoch, cfg.epochs, report.L_data, report.L_physics,
                   report.L_total))
        if cfg.early_stop_patience is not None:
            if total < best_total - 1e-12:
                best_total = total
                stall = 0
            else:
                stall += 1
                if stall >= cfg.early_stop_patience:
                    if log is not None:
                        log("early stop at epoch %d (no improvement in %d)"
                            % (epoch, stall))
                    break

    if loss_history_path is not None:
        write_loss_history(loss_history_path, reports)
    if checkpoint_path is not None:
        save_checkpoint(net, norm, cfg, model, checkpoint_path,
                        extra={"epochs_run": len(reports),
                               "final_L_total": reports[-1].L_total})
    return net, reports


LOSS_HISTORY_COLUMNS = ("epoch", "L_q", "L_qd", "L_qdd", "L_m", "L_data",
                        "L_physics", "L_total")


def write_loss_history(path, reports: List[LossReport]):
    rows = np.array([[i + 1, r.L_q, r.L_qd, r.L_qdd, r.L_m, r.L_data,
                      r.L_physics, r.L_total]
                     for i, r in enumerate(reports)])
    np.savetxt(path, rows, delimiter=",", fmt="%.17g",
               header=",".join(LOSS_HISTORY_COLUMNS), comments="")


def read_loss_history(path) -> List[LossReport]:
    rows = np.atleast_2d(np.genfromtxt(path, delimiter=",", skip_header=1))
    return [LossReport(*row[1:]) for row in rows]


def save_checkpoint(net: GruNetwork, norm: NormalizationStats,
                    cfg: TrainConfig, model: ArmModel, path, extra=None):
    """JSON checkpoint: metadata plus named flat parameter tensors."""
    meta = {
        "input_size": net.input_size,
        "hidden_size": net.hidden_size,
        "output_size": net.output_size,
        "n_layers": net.n_layers,
        "dropout_p": net.dropout_p,
        "train_config": {f.name: getattr(cfg, f.name)
                         for f in fields(TrainConfig)},
        "normalization": norm.to_dict(),
        "arm_model": arm_model_to_dict(model),
    }
    if extra:
        meta.update(extra)
    params = {}
    for name, arr in iter_params(net):
        params[name] = {"shape": list(arr.shape),
                        "data": np.asarray(arr, dtype=float).ravel().tolist()}
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
           "metadata": meta, "parameters": params}
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path, expected_hidden: Optional[int] = None,
                    expected_layers: Optional[int] = None):
    """Rebuild (net, norm, model, metadata) from a checkpoint file.

    Parameter round trips are bit-exact. Raises CheckpointFormatError
    naming the offending field on malformed input or when the stored
    sizes disagree with the expected ones.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointFormatError("<document>", "not valid JSON: %s" % exc)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointFormatError("format", "expected %r" % CHECKPOINT_FORMAT)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError("version", "unsupported %r" % doc.get("version"))
    meta = doc.get("metadata")
    if not isinstance(meta, dict):
        raise CheckpointFormatError("metadata", "missing or not an object")
    for key in ("input_size", "hidden_size", "output_size", "n_layers",
                "dropout_p", "normalization", "arm_model"):
        if key not in meta:
            raise CheckpointFormatError("metadata.%s" % key, "missing")
    hidden = int(meta["hidden_size"])
    n_layers = int(meta["n_layers"])
    if expected_hidden is not None and hidden != expected_hidden:
        raise CheckpointFormatError(
            "metadata.hidden_size",
            "checkpoint has %d, requested %d" % (hidden, expected_hidden))
    if expected_layers is not None and n_layers != expected_layers:
        raise CheckpointFormatError(
            "metadata.n_layers",
            "checkpoint has %d, requested %d" % (n_layers, expected_layers))

    try:
        norm = NormalizationStats.from_dict(meta["normalization"])
    except (ValueError, TypeError) as exc:
        raise CheckpointFormatError("metadata.normalization", str(exc))
    try:
        model = arm_model_from_dict(meta["arm_model"])
    except (ValueError, TypeError, KeyError) as exc:
        raise CheckpointFormatError("metadata.arm_model", str(exc))

    skeleton = init_network(0, input_size=int(meta["input_size"]),
                            hidden_size=hidden,
                            output_size=int(meta["output_size"]),
                            n_layers=n_layers,
                            dropout_p=float(meta["dropout_p"]))
    params = doc.get("parameters")
    if not isinstance(params, dict):
        raise CheckpointFormatError("parameters", "missing or not an object")
    expected_names = [name for name, _ in iter_params(skeleton)]
    missing = set(expected_names) - set(params)
    extra_names = set(params) - set(expected_names)
    if missing:
        raise CheckpointFormatError("parameters.%s" % sorted(missing)[0], "missing")
    if extra_names:
        raise CheckpointFormatError("parameters.%s" % sorted(extra_names)[0],
                                    "unexpected tensor")
    for name, arr in iter_params(skeleton):
        entry = params[name]
        if not isinstance(entry, dict) or "shape" not in entry or "data" not in entry:
            raise CheckpointFormatError("parameters.%s" % name,
                                        "needs shape and data")
        if tuple(entry["shape"]) != arr.shape:
            raise CheckpointFormatError(
                "parameters.%s.shape" % name,
                "stored %s, expected %s" % (entry["shape"], list(arr.shape)))
        values = np.asarray(entry["data"], dtype=float)
        if values.size != arr.size:
            raise CheckpointFormatError("parameters.%s.data" % name,
                                        "has %d values, expected %d"
                                        % (values.size, arr.size))
        if not np.all(np.isfinite(values)):
            raise CheckpointFormatError("parameters.%s.data" % name, "non-finite")
        arr[...] = values.reshape(arr.shape)
    return skeleton, norm, model, meta
