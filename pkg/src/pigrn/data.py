"""Dataset containers and on-disk formats.

A processed trial is a CSV with columns
``time, emg1..emg4, q1, q2, qd1, qd2, qdd1, qdd2, load_kg``: EMG envelopes
in [0, 1] at 125 Hz alongside SI kinematics. A dataset manifest is a
key-value file listing trial files, per-trial load labels, and the
train/test split. Network targets are the seven output channels
(q1, q2, qd1, qd2, qdd1, qdd2, load) scaled per channel to roughly [-1, 1]
by statistics computed on the training split only; the physics residual
always works in SI units, so the scaling must be invertible.
"""

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import io as kvio
from .dynamics import ArmModel, inverse_dynamics

N_EMG_CHANNELS = 4
N_OUTPUTS = 7
OUTPUT_CHANNELS = ("q1", "q2", "qd1", "qd2", "qdd1", "qdd2", "load")
TRIAL_CSV_COLUMNS = ("time", "emg1", "emg2", "emg3", "emg4",
                     "q1", "q2", "qd1", "qd2", "qdd1", "qdd2", "load_kg")


@dataclass
class NormalizationStats:
    """Per-output-channel affine map between SI units and training targets.

    normalized = (physical - offset) / scale. Scales are the per-channel
    maxima of |physical| on the training split (peak angle, peak speed,
    peak acceleration, heaviest load); offsets default to zero.
    """

    scale: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        if self.scale.shape != (N_OUTPUTS,) or self.offset.shape != (N_OUTPUTS,):
            raise ValueError("stats must cover %d output channels" % N_OUTPUTS)
        if not np.all(np.isfinite(self.scale)) or not np.all(np.isfinite(self.offset)):
            raise ValueError("non-finite normalization statistics")
        if np.any(self.scale <= 0):
            raise ValueError("scales must be positive")

    @classmethod
    def from_training_targets(cls, targets) -> "NormalizationStats":
        """Max-absolute scaling from physical-unit target arrays [T x 7].

        Accepts one stacked array or a list of per-trial arrays. A channel
        that is identically zero in the training split gets scale 1 so the
        map stays invertible.
        """
        if isinstance(targets, np.ndarray):
            targets = [targets]
        if not targets:
            raise ValueError("need at least one training trial")
        stacked = np.vstack([np.asarray(t, dtype=float) for t in targets])
        if stacked.shape[1] != N_OUTPUTS:
            raise ValueError("targets must have %d columns" % N_OUTPUTS)
        absmax = np.abs(stacked).max(axis=0)
        scale = np.where(absmax > 0, absmax, 1.0)
        return cls(scale=scale, offset=np.zeros(N_OUTPUTS))

    def normalize(self, physical):
        return (np.asarray(physical, dtype=float) - self.offset) / self.scale

    def denormalize(self, normalized):
        return np.asarray(normalized, dtype=float) * self.scale + self.offset

    def to_dict(self) -> Dict:
        return {"scale": self.scale.tolist(), "offset": self.offset.tolist(),
                "channels": list(OUTPUT_CHANNELS)}

    @classmethod
    def from_dict(cls, d: Dict) -> "NormalizationStats":
        try:
            return cls(scale=np.asarray(d["scale"], dtype=float),
                       offset=np.asarray(d["offset"], dtype=float))
        except KeyError as exc:
            raise ValueError("normalization stats missing field %s" % exc) from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "NormalizationStats":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SequenceBatch:
    """One training sequence: inputs, normalized targets, SI torque labels."""

    inputs: np.ndarray
    targets: np.ndarray
    torque_labels: np.ndarray
    load_label: float

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        self.torque_labels = np.asarray(self.torque_labels, dtype=float)
        t = self.inputs.shape[0] if self.inputs.ndim == 2 else 0
        if t < 1:
            raise ValueError("inputs must be [T x channels] with T >= 1")
        if self.targets.shape != (t, N_OUTPUTS):
            raise ValueError("targets shape %s, expected (%d, %d)"
                             % (self.targets.shape, t, N_OUTPUTS))
        if self.torque_labels.shape != (t, 2):
            raise ValueError("torque_labels shape %s, expected (%d, 2)"
                             % (self.torque_labels.shape, t))
        for name in ("inputs", "targets", "torque_labels"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError("non-finite values in %s" % name)
        self.load_label = float(self.load_label)
        if not self.load_label >= 0:
            raise ValueError("load_label must be nonnegative kg")


@dataclass
class TrialEntry:
    """One manifest row. Raw trials carry emg/angle files and MVC values;
    processed trials carry a single trial file."""

    load_kg: float
    split: str = "train"
    file: Optional[str] = None
    emg_file: Optional[str] = None
    angle_file: Optional[str] = None
    mvc: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError("trial split must be train or test, got %r"
                             % self.split)
        if not self.load_kg >= 0:
            raise ValueError("load must be >= 0, got %r" % self.load_kg)


@dataclass
class DatasetManifest:
    kind: str
    trials: List[TrialEntry]
    extras: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("raw", "processed"):
            raise ValueError("manifest kind must be raw or processed, got %r"
                             % self.kind)


def write_trial_csv(path, time, emg, kinematics, load_kg: float):
    """Write one processed trial. kinematics columns are q1,q2,qd1,qd2,qdd1,qdd2."""
    time = np.asarray(time, dtype=float)
    emg = np.asarray(emg, dtype=float)
    kinematics = np.asarray(kinematics, dtype=float)
    t = time.shape[0]
    if emg.shape != (t, N_EMG_CHANNELS) or kinematics.shape != (t, 6):
        raise ValueError("inconsistent trial arrays: time %s, emg %s, kinematics %s"
                         % (time.shape, emg.shape, kinematics.shape))
    table = np.column_stack([time, emg, kinematics, np.full(t, float(load_kg))])
    np.savetxt(path, table, delimiter=",", fmt="%.17g",
               header=",".join(TRIAL_CSV_COLUMNS), comments="")


def read_trial_csv(path):
    """Read one processed trial. Returns (time, emg [T x 4], kinematics [T x 6], load_kg)."""
    table = np.genfromtxt(path, delimiter=",", skip_header=1)
    table = np.atleast_2d(table)
    if table.shape[1] != len(TRIAL_CSV_COLUMNS):
        raise ValueError("%s: expected %d columns, found %d"
                         % (path, len(TRIAL_CSV_COLUMNS), table.shape[1]))
    if not np.all(np.isfinite(table)):
        raise ValueError("%s: non-finite values" % path)
    load = table[:, 11]
    return table[:, 0], table[:, 1:5], table[:, 5:11], float(load[0])


def write_dataset_manifest(path, manifest: DatasetManifest):
    entries = [("kind", manifest.kind), ("n_trials", len(manifest.trials))]
    for key in sorted(manifest.extras):
        entries.append((key, manifest.extras[key]))
    for i, t in enumerate(manifest.trials):
        p = "trial_%d." % i
        if t.file is not None:
            entries.append((p + "file", t.file))
        if t.emg_file is not None:
            entries.append((p + "emg_file", t.emg_file))
        if t.angle_file is not None:
            entries.append((p + "angle_file", t.angle_file))
        entries.append((p + "load_kg", t.load_kg))
        entries.append((p + "split", t.split))
        if t.mvc is not None:
            entries.append((p + "mvc", [float(v) for v in t.mvc]))
    kvio.write_keyvalue(path, entries, header="dataset manifest")


def read_dataset_manifest(path) -> DatasetManifest:
    values = kvio.read_keyvalue(path)
    try:
        kind = values.pop("kind")
        n = int(values.pop("n_trials"))
    except KeyError as exc:
        raise ValueError("%s: manifest missing field %s" % (path, exc)) from exc
    trials = []
    for i in range(n):
        p = "trial_%d." % i
        fields = {k[len(p):]: values.pop(k) for k in list(values) if k.startswith(p)}
        if "load_kg" not in fields:
            raise ValueError("%s: trial %d missing load_kg" % (path, i))
        mvc = fields.get("mvc")
        if mvc is not None:
            mvc = np.atleast_1d(np.asarray(mvc, dtype=float))
        trials.append(TrialEntry(
            load_kg=float(fields["load_kg"]),
            split=str(fields.get("split", "train")),
            file=fields.get("file"),
            emg_file=fields.get("emg_file"),
            angle_file=fields.get("angle_file"),
            mvc=mvc))
    return DatasetManifest(kind=kind, trials=trials, extras=values)


def trial_targets(kinematics, load_kg: float, n_steps: int):
    """Physical-unit target matrix [T x 7]: kinematics plus a constant
    per-timestep load column."""
    return np.column_stack([np.asarray(kinematics, dtype=float),
                            np.full(n_steps, float(load_kg))])


def load_dataset(manifest_path, model: ArmModel, norm: NormalizationStats,
                 split: Optional[str] = None) -> List[SequenceBatch]:
    """Read processed trials into training-ready batches.

    Torque labels come from inverse dynamics on the stored kinematics and
    load, so they satisfy the equation of motion by construction. split
    filters to "train" or "test"; None takes everything.
    """
    manifest = read_dataset_manifest(manifest_path)
    if manifest.kind != "processed":
        raise ValueError("%s: expected a processed manifest, got kind=%r"
                         % (manifest_path, manifest.kind))
    base = os.path.dirname(os.path.abspath(manifest_path))
    batches = []
    for entry in manifest.trials:
        if split is not None and entry.split != split:
            continue
        if entry.file is None:
            raise ValueError("%s: processed trial without file" % manifest_path)
        _, emg, kin, load = read_trial_csv(os.path.join(base, entry.file))
        t = emg.shape[0]
        targets_phys = trial_targets(kin, load, t)
        torque = inverse_dynamics(model, kin[:, 0:2], kin[:, 2:4], kin[:, 4:6],
                                  np.full(t, load))
        batches.append(SequenceBatch(
            inputs=emg, targets=norm.normalize(targets_phys),
            torque_labels=torque, load_label=load))
    if not batches:
        raise ValueError("%s: no trials selected (split=%r)"
                         % (manifest_path, split))
    return batches


def training_stats_from_manifest(manifest_path) -> NormalizationStats:
    """Normalization statistics from the manifest's training split."""
    manifest = read_dataset_manifest(manifest_path)
    if manifest.kind != "processed":
        raise ValueError("%s: expected a processed manifest" % manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    targets = []
    for entry in manifest.trials:
        if entry.split != "train":
            continue
        _, _, kin, load = read_trial_csv(os.path.join(base, entry.file))
        targets.append(trial_targets(kin, load, kin.shape[0]))
    return NormalizationStats.from_training_targets(targets)
