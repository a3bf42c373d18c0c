"""Physically consistent synthetic trials.

Each trial is a flexion-extension movement: the elbow follows a
minimum-jerk profile 0 -> peak -> 0 over the active window, the shoulder
is a scaled copy, and the rest of the 800 steps is rest at the hanging
pose. Torque labels come from inverse dynamics on the exact kinematics,
so they satisfy the equation of motion by construction.

The EMG model is a stand-in for recorded muscle activity: muscle drive
follows the signed elbow-torque demand normalized by the heaviest
(4 kg) condition, biceps channels take the flexion part and triceps the
extension part, plus a co-contraction baseline, first-order activation
dynamics, and multiplicative log-normal noise. Its only job is to give
the network a learnable, load-dependent mapping at physiological shapes
and ranges.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .data import (
    DatasetManifest,
    NormalizationStats,
    TrialEntry,
    trial_targets,
    write_dataset_manifest,
    write_trial_csv,
)
from .dynamics import ArmModel, inverse_dynamics, save_arm_model
from .preprocess import EmgEnvelope

CO_CONTRACTION_BASELINE = 0.05
ACTIVATION_TAU_S = 0.050
GAIN_JITTER = 0.10
REFERENCE_LOAD_KG = 4.0
N_CHANNELS = 4


@dataclass(frozen=True)
class TrialSpec:
    load_kg: float
    n_total_steps: int = 800
    n_active_steps: int = 450
    sample_rate: float = 125.0
    elbow_peak: float = math.radians(130.0)
    shoulder_peak: float = math.radians(32.0)
    noise_level: float = 0.0
    seed: int = 0
    active_start: Optional[int] = None  # None -> centered active window
    split: Optional[str] = None  # None -> assigned when building a dataset

    def __post_init__(self):
        if not 3 <= self.n_active_steps <= self.n_total_steps:
            raise ValueError("need 3 <= n_active_steps <= n_total_steps")
        if self.elbow_peak <= 0 or self.shoulder_peak <= 0:
            raise ValueError("peaks must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if self.load_kg < 0:
            raise ValueError("load must be >= 0")
        start = self.start_index
        if not 0 <= start <= self.n_total_steps - self.n_active_steps:
            raise ValueError("active window does not fit")
        if self.split not in (None, "train", "test"):
            raise ValueError("split must be train, test, or None")

    @property
    def start_index(self) -> int:
        if self.active_start is not None:
            return self.active_start
        return (self.n_total_steps - self.n_active_steps) // 2


@dataclass
class SyntheticTrial:
    emg: EmgEnvelope
    kinematics: np.ndarray  # [T x 6] SI: q1,q2,qd1,qd2,qdd1,qdd2
    torque: np.ndarray  # [T x 2] N*m
    load_kg: float


def _min_jerk(u):
    """s, s', s'' of the minimum-jerk polynomial on u in [0,1].

    s(0)=s'(0)=s''(0)=0 and s(1)=1, s'(1)=s''(1)=0, so stitched segments
    are twice-differentiable at their boundaries.
    """
    s = u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2)
    sd = 30.0 * u ** 2 * (1.0 - u) ** 2
    sdd = 60.0 * u * (1.0 - 3.0 * u + 2.0 * u ** 2)
    return s, sd, sdd


def generate_trajectory(spec: TrialSpec) -> np.ndarray:
    """Kinematics [T x 6] with analytic derivatives at the sample instants.

    The apex lands exactly on a grid sample, so the maximum elbow angle
    equals the spec peak to machine precision.
    """
    dt = 1.0 / spec.sample_rate
    n_act = spec.n_active_steps
    n_rise = (n_act + 1) // 2
    n_fall = n_act - n_rise + 1  # shares the apex sample with the rise

    q_act = np.empty(n_act)
    qd_act = np.empty(n_act)
    qdd_act = np.empty(n_act)

    t_rise = (n_rise - 1) * dt
    u = np.arange(n_rise) / (n_rise - 1)
    s, sd, sdd = _min_jerk(u)
    q_act[:n_rise] = spec.elbow_peak * s
    qd_act[:n_rise] = spec.elbow_peak * sd / t_rise
    qdd_act[:n_rise] = spec.elbow_peak * sdd / t_rise ** 2

    t_fall = (n_fall - 1) * dt
    v = 1.0 - np.arange(n_fall) / (n_fall - 1)
    s, sd, sdd = _min_jerk(v)
    q_act[n_rise - 1:] = spec.elbow_peak * s
    qd_act[n_rise - 1:] = -spec.elbow_peak * sd / t_fall
    qdd_act[n_rise - 1:] = spec.elbow_peak * sdd / t_fall ** 2

    kin = np.zeros((spec.n_total_steps, 6))
    a = spec.start_index
    ratio = spec.shoulder_peak / spec.elbow_peak
    kin[a:a + n_act, 0] = ratio * q_act
    kin[a:a + n_act, 1] = q_act
    kin[a:a + n_act, 2] = ratio * qd_act
    kin[a:a + n_act, 3] = qd_act
    kin[a:a + n_act, 4] = ratio * qdd_act
    kin[a:a + n_act, 5] = qdd_act
    return kin


def synthesize_emg(kinematics, load_kg: float, model: ArmModel,
                   spec: TrialSpec) -> EmgEnvelope:
    """Four-channel envelope in [0,1] driven by elbow torque demand.

    Channels 0-1 are biceps (flexion demand), 2-3 triceps (extension
    demand); drives are normalized by the peak torque the same movement
    needs at the 4 kg reference load.
    """
    kin = np.asarray(kinematics, dtype=float)
    q, qd, qdd = kin[:, 0:2], kin[:, 2:4], kin[:, 4:6]
    tau_elbow = inverse_dynamics(model, q, qd, qdd, float(load_kg))[:, 1]
    tau_ref = inverse_dynamics(model, q, qd, qdd, REFERENCE_LOAD_KG)[:, 1]
    ref = float(np.abs(tau_ref).max())
    if ref <= 0:
        ref = 1.0
    flexor = np.clip(tau_elbow, 0.0, None) / ref
    extensor = np.clip(-tau_elbow, 0.0, None) / ref

    rng = np.random.default_rng(spec.seed)
    gains = rng.uniform(1.0 - GAIN_JITTER, 1.0 + GAIN_JITTER, N_CHANNELS)
    drive = np.column_stack([flexor * gains[0], flexor * gains[1],
                             extensor * gains[2], extensor * gains[3]])
    drive += CO_CONTRACTION_BASELINE

    # first-order activation dynamics, initialized at steady state
    dt = 1.0 / spec.sample_rate
    alpha = 1.0 - math.exp(-dt / ACTIVATION_TAU_S)
    zi = (1.0 - alpha) * drive[0:1, :]
    act, _ = lfilter([alpha], [1.0, alpha - 1.0], drive, axis=0, zi=zi)

    noisy = act * np.exp(rng.normal(0.0, spec.noise_level, act.shape))
    clipped = int(np.count_nonzero(noisy > 1.0))
    values = np.clip(noisy, 0.0, 1.0)
    return EmgEnvelope(values=values, sample_rate=spec.sample_rate,
                       clipped=clipped)


def generate_trial(spec: TrialSpec, model: ArmModel) -> SyntheticTrial:
    kin = generate_trajectory(spec)
    torque = inverse_dynamics(model, kin[:, 0:2], kin[:, 2:4], kin[:, 4:6],
                              float(spec.load_kg))
    emg = synthesize_emg(kin, spec.load_kg, model, spec)
    return SyntheticTrial(emg=emg, kinematics=kin, torque=torque,
                          load_kg=float(spec.load_kg))


def make_trial_specs(loads: Sequence[float] = (0.0, 2.0, 4.0),
                     runs_per_load: int = 4,
                     noise_level: float = 0.0,
                     base_seed: int = 0,
                     n_total_steps: int = 800,
                     n_active_steps: int = 450,
                     elbow_peak: float = math.radians(130.0),
                     shoulder_peak: float = math.radians(32.0),
                     peak_jitter: float = 0.10,
                     test_per_load: Optional[Sequence[int]] = None
                     ) -> List[TrialSpec]:
    """Build a spec list with per-trial variety (jittered peaks and active
    windows), deterministic from base_seed.

    With test_per_load given, each load gets runs_per_load training specs
    plus that many explicit test specs; otherwise splits stay unassigned
    for the dataset builder's 3:1 rule.
    """
    if runs_per_load < 1:
        raise ValueError("runs_per_load must be >= 1")
    if test_per_load is not None and len(test_per_load) != len(loads):
        raise ValueError("test_per_load must match loads")
    rng = np.random.default_rng(base_seed)
    specs = []
    counter = 0
    for li, load in enumerate(loads):
        n_test = 0 if test_per_load is None else int(test_per_load[li])
        for k in range(runs_per_load + n_test):
            split = None
            if test_per_load is not None:
                split = "train" if k < runs_per_load else "test"
            jit = rng.uniform(1.0 - peak_jitter, 1.0 + peak_jitter, 3)
            n_act = int(round(n_active_steps * jit[2]))
            n_act = min(max(n_act, 3), n_total_steps)
            # Burst position varies across trials; without this a model can
            # learn the movement's timing instead of reading the envelopes,
            # which falls apart on longer multi-burst sequences.
            start = int(rng.integers(0, n_total_steps - n_act + 1))
            specs.append(TrialSpec(
                load_kg=float(load),
                n_total_steps=n_total_steps,
                n_active_steps=n_act,
                elbow_peak=elbow_peak * jit[0],
                shoulder_peak=shoulder_peak * jit[1],
                noise_level=noise_level,
                seed=base_seed + 10000 + counter,
                active_start=start,
                split=split))
            counter += 1
    return specs


def _assign_splits(specs: List[TrialSpec], split_seed: int) -> List[TrialSpec]:
    """Fill in missing splits at a 3:1 train:test ratio, stratified by load.

    Test slots are apportioned to load groups by largest remainder, then
    drawn within each group with a seeded shuffle.
    """
    if all(s.split is not None for s in specs):
        return list(specs)
    loads = sorted({s.load_kg for s in specs})
    groups = {ld: [i for i, s in enumerate(specs) if s.load_kg == ld]
              for ld in loads}
    n_test_total = len(specs) // 4
    quotas = {ld: len(idx) / 4.0 for ld, idx in groups.items()}
    base = {ld: int(quotas[ld]) for ld in loads}
    leftover = n_test_total - sum(base.values())
    by_remainder = sorted(loads, key=lambda ld: (base[ld] - quotas[ld], ld))
    for ld in by_remainder[:leftover]:
        base[ld] += 1
    rng = np.random.default_rng(split_seed)
    out = list(specs)
    for ld in loads:
        idx = np.array(groups[ld])
        test_idx = set(idx[rng.permutation(len(idx))[:base[ld]]].tolist())
        for i in idx:
            out[i] = replace(specs[i],
                             split="test" if i in test_idx else "train")
    return out


def _worker_count(n_workers: Optional[int]) -> int:
    if n_workers is not None:
        return max(1, int(n_workers))
    return max(1, int(os.environ.get("PIGRN_THREADS", "1")))


def build_dataset(specs: List[TrialSpec], model: ArmModel, out_dir,
                  split_seed: int = 0,
                  n_workers: Optional[int] = None) -> str:
    """Generate all trials and write a processed dataset directory.

    Layout: trials/trial_NNN.csv, manifest.txt, norm_stats.json (training
    split only), arm_model.cfg. Returns the manifest path. Deterministic
    in (specs, model, split_seed); PIGRN_THREADS (or n_workers) only
    parallelizes generation.
    """
    if not specs:
        raise ValueError("specs must be nonempty")
    specs = _assign_splits(specs, split_seed)
    os.makedirs(os.path.join(out_dir, "trials"), exist_ok=True)

    workers = _worker_count(n_workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(lambda s: generate_trial(s, model), specs))
    else:
        trials = [generate_trial(s, model) for s in specs]

    entries = []
    train_targets = []
    for i, (spec, trial) in enumerate(zip(specs, trials)):
        rel = os.path.join("trials", "trial_%03d.csv" % i)
        t = trial.kinematics.shape[0]
        time = np.arange(t) / spec.sample_rate
        write_trial_csv(os.path.join(out_dir, rel), time, trial.emg.values,
                        trial.kinematics, trial.load_kg)
        entries.append(TrialEntry(load_kg=trial.load_kg, split=spec.split,
                                  file=rel))
        if spec.split == "train":
            train_targets.append(trial_targets(trial.kinematics,
                                               trial.load_kg, t))

    if not train_targets:
        raise ValueError("no training trials in split assignment")
    norm = NormalizationStats.from_training_targets(train_targets)
    norm.save(os.path.join(out_dir, "norm_stats.json"))
    save_arm_model(model, os.path.join(out_dir, "arm_model.cfg"))

    manifest = DatasetManifest(
        kind="processed", trials=entries,
        extras={"sample_rate": specs[0].sample_rate,
                "norm_stats": "norm_stats.json",
                "arm_model": "arm_model.cfg",
                "split_seed": split_seed})
    manifest_path = os.path.join(out_dir, "manifest.txt")
    write_dataset_manifest(manifest_path, manifest)
    return manifest_path


def generate_long_trial(load_kg: float, model: ArmModel, n_steps: int = 5000,
                        seed: int = 0, noise_level: float = 0.05,
                        cycle_total: int = 650, cycle_active: int = 450
                        ) -> SyntheticTrial:
    """A long sequence of repeated flexion-extension cycles with rest gaps,
    for probing generalization beyond the training length."""
    if n_steps < cycle_total:
        raise ValueError("n_steps must cover at least one cycle")
    rng = np.random.default_rng(seed)
    pieces = []
    total = 0
    i = 0
    while total < n_steps:
        jit = rng.uniform(0.9, 1.1, 2)
        spec = TrialSpec(load_kg=load_kg, n_total_steps=cycle_total,
                         n_active_steps=cycle_active,
                         elbow_peak=math.radians(130.0) * jit[0],
                         shoulder_peak=math.radians(32.0) * jit[1],
                         noise_level=noise_level, seed=seed + 1 + i)
        pieces.append(generate_trajectory(spec))
        total += cycle_total
        i += 1
    kin = np.vstack(pieces)[:n_steps]
    torque = inverse_dynamics(model, kin[:, 0:2], kin[:, 2:4], kin[:, 4:6],
                              float(load_kg))
    emg_spec = TrialSpec(load_kg=load_kg, n_total_steps=n_steps,
                         n_active_steps=min(cycle_active, n_steps),
                         noise_level=noise_level, seed=seed)
    emg = synthesize_emg(kin, load_kg, model, emg_spec)
    return SyntheticTrial(emg=emg, kinematics=kin, torque=torque,
                          load_kg=float(load_kg))
