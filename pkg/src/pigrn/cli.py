"""Command-line entry point.

Subcommands cover the whole pipeline: synth (generate a dataset),
preprocess (raw recordings to processed trials), train, eval,
sweep-lambda, predict. Every command records a run manifest with content
hashes of its inputs and outputs. All numerics happen in the library;
this layer only parses arguments, moves files, and maps exceptions to
exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
divergence. PIGRN_THREADS caps worker threads for per-trial stages.
"""

import argparse
import datetime
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import io as kvio
from .data import (
    DatasetManifest,
    NormalizationStats,
    TrialEntry,
    load_dataset,
    read_dataset_manifest,
    training_stats_from_manifest,
    write_dataset_manifest,
    write_trial_csv,
)
from .dynamics import (
    SingularInertiaError,
    default_arm_model,
    inverse_dynamics,
    load_arm_model,
)
from .metrics import (
    evaluate,
    metric_report_to_csv,
    metric_report_to_json,
    write_trial_prediction_csv,
)
from .nn import network_forward
from .preprocess import AngleSeries, RawEmg, angle_pipeline, emg_pipeline
from .synth import build_dataset, make_trial_specs
from .training import (
    NonFiniteResidualError,
    TrainConfig,
    TrainingDivergedError,
    load_checkpoint,
    load_train_config,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

DEFAULT_LAMBDA_SWEEP = "1.0,0.1,0.05,0.01,0.001,0.0001"


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def _pmap(fn, items):
    workers = max(1, int(os.environ.get("PIGRN_THREADS", "1")))
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_run_manifest(out_dir, command, args, seeds, inputs, outputs):
    path = os.path.join(out_dir, "run_%s.json" % command.replace("-", "_"))
    kvio.write_run_manifest(
        path, command=command, argv=list(args), seeds=seeds,
        inputs=[p for p in inputs if p], outputs=[p for p in outputs if p],
        timestamp=datetime.datetime.now().isoformat())
    return path


def _say(quiet: bool, message: str):
    if not quiet:
        print(message)


def cmd_synth(args, argv) -> int:
    values = kvio.read_keyvalue(args.spec) if args.spec else {}
    known = {"loads", "runs_per_load", "test_per_load", "noise_level",
             "base_seed", "split_seed", "n_total_steps", "n_active_steps",
             "elbow_peak_deg", "shoulder_peak_deg", "peak_jitter",
             "body_mass_kg", "body_height_m"}
    unknown = set(values) - known
    if unknown:
        raise ValueError("%s: unknown spec keys %s" % (args.spec, sorted(unknown)))

    def listy(v):
        return [v] if not isinstance(v, list) else v

    base_seed = int(values.get("base_seed", 0))
    if args.seed is not None:
        base_seed = args.seed
    split_seed = int(values.get("split_seed", base_seed))
    test_per_load = values.get("test_per_load")
    if test_per_load is not None:
        test_per_load = [int(v) for v in listy(test_per_load)]
    specs = make_trial_specs(
        loads=[float(v) for v in listy(values.get("loads", [0.0, 2.0, 4.0]))],
        runs_per_load=int(values.get("runs_per_load", 4)),
        noise_level=float(values.get("noise_level", 0.0)),
        base_seed=base_seed,
        n_total_steps=int(values.get("n_total_steps", 800)),
        n_active_steps=int(values.get("n_active_steps", 450)),
        elbow_peak=math.radians(float(values.get("elbow_peak_deg", 130.0))),
        shoulder_peak=math.radians(float(values.get("shoulder_peak_deg", 32.0))),
        peak_jitter=float(values.get("peak_jitter", 0.10)),
        test_per_load=test_per_load)
    model = default_arm_model(
        body_mass=float(values.get("body_mass_kg", 73.0)),
        body_height=float(values.get("body_height_m", 1.74)))
    manifest_path = build_dataset(specs, model, args.out, split_seed=split_seed)
    manifest = read_dataset_manifest(manifest_path)
    outputs = [manifest_path,
               os.path.join(args.out, "norm_stats.json"),
               os.path.join(args.out, "arm_model.cfg")]
    outputs += [os.path.join(args.out, t.file) for t in manifest.trials]
    _write_run_manifest(args.out, "synth", argv,
                        {"base_seed": base_seed, "split_seed": split_seed},
                        [args.spec] if args.spec else [], outputs)
    _say(args.quiet, "wrote %d trials to %s" % (len(manifest.trials), args.out))
    return EXIT_OK


def _read_timed_csv(path, n_value_columns):
    table = np.atleast_2d(np.genfromtxt(path, delimiter=",", skip_header=1))
    if table.shape[1] != n_value_columns + 1:
        raise ValueError("%s: expected %d columns (time + %d), found %d"
                         % (path, n_value_columns + 1, n_value_columns,
                            table.shape[1]))
    if not np.all(np.isfinite(table)):
        raise ValueError("%s: non-finite values" % path)
    return table[:, 0], table[:, 1:]


def cmd_preprocess(args, argv) -> int:
    manifest = read_dataset_manifest(args.manifest)
    if manifest.kind != "raw":
        raise ValueError("%s: preprocess needs a raw manifest, got kind=%r"
                         % (args.manifest, manifest.kind))
    base = os.path.dirname(os.path.abspath(args.manifest))
    emg_rate = float(manifest.extras.get("emg_sample_rate", 4000.0))
    angle_rate = float(manifest.extras.get("angle_sample_rate", 125.0))
    default_mvc = manifest.extras.get("mvc")
    os.makedirs(os.path.join(args.out, "trials"), exist_ok=True)

    def process(entry: TrialEntry):
        if entry.emg_file is None or entry.angle_file is None:
            raise ValueError("raw trial needs emg_file and angle_file")
        mvc = entry.mvc if entry.mvc is not None else default_mvc
        if mvc is None:
            raise ValueError("no MVC values for %s" % entry.emg_file)
        mvc = np.atleast_1d(np.asarray(mvc, dtype=float))
        _, samples = _read_timed_csv(os.path.join(base, entry.emg_file), 4)
        env = emg_pipeline(RawEmg(samples=samples, sample_rate=emg_rate), mvc)
        _, angles = _read_timed_csv(os.path.join(base, entry.angle_file), 2)
        smoothed, qd, qdd = angle_pipeline(
            AngleSeries(angles=angles, sample_rate=angle_rate))
        n = min(env.values.shape[0], smoothed.angles.shape[0])
        kin = np.column_stack([smoothed.angles[:n], qd[:n], qdd[:n]])
        return env.values[:n], kin

    results = _pmap(process, manifest.trials)
    entries = []
    inputs = [args.manifest]
    outputs = []
    for i, (entry, (emg, kin)) in enumerate(zip(manifest.trials, results)):
        rel = os.path.join("trials", "trial_%03d.csv" % i)
        time = np.arange(emg.shape[0]) / angle_rate
        write_trial_csv(os.path.join(args.out, rel), time, emg, kin,
                        entry.load_kg)
        entries.append(TrialEntry(load_kg=entry.load_kg, split=entry.split,
                                  file=rel))
        inputs += [os.path.join(base, entry.emg_file),
                   os.path.join(base, entry.angle_file)]
        outputs.append(os.path.join(args.out, rel))

    out_manifest = os.path.join(args.out, "manifest.txt")
    extras = {"sample_rate": angle_rate}
    if "arm_model" in manifest.extras:
        extras["arm_model"] = manifest.extras["arm_model"]
    write_dataset_manifest(out_manifest, DatasetManifest(
        kind="processed", trials=entries, extras=extras))
    outputs.append(out_manifest)
    _write_run_manifest(args.out, "preprocess", argv, {}, inputs, outputs)
    _say(args.quiet, "processed %d trials into %s" % (len(entries), args.out))
    return EXIT_OK


def _resolve_training_inputs(manifest_path, out_dir):
    """Arm model and normalization stats for a processed manifest."""
    manifest = read_dataset_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    if "arm_model" in manifest.extras:
        model = load_arm_model(os.path.join(base, manifest.extras["arm_model"]))
    else:
        model = default_arm_model()
    if "norm_stats" in manifest.extras:
        norm_path = os.path.join(base, manifest.extras["norm_stats"])
        norm = NormalizationStats.load(norm_path)
    else:
        norm = training_stats_from_manifest(manifest_path)
        norm_path = os.path.join(out_dir, "norm_stats.json")
        norm.save(norm_path)
    return model, norm, norm_path


def _apply_overrides(cfg: TrainConfig, args) -> TrainConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "lambda_physics", None) is not None:
        updates["lambda_physics"] = args.lambda_physics
    if getattr(args, "epochs", None) is not None:
        updates["epochs"] = args.epochs
    return replace(cfg, **updates) if updates else cfg


def cmd_train(args, argv) -> int:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    cfg = _apply_overrides(cfg, args)
    os.makedirs(args.out, exist_ok=True)
    model, norm, norm_path = _resolve_training_inputs(args.manifest, args.out)
    dataset = load_dataset(args.manifest, model, norm, split="train")
    checkpoint = os.path.join(args.out, "checkpoint.json")
    history = os.path.join(args.out, "loss_history.csv")
    log = None if args.quiet else print
    train(dataset, cfg, model, norm, checkpoint_path=checkpoint,
          loss_history_path=history, log=log)
    _write_run_manifest(args.out, "train", argv, {"seed": cfg.seed},
                        [args.config, args.manifest, norm_path],
                        [checkpoint, history])
    _say(args.quiet, "checkpoint: %s" % checkpoint)
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    net, norm, model, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.manifest, model, norm, split="test")
    os.makedirs(args.out, exist_ok=True)
    predictions = []
    report = evaluate(net, dataset, model, norm, global_max=args.global_max,
                      predictions=predictions)
    csv_path = os.path.join(args.out, "metrics.csv")
    json_path = os.path.join(args.out, "metrics.json")
    metric_report_to_csv(report, csv_path)
    metric_report_to_json(report, json_path)
    manifest = read_dataset_manifest(args.manifest)
    sample_rate = float(manifest.extras.get("sample_rate", 125.0))
    pred_dir = os.path.join(args.out, "predictions")
    os.makedirs(pred_dir, exist_ok=True)
    outputs = [csv_path, json_path]
    for i, tp in enumerate(predictions):
        p = os.path.join(pred_dir, "trial_%03d.csv" % i)
        write_trial_prediction_csv(tp, sample_rate, p)
        outputs.append(p)
    _write_run_manifest(args.out, "eval", argv, {},
                        [args.checkpoint, args.manifest], outputs)
    if not args.quiet:
        for name in ("elbow_angle", "elbow_torque"):
            qs = report.quantities[name]
            print("%s: rmse=%.4g pct_rmse=%.3f%% r=%.4f"
                  % (name, qs.rmse, qs.pct_rmse, qs.pearson_r))
    return EXIT_OK


def cmd_sweep_lambda(args, argv) -> int:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    cfg = _apply_overrides(cfg, args)
    tokens = [tok.strip() for tok in args.values.split(",") if tok.strip()]
    if not tokens:
        raise ValueError("no lambda values given")
    lambdas = [float(tok) for tok in tokens]
    if any(v < 0 for v in lambdas):
        raise ValueError("lambda values must be >= 0")
    os.makedirs(args.out, exist_ok=True)
    model, norm, norm_path = _resolve_training_inputs(args.manifest, args.out)
    train_set = load_dataset(args.manifest, model, norm, split="train")
    test_set = load_dataset(args.manifest, model, norm, split="test")

    rows = []
    outputs = []
    for tok, lam in zip(tokens, lambdas):
        sub = os.path.join(args.out, "lambda_%s" % tok)
        os.makedirs(sub, exist_ok=True)
        cfg_l = replace(cfg, lambda_physics=lam)
        checkpoint = os.path.join(sub, "checkpoint.json")
        history = os.path.join(sub, "loss_history.csv")
        _say(args.quiet, "training lambda=%s" % tok)
        net, reports = train(train_set, cfg_l, model, norm,
                             checkpoint_path=checkpoint,
                             loss_history_path=history,
                             log=None if args.quiet else print)
        report = evaluate(net, test_set, model, norm)
        angle = report.quantities["elbow_angle"]
        torque = report.quantities["elbow_torque"]
        rows.append((tok, angle.rmse, angle.pct_rmse, torque.rmse,
                     torque.pct_rmse, torque.pearson_r,
                     reports[-1].L_total))
        outputs += [checkpoint, history]

    sweep_path = os.path.join(args.out, "sweep.csv")
    with open(sweep_path, "w") as fh:
        fh.write("lambda,elbow_angle_rmse,elbow_angle_pct_rmse,"
                 "elbow_torque_rmse,elbow_torque_pct_rmse,"
                 "elbow_torque_pearson,final_L_total\n")
        for row in rows:
            fh.write(row[0] + "," + ",".join("%.17g" % v for v in row[1:])
                     + "\n")
    outputs.append(sweep_path)
    _write_run_manifest(args.out, "sweep-lambda", argv, {"seed": cfg.seed},
                        [args.config, args.manifest], outputs)
    _say(args.quiet, "sweep table: %s" % sweep_path)
    return EXIT_OK


def cmd_predict(args, argv) -> int:
    net, norm, model, _ = load_checkpoint(args.checkpoint)
    table = np.atleast_2d(np.genfromtxt(args.emg, delimiter=",", skip_header=1))
    if table.shape[1] == net.input_size + 1:
        time = table[:, 0]
        emg = table[:, 1:]
    elif table.shape[1] == net.input_size:
        time = np.arange(table.shape[0]) / 125.0
        emg = table
    else:
        raise ValueError("%s: expected %d EMG columns (optionally preceded by "
                         "time), found %d columns"
                         % (args.emg, net.input_size, table.shape[1]))
    if not np.all(np.isfinite(table)):
        raise ValueError("%s: non-finite values" % args.emg)

    out, _ = network_forward(net, emg, mode="eval")
    pred = norm.denormalize(out)
    torque = inverse_dynamics(model, pred[:, 0:2], pred[:, 2:4], pred[:, 4:6],
                              pred[:, 6])
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "predictions.csv")
    header = ("time,q1,q2,qd1,qd2,qdd1,qdd2,load,tau1,tau2")
    np.savetxt(path, np.column_stack([time, pred, torque]), delimiter=",",
               fmt="%.17g", header=header, comments="")
    _write_run_manifest(args.out, "predict", argv, {},
                        [args.checkpoint, args.emg], [path])
    _say(args.quiet, "predictions: %s (%d rows)" % (path, pred.shape[0]))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="pigrn",
                     description="EMG to joint kinematics, load, and torque "
                                 "with a physics-informed GRU")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *names):
        if "out" in names:
            p.add_argument("--out", required=True, help="output directory")
        if "manifest" in names:
            p.add_argument("--manifest", required=True,
                           help="dataset manifest file")
        if "config" in names:
            p.add_argument("--config", help="training config file")
        if "seed" in names:
            p.add_argument("--seed", type=int, help="seed override")
        if "lambda" in names:
            p.add_argument("--lambda", dest="lambda_physics", type=float,
                           help="physics loss weight override")
        if "epochs" in names:
            p.add_argument("--epochs", type=int, help="epoch count override")
        p.add_argument("--quiet", action="store_true",
                       help="suppress progress output")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="synthesis spec file (key = value)")
    add_common(p, "out", "seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="raw recordings to processed trials")
    add_common(p, "manifest", "out")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a processed dataset")
    add_common(p, "config", "manifest", "out", "seed", "lambda", "epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--global-max", action="store_true",
                   help="normalize %%RMSE by the global test-set maximum")
    add_common(p, "manifest", "out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-lambda", help="train and evaluate across "
                                            "physics-loss weights")
    p.add_argument("--values", default=DEFAULT_LAMBDA_SWEEP,
                   help="comma-separated lambda values")
    add_common(p, "config", "manifest", "out", "seed", "epochs")
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("predict", help="run a checkpoint on an EMG csv")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--emg", required=True, help="EMG envelope csv")
    add_common(p, "out")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except (TrainingDivergedError, NonFiniteResidualError,
            SingularInertiaError) as exc:
        print("pigrn %s: divergence: %s" % (args.command, exc),
              file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ValueError) as exc:
        print("pigrn %s: error: %s" % (args.command, exc), file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
