"""Command line entry point: ``stepnet <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__, ingest
from .baseline import PaaConfig, baseline_count
from .counting import accuracy_steps, aggregate, count_steps, evaluate
from .ingest import RecordingError, SynthConfig
from .model import (
    AdaptConfig,
    ModelFileError,
    TrainConfig,
    adapt,
    cross_validate,
    load_model,
    save_model,
    split_adaptation,
    train_general,
)
from .nn import ShapeError
from .signal import prepare, resample

logger = logging.getLogger("stepnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {s}")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {s}")
    return v


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Run:
    """Collects the manifest for one command invocation."""

    def __init__(self, args):
        self.args = args
        self.t0 = time.perf_counter()
        self.inputs: list[str] = []
        self.outputs: list[str] = []

    def manifest(self) -> dict:
        cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(self.args).items() if k != "func"}
        return {
            "command": self.args.command,
            "version": __version__,
            "config": cfg,
            "seed": getattr(self.args, "seed", None),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "duration_s": round(time.perf_counter() - self.t0, 3),
        }

    def emit(self, payload: dict, out: Path | None, manifest_path: Path | None = None):
        """Write ``payload`` to ``out`` (or stdout) and the manifest next to it.

        Without ``out`` the manifest goes to stderr so stdout stays a single
        parseable report.
        """
        if out is not None:
            manifest_path = manifest_path or out.with_name(out.name + ".manifest.json")
            payload = {**payload, "manifest": str(manifest_path)}
            _write_atomic(out, _dumps(payload))
            self.outputs.append(str(out))
            _write_atomic(manifest_path, _dumps(self.manifest()))
        else:
            payload = {**payload, "manifest": "stderr"}
            sys.stdout.write(_dumps(payload))
            sys.stderr.write(json.dumps({"manifest": self.manifest()}, sort_keys=True) + "\n")


def _load_subject(csv_path: Path, steps: Path | None, require_steps: bool = True):
    csv_path = Path(csv_path)
    if steps is None:
        cand = csv_path.with_name(csv_path.name[: -len(".csv")] + ".steps.csv")
        steps = cand if cand.exists() else None
    if steps is None and require_steps:
        raise RecordingError(f"no step annotations for {csv_path} (expected {cand})")
    subject_id, device = csv_path.stem, "unknown"
    meta = csv_path.with_name(csv_path.name[: -len(".csv")] + ".meta.json")
    if meta.exists():
        m = json.loads(meta.read_text())
        subject_id, device = m.get("subject_id", subject_id), m.get("device", device)
    return ingest.load_recording(csv_path, steps, subject_id, device), steps


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args, run: Run):
    base = SynthConfig(
        accel_amp=args.accel_amp, gyro_amp=args.gyro_amp, noise_sd=args.noise,
        sample_rate_hz=args.rate,
    )
    shift = ingest.SHIFTED_DEVICE if args.shifted else None
    device = "shifted" if args.shifted else "synthetic"
    cohort = ingest.synth_cohort(args.subjects, args.duration, args.seed, base, shift, args.prefix, device)
    out = Path(args.out)
    files = []
    for rec, cfg in cohort:
        paths = ingest.write_synthetic(rec, cfg, out)
        files += [str(p) for p in paths]
    run.outputs += files
    index = {
        "subjects": [
            {"subject_id": rec.subject_id, "steps": len(rec.events), "config": dataclasses.asdict(cfg)}
            for rec, cfg in cohort
        ]
    }
    run.emit(index, out / "index.json", out / "manifest.json")


def _load_dir(path, run: Run):
    recs = ingest.load_dataset(path)
    run.inputs.append(str(path))
    return [prepare(r) for r in recs]


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                       clip=args.clip, dropout_rate=args.dropout)


def cmd_train(args, run: Run):
    data = _load_dir(args.data, run)
    net = train_general(data, _train_config(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(net, out)
    run.outputs.append(str(out))
    payload = {
        "model": str(out),
        "subjects": [ws.subject_id for ws in data],
        "loss_history": net.loss_history,
        "train_metrics": aggregate(evaluate(net, ws) for ws in data),
    }
    run.emit(payload, out.with_name(out.name + ".report.json"))


def cmd_cv(args, run: Run):
    data = _load_dir(args.data, run)
    cv = cross_validate(data, _train_config(args), fold_size=args.fold_size)
    payload = cv.to_dict()
    if args.model_out:
        path = Path(args.model_out)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(cv.best_model, path)
        run.outputs.append(str(path))
        payload["best_model"] = str(path)
    run.emit(payload, Path(args.out) if args.out else None)


def cmd_adapt(args, run: Run):
    net = load_model(args.model)
    rec, steps = _load_subject(args.subject, args.steps)
    run.inputs += [str(args.model), str(args.subject), str(steps)]
    ws = prepare(rec)
    cfg = AdaptConfig(
        budget_s=args.seconds, epochs_head=args.epochs_head, lr_head=args.lr_head,
        epochs_full=args.epochs_full, lr_full=args.lr_full, batch_size=args.batch_size, seed=args.seed,
    )
    adapt_ws, test_ws = split_adaptation(ws, cfg.budget_s)
    before = evaluate(net, test_ws)
    tuned = adapt(net, ws, cfg)
    after = evaluate(tuned, test_ws)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(tuned, out)
    run.outputs.append(str(out))
    payload = {
        "model": str(out),
        "subject_id": ws.subject_id,
        "adaptation_windows": len(adapt_ws),
        "test_windows": len(test_ws),
        "before": before.to_dict(),
        "after": after.to_dict(),
        "delta_accuracy_class": after.accuracy_class - before.accuracy_class,
        "delta_accuracy_steps": after.accuracy_steps - before.accuracy_steps,
    }
    run.emit(payload, Path(args.report) if args.report else out.with_name(out.name + ".report.json"))


def cmd_count(args, run: Run):
    net = load_model(args.model)
    rec, _ = _load_subject(args.input, None, require_steps=False)
    run.inputs += [str(args.model), str(args.input)]
    ws = prepare(rec)
    labels = net.predict(ws.X)
    payload = {
        "subject_id": ws.subject_id,
        "steps": count_steps(labels),
        "labels": "".join("LR"[i] for i in labels),
    }
    run.emit(payload, Path(args.out) if args.out else None)


def cmd_baseline(args, run: Run):
    rec, steps = _load_subject(args.input, None, require_steps=False)
    run.inputs.append(str(args.input))
    cfg = PaaConfig(frame=args.frame, peak_threshold=args.threshold, merge_window_s=args.merge)
    n = baseline_count(resample(rec), cfg)
    payload = {"subject_id": rec.subject_id, "steps": n, "config": dataclasses.asdict(cfg)}
    if rec.events:
        payload["steps_ground_truth"] = len(rec.events)
        payload["accuracy_steps"] = accuracy_steps(n, len(rec.events))
    run.emit(payload, Path(args.out) if args.out else None)


def cmd_eval(args, run: Run):
    net = load_model(args.model)
    run.inputs.append(str(args.model))
    if args.data:
        data = _load_dir(args.data, run)
    elif args.input:
        rec, steps = _load_subject(args.input, args.steps)
        run.inputs += [str(args.input), str(steps)]
        data = [prepare(rec)]
    else:
        raise UsageError("eval needs --data or --input")
    if args.holdout is not None:
        data = [split_adaptation(ws, args.holdout)[1] for ws in data]
    reports = [evaluate(net, ws) for ws in data]
    run.emit(aggregate(reports), Path(args.out) if args.out else None)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_train_args(p):
    p.add_argument("--data", required=True, type=Path, help="directory of <id>.csv/<id>.steps.csv pairs")
    p.add_argument("--epochs", type=_positive_int, default=TrainConfig.epochs)
    p.add_argument("--lr", type=_positive_float, default=TrainConfig.lr)
    p.add_argument("--batch-size", type=_positive_int, default=TrainConfig.batch_size)
    p.add_argument("--clip", type=_positive_float, default=TrainConfig.clip)
    p.add_argument("--dropout", type=float, default=TrainConfig.dropout_rate)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stepnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write synthetic subject recordings")
    p.add_argument("--subjects", type=_positive_int, required=True)
    p.add_argument("--duration", type=_positive_float, default=360.0, help="seconds per subject")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--prefix", default="S")
    p.add_argument("--shifted", action="store_true", help="apply the cross-device shift")
    p.add_argument("--noise", type=float, default=SynthConfig.noise_sd)
    p.add_argument("--accel-amp", type=_positive_float, default=SynthConfig.accel_amp)
    p.add_argument("--gyro-amp", type=_positive_float, default=SynthConfig.gyro_amp)
    p.add_argument("--rate", type=float, default=SynthConfig.sample_rate_hz)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a general model on every subject in --data")
    _add_train_args(p)
    p.add_argument("--out", type=Path, required=True, help="model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="leave-N-subjects-out cross-validation")
    _add_train_args(p)
    p.add_argument("--fold-size", type=_positive_int, default=2)
    p.add_argument("--out", type=Path, help="report file (default: stdout)")
    p.add_argument("--model-out", type=Path, help="write the best fold's model here")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("adapt", help="personalize a general model on a subject's first seconds")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--subject", type=Path, required=True, help="subject sensor CSV")
    p.add_argument("--steps", type=Path, help="annotation CSV (default: <subject>.steps.csv)")
    p.add_argument("--seconds", type=_positive_float, default=AdaptConfig.budget_s)
    p.add_argument("--epochs-head", type=int, default=AdaptConfig.epochs_head)
    p.add_argument("--lr-head", type=_positive_float, default=AdaptConfig.lr_head)
    p.add_argument("--epochs-full", type=int, default=AdaptConfig.epochs_full)
    p.add_argument("--lr-full", type=_positive_float, default=AdaptConfig.lr_full)
    p.add_argument("--batch-size", type=_positive_int, default=AdaptConfig.batch_size)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="adapted model file")
    p.add_argument("--report", type=Path, help="delta report (default: <out>.report.json)")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("count", help="count steps with a model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("baseline", help="count steps with PAA + merge")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--frame", type=_positive_int, default=PaaConfig.frame)
    p.add_argument("--threshold", type=float, default=PaaConfig.peak_threshold)
    p.add_argument("--merge", type=float, default=PaaConfig.merge_window_s)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="accuracy_class / accuracy_steps per subject")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path)
    p.add_argument("--input", type=Path)
    p.add_argument("--steps", type=Path)
    p.add_argument("--holdout", type=_positive_float,
                   help="skip the first N seconds (the adaptation budget) before scoring")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_eval)
    return parser


def _thread_limit():
    n = os.environ.get("STEPNET_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    limit = _thread_limit()
    try:
        args.func(args, Run(args))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"stepnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RecordingError, ModelFileError, ShapeError, FileNotFoundError, ValueError) as exc:
        print(f"stepnet: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        if limit is not None:
            limit.unregister()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
