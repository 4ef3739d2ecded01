"""Command line interface.

Subcommands cover the batch workflow end to end:

  synth     write synthetic capture files (plus moment sidecars)
  ingest    capture directory -> dataset container
  train     dataset + waveform name -> one model bundle
  evaluate  per-waveform model bundles + dataset -> agreement report
  kfold     cross-validated train/evaluate over one dataset
  compare   two reports -> improvement table with significance

A full run trains one model per response waveform (three `train` calls
for a moment dataset), then scores them together with `evaluate`.

Exit codes: 0 on success, 1 when a pipeline stage refuses or fails on
the data (including fold guards), 2 for usage errors. Logs go to
stderr; each artifact-producing command writes one manifest JSON
alongside its output.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import EmptyDataset, FoldMismatch, PipelineError
from .events import EventThresholds, Limb
from .metrics import DEFAULT_WINDOW, EvaluationReport, compare_runs
from .model_io import load_model, save_model
from .network import ARCHITECTURES, TrainConfig
from .pca import DEFAULT_VARIANCE_THRESHOLD
from .pipeline import (
    bundle_waveform,
    evaluate_run,
    ingest_directory,
    sidecar_path,
    train_waveform,
    write_kjm_sidecar,
    write_manifest,
)
from .prep import ResponseKind, fold_signature, kfold, load_dataset, save_dataset, split
from . import synth
from .c3d import write_c3d

log = logging.getLogger("kjmnet")


def _train_config(args):
    return TrainConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def _write_report(report, md_path):
    """Write the markdown table plus a machine-readable JSON twin."""
    md_path = Path(md_path)
    if md_path.suffix == ".json":
        json_path = md_path
        md_path = md_path.with_suffix(".md")
    else:
        json_path = md_path.with_suffix(".json")
    md_path.write_text(report.to_markdown() + "\n")
    json_path.write_text(json.dumps(report.to_dict(), sort_keys=True))
    return md_path, json_path


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recipes = synth.random_recipes(
        args.count,
        args.kind,
        args.seed,
        limb=Limb(args.limb),
        noise=args.noise,
    )
    for recipe in recipes:
        trial = synth.generate_trial(recipe)
        path = out / f"{recipe.name}.c3d"
        path.write_bytes(write_c3d(synth.trial_to_c3d(trial)))
        write_kjm_sidecar(
            sidecar_path(path),
            trial.kjm_series,
            synth.KJM_WAVEFORMS,
            trial.markers.rate,
        )
        log.debug("wrote %s", path)
    write_manifest(
        out / "synth.manifest.json",
        "synth",
        inputs={"kind": args.kind, "count": args.count, "seed": args.seed,
                "limb": args.limb, "noise": args.noise},
        outputs={"directory": out},
        extra={"files": len(recipes)},
    )
    log.info("wrote %d capture files under %s", len(recipes), out)
    return 0


def cmd_ingest(args):
    files = sorted(Path(args.c3d_dir).glob("*.c3d"))
    log.info("found %d capture files under %s", len(files), args.c3d_dir)
    if not files:
        raise EmptyDataset(f"found 0 capture files under {args.c3d_dir}")
    thresholds = EventThresholds(
        fs_force=args.fs_force, fs_hold=args.fs_hold, to_force=args.to_force
    )
    rejects = []
    dataset = ingest_directory(
        args.c3d_dir,
        args.movement,
        Limb(args.limb),
        response_kind=ResponseKind.from_label(args.response),
        log=rejects,
        thresholds=thresholds,
    )
    for source_id, reason in rejects:
        log.info("skipped %s: %s", source_id, reason)
    save_dataset(dataset, args.out)
    write_manifest(
        f"{args.out}.manifest.json",
        "ingest",
        inputs={"c3d_dir": args.c3d_dir, "movement": args.movement,
                "limb": args.limb, "response": args.response},
        outputs={"dataset": args.out},
        extra={
            "rows": dataset.n,
            "files": len(files),
            "rejected": len(rejects),
            "rejects": [list(r) for r in rejects],
            "fold": fold_signature(dataset),
            "waveforms": list(dataset.waveforms),
            "thresholds": {
                "fs_force": args.fs_force,
                "fs_hold": args.fs_hold,
                "to_force": args.to_force,
            },
        },
    )
    log.info("wrote %d rows to %s (%d rejected)", dataset.n, args.out, len(rejects))
    return 0


def cmd_train(args):
    dataset = load_dataset(args.dataset)
    dataset_id = fold_signature(dataset)
    split_meta = None
    if args.holdout > 0.0:
        if not args.holdout < 1.0:
            raise EmptyDataset(f"holdout fraction {args.holdout} outside (0, 1)")
        train_ds, test_ds = split(dataset, 1.0 - args.holdout, args.split_seed)
        split_meta = {
            "holdout": args.holdout,
            "seed": args.split_seed,
            "test_fold": fold_signature(test_ds),
        }
    else:
        train_ds = dataset
    donor = load_model(args.init) if args.init else None
    run = train_waveform(
        train_ds,
        args.waveform,
        arch=args.arch,
        config=_train_config(args),
        threshold=args.threshold,
        donor=donor,
        seed=args.seed,
        extra_metadata={"dataset_id": dataset_id, "split": split_meta},
    )
    save_model(run.bundle, args.out)
    write_manifest(
        f"{args.out}.manifest.json",
        "train",
        inputs={"dataset": args.dataset, "waveform": args.waveform,
                "init": args.init or "", "arch": args.arch,
                "seed": args.seed, "epochs": args.epochs,
                "learning_rate": args.learning_rate,
                "momentum": args.momentum, "batch_size": args.batch_size,
                "threshold": args.threshold, "holdout": args.holdout,
                "split_seed": args.split_seed},
        outputs={"model": args.out},
        extra={
            "dataset_id": dataset_id,
            "train_fold": run.bundle.metadata["train_fold"],
            "split": split_meta,
            "rows": train_ds.n,
            "components": run.bundle.pca[0].k,
            "provenance": run.bundle.metadata["provenance"],
            "loss_history": run.history,
        },
    )
    log.info(
        "trained %s for %d epochs, final loss %.4g",
        args.waveform, args.epochs, run.history[-1] if run.history else float("nan"),
    )
    return 0


def _evaluation_rows(dataset, bundles, allow_train_eval):
    """Pick the rows a set of bundles may be scored on.

    When the dataset is the one the bundles were trained from and they
    recorded a holdout split, the same split is re-derived and the held
    out part is scored. Anything else is treated as an external test
    set, except the bundles' own training rows, which are refused unless
    explicitly allowed.
    """
    sig = fold_signature(dataset)
    meta = bundles[0].metadata
    keys = ("train_fold", "dataset_id", "split")
    for b in bundles[1:]:
        if any(b.metadata.get(k) != meta.get(k) for k in keys):
            raise FoldMismatch(
                "models were trained on different folds; "
                "score them separately"
            )
    split_meta = meta.get("split")
    if split_meta and meta.get("dataset_id") == sig:
        train_ds, test_ds = split(
            dataset, 1.0 - split_meta["holdout"], split_meta["seed"]
        )
        if fold_signature(train_ds) != meta.get("train_fold"):
            raise FoldMismatch(
                "dataset does not reproduce the models' training fold"
            )
        return test_ds
    if sig == meta.get("train_fold") and not allow_train_eval:
        raise FoldMismatch(
            "dataset is the models' own training fold; "
            "pass --allow-train-eval to score it anyway"
        )
    return dataset


def cmd_evaluate(args):
    bundles = [load_model(p) for p in args.models]
    dataset = load_dataset(args.dataset)
    eval_ds = _evaluation_rows(dataset, bundles, args.allow_train_eval)
    report = evaluate_run(bundles, eval_ds, window=args.window)
    md_path, json_path = _write_report(report, args.report)
    write_manifest(
        f"{json_path}.manifest.json",
        "evaluate",
        inputs={"dataset": args.dataset,
                "models": ", ".join(args.models),
                "window": args.window},
        outputs={"markdown": md_path, "report": json_path},
        extra={
            "fold": report.fold_id,
            "rows": report.n,
            "kjm_mean_r": report.kjm_mean_r,
            "kjm_mean_rrmse": report.kjm_mean_rrmse,
        },
    )
    print(report.to_markdown())
    return 0


def cmd_kfold(args):
    dataset = load_dataset(args.dataset)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    folds = []
    for i, (train_ds, test_ds) in enumerate(kfold(dataset, args.k, args.seed)):
        bundles = []
        for name in dataset.waveforms:
            run = train_waveform(
                train_ds,
                name,
                arch=args.arch,
                config=_train_config(args),
                threshold=args.threshold,
                seed=args.seed,
                extra_metadata={"fold_index": i},
            )
            save_model(run.bundle, out / f"fold{i}-{name}.kwt")
            bundles.append(run.bundle)
        report = evaluate_run(bundles, test_ds, window=args.window)
        _write_report(report, out / f"fold{i}.report.md")
        folds.append(
            {
                "fold": i,
                "train_rows": train_ds.n,
                "test_rows": test_ds.n,
                "kjm_mean_r": report.kjm_mean_r,
                "kjm_mean_rrmse": report.kjm_mean_rrmse,
                "test_fold": report.fold_id,
            }
        )
        log.info("fold %d/%d: mean r %.4f", i + 1, args.k, report.kjm_mean_r)
    per_fold = [f["kjm_mean_r"] for f in folds]
    mean_r = sum(per_fold) / len(per_fold)
    summary = {
        "k": args.k,
        "folds": folds,
        "per_fold_r": per_fold,
        "mean_r": mean_r,
        "spread_r": max(per_fold) - min(per_fold),
        "mean_rrmse": sum(f["kjm_mean_rrmse"] for f in folds) / len(folds),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    write_manifest(
        out / "kfold.manifest.json",
        "kfold",
        inputs={"dataset": args.dataset, "k": args.k, "arch": args.arch,
                "seed": args.seed, "epochs": args.epochs},
        outputs={"directory": out},
        extra={"mean_r": mean_r, "per_fold_r": per_fold},
    )
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_compare(args):
    def read(path):
        try:
            return EvaluationReport.from_dict(json.loads(Path(path).read_text()))
        except (OSError, ValueError, KeyError) as exc:
            raise PipelineError(f"unreadable report {path}: {exc}") from exc

    result = compare_runs(read(args.a), read(args.b))
    if args.out:
        Path(args.out).write_text(result.to_markdown() + "\n")
        Path(args.out).with_suffix(".json").write_text(
            json.dumps(result.to_dict(), sort_keys=True)
        )
        write_manifest(
            f"{args.out}.manifest.json",
            "compare",
            inputs={"a": args.a, "b": args.b},
            outputs={"comparison": args.out},
            extra={"mean_delta_pct": result.mean_delta_pct,
                   "mean_p": result.mean_p},
        )
    print(result.to_markdown())
    return 0


def _add_train_hyper_args(p):
    p.add_argument("--arch", choices=sorted(ARCHITECTURES), default="desk")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--threshold", type=float, default=DEFAULT_VARIANCE_THRESHOLD,
        help="fraction of response variance the compressed targets keep",
    )
    p.add_argument("--window", type=float, default=DEFAULT_WINDOW)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kjmnet",
        description="Joint moment curve prediction from marker images.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic capture files")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--kind", choices=("walk", "run", "sidestep"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limb", choices=("L", "R"), default="R")
    p.add_argument("--noise", type=float, default=0.6)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="capture directory to dataset")
    p.add_argument("--c3d-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--movement", choices=("walk", "run", "sidestep"), required=True)
    p.add_argument("--limb", choices=("L", "R"), required=True)
    p.add_argument("--response", choices=("kjm", "grfm"), default="kjm")
    p.add_argument("--fs-force", type=float, default=20.0,
                   help="contact force threshold (N)")
    p.add_argument("--fs-hold", type=float, default=0.025,
                   help="time the force must stay above it (s)")
    p.add_argument("--to-force", type=float, default=10.0,
                   help="lift-off force threshold (N)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one waveform's model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--waveform", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", default="",
                   help="donor bundle whose network body seeds this model")
    p.add_argument("--holdout", type=float, default=0.0,
                   help="fraction held out of training (scored by evaluate)")
    p.add_argument("--split-seed", type=int, default=0)
    _add_train_hyper_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score per-waveform models together")
    p.add_argument("--dataset", required=True)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--window", type=float, default=DEFAULT_WINDOW)
    p.add_argument("--allow-train-eval", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("kfold", help="cross-validated train and evaluate")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", type=int, default=5)
    _add_train_hyper_args(p)
    p.set_defaults(func=cmd_kfold)

    p = sub.add_parser("compare", help="improvement between two reports")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", default="")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except PipelineError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
