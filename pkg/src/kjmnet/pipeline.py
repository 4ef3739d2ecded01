"""End-to-end orchestration: trial preparation, training runs, prediction.

This module wires the stages together:

  capture (or synthetic) signals
    -> gait events -> stance limb -> posture -> movement class
    -> normalized predictor / response blocks (TrialSample)
    -> Dataset -> image scaler + compressed targets -> trained model
    -> ModelBundle -> predicted curves -> EvaluationReport

Joint moment series travel next to capture files as JSON sidecars
(<name>.kjm.json: rate, waveform order, one series per waveform).
Every artifact-producing run can write a manifest recording inputs,
outputs and fold signatures, so later comparisons can refuse mismatched
folds.
"""

import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AmbiguousStance,
    CorruptFile,
    FoldMismatch,
    PipelineError,
    ShapeMismatch,
)
from .events import (
    EventThresholds,
    GaitEvents,
    classify_foot_orientation,
    detect_foot_strike,
    detect_toe_off,
    foot_within_plate,
    Limb,
)
from .imaging import LazyEncodedImages, fit_scaler
from .model_io import ModelBundle
from .network import ARCHITECTURES, TrainConfig, build, predict, train, transfer
from .pca import DEFAULT_VARIANCE_THRESHOLD, deinterlace, fit_pca, project, reconstruct
from .prep import (
    Dataset,
    MovementRule,
    ResponseKind,
    TrialSample,
    assemble_dataset,
    classify_movement,
    fold_signature,
    normalize_markers,
    normalize_response,
)
from . import synth

__all__ = [
    "prepare_trial",
    "prepare_synth_trial",
    "samples_from_recipes",
    "build_synth_dataset",
    "write_kjm_sidecar",
    "read_kjm_sidecar",
    "sidecar_path",
    "ingest_directory",
    "compress_targets",
    "expand_predictions",
    "TrainedRun",
    "train_waveform",
    "train_runs",
    "bundle_waveform",
    "predict_curves",
    "evaluate_run",
    "write_manifest",
    "read_manifest",
]


# --------------------------------------------------------------------------
# trial preparation
# --------------------------------------------------------------------------

def _infer_limb(markers, frame, corners):
    inside = [
        limb
        for limb in (Limb.LEFT, Limb.RIGHT)
        if foot_within_plate(markers, limb, frame, corners)
    ]
    if len(inside) != 1:
        what = "both feet" if len(inside) == 2 else "neither foot"
        raise AmbiguousStance(f"{what} over the plate at contact")
    return inside[0]


def prepare_trial(
    markers,
    plate,
    source_id="",
    response_kind=ResponseKind.GRFM,
    response_series=None,
    response_rate=None,
    waveforms=None,
    thresholds=EventThresholds(),
    rule=MovementRule(),
):
    """Turn one capture into a TrialSample.

    markers: MarkerTrajectorySet; plate: ForcePlateRecord. For moment
    responses pass response_series (samples, W) with its rate (defaults to
    the marker rate) and waveform names; for plate responses the vertical
    force channel is the (single) response and no series is needed.

    Events are detected on the plate timeline; marker-frame indices are
    round-to-nearest; response windows use the exact (real-valued) event
    positions on the response timeline.
    """
    fz = plate.channels[:, 2]
    fs = detect_foot_strike(fz, plate.rate, thresholds)
    to = detect_toe_off(fz, plate.rate, fs, thresholds)
    events = GaitEvents(fs, to, plate.rate)
    fs_m, to_m = events.marker_frames(markers.rate)

    limb = _infer_limb(markers, fs_m, plate.corners)
    orientation = classify_foot_orientation(markers, limb, fs_m, to_m)
    movement = classify_movement(markers, fs_m, to_m, limb, rule)
    predictor = normalize_markers(markers, fs_m, to_m)

    if response_kind is ResponseKind.GRFM:
        series = fz[:, None]
        rate = plate.rate
        names = waveforms or ("fz",)
    else:
        if response_series is None:
            raise ShapeMismatch("moment responses need a response series")
        series = np.asarray(response_series, dtype=float)
        if series.ndim == 1:
            series = series[:, None]
        rate = response_rate or markers.rate
        names = waveforms or tuple(f"m{j}" for j in range(series.shape[1]))
    if len(names) != series.shape[1]:
        raise ShapeMismatch(
            f"{len(names)} waveform names for {series.shape[1]} series"
        )
    ratio = plate.rate / rate
    response = normalize_response(series, fs / ratio, to / ratio, response_kind)

    return TrialSample(
        predictor=predictor,
        response=response,
        movement=movement,
        limb=limb,
        orientation=orientation,
        source_id=source_id,
        waveforms=tuple(names),
    )


def prepare_synth_trial(trial, response_kind=ResponseKind.KJM):
    """TrialSample from a generated trial (moment or plate response)."""
    if response_kind is ResponseKind.KJM:
        return prepare_trial(
            trial.markers,
            trial.plate,
            source_id=trial.source_id,
            response_kind=ResponseKind.KJM,
            response_series=trial.kjm_series,
            response_rate=trial.markers.rate,
            waveforms=synth.KJM_WAVEFORMS,
        )
    return prepare_trial(
        trial.markers,
        trial.plate,
        source_id=trial.source_id,
        response_kind=ResponseKind.GRFM,
        waveforms=synth.GRFM_WAVEFORMS,
    )


def samples_from_recipes(recipes, response_kind=ResponseKind.KJM):
    """Generate and prepare one TrialSample per recipe."""
    return [
        prepare_synth_trial(synth.generate_trial(r), response_kind)
        for r in recipes
    ]


def build_synth_dataset(
    n,
    kind,
    seed,
    limb=Limb.RIGHT,
    response_kind=ResponseKind.KJM,
    log=None,
    **recipe_kwargs,
):
    """Recipes -> trials -> hygiene-filtered Dataset, in one call."""
    recipes = synth.random_recipes(n, kind, seed, limb=limb, **recipe_kwargs)
    samples = samples_from_recipes(recipes, response_kind)
    return assemble_dataset(samples, kind, limb, log=log)


# --------------------------------------------------------------------------
# capture-file ingest
# --------------------------------------------------------------------------

def sidecar_path(c3d_path):
    return Path(c3d_path).with_suffix(".kjm.json")


def write_kjm_sidecar(path, series, waveforms, rate):
    """Store a joint moment series (samples, W) next to its capture file."""
    series = np.asarray(series, dtype=float)
    if series.ndim != 2 or series.shape[1] != len(waveforms):
        raise ShapeMismatch(
            f"series shaped {series.shape} for {len(waveforms)} waveforms"
        )
    doc = {
        "rate": float(rate),
        "order": list(waveforms),
        "waveforms": {
            name: series[:, j].tolist() for j, name in enumerate(waveforms)
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def read_kjm_sidecar(path):
    """Returns (series (samples, W), waveform names, rate)."""
    try:
        doc = json.loads(Path(path).read_text())
        order = list(doc["order"])
        rate = float(doc["rate"])
        cols = [np.asarray(doc["waveforms"][name], dtype=float) for name in order]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CorruptFile(f"unreadable moment sidecar {path}: {exc}") from exc
    lengths = {c.shape for c in cols}
    if len(lengths) != 1 or cols[0].ndim != 1:
        raise CorruptFile(f"sidecar {path} series disagree in length")
    return np.column_stack(cols), tuple(order), rate


def ingest_directory(
    directory,
    movement,
    limb,
    response_kind=ResponseKind.KJM,
    log=None,
    thresholds=EventThresholds(),
    rule=MovementRule(),
):
    """Prepare every capture file under a directory into a Dataset.

    Files that fail a pipeline stage (no event, ambiguous stance, missing
    sidecar, ...) are skipped and logged as (source_id, reason); assembly
    hygiene then applies as usual.
    """
    from .c3d import extract_force_plate, extract_markers, parse_c3d

    def reject(stem, reason):
        if log is not None:
            log.append((stem, reason))

    samples = []
    for path in sorted(Path(directory).glob("*.c3d")):
        stem = path.stem
        try:
            parsed = parse_c3d(path.read_bytes())
            markers = extract_markers(parsed)
            plate = extract_force_plate(parsed)
            series, names, rate = None, None, None
            if response_kind is ResponseKind.KJM:
                side = sidecar_path(path)
                if not side.exists():
                    reject(stem, "missing-sidecar")
                    continue
                series, names, rate = read_kjm_sidecar(side)
            samples.append(
                prepare_trial(
                    markers,
                    plate,
                    source_id=stem,
                    response_kind=response_kind,
                    response_series=series,
                    response_rate=rate,
                    waveforms=names,
                    thresholds=thresholds,
                    rule=rule,
                )
            )
        except PipelineError as exc:
            reject(stem, type(exc).__name__)
    return assemble_dataset(samples, movement, limb, log=log)


# --------------------------------------------------------------------------
# training runs
# --------------------------------------------------------------------------

def compress_targets(dataset, threshold=DEFAULT_VARIANCE_THRESHOLD):
    """Per-waveform compression of a dataset's responses.

    Returns (coefficients (n, K), models); coefficient columns follow the
    dataset waveform order, each waveform contributing its model's k
    columns.
    """
    blocks = deinterlace(dataset.Y, dataset.response_length)
    models, scores = [], []
    for name, block in zip(dataset.waveforms, blocks):
        model = fit_pca(block, threshold, waveform=name)
        models.append(model)
        scores.append(project(model, block))
    return np.hstack(scores), models


def expand_predictions(coeffs, models):
    """Coefficient rows (n, K) back to curves (n, W, L)."""
    coeffs = np.asarray(coeffs, dtype=float)
    total = sum(m.k for m in models)
    if coeffs.ndim != 2 or coeffs.shape[1] != total:
        raise ShapeMismatch(
            f"{coeffs.shape} coefficient block for {total} components"
        )
    curves, at = [], 0
    for m in models:
        curves.append(reconstruct(m, coeffs[:, at:at + m.k]))
        at += m.k
    return np.stack(curves, axis=1)


@dataclass
class TrainedRun:
    bundle: ModelBundle
    history: list = field(default_factory=list)


def train_waveform(
    train_ds,
    waveform,
    arch="desk",
    config=None,
    threshold=DEFAULT_VARIANCE_THRESHOLD,
    donor=None,
    seed=0,
    extra_metadata=None,
):
    """Train the regressor for one response waveform.

    Each waveform gets its own network whose head width is that waveform's
    retained component count; a full run is a set of these, one per
    waveform (see train_runs). donor: an optional ModelBundle whose
    network body (and image scaler, so inputs look the same to the
    inherited features) seeds the new model; otherwise a fresh `arch`
    network is built under `seed`.
    """
    config = config or TrainConfig(epochs=10)
    if waveform not in train_ds.waveforms:
        raise ShapeMismatch(
            f"dataset has waveforms {list(train_ds.waveforms)}, "
            f"not {waveform!r}"
        )
    block = train_ds.y_waveform(waveform)
    pca_model = fit_pca(block, threshold, waveform=waveform)
    if pca_model.k == 0:
        raise ShapeMismatch(f"waveform {waveform} compressed to 0 components")
    coeffs = project(pca_model, block)

    if donor is not None:
        scaler = donor.scaler
        model = transfer(donor.model, donor.model.arch, pca_model.k, seed)
    else:
        scaler = fit_scaler(train_ds.X)
        model = build(ARCHITECTURES[arch](pca_model.k), seed)

    images = LazyEncodedImages(train_ds.X, scaler)
    trained, history = train(model, images, coeffs, config)
    metadata = {
        "waveform": waveform,
        "response_length": train_ds.response_length,
        "variance_threshold": threshold,
        "train_fold": fold_signature(train_ds),
        "train_rows": train_ds.n,
        "epochs": config.epochs,
        "seed": seed,
        "provenance": list(trained.provenance),
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    bundle = ModelBundle(
        model=trained,
        pca=[pca_model],
        scaler=scaler,
        metadata=metadata,
    )
    return TrainedRun(bundle=bundle, history=history)


def train_runs(train_ds, waveforms=None, **kwargs):
    """One TrainedRun per waveform, in dataset order (or as listed)."""
    names = tuple(waveforms) if waveforms else train_ds.waveforms
    return [train_waveform(train_ds, name, **kwargs) for name in names]


def bundle_waveform(bundle):
    """The waveform a per-waveform bundle predicts."""
    return bundle.metadata.get("waveform") or bundle.pca[0].waveform


def predict_curves(bundles, X, batch_size=64):
    """Predicted response curves (n, W, L) for raw predictor rows.

    bundles: one per waveform, in output order. Each model encodes the
    predictors with its own scaler (a fine-tuned model keeps its donor's),
    so images are built per bundle.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None]
    curves = []
    for bundle in bundles:
        images = LazyEncodedImages(X, bundle.scaler)
        chunks = []
        for start in range(0, len(images), batch_size):
            idx = np.arange(start, min(start + batch_size, len(images)))
            chunks.append(predict(bundle.model, images[idx]))
        curves.append(reconstruct(bundle.pca[0], np.vstack(chunks)))
    return np.stack(curves, axis=1)


def evaluate_run(bundles, test_ds, window=None, movement="", limb=""):
    """Score a set of per-waveform bundles on a held-out dataset.

    Bundles are matched to dataset waveforms by name and must cover all
    of them; they must also come from the same training fold, otherwise
    their joint report would mix incomparable splits (FoldMismatch).
    """
    from .metrics import DEFAULT_WINDOW, evaluate

    by_name = {bundle_waveform(b): b for b in bundles}
    missing = [w for w in test_ds.waveforms if w not in by_name]
    if missing:
        raise ShapeMismatch(f"no model for waveforms {missing}")
    ordered = [by_name[w] for w in test_ds.waveforms]
    folds = {b.metadata.get("train_fold", "") for b in ordered}
    if len(folds) > 1:
        raise FoldMismatch(f"models trained on different folds: {sorted(folds)}")
    for b in ordered:
        if b.pca[0].mean.size != test_ds.response_length:
            raise ShapeMismatch(
                f"model for {bundle_waveform(b)} predicts "
                f"{b.pca[0].mean.size}-sample curves, dataset holds "
                f"{test_ds.response_length}"
            )
    preds = predict_curves(ordered, test_ds.X)
    truths = np.stack(
        deinterlace(test_ds.Y, test_ds.response_length), axis=1
    )
    if not movement:
        kinds = {m["movement"] for m in test_ds.meta}
        movement = kinds.pop() if len(kinds) == 1 else "mixed"
    if not limb:
        sides = {m["limb"] for m in test_ds.meta}
        limb = sides.pop() if len(sides) == 1 else "mixed"
    return evaluate(
        preds,
        truths,
        window=window if window is not None else DEFAULT_WINDOW,
        waveforms=test_ds.waveforms,
        movement=movement,
        limb=limb,
        fold_id=fold_signature(test_ds),
        dataset_id=f"n={test_ds.n}",
    )


# --------------------------------------------------------------------------
# run manifests
# --------------------------------------------------------------------------

def write_manifest(path, kind, inputs, outputs, extra=None):
    """Record what a run consumed and produced, next to its artifacts."""
    from . import __version__

    doc = {
        "kind": kind,
        "tool": {"name": "kjmnet", "version": __version__},
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "inputs": {k: str(v) for k, v in dict(inputs).items()},
        "outputs": {k: str(v) for k, v in dict(outputs).items()},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))
    return doc


def read_manifest(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise CorruptFile(f"unreadable manifest {path}: {exc}") from exc
    for key in ("kind", "created", "inputs", "outputs"):
        if key not in doc:
            raise CorruptFile(f"manifest {path} lacks {key!r}")
    return doc
