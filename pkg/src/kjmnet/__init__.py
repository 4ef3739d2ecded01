"""Joint moment curve prediction from motion capture marker images.

The package covers the full batch workflow: capture file parsing, gait
event detection, trial classification and normalization, dataset
assembly, marker-to-image encoding, response curve compression, a
from-scratch convolutional regressor (with transfer between response
kinds), and the agreement metrics used to score and compare runs.
"""

from .c3d import (
    CANONICAL_MARKERS,
    C3dFile,
    C3dHeader,
    ForcePlateRecord,
    MarkerTrajectorySet,
    extract_force_plate,
    extract_markers,
    make_c3d,
    parse_c3d,
    write_c3d,
)
from .errors import PipelineError
from .events import (
    EventThresholds,
    GaitEvents,
    Limb,
    Orientation,
    classify_foot_orientation,
    detect_foot_strike,
    detect_toe_off,
    foot_within_plate,
)
from .imaging import (
    IMAGE_SIZE,
    LazyEncodedImages,
    ScalerParams,
    decode_image,
    encode_batch,
    encode_trial,
    fit_scaler,
    save_png,
)
from .metrics import (
    ComparisonResult,
    EvaluationReport,
    compare_runs,
    evaluate,
    format_improvement,
    mann_whitney_u,
    pearson_r,
    rrmse,
)
from .model_io import ModelBundle, load_model, save_model
from .network import (
    ARCHITECTURES,
    ArchitectureSpec,
    RegressionModel,
    TrainConfig,
    build,
    desk_architecture,
    loss_and_gradients,
    model_id,
    predict,
    reference_architecture,
    train,
    transfer,
)
from .pca import (
    DEFAULT_VARIANCE_THRESHOLD,
    PcaModel,
    deinterlace,
    fit_pca,
    interlace,
    project,
    reconstruct,
)
from .pipeline import (
    build_synth_dataset,
    bundle_waveform,
    compress_targets,
    evaluate_run,
    expand_predictions,
    ingest_directory,
    predict_curves,
    prepare_synth_trial,
    prepare_trial,
    samples_from_recipes,
    train_runs,
    train_waveform,
)
from .prep import (
    Dataset,
    Movement,
    MovementRule,
    ResponseKind,
    TrialSample,
    assemble_dataset,
    classify_movement,
    fold_signature,
    kfold,
    load_dataset,
    normalize_markers,
    normalize_response,
    save_dataset,
    split,
)
from .synth import (
    KJM_WAVEFORMS,
    SynthTrial,
    TrialRecipe,
    generate_trial,
    kjm_curves,
    mirror_recipe,
    random_recipes,
    trial_to_c3d,
)

__version__ = "0.1.0"
