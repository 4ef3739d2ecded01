"""Classification, window normalization, dataset assembly, and splits."""

import math

import numpy as np
import pytest

from kjmnet.c3d import CANONICAL_MARKERS, MarkerTrajectorySet
from kjmnet.errors import (
    CorruptFile,
    EmptyDataset,
    GappedTrajectory,
    InsufficientLeadIn,
    ShapeMismatch,
    TooFewSamples,
    WindowOutOfRange,
)
from kjmnet.events import Limb, Orientation
from kjmnet.prep import (
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

MARKER_RATE = 250.0


def _path_set(speed, turn_deg, frames=260, to=150):
    """Sacrum travels along +y at `speed` m/s and bends by `turn_deg`
    (positive = leftward) immediately after frame `to`."""
    step = speed * 1000.0 / MARKER_RATE  # mm per frame
    t = np.arange(frames, dtype=float)
    th = math.radians(turn_deg)
    d = np.array([-math.sin(th), math.cos(th)])
    sacr = np.zeros((frames, 2))
    sacr[:, 1] = np.minimum(t, to) * step
    sacr += np.clip(t - to, 0.0, None)[:, None] * step * d
    positions = np.zeros((frames, 8, 3))
    positions[:, CANONICAL_MARKERS.index("SACR"), :2] = sacr
    return MarkerTrajectorySet(
        labels=CANONICAL_MARKERS, positions=positions, rate=MARKER_RATE
    )


# ----------------------------------------------------------------------
# classification
# ----------------------------------------------------------------------

def test_slow_straight_path_is_a_walk():
    ms = _path_set(1.5, 0.0)
    assert classify_movement(ms, 100, 150, Limb.RIGHT) is Movement.WALK


def test_fast_straight_path_is_a_run():
    ms = _path_set(3.0, 0.0)
    assert classify_movement(ms, 100, 150, Limb.LEFT) is Movement.RUN


def test_speed_threshold_lands_between_walk_and_run():
    assert classify_movement(_path_set(2.15, 0.0), 100, 150, Limb.RIGHT) is Movement.WALK
    assert classify_movement(_path_set(2.17, 0.0), 100, 150, Limb.RIGHT) is Movement.RUN


def test_cut_direction_and_stance_limb_decide_the_class():
    # leftward cut off the right foot: a sidestep named for the direction
    assert (
        classify_movement(_path_set(3.0, 30.0), 100, 150, Limb.RIGHT)
        is Movement.SIDESTEP_LEFT
    )
    # leftward cut off the left foot crosses over the stance limb
    assert (
        classify_movement(_path_set(3.0, 30.0), 100, 150, Limb.LEFT)
        is Movement.CROSSOVER
    )
    assert (
        classify_movement(_path_set(3.0, -30.0), 100, 150, Limb.LEFT)
        is Movement.SIDESTEP_RIGHT
    )
    assert (
        classify_movement(_path_set(3.0, -30.0), 100, 150, Limb.RIGHT)
        is Movement.CROSSOVER
    )


def test_angle_threshold_separates_cut_from_straight():
    assert classify_movement(_path_set(3.0, 19.5), 100, 150, Limb.RIGHT) is Movement.RUN
    assert (
        classify_movement(_path_set(3.0, 20.5), 100, 150, Limb.RIGHT)
        is Movement.SIDESTEP_LEFT
    )


def test_rule_thresholds_are_honored():
    rule = MovementRule(walk_run_speed=5.0, sidestep_angle=45.0)
    assert classify_movement(_path_set(3.0, 30.0), 100, 150, Limb.RIGHT, rule) is Movement.WALK


def test_classification_matrix_on_random_paths():
    rng = np.random.default_rng(19)
    for _ in range(60):
        speed = float(rng.uniform(1.0, 5.0))
        turn = float(rng.uniform(-60.0, 60.0))
        if 19.0 < abs(turn) < 21.0:
            continue  # stay away from the angle boundary
        limb = Limb.RIGHT if rng.random() < 0.5 else Limb.LEFT
        got = classify_movement(_path_set(speed, turn), 100, 150, limb)
        if abs(turn) < 20.0:
            want = Movement.WALK if speed < 2.16 else Movement.RUN
        elif turn > 0:
            want = Movement.SIDESTEP_LEFT if limb is Limb.RIGHT else Movement.CROSSOVER
        else:
            want = Movement.SIDESTEP_RIGHT if limb is Limb.LEFT else Movement.CROSSOVER
        assert got is want, (speed, turn, limb)


def test_classification_needs_room_around_stance():
    ms = _path_set(3.0, 0.0)
    with pytest.raises(InsufficientLeadIn):
        classify_movement(ms, 5, 55, Limb.RIGHT)  # approach window underflows
    with pytest.raises(InsufficientLeadIn):
        classify_movement(ms, 100, 255, Limb.RIGHT)  # departure window overflows
    with pytest.raises(WindowOutOfRange):
        classify_movement(ms, 100, 100, Limb.RIGHT)


# ----------------------------------------------------------------------
# marker normalization
# ----------------------------------------------------------------------

def _affine_markers(frames=130):
    f = np.arange(frames, dtype=float)
    positions = np.empty((frames, 8, 3))
    for m in range(8):
        for c in range(3):
            positions[:, m, c] = f * (m + 1) + 10.0 * c
    return MarkerTrajectorySet(
        labels=CANONICAL_MARKERS, positions=positions, rate=MARKER_RATE
    )


def test_marker_window_shape_and_placement():
    out = normalize_markers(_affine_markers(), 50, 113)
    assert out.shape == (8, 125, 3)
    p = np.linspace(50 - 0.66 * 63, 113.0, 125)
    assert p[0] == pytest.approx(8.42)
    for m in range(8):
        for c in range(3):
            np.testing.assert_allclose(out[m, :, c], p * (m + 1) + 10.0 * c, atol=1e-9)


def test_marker_window_needs_lead_in_room():
    with pytest.raises(InsufficientLeadIn):
        normalize_markers(_affine_markers(), 10, 113)  # starts at -57.98
    with pytest.raises(WindowOutOfRange):
        normalize_markers(_affine_markers(), 90, 140)  # past end of record
    with pytest.raises(WindowOutOfRange):
        normalize_markers(_affine_markers(), 50, 50)


def test_marker_window_rejects_gaps():
    ms = _affine_markers()
    ms.positions[60, 3, 1] = np.nan
    with pytest.raises(GappedTrajectory):
        normalize_markers(ms, 50, 113)


def test_renormalizing_a_normalized_window_is_identity():
    rng = np.random.default_rng(3)
    base = _affine_markers()
    base.positions += rng.normal(scale=5.0, size=base.positions.shape).cumsum(axis=0)
    out = normalize_markers(base, 50, 113)
    again = MarkerTrajectorySet(
        labels=CANONICAL_MARKERS,
        positions=np.ascontiguousarray(out.transpose(1, 0, 2)),
        rate=MARKER_RATE,
    )
    to = 124.0
    fs = 0.66 * to / 1.66  # places the window start exactly at sample 0
    out2 = normalize_markers(again, fs, to)
    np.testing.assert_allclose(out2, out, atol=1e-9)


# ----------------------------------------------------------------------
# response normalization
# ----------------------------------------------------------------------

def test_plate_window_starts_at_sample_20_with_700_points():
    series = np.arange(1400, dtype=float)[:, None] * np.array([[1.0, -2.0]])
    out = normalize_response(series, 100, 600, ResponseKind.GRFM)
    assert out.shape == (2, 700)
    p = np.linspace(20.0, 600.0, 700)
    assert out[0, 0] == pytest.approx(20.0, abs=1e-9)
    assert out[0, -1] == pytest.approx(600.0, abs=1e-9)
    np.testing.assert_allclose(out[0], p, atol=1e-9)
    np.testing.assert_allclose(out[1], -2.0 * p, atol=1e-9)


def test_response_window_covers_stance_only():
    series = np.arange(300, dtype=float)[:, None] * np.ones((1, 3))
    out = normalize_response(series, 40, 220, ResponseKind.KJM)
    assert out.shape == (3, 90)
    np.testing.assert_allclose(out[1], np.linspace(40.0, 220.0, 90), atol=1e-9)


def test_one_dimensional_series_becomes_a_single_row():
    out = normalize_response(np.arange(300, dtype=float), 40, 220, ResponseKind.KJM)
    assert out.shape == (1, 90)


def test_response_window_bounds_are_checked():
    series = np.arange(300, dtype=float)
    with pytest.raises(WindowOutOfRange):
        normalize_response(series, 40, 40, ResponseKind.KJM)
    with pytest.raises(WindowOutOfRange):
        normalize_response(series, 40, 320, ResponseKind.KJM)
    with pytest.raises(WindowOutOfRange):
        normalize_response(series, 10, 600, ResponseKind.GRFM)  # lead-in underflow


def test_renormalizing_responses_is_identity_for_both_kinds():
    rng = np.random.default_rng(8)
    series = rng.normal(size=(900, 3)).cumsum(axis=0)
    for kind, to in ((ResponseKind.KJM, 89.0), (ResponseKind.GRFM, 699.0)):
        out = normalize_response(series, 150, 800, kind)
        fs = kind.lead * to / (1.0 + kind.lead)
        out2 = normalize_response(out.T, fs, to, kind)
        np.testing.assert_allclose(out2, out, atol=1e-9)


def test_response_kind_labels_round_trip():
    assert ResponseKind.from_label("kjm") is ResponseKind.KJM
    assert ResponseKind.from_label("grfm") is ResponseKind.GRFM
    with pytest.raises(ValueError):
        ResponseKind.from_label("emg")


# ----------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------

def _trial(i, movement=Movement.SIDESTEP_LEFT, limb=Limb.RIGHT, predictor=None,
           response=None, waveforms=("a", "b", "c")):
    rng = np.random.default_rng(1000 + i)
    if predictor is None:
        predictor = rng.normal(size=(8, 125, 3))
    if response is None:
        response = rng.normal(size=(len(waveforms), 90))
    return TrialSample(
        predictor=predictor,
        response=response,
        movement=movement,
        limb=limb,
        orientation=Orientation.HEEL_DOWN,
        source_id=f"trial{i:04d}",
        waveforms=waveforms,
    )


def test_assembly_stacks_matching_trials_in_order():
    trials = [_trial(i) for i in range(5)]
    ds = assemble_dataset(trials, "sidestep", Limb.RIGHT)
    assert ds.n == 5
    assert ds.X.shape == (5, 3000)
    assert ds.Y.shape == (5, 270)
    assert [m["source_id"] for m in ds.meta] == [t.source_id for t in trials]
    np.testing.assert_array_equal(ds.X[2], trials[2].predictor.reshape(-1))
    np.testing.assert_array_equal(ds.y_waveform("b"), ds.Y[:, 90:180])
    np.testing.assert_array_equal(ds.y_waveform("b")[3], trials[3].response[1])


def test_assembly_rejects_with_named_reasons():
    bad_pred = np.zeros((8, 125, 3))
    bad_pred[0, 0, 0] = np.nan
    dup = _trial(0)
    trials = [
        dup,
        _trial(1, movement=Movement.CROSSOVER),
        _trial(2, movement=Movement.WALK),
        _trial(3, limb=Limb.LEFT),
        _trial(4, predictor=bad_pred),
        _trial(5, predictor=dup.predictor.copy()),
        _trial(6),
    ]
    log = []
    ds = assemble_dataset(trials, "sidestep", Limb.RIGHT, log=log)
    assert ds.n == 2
    assert [m["source_id"] for m in ds.meta] == ["trial0000", "trial0006"]
    assert log == [
        ("trial0001", "crossover"),
        ("trial0002", "selection"),
        ("trial0003", "selection"),
        ("trial0004", "non-finite"),
        ("trial0005", "duplicate"),
    ]


def test_crossovers_are_excluded_even_when_asked_for():
    trials = [_trial(i, movement=Movement.CROSSOVER) for i in range(3)]
    with pytest.raises(EmptyDataset):
        assemble_dataset(trials, "crossover", Limb.RIGHT)


def test_assembly_accepts_limb_as_string():
    ds = assemble_dataset([_trial(0)], "sidestep", "R")
    assert ds.n == 1


def test_assembly_refuses_mixed_response_shapes():
    trials = [_trial(0), _trial(1, waveforms=("a", "b"))]
    with pytest.raises(ShapeMismatch):
        assemble_dataset(trials, "sidestep", Limb.RIGHT)


def test_empty_selection_is_an_error():
    with pytest.raises(EmptyDataset):
        assemble_dataset([_trial(0, movement=Movement.WALK)], "sidestep", Limb.RIGHT)


# ----------------------------------------------------------------------
# splits
# ----------------------------------------------------------------------

def _dummy_dataset(n, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.arange(n, dtype=float), rng.normal(size=n)])
    Y = np.column_stack([np.arange(n, dtype=float), rng.normal(size=(n, 5))])
    meta = [{"source_id": f"row{i:05d}"} for i in range(n)]
    return Dataset(X=X, Y=Y, waveforms=("a", "b"), response_length=3, meta=meta)


def test_split_sizes_match_the_published_arithmetic():
    tr, te = split(_dummy_dataset(1527), 0.8, seed=0)
    assert (tr.n, te.n) == (1222, 305)
    tr, te = split(_dummy_dataset(5), 0.8, seed=0)
    assert (tr.n, te.n) == (4, 1)


def test_split_is_a_partition_with_aligned_metadata():
    ds = _dummy_dataset(40)
    tr, te = split(ds, 0.7, seed=3)
    ids = sorted(int(x) for x in np.concatenate([tr.X[:, 0], te.X[:, 0]]))
    assert ids == list(range(40))
    for part in (tr, te):
        for j in range(part.n):
            i = int(part.X[j, 0])
            assert part.meta[j]["source_id"] == f"row{i:05d}"
            assert part.Y[j, 0] == i


def test_split_determinism_and_seed_sensitivity():
    ds = _dummy_dataset(60)
    a1, b1 = split(ds, 0.8, seed=7)
    a2, b2 = split(ds, 0.8, seed=7)
    np.testing.assert_array_equal(a1.X, a2.X)
    assert [m["source_id"] for m in b1.meta] == [m["source_id"] for m in b2.meta]
    a3, _ = split(ds, 0.8, seed=8)
    assert not np.array_equal(a1.X, a3.X)


def test_split_refuses_degenerate_requests():
    with pytest.raises(TooFewSamples):
        split(_dummy_dataset(10), 0.0, seed=0)
    with pytest.raises(TooFewSamples):
        split(_dummy_dataset(10), 1.0, seed=0)
    with pytest.raises(TooFewSamples):
        split(_dummy_dataset(2), 0.1, seed=0)  # train side would be empty


def test_kfold_covers_every_row_exactly_once():
    ds = _dummy_dataset(23)
    folds = kfold(ds, 5, seed=1)
    sizes = [te.n for _, te in folds]
    assert sizes == [5, 5, 5, 4, 4]
    seen = []
    for tr, te in folds:
        assert tr.n + te.n == 23
        te_ids = {m["source_id"] for m in te.meta}
        tr_ids = {m["source_id"] for m in tr.meta}
        assert not te_ids & tr_ids
        assert te_ids | tr_ids == {f"row{i:05d}" for i in range(23)}
        seen.extend(sorted(te_ids))
    assert len(seen) == 23 and len(set(seen)) == 23


def test_kfold_sizes_for_the_full_cohort():
    sizes = [te.n for _, te in kfold(_dummy_dataset(1527), 5, seed=0)]
    assert sizes == [306, 306, 305, 305, 305]


def test_kfold_determinism_and_limits():
    ds = _dummy_dataset(12)
    f1 = kfold(ds, 3, seed=4)
    f2 = kfold(ds, 3, seed=4)
    for (a, _), (b, _) in zip(f1, f2):
        np.testing.assert_array_equal(a.X, b.X)
    with pytest.raises(TooFewSamples):
        kfold(ds, 1, seed=0)
    with pytest.raises(TooFewSamples):
        kfold(ds, 13, seed=0)


def test_fold_signature_tracks_row_identity_and_order():
    a = _dummy_dataset(10)
    b = _dummy_dataset(10)
    assert fold_signature(a) == fold_signature(b)
    b.X += 1.0  # values do not matter, identity does
    assert fold_signature(a) == fold_signature(b)
    flipped = a.take(list(range(9, -1, -1)))
    assert fold_signature(flipped) != fold_signature(a)
    assert len(fold_signature(a)) == 16


# ----------------------------------------------------------------------
# container io
# ----------------------------------------------------------------------

def test_dataset_container_round_trip(tmp_path):
    ds = _dummy_dataset(7, seed=2)
    ds.X = ds.X.astype(np.float32).astype(float)
    ds.Y = ds.Y.astype(np.float32).astype(float)
    path = tmp_path / "rows.ktb"
    save_dataset(ds, path)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.Y, ds.Y)
    assert back.waveforms == ds.waveforms
    assert back.response_length == ds.response_length
    assert back.meta == ds.meta


def test_container_payload_is_float32(tmp_path):
    ds = _dummy_dataset(3)
    ds.X[0, 1] = math.pi
    path = tmp_path / "rows.ktb"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.X[0, 1] == float(np.float32(math.pi))


def test_container_rejects_damage(tmp_path):
    ds = _dummy_dataset(4)
    path = tmp_path / "rows.ktb"
    save_dataset(ds, path)
    raw = path.read_bytes()

    bad = tmp_path / "bad.ktb"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CorruptFile):
        load_dataset(bad)

    bad.write_bytes(raw[:4] + (99).to_bytes(2, "little") + raw[6:])
    with pytest.raises(CorruptFile):
        load_dataset(bad)

    bad.write_bytes(raw[:20])
    with pytest.raises(CorruptFile):
        load_dataset(bad)

    bad.write_bytes(raw[:-40])
    with pytest.raises(CorruptFile):
        load_dataset(bad)

    hlen = int.from_bytes(raw[6:10], "little")
    bad.write_bytes(raw[:10] + b"\xff" * hlen + raw[10 + hlen:])
    with pytest.raises(CorruptFile):
        load_dataset(bad)
