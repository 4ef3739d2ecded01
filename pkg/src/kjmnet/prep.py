"""Trial classification, window normalization, and dataset assembly.

A trial becomes a training row in three steps:

  1. classify: approach speed and turn angle of the sacrum path decide
     walk / run / sidestep / crossover;
  2. normalize: marker trajectories are spline-resampled to 125 samples
     over a window reaching 66 % of stance before foot strike; response
     series are resampled to fixed lengths over their own windows
     (responses: 90 samples over stance; plate channels: 700 samples with a
     16 % lead-in);
  3. assemble: rows are stacked with hygiene (crossover exclusion,
     non-finite and bit-exact duplicate removal).

Datasets serialize to a small binary container (magic "KTB1"): a JSON
header describing named float32 arrays plus row metadata, followed by the
raw little-endian payload.
"""

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptFile,
    EmptyDataset,
    GappedTrajectory,
    InsufficientLeadIn,
    ShapeMismatch,
    TooFewSamples,
    WindowOutOfRange,
)
from .events import Limb, Orientation
from .splines import resample_series

__all__ = [
    "Movement",
    "MovementRule",
    "ResponseKind",
    "TrialSample",
    "Dataset",
    "classify_movement",
    "normalize_markers",
    "normalize_response",
    "assemble_dataset",
    "split",
    "kfold",
    "fold_signature",
    "save_dataset",
    "load_dataset",
]

MARKER_SAMPLES = 125
MARKER_LEAD = 0.66


class Movement(enum.Enum):
    WALK = "walk"
    RUN = "run"
    SIDESTEP_LEFT = "sidestep_l"
    SIDESTEP_RIGHT = "sidestep_r"
    CROSSOVER = "crossover"

    @property
    def family(self):
        if self in (Movement.SIDESTEP_LEFT, Movement.SIDESTEP_RIGHT):
            return "sidestep"
        return self.value


class ResponseKind(enum.Enum):
    """Resampling recipe for a response series: (samples, stance lead-in)."""

    KJM = ("kjm", 90, 0.0)
    GRFM = ("grfm", 700, 0.16)

    def __init__(self, label, samples, lead):
        self.label = label
        self.samples = samples
        self.lead = lead

    @classmethod
    def from_label(cls, label):
        for kind in cls:
            if kind.label == label:
                return kind
        raise ValueError(f"unknown response kind {label!r}")


@dataclass(frozen=True)
class MovementRule:
    """Classification thresholds.

    walk_run_speed: approach speed (m/s) separating walk from run.
    sidestep_angle: departure angle (degrees) beyond which the trial is a
        cut rather than a straight path.
    approach_window: fraction of stance duration used for the approach and
        departure velocity windows.
    """

    walk_run_speed: float = 2.16
    sidestep_angle: float = 20.0
    approach_window: float = 0.2


@dataclass
class TrialSample:
    """One normalized trial: predictor block, response block, and labels."""

    predictor: np.ndarray  # (8, 125, 3)
    response: np.ndarray  # (W, L)
    movement: Movement
    limb: Limb
    orientation: Orientation
    source_id: str
    waveforms: tuple


@dataclass
class Dataset:
    """Stacked trials: X rows are flattened predictors, Y rows flattened
    responses (waveform w occupies columns [w*L, (w+1)*L))."""

    X: np.ndarray
    Y: np.ndarray
    waveforms: tuple
    response_length: int
    meta: list = field(default_factory=list)  # dicts with movement/limb/...

    @property
    def n(self):
        return self.X.shape[0]

    def take(self, indices):
        indices = np.asarray(indices, dtype=int)
        return Dataset(
            X=self.X[indices].copy(),
            Y=self.Y[indices].copy(),
            waveforms=self.waveforms,
            response_length=self.response_length,
            meta=[self.meta[i] for i in indices],
        )

    def y_waveform(self, name):
        w = self.waveforms.index(name)
        L = self.response_length
        return self.Y[:, w * L:(w + 1) * L]


# --------------------------------------------------------------------------
# classification
# --------------------------------------------------------------------------

def classify_movement(marker_set, fs, to, limb, rule=MovementRule()):
    """Movement class from the sacrum path around stance.

    Approach speed is the mean horizontal sacrum velocity over a window of
    approach_window * stance duration before foot strike (net displacement
    over time); the turn angle is the signed horizontal angle between that
    velocity and the departure velocity after toe off. Deviation of at
    least sidestep_angle away from the stance-limb side is a sidestep
    (named for the travel direction); toward the stance limb it is a
    crossover. Straight trials split at walk_run_speed.
    """
    fs, to = int(fs), int(to)
    length = to - fs
    if length < 1:
        raise WindowOutOfRange(f"stance [{fs}, {to}] is empty")
    win = max(1, round(rule.approach_window * length))
    if fs - win < 0:
        raise InsufficientLeadIn(
            f"approach window needs frame {fs - win}, record starts at 0"
        )
    if to + win >= marker_set.frame_count:
        raise InsufficientLeadIn(
            f"departure window needs frame {to + win}, record ends at "
            f"{marker_set.frame_count - 1}"
        )
    sacr = marker_set.positions[:, marker_set.labels.index("SACR"), :2]
    dt = win / marker_set.rate
    v_before = (sacr[fs] - sacr[fs - win]) / dt / 1000.0  # mm -> m
    v_after = (sacr[to + win] - sacr[to]) / dt / 1000.0
    speed = float(np.hypot(*v_before))
    angle = math.degrees(
        math.atan2(
            v_before[0] * v_after[1] - v_before[1] * v_after[0],
            v_before[0] * v_after[0] + v_before[1] * v_after[1],
        )
    )
    if abs(angle) >= rule.sidestep_angle:
        if angle > 0:  # deviation to the left of travel
            return Movement.SIDESTEP_LEFT if limb is Limb.RIGHT else Movement.CROSSOVER
        return Movement.SIDESTEP_RIGHT if limb is Limb.LEFT else Movement.CROSSOVER
    return Movement.WALK if speed < rule.walk_run_speed else Movement.RUN


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------

def normalize_markers(marker_set, fs, to, samples=MARKER_SAMPLES, lead=MARKER_LEAD):
    """Resample marker trajectories onto the trial window.

    The window spans [fs - lead*(to-fs), to] in (real-valued) frame
    positions and is sampled at `samples` equally spaced points with a
    natural cubic spline fitted over the whole record. Returns an array of
    shape (markers, samples, 3).
    """
    if not to > fs:
        raise WindowOutOfRange(f"window [{fs}, {to}] is empty")
    start = fs - lead * (to - fs)
    if start < -1e-9:
        raise InsufficientLeadIn(
            f"window starts at frame {start:.2f}, record starts at 0"
        )
    if to > marker_set.frame_count - 1:
        raise WindowOutOfRange(
            f"window ends at frame {to}, record ends at {marker_set.frame_count - 1}"
        )
    if not np.isfinite(marker_set.positions).all():
        raise GappedTrajectory("marker positions contain non-finite values")
    positions = np.linspace(start, float(to), samples)
    resampled = resample_series(marker_set.positions, positions, axis=0)
    return np.ascontiguousarray(resampled.transpose(1, 0, 2))


def normalize_response(series, fs, to, kind=ResponseKind.KJM):
    """Resample a response series onto its stance window.

    series: (samples, W); fs and to are (possibly real-valued) sample
    positions on the series' own timeline. The window spans
    [fs - lead*(to-fs), to] and is sampled at the kind's fixed count.
    Returns (W, count).
    """
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    if not to > fs:
        raise WindowOutOfRange(f"window [{fs}, {to}] is empty")
    start = fs - kind.lead * (to - fs)
    if start < -1e-9:
        raise WindowOutOfRange(
            f"window starts at sample {start:.2f}, record starts at 0"
        )
    if to > series.shape[0] - 1:
        raise WindowOutOfRange(
            f"window ends at sample {to}, record ends at {series.shape[0] - 1}"
        )
    positions = np.linspace(start, float(to), kind.samples)
    return np.ascontiguousarray(resample_series(series, positions, axis=0).T)


# --------------------------------------------------------------------------
# assembly / splits
# --------------------------------------------------------------------------

def assemble_dataset(trials, movement, limb, log=None):
    """Stack matching trials into a Dataset, applying row hygiene.

    movement is a family name ("walk", "run", "sidestep"); limb the stance
    limb. Crossover trials are always excluded. Rows with non-finite values
    and bit-exact duplicate predictors are dropped. Rejections are appended
    to `log` as (source_id, reason) when a list is given. Input order is
    preserved.
    """
    if isinstance(limb, str):
        limb = Limb(limb)
    rows_x, rows_y, meta = [], [], []
    waveforms, length = None, None
    seen = set()

    def reject(trial, reason):
        if log is not None:
            log.append((trial.source_id, reason))

    for t in trials:
        if t.movement is Movement.CROSSOVER:
            reject(t, "crossover")
            continue
        if t.movement.family != movement or t.limb is not limb:
            reject(t, "selection")
            continue
        if waveforms is None:
            waveforms = tuple(t.waveforms)
            length = t.response.shape[1]
        if tuple(t.waveforms) != waveforms or t.response.shape != (
            len(waveforms), length,
        ):
            raise ShapeMismatch(
                f"trial {t.source_id} responses {t.waveforms} x "
                f"{t.response.shape} do not match {waveforms} x {length}"
            )
        x = np.asarray(t.predictor, dtype=float).reshape(-1)
        y = np.asarray(t.response, dtype=float).reshape(-1)
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            reject(t, "non-finite")
            continue
        key = x.tobytes()
        if key in seen:
            reject(t, "duplicate")
            continue
        seen.add(key)
        rows_x.append(x)
        rows_y.append(y)
        meta.append(
            {
                "movement": t.movement.value,
                "limb": t.limb.value,
                "orientation": t.orientation.value,
                "source_id": t.source_id,
            }
        )
    if not rows_x:
        raise EmptyDataset(f"no {movement}/{limb.value} rows survive hygiene")
    return Dataset(
        X=np.vstack(rows_x),
        Y=np.vstack(rows_y),
        waveforms=waveforms,
        response_length=length,
        meta=meta,
    )


def split(dataset, ratio, seed):
    """Deterministic shuffled partition; train size = round(ratio * n)."""
    if not 0.0 < ratio < 1.0:
        raise TooFewSamples(f"split ratio {ratio} must be in (0, 1)")
    n = dataset.n
    n_train = int(math.floor(ratio * n + 0.5))
    if n_train == 0 or n_train == n:
        raise TooFewSamples(f"ratio {ratio} leaves an empty side for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.take(perm[:n_train]), dataset.take(perm[n_train:])


def kfold(dataset, k, seed):
    """Deterministic k-fold partition.

    Returns k (train, test) pairs; every row lands in exactly one test
    fold, and test fold sizes differ by at most one (the first n mod k
    folds are one row larger).
    """
    n = dataset.n
    if k < 2 or k > n:
        raise TooFewSamples(f"cannot make {k} folds from {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    base, rem = divmod(n, k)
    folds, start = [], 0
    for i in range(k):
        size = base + (1 if i < rem else 0)
        test_idx = perm[start:start + size]
        train_idx = np.concatenate([perm[:start], perm[start + size:]])
        folds.append((dataset.take(train_idx), dataset.take(test_idx)))
        start += size
    return folds


def fold_signature(dataset):
    """Stable identity of a row set (order-sensitive source id digest)."""
    h = hashlib.sha256()
    for m in dataset.meta:
        h.update(m["source_id"].encode())
        h.update(b"\n")
    return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# container io
# --------------------------------------------------------------------------

_KTB_MAGIC = b"KTB1"
_KTB_VERSION = 1


def save_dataset(dataset, path):
    """Write a Dataset to the KTB1 container (float32 payload)."""
    arrays = [("X", dataset.X), ("Y", dataset.Y)]
    descr, blobs, offset = [], [], 0
    for name, arr in arrays:
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        descr.append(
            {
                "name": name,
                "dtype": "float32",
                "shape": list(arr.shape),
                "offset": offset,
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "arrays": descr,
        "meta": dataset.meta,
        "response_length": dataset.response_length,
        "waveforms": list(dataset.waveforms),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_KTB_MAGIC)
        fh.write(_KTB_VERSION.to_bytes(2, "little"))
        fh.write(len(hbytes).to_bytes(4, "little"))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)


def load_dataset(path):
    """Read a KTB1 container back into a Dataset (arrays as float64)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _KTB_MAGIC:
        raise CorruptFile(f"bad magic {data[:4]!r}")
    version = int.from_bytes(data[4:6], "little")
    if version != _KTB_VERSION:
        raise CorruptFile(f"unsupported container version {version}")
    hlen = int.from_bytes(data[6:10], "little")
    if 10 + hlen > len(data):
        raise CorruptFile("header runs past end of file")
    try:
        header = json.loads(data[10:10 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"header is not valid JSON: {exc}") from exc
    payload = data[10 + hlen:]
    out = {}
    for d in header["arrays"]:
        if d["dtype"] != "float32":
            raise CorruptFile(f"unsupported array dtype {d['dtype']}")
        count = int(np.prod(d["shape"]))
        start = d["offset"]
        if start + 4 * count > len(payload):
            raise CorruptFile(f"array {d['name']} runs past end of file")
        out[d["name"]] = (
            np.frombuffer(payload, dtype="<f4", count=count, offset=start)
            .reshape(d["shape"])
            .astype(float)
        )
    if "X" not in out or "Y" not in out:
        raise CorruptFile("container is missing X or Y")
    return Dataset(
        X=out["X"],
        Y=out["Y"],
        waveforms=tuple(header["waveforms"]),
        response_length=int(header["response_length"]),
        meta=list(header["meta"]),
    )
