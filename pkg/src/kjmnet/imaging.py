"""Trial-to-image encoding.

A normalized trial (8 markers x 125 samples x 3 axes) becomes an RGB image:
markers map to image columns, time samples to rows, and the x/y/z axes to
the red/green/blue channels. Each trial is centered on its own mean per
axis; the linear pixel map uses dataset-level axis extrema fitted on the
training split only, so one scaler travels with a trained model. The small
125 x 8 grid is then warped to the network input size with a separable
natural-cubic-spline interpolation (one precomputed matrix per image axis).

Pixel values live in [0, 255]; out-of-range coordinates clamp at the linear
map and warp overshoot clamps again after interpolation. Decoding inverts
the warp (by interpolation, so round trips are approximate) and the linear
map, returning centered coordinates.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAxis, ShapeMismatch
from .splines import interp_matrix

__all__ = [
    "GRID_ROWS",
    "GRID_COLS",
    "IMAGE_SIZE",
    "ScalerParams",
    "fit_scaler",
    "trial_center",
    "pixel_grid",
    "encode_trial",
    "decode_image",
    "encode_batch",
    "LazyEncodedImages",
    "to_png",
    "save_png",
]

GRID_ROWS = 125  # time samples
GRID_COLS = 8  # markers
IMAGE_SIZE = 227


@dataclass(frozen=True)
class ScalerParams:
    """Dataset-level axis extrema of per-trial-centered coordinates (mm)."""

    axis_min: tuple
    axis_max: tuple

    def as_arrays(self):
        return np.asarray(self.axis_min, dtype=float), np.asarray(
            self.axis_max, dtype=float
        )


def _as_predictor(row):
    arr = np.asarray(row, dtype=float)
    if arr.ndim == 1:
        if arr.size != GRID_COLS * GRID_ROWS * 3:
            raise ShapeMismatch(f"predictor row has {arr.size} features")
        arr = arr.reshape(GRID_COLS, GRID_ROWS, 3)
    if arr.shape != (GRID_COLS, GRID_ROWS, 3):
        raise ShapeMismatch(f"predictor shaped {arr.shape}")
    return arr


def _as_predictor_block(X):
    if X.ndim == 2:
        if X.shape[1] != GRID_COLS * GRID_ROWS * 3:
            raise ShapeMismatch(f"predictor rows have {X.shape[1]} features")
        X = X.reshape(X.shape[0], GRID_COLS, GRID_ROWS, 3)
    if X.ndim != 4 or X.shape[1:] != (GRID_COLS, GRID_ROWS, 3):
        raise ShapeMismatch(f"predictor block shaped {X.shape}")
    return X


def trial_center(predictor):
    """Per-axis mean over all markers and samples of one trial."""
    return _as_predictor(predictor).mean(axis=(0, 1))


def fit_scaler(train_X):
    """Axis extrema of centered coordinates over the training rows.

    train_X: (n, 3000) flattened predictors (or (n, 8, 125, 3)). Raises
    DegenerateAxis when any axis has zero spread.
    """
    X = _as_predictor_block(np.asarray(train_X, dtype=float))
    centered = X - X.mean(axis=(1, 2), keepdims=True)
    mins = centered.min(axis=(0, 1, 2))
    maxs = centered.max(axis=(0, 1, 2))
    if np.any(maxs - mins <= 0):
        axes = "xyz"
        flat = [axes[i] for i in range(3) if maxs[i] - mins[i] <= 0]
        raise DegenerateAxis(f"axis {' '.join(flat)} has zero spread")
    return ScalerParams(axis_min=tuple(mins.tolist()), axis_max=tuple(maxs.tolist()))


def pixel_grid(predictor, scaler):
    """Pre-warp pixel grid (125 rows x 8 cols x 3 channels) in [0, 255].

    The trial is centered on its own per-axis mean, mapped linearly so
    axis_min -> 0 and axis_max -> 255, and clamped.
    """
    p = _as_predictor(predictor)
    lo, hi = scaler.as_arrays()
    centered = p - p.mean(axis=(0, 1))
    pixels = 255.0 * (centered - lo) / (hi - lo)
    np.clip(pixels, 0.0, 255.0, out=pixels)
    return pixels.transpose(1, 0, 2)


def _warp_matrices(size=IMAGE_SIZE):
    rows = interp_matrix(np.arange(GRID_ROWS), np.linspace(0, GRID_ROWS - 1, size))
    cols = interp_matrix(np.arange(GRID_COLS), np.linspace(0, GRID_COLS - 1, size))
    return rows, cols


def _unwarp_matrices(size=IMAGE_SIZE):
    rows = interp_matrix(np.linspace(0, GRID_ROWS - 1, size), np.arange(GRID_ROWS))
    cols = interp_matrix(np.linspace(0, GRID_COLS - 1, size), np.arange(GRID_COLS))
    return rows, cols


def encode_trial(predictor, scaler, size=IMAGE_SIZE):
    """Encode one trial to a (size, size, 3) image with values in [0, 255]."""
    return encode_batch(np.asarray(predictor)[None], scaler, size)[0]


def encode_batch(rows, scaler, size=IMAGE_SIZE, dtype=float):
    """Vectorized encode of (n, 3000) rows or (n, 8, 125, 3) predictors."""
    X = _as_predictor_block(np.asarray(rows, dtype=float))
    lo, hi = scaler.as_arrays()
    centered = X - X.mean(axis=(1, 2), keepdims=True)
    pixels = 255.0 * (centered - lo) / (hi - lo)
    np.clip(pixels, 0.0, 255.0, out=pixels)
    grid = pixels.transpose(0, 3, 2, 1)  # (n, 3, 125, 8)

    H, W = _warp_matrices(size)
    n = grid.shape[0]
    flat = grid.reshape(n * 3, GRID_ROWS, GRID_COLS)
    out = np.matmul(np.matmul(H, flat), W.T)  # (n*3, size, size)
    out = out.reshape(n, 3, size, size).transpose(0, 2, 3, 1)
    np.clip(out, 0.0, 255.0, out=out)
    return out.astype(dtype, copy=False)


def decode_image(image, scaler, size=IMAGE_SIZE):
    """Invert the warp and the linear map.

    Returns centered coordinates shaped (8, 125, 3); the per-trial center
    is not recoverable from the image. Inversion is by spline interpolation
    on the warped grid, so smooth trials round-trip within a small fraction
    of the axis range.
    """
    img = np.asarray(image, dtype=float)
    if img.shape != (size, size, 3):
        raise ShapeMismatch(f"image shaped {img.shape}")
    Hi, Wi = _unwarp_matrices(size)
    chans = img.transpose(2, 0, 1)  # (3, size, size)
    grid = np.matmul(np.matmul(Hi, chans), Wi.T)  # (3, 125, 8)
    lo, hi = scaler.as_arrays()
    coords = grid.transpose(2, 1, 0) * (hi - lo) / 255.0 + lo  # (8, 125, 3)
    return np.ascontiguousarray(coords)


class LazyEncodedImages:
    """Sequence view that encodes predictor rows to images on demand.

    Training touches every image once per epoch; encoding costs a couple of
    matrix products per image, which is cheap next to a network pass, while
    materializing a whole dataset of float32 images would not fit in
    memory. Supports integer and fancy indexing like an ndarray batch.
    """

    def __init__(self, X, scaler, size=IMAGE_SIZE, dtype=np.float32):
        self.X = np.asarray(X, dtype=float)
        self.scaler = scaler
        self.size = size
        self.dtype = dtype

    def __len__(self):
        return self.X.shape[0]

    @property
    def shape(self):
        return (len(self), self.size, self.size, 3)

    def __getitem__(self, idx):
        if np.isscalar(idx) or isinstance(idx, (int, np.integer)):
            return encode_batch(
                self.X[int(idx)][None], self.scaler, self.size, self.dtype
            )[0]
        return encode_batch(self.X[idx], self.scaler, self.size, self.dtype)


def to_png(image):
    """Render an encoded image to 8-bit PNG bytes."""
    import io

    from PIL import Image

    arr = np.rint(np.asarray(image, dtype=float)).clip(0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_png(image, path):
    with open(path, "wb") as fh:
        fh.write(to_png(image))
