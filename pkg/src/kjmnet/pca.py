"""Per-waveform principal-component compression of response curves.

Response rows store waveforms back to back (waveform w occupies columns
[w*L, (w+1)*L)); deinterlace/interlace convert between that layout and
per-waveform blocks. Each waveform gets its own model: the column mean plus
the leading eigenvectors of the sample covariance, keeping the smallest
component count whose cumulative explained variance reaches the threshold
(capped at matrix rank, never an error). Eigenvector signs are fixed by
making the largest-magnitude entry positive so refits are reproducible.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, TooFewSamples

__all__ = [
    "PcaModel",
    "deinterlace",
    "interlace",
    "fit_pca",
    "project",
    "reconstruct",
]

DEFAULT_VARIANCE_THRESHOLD = 0.999


@dataclass
class PcaModel:
    """Mean curve and orthonormal basis (L x k) for one waveform."""

    waveform: str
    mean: np.ndarray
    basis: np.ndarray
    explained: np.ndarray  # cumulative variance ratios, length k
    threshold: float

    @property
    def k(self):
        return self.basis.shape[1]

    @property
    def length(self):
        return self.basis.shape[0]


def deinterlace(Y, length):
    """Split stacked response rows into per-waveform (n, length) blocks."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] % length:
        raise ShapeMismatch(
            f"response block {Y.shape} does not divide into length-{length} waveforms"
        )
    w = Y.shape[1] // length
    return [np.ascontiguousarray(Y[:, i * length:(i + 1) * length]) for i in range(w)]


def interlace(blocks):
    """Inverse of deinterlace: concatenate per-waveform blocks column-wise."""
    blocks = [np.asarray(b, dtype=float) for b in blocks]
    n = blocks[0].shape[0]
    if any(b.ndim != 2 or b.shape[0] != n for b in blocks):
        raise ShapeMismatch("waveform blocks disagree on row count")
    return np.hstack(blocks)


def fit_pca(Yw, threshold=DEFAULT_VARIANCE_THRESHOLD, waveform=""):
    """Fit a compression model on one waveform block (n rows x L samples).

    The component count k is the smallest number of leading eigenvectors
    whose cumulative variance ratio reaches `threshold`, capped at the rank
    of the covariance; a rank-deficient block simply yields fewer
    components. Needs at least two rows.
    """
    Y = np.asarray(Yw, dtype=float)
    if Y.ndim != 2:
        raise ShapeMismatch(f"waveform block shaped {Y.shape}")
    n, length = Y.shape
    if n < 2:
        raise TooFewSamples(f"{n} rows cannot define a covariance")
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"variance threshold {threshold} outside (0, 1]")

    mean = Y.mean(axis=0)
    centered = Y - mean
    cov = centered.T @ centered / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]

    # Centering a constant block leaves rounding residue of order
    # eps * |Y|, whose covariance would otherwise read as one spurious
    # full-variance component; anything at that level is zero.
    scale = float(np.abs(centered).max())
    floor = (np.finfo(float).eps * max(1.0, scale)) ** 2 * n * length
    evals[evals <= floor] = 0.0

    total = float(evals.sum())
    if total <= 0.0:
        return PcaModel(
            waveform=waveform,
            mean=mean,
            basis=np.zeros((length, 0)),
            explained=np.zeros(0),
            threshold=threshold,
        )

    rank = int(np.count_nonzero(evals > evals[0] * 1e-12))
    rank = min(rank, n - 1, length)
    cum = np.cumsum(evals) / total
    reached = np.nonzero(cum >= threshold - 1e-12)[0]
    k = int(reached[0]) + 1 if reached.size else rank
    k = min(k, rank)

    basis = evecs[:, :k].copy()
    for j in range(k):
        pivot = np.argmax(np.abs(basis[:, j]))
        if basis[pivot, j] < 0:
            basis[:, j] = -basis[:, j]
    return PcaModel(
        waveform=waveform,
        mean=mean,
        basis=basis,
        explained=cum[:k].copy(),
        threshold=threshold,
    )


def project(model, y):
    """Scores of one curve (L,) or a block (n, L) in the component basis."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != model.length:
        raise ShapeMismatch(
            f"curve length {y.shape[-1]} does not match model length {model.length}"
        )
    return (y - model.mean) @ model.basis


def reconstruct(model, z):
    """Curves from scores; inverse of project up to the truncated residual."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.k:
        raise ShapeMismatch(
            f"score length {z.shape[-1]} does not match k={model.k}"
        )
    return z @ model.basis.T + model.mean
