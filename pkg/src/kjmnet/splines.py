"""Natural cubic spline resampling.

One resampling primitive is shared by trial normalization (marker and
response windows) and by the image warp. Knots are the integer sample
indices of the source series unless given explicitly; boundary conditions
are natural (zero second derivative) because there is no derivative
information at record edges. Evaluating at a knot reproduces the sample
value exactly, which is what makes window normalization idempotent at the
target length.
"""

from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline

__all__ = ["resample_series", "interp_matrix"]


def resample_series(values, positions, axis=-1):
    """Evaluate a natural cubic spline through `values` at `positions`.

    Args:
        values: array whose samples lie along `axis` at integer indices
            0..n-1. Any leading/trailing shape is preserved.
        positions: 1-D array of real-valued sample positions. Positions must
            lie within [0, n-1]; extrapolation is refused because nothing in
            the pipeline ever needs it.
        axis: axis of `values` holding the samples.

    Returns:
        Array with `axis` replaced by len(positions) resampled values.
    """
    values = np.asarray(values, dtype=float)
    positions = np.asarray(positions, dtype=float)
    n = values.shape[axis]
    if n < 2:
        raise ValueError("need at least two samples to resample")
    if positions.ndim != 1:
        raise ValueError("positions must be 1-D")
    lo, hi = positions.min(), positions.max()
    # Tiny negative underflow from window arithmetic is snapped, anything
    # larger is a caller bug.
    tol = 1e-9 * max(1.0, n)
    if lo < -tol or hi > (n - 1) + tol:
        raise ValueError(
            f"positions [{lo}, {hi}] leave the sampled range [0, {n - 1}]"
        )
    positions = np.clip(positions, 0.0, float(n - 1))
    spline = CubicSpline(np.arange(n), values, axis=axis, bc_type="natural")
    return spline(positions)


@lru_cache(maxsize=32)
def _interp_matrix_cached(knots_key, queries_key):
    knots = np.frombuffer(knots_key, dtype=float)
    queries = np.frombuffer(queries_key, dtype=float)
    basis = np.eye(len(knots))
    spline = CubicSpline(knots, basis, axis=0, bc_type="natural")
    return spline(queries)  # (len(queries), len(knots))


def interp_matrix(knots, queries):
    """Dense matrix M with (M @ y) = natural-spline(y at knots) at queries.

    Spline interpolation with fixed knot and query grids is linear in the
    sample values, so the whole warp collapses to one matrix per axis. The
    matrix is cached; image encoding calls this with the same grids for
    every trial.
    """
    knots = np.ascontiguousarray(np.asarray(knots, dtype=float))
    queries = np.ascontiguousarray(np.asarray(queries, dtype=float))
    if knots.ndim != 1 or queries.ndim != 1:
        raise ValueError("knots and queries must be 1-D")
    if np.any(np.diff(knots) <= 0):
        raise ValueError("knots must be strictly increasing")
    if queries.min() < knots[0] - 1e-9 or queries.max() > knots[-1] + 1e-9:
        raise ValueError("queries leave the knot range")
    return _interp_matrix_cached(knots.tobytes(), queries.tobytes()).copy()
