"""Resampling primitive: exactness at knots, closed-form agreement, and
the matrix form staying interchangeable with direct evaluation."""

import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from kjmnet.splines import interp_matrix, resample_series


def test_knot_positions_reproduce_samples_exactly():
    rng = np.random.default_rng(3)
    values = rng.normal(size=40)
    out = resample_series(values, np.arange(40, dtype=float))
    assert np.allclose(out, values, atol=1e-12)


def test_affine_series_interpolates_exactly_anywhere():
    values = 3.5 * np.arange(50) - 7.0
    positions = np.linspace(0.0, 49.0, 311)
    out = resample_series(values, positions)
    assert np.allclose(out, 3.5 * positions - 7.0, atol=1e-9)


def test_dense_knots_track_a_sinusoid_within_1e_3():
    n = 200
    t = np.arange(n)
    values = np.sin(2 * np.pi * 3 * t / (n - 1))
    positions = np.linspace(5.0, n - 6.0, 777)
    out = resample_series(values, positions)
    truth = np.sin(2 * np.pi * 3 * positions / (n - 1))
    assert np.max(np.abs(out - truth)) < 1e-3


def test_multidimensional_values_resample_along_the_given_axis():
    rng = np.random.default_rng(7)
    values = rng.normal(size=(30, 4, 3))
    positions = np.linspace(0.0, 29.0, 11)
    out = resample_series(values, positions, axis=0)
    assert out.shape == (11, 4, 3)
    for j in range(4):
        for k in range(3):
            col = resample_series(values[:, j, k], positions)
            assert np.allclose(out[:, j, k], col, atol=1e-12)


def test_matrix_form_matches_direct_evaluation():
    rng = np.random.default_rng(11)
    knots = np.arange(25, dtype=float)
    queries = np.linspace(0.0, 24.0, 90)
    M = interp_matrix(knots, queries)
    assert M.shape == (90, 25)
    for _ in range(5):
        y = rng.normal(size=25)
        assert np.allclose(M @ y, resample_series(y, queries), atol=1e-10)


def test_matrix_agrees_with_scipy_on_nonuniform_knots():
    knots = np.array([0.0, 1.0, 2.5, 4.0, 7.0, 11.0])
    queries = np.linspace(0.0, 11.0, 40)
    M = interp_matrix(knots, queries)
    y = np.array([0.0, 2.0, -1.0, 3.0, 0.5, 1.0])
    ref = CubicSpline(knots, y, bc_type="natural")(queries)
    assert np.allclose(M @ y, ref, atol=1e-10)


def test_repeated_matrix_lookups_are_equal():
    knots = np.arange(8, dtype=float)
    queries = np.linspace(0.0, 7.0, 227)
    a = interp_matrix(knots, queries)
    b = interp_matrix(knots, queries)
    assert np.array_equal(a, b)


def test_positions_outside_the_record_are_refused():
    values = np.arange(10, dtype=float)
    with pytest.raises(ValueError):
        resample_series(values, np.array([-0.5, 3.0]))
    with pytest.raises(ValueError):
        resample_series(values, np.array([3.0, 9.5]))


def test_tiny_underflow_from_window_arithmetic_is_snapped():
    values = np.arange(10, dtype=float)
    out = resample_series(values, np.array([-1e-12, 9.0]))
    assert out[0] == pytest.approx(0.0, abs=1e-9)


def test_single_sample_series_is_refused():
    with pytest.raises(ValueError):
        resample_series(np.array([1.0]), np.array([0.0]))


def test_two_dimensional_positions_are_refused():
    with pytest.raises(ValueError):
        resample_series(np.arange(10.0), np.zeros((2, 2)))


def test_matrix_rejects_unsorted_knots_and_outside_queries():
    with pytest.raises(ValueError):
        interp_matrix(np.array([0.0, 2.0, 1.0]), np.array([0.5]))
    with pytest.raises(ValueError):
        interp_matrix(np.array([0.0, 1.0, 2.0]), np.array([2.5]))
