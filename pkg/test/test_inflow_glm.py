import numpy as np
import pytest

from core.config import BasisSpec
from core.errors import InsufficientKnotsError, NonconvergenceError
from core.models import DesignMatrix, PenaltyBlock
from estimation.inflow_glm import (
    build_basis,
    constrain_block,
    farthest_point_knots,
    fit_poisson,
    intensity_matrix,
    intercept_only_fit,
    predict_intensity,
    select_penalty_weights,
    smooth_terms,
    space_basis,
    time_basis,
)


def plain_design(x):
    n = x.shape[0]
    return DesignMatrix(
        columns=["intercept", "x"],
        values=np.column_stack([np.ones(n), x]),
        times=np.arange(1, n + 1),
        district_index=np.zeros(n, dtype=int),
    )


def test_fit_recovers_coefficients(rng):
    x = rng.uniform(0, 2, size=5000)
    y = rng.poisson(np.exp(0.5 + 1.0 * x))
    design = plain_design(x)
    fit = fit_poisson(design, y)
    assert fit.coefficients == pytest.approx([0.5, 1.0], abs=0.05)
    mu = predict_intensity(fit, design)
    assert np.allclose(design.values.T @ (y - mu), 0.0, atol=1e-2)
    assert np.allclose(fit.covariance, fit.covariance.T)
    assert fit.edf == pytest.approx(2.0)
    assert fit.aic == pytest.approx(-2 * fit.loglik + 2 * fit.edf)


def test_warm_start_reaches_same_fit(rng):
    x = rng.uniform(0, 1, size=400)
    y = rng.poisson(np.exp(1.0 - 0.5 * x))
    design = plain_design(x)
    cold = fit_poisson(design, y)
    warm = fit_poisson(design, y, start=cold.coefficients + 0.3)
    assert warm.coefficients == pytest.approx(cold.coefficients, abs=1e-5)


def test_iteration_cap_raises(rng):
    x = rng.uniform(0, 1, size=100)
    y = rng.poisson(np.exp(x))
    with pytest.raises(NonconvergenceError):
        fit_poisson(plain_design(x), y, max_iter=1)


def test_time_basis_partition_of_unity():
    times = np.arange(1, 31)
    basis, penalty = time_basis(times, 8)
    assert basis.shape == (30, 8)
    assert np.allclose(basis.sum(axis=1), 1.0)
    assert np.allclose(penalty @ np.arange(8.0), 0.0)
    assert np.allclose(penalty @ np.ones(8), 0.0)


def test_time_basis_needs_four_functions():
    with pytest.raises(InsufficientKnotsError):
        time_basis(np.arange(10), 3)


def test_farthest_point_knots_start_near_mean(rng):
    coords = rng.uniform(0, 10, size=(30, 2))
    knots = farthest_point_knots(coords, 6)
    assert len(set(knots.tolist())) == 6
    assert knots[0] == np.argmin(np.linalg.norm(coords - coords.mean(axis=0), axis=1))


def test_space_basis_shape_and_penalty(rng):
    coords = rng.uniform(0, 10, size=(20, 2))
    basis, penalty = space_basis(coords, 5)
    assert basis.shape == (20, 7)
    assert np.linalg.matrix_rank(penalty) == 5
    assert np.allclose(basis[:, 5:].sum(axis=0), 0.0)


def test_constraint_removes_constant_direction(rng):
    basis, penalty = time_basis(np.arange(1, 21), 6)
    columns, constrained = constrain_block(basis, penalty)
    assert columns.shape == (20, 5)
    assert constrained.shape == (5, 5)
    assert np.allclose(columns.sum(axis=0), 0.0)


def test_build_basis_requires_centroids():
    with pytest.raises(InsufficientKnotsError):
        build_basis(np.arange(1, 11), None, BasisSpec(space_smooth=True))


def smooth_design(n_times=12, n_districts=3):
    basis, penalty = time_basis(np.arange(1, n_times + 1), 5)
    columns, constrained = constrain_block(basis, penalty)
    values = np.hstack([np.ones((n_times * n_districts, 1)), np.repeat(columns, n_districts, axis=0)])
    return DesignMatrix(
        columns=["intercept"] + [f"s(time).{k + 1}" for k in range(columns.shape[1])],
        values=values,
        times=np.repeat(np.arange(1, n_times + 1), n_districts),
        district_index=np.tile(np.arange(n_districts), n_times),
        penalties=[PenaltyBlock("time", range(1, 1 + columns.shape[1]), constrained, 1.0)],
    )


def test_penalty_selection_picks_grid_value(rng):
    design = smooth_design()
    y = rng.poisson(np.exp(1.0 + np.sin(design.times / 3.0)))
    weights, fit = select_penalty_weights(design, y, [0.1, 10.0, 1000.0])
    assert weights["time"] in (0.1, 10.0, 1000.0)
    assert fit.penalty_weights["time"] == weights["time"]


def test_heavier_penalty_lowers_edf(rng):
    design = smooth_design()
    y = rng.poisson(np.exp(1.0 + np.sin(design.times / 3.0)))
    light = fit_poisson(design, y, penalty_weights={"time": 0.01})
    heavy = fit_poisson(design, y, penalty_weights={"time": 1e4})
    assert heavy.edf < light.edf


def test_smooth_terms_and_intensity_shapes(rng):
    design = smooth_design()
    y = rng.poisson(np.exp(1.0 + np.sin(design.times / 3.0)))
    fit = fit_poisson(design, y)
    terms = smooth_terms(fit, design)
    assert set(terms) == {"time"}
    assert terms["time"].shape == (12,)
    assert intensity_matrix(fit, design).shape == (12, 3)


def test_intercept_only_fit_level():
    design = smooth_design()
    fit = intercept_only_fit(design, 4.0)
    assert np.allclose(predict_intensity(fit, design), 4.0)


def test_space_basis_reproduces_affine_surface_on_a_line():
    lon = np.arange(6, dtype=float)
    coords = np.column_stack([lon, 2.0 * lon + 1.0])
    basis, _ = space_basis(coords, 3)
    design = np.hstack([np.ones((6, 1)), basis])
    target = 2.0 + 3.0 * coords[:, 0] - coords[:, 1]
    coefficients, *_ = np.linalg.lstsq(design, target, rcond=None)
    assert design @ coefficients == pytest.approx(target, abs=1e-8)
