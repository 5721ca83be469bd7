"""
Penalized Poisson regression for the inflow intensity.
This module provides the smooth bases (cubic B-splines over time, low-rank thin-plate
radial functions over district centroids), the P-IRLS fitter and intensity prediction.
"""

import itertools
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline
from scipy.spatial.distance import cdist
from scipy.special import gammaln, xlogy

from core.config import BasisSpec
from core.errors import (
    DimensionMismatchError,
    InsufficientKnotsError,
    NonconvergenceError,
    NumericalFailureError,
    SingularInformationError,
)
from core.models import DesignMatrix, InflowFit

logger = logging.getLogger(__name__)

SPLINE_DEGREE = 3
ETA_BOUNDS = (-30.0, 30.0)
MAX_STEP_HALVINGS = 10


class BasisTerm:
    """Columns and penalty of one smooth, evaluated on its own grid (times or districts)."""

    def __init__(self, name: str, columns: np.ndarray, penalty: np.ndarray, weight: float):
        self.name = name
        self.columns = np.asarray(columns, dtype=float)
        self.penalty = np.asarray(penalty, dtype=float)
        self.weight = float(weight)


def time_basis(times: Sequence[float], size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Cubic B-spline basis with equally spaced knots over [min, max] and a second-difference penalty.

    Returns:
        Tuple of (basis of shape (len(times), size), penalty of shape (size, size))
    """
    if size < SPLINE_DEGREE + 1:
        raise InsufficientKnotsError(f"A cubic B-spline basis needs at least 4 functions, got {size}")
    x = np.asarray(times, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        raise InsufficientKnotsError("A time smooth needs at least two distinct time points")
    step = (hi - lo) / (size - SPLINE_DEGREE)
    knots = lo + step * np.arange(-SPLINE_DEGREE, size + 1)
    # Rounding can push hi a hair past knots[size]
    x = np.clip(x, knots[SPLINE_DEGREE], knots[size])
    basis = BSpline.design_matrix(x, knots, SPLINE_DEGREE).toarray()
    difference = np.diff(np.eye(size), n=2, axis=0)
    return basis, difference.T @ difference


def farthest_point_knots(coords: np.ndarray, count: int) -> np.ndarray:
    """Indices of `count` well-spread points, starting nearest the mean."""
    coords = np.asarray(coords, dtype=float)
    first = int(np.argmin(np.linalg.norm(coords - coords.mean(axis=0), axis=1)))
    chosen = [first]
    nearest = np.linalg.norm(coords - coords[first], axis=1)
    while len(chosen) < count:
        candidate = int(np.argmax(nearest))
        if nearest[candidate] <= 0:
            break
        chosen.append(candidate)
        nearest = np.minimum(nearest, np.linalg.norm(coords - coords[candidate], axis=1))
    return np.array(chosen)


def thin_plate_radial(r: np.ndarray) -> np.ndarray:
    return xlogy(r ** 2, np.where(r > 0, r, 1.0))


def space_basis(coords: np.ndarray, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Thin-plate radial functions at farthest-point knots plus linear longitude/latitude columns.

    Returns:
        Tuple of (basis of shape (districts, knots + 2), ridge penalty on the radial columns)
    """
    if size < 3:
        raise InsufficientKnotsError(f"A spatial smooth needs at least 3 knots, got {size}")
    coords = np.asarray(coords, dtype=float)
    knots = farthest_point_knots(coords, size)
    if len(knots) < size:
        logger.warning(f"Only {len(knots)} distinct centroids available for {size} spatial knots")
    radial = thin_plate_radial(cdist(coords, coords[knots]))
    linear = coords - coords.mean(axis=0)
    basis = np.hstack([radial, linear])
    penalty = np.zeros((basis.shape[1], basis.shape[1]))
    penalty[:len(knots), :len(knots)] = np.eye(len(knots))
    return basis, penalty


def build_basis(times: Sequence[float], coords: Optional[np.ndarray], spec: BasisSpec) -> List[BasisTerm]:
    """Smooth terms requested by spec, unconstrained, on their own evaluation grids."""
    terms = []
    if spec.time_smooth:
        columns, penalty = time_basis(times, spec.time_basis_size)
        terms.append(BasisTerm("time", columns, penalty, spec.time_penalty))
    if spec.space_smooth:
        if coords is None:
            raise InsufficientKnotsError("A spatial smooth needs district centroids (longitude, latitude)")
        columns, penalty = space_basis(coords, spec.space_basis_size)
        terms.append(BasisTerm("space", columns, penalty, spec.space_penalty))
    return terms


def constrain_block(columns: np.ndarray, penalty: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Absorb a sum-to-zero constraint so the smooth is identifiable next to an intercept."""
    constraint = columns.sum(axis=0, keepdims=True)
    q, _ = np.linalg.qr(constraint.T, mode="complete")
    null_space = q[:, 1:]
    return columns @ null_space, null_space.T @ penalty @ null_space


def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    return float(2.0 * np.sum(xlogy(y, y / np.maximum(mu, 1e-300)) - (y - mu)))


def poisson_loglik(y: np.ndarray, mu: np.ndarray) -> float:
    return float(np.sum(xlogy(y, mu) - mu - gammaln(y + 1.0)))


def fit_poisson(
    design: DesignMatrix,
    y: np.ndarray,
    offset: Optional[np.ndarray] = None,
    start: Optional[np.ndarray] = None,
    penalty_weights: Optional[Dict[str, float]] = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> InflowFit:
    """Penalized Poisson log-linear fit by P-IRLS with step halving.

    Args:
        design: Design matrix with penalty blocks
        y: Counts, one per design row
        offset: Linear-predictor offset; defaults to the design's offset
        start: Warm-start coefficients
        penalty_weights: Per-smooth weights overriding the design's
        tol: Relative change in penalized deviance that ends the iteration
        max_iter: Iteration cap

    Returns:
        Fitted model with covariance (X'WX + S)^-1 at the optimum
    """
    X = design.values
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != design.n_rows:
        raise DimensionMismatchError(f"{y.shape[0]} responses for {design.n_rows} design rows")
    offset = design.offset if offset is None else np.asarray(offset, dtype=float).ravel()
    weights = {b.name: b.weight for b in design.penalties}
    weights.update(penalty_weights or {})
    S = design.penalty_matrix(weights)

    def penalized_deviance(beta):
        eta = np.clip(X @ beta + offset, *ETA_BOUNDS)
        mu = np.exp(eta)
        return poisson_deviance(y, mu) + float(beta @ S @ beta), eta, mu

    if start is not None and np.shape(start) == (design.width,):
        beta = np.asarray(start, dtype=float).copy()
        pen_dev, eta, mu = penalized_deviance(beta)
    else:
        beta = None
        mu = y + 0.1
        eta = np.log(mu)
        pen_dev = np.inf

    for iteration in range(1, max_iter + 1):
        z = (eta - offset) + (y - mu) / mu
        XtW = X.T * mu
        try:
            factor = linalg.cho_factor(XtW @ X + S)
        except linalg.LinAlgError as e:
            raise SingularInformationError(f"Penalized information is not positive definite: {e}") from e
        candidate = linalg.cho_solve(factor, XtW @ z)
        if not np.all(np.isfinite(candidate)):
            raise NumericalFailureError("P-IRLS produced non-finite coefficients")

        new_dev, new_eta, new_mu = penalized_deviance(candidate)
        if beta is not None:
            halvings = 0
            while new_dev > pen_dev and halvings < MAX_STEP_HALVINGS:
                candidate = 0.5 * (beta + candidate)
                new_dev, new_eta, new_mu = penalized_deviance(candidate)
                halvings += 1
            if halvings:
                logger.debug(f"P-IRLS iteration {iteration}: {halvings} step halving(s)")

        change = abs(new_dev - pen_dev) / (abs(new_dev) + 0.1) if np.isfinite(pen_dev) else np.inf
        beta, pen_dev, eta, mu = candidate, new_dev, new_eta, new_mu
        if change < tol:
            break
    else:
        raise NonconvergenceError(f"P-IRLS did not converge in {max_iter} iterations")

    XtW = X.T * mu
    fisher = XtW @ X
    try:
        factor = linalg.cho_factor(fisher + S)
    except linalg.LinAlgError as e:
        raise SingularInformationError(f"Penalized information is not positive definite: {e}") from e
    covariance = linalg.cho_solve(factor, np.eye(design.width))
    covariance = 0.5 * (covariance + covariance.T)
    edf = float(np.trace(covariance @ fisher))

    return InflowFit(
        coefficients=beta,
        covariance=covariance,
        names=design.columns,
        deviance=poisson_deviance(y, mu),
        loglik=poisson_loglik(y, mu),
        edf=edf,
        iterations=iteration,
        penalty_weights=weights,
    )


def intercept_only_fit(design: DesignMatrix, level: float) -> InflowFit:
    """Fit with every coefficient zero except the intercept at log(level)."""
    coefficients = np.zeros(design.width)
    coefficients[design.columns.index("intercept")] = np.log(level)
    return InflowFit(coefficients, np.zeros((design.width, design.width)), design.columns)


def predict_intensity(fit: InflowFit, design: DesignMatrix) -> np.ndarray:
    """exp(X beta + offset), one intensity per design row."""
    if fit.names != design.columns:
        raise DimensionMismatchError("Fit and design have different columns")
    return np.exp(np.clip(design.values @ fit.coefficients + design.offset, *ETA_BOUNDS))


def intensity_matrix(fit: InflowFit, design: DesignMatrix) -> np.ndarray:
    """Predicted intensities as a (times, districts) matrix."""
    return predict_intensity(fit, design).reshape(design.n_times, design.n_districts)


def smooth_terms(fit: InflowFit, design: DesignMatrix) -> Dict[str, np.ndarray]:
    """Evaluate each smooth on its grid: f(t) for t = 1..T, f(d) for each district."""
    evaluations = {}
    for block in design.penalties:
        if block.name == "time":
            rows = design.district_index == 0
        else:
            rows = design.times == 1
        evaluations[block.name] = design.values[np.ix_(rows, block.columns)] @ fit.coefficients[block.columns]
    return evaluations


def select_penalty_weights(
    design: DesignMatrix,
    y: np.ndarray,
    grid: Sequence[float],
    tol: float = 1e-8,
    max_iter: int = 100,
) -> Tuple[Dict[str, float], InflowFit]:
    """Pick smoothing weights from a grid by minimum AIC; the first minimum wins ties."""
    names = [block.name for block in design.penalties]
    if not names:
        fit = fit_poisson(design, y, tol=tol, max_iter=max_iter)
        return {}, fit

    best_weights, best_fit = None, None
    for combination in itertools.product(grid, repeat=len(names)):
        weights = dict(zip(names, combination))
        fit = fit_poisson(design, y, penalty_weights=weights, tol=tol, max_iter=max_iter)
        logger.debug(f"Penalty weights {weights}: AIC {fit.aic:.4f}")
        if best_fit is None or fit.aic < best_fit.aic:
            best_weights, best_fit = weights, fit
    logger.info(f"Selected penalty weights {best_weights} (AIC {best_fit.aic:.4f})")
    return best_weights, best_fit
