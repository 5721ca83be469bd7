"""
Skellam probabilities and conditional sampling of (inflow, outflow) pairs.
All arithmetic is done in log space over the joint support i = max(0, delta), ...,
with the pair (I = i, R = i - delta). Each cell gets its own grid width, so a cell's
probabilities never depend on which other cells share the batch.
"""

import logging
from typing import Tuple

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from core.errors import EmptySupportError
from core.models import SkellamParams, TruncatedJointPmf

logger = logging.getLogger(__name__)

DEFAULT_TAIL_TOL = 1e-10
INTENSITY_FLOOR = 1e-10
# A grid is wide enough once its last column carries less than exp(-GRID_EDGE_LOG) of the mass.
GRID_EDGE_LOG = 50.0
MAX_GRID_DOUBLINGS = 20


def _cell_widths(delta: np.ndarray, lam_in: np.ndarray, lam_out: np.ndarray) -> np.ndarray:
    """Starting grid width per cell: the joint mode plus a generous margin."""
    lower = np.maximum(0, delta)
    mode = 0.5 * (delta + np.sqrt(delta.astype(float) ** 2 + 4.0 * lam_in * lam_out))
    mode = np.maximum(mode, lower)
    return np.ceil(mode - lower + 12.0 * np.sqrt(mode + 1.0) + 20.0).astype(np.int64)


def _log_terms(delta: np.ndarray, lam_in: np.ndarray, lam_out: np.ndarray, width: int) -> np.ndarray:
    """Unnormalized log joint mass on a (cells, width) grid starting at max(0, delta)."""
    lower = np.maximum(0, delta)
    inflow = lower[:, None] + np.arange(width)[None, :]
    outflow = inflow - delta[:, None]
    return (
        -lam_in[:, None] + xlogy(inflow, lam_in[:, None]) - gammaln(inflow + 1.0)
        - lam_out[:, None] + xlogy(outflow, lam_out[:, None]) - gammaln(outflow + 1.0)
    )


def joint_log_grid(delta, lam_in, lam_out) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log joint mass per cell on grids wide enough that the dropped tail is negligible.

    Columns past a cell's own width are -inf.

    Returns:
        Tuple of (terms of shape (cells, width), per-cell log total mass, per-cell widths)
    """
    delta = np.atleast_1d(np.asarray(delta, dtype=np.int64))
    lam_in = np.broadcast_to(np.asarray(lam_in, dtype=float), delta.shape)
    lam_out = np.broadcast_to(np.asarray(lam_out, dtype=float), delta.shape)
    widths = _cell_widths(delta, lam_in, lam_out)
    rows = np.arange(delta.size)

    for _ in range(MAX_GRID_DOUBLINGS):
        width = int(widths.max()) if widths.size else 1
        terms = _log_terms(delta, lam_in, lam_out, width)
        terms[np.arange(width)[None, :] >= widths[:, None]] = -np.inf
        peak = terms.max(axis=1, initial=-np.inf)
        finite = np.isfinite(peak)
        shift = np.where(finite, peak, 0.0)
        with np.errstate(divide="ignore"):
            # Sequential sum: trailing -inf columns add exact zeros
            total = shift + np.log(np.cumsum(np.exp(terms - shift[:, None]), axis=1)[:, -1])
        total[~finite] = -np.inf
        with np.errstate(invalid="ignore"):
            edge = terms[rows, widths - 1] - total
            grow = finite & (edge > -GRID_EDGE_LOG)
        if not grow.any():
            return terms, total, widths
        widths = np.where(grow, widths * 2, widths)
    logger.warning(f"Skellam grid still carries tail mass at width {int(widths.max())}")
    return terms, total, widths


def skellam_pmf(delta: int, params: SkellamParams) -> float:
    """P(I - R = delta) for independent Poisson I, R; 0 for impossible combinations."""
    _, total, _ = joint_log_grid(delta, params.lambda_in, params.lambda_out)
    return float(np.exp(total[0])) if np.isfinite(total[0]) else 0.0


def skellam_logpmf(delta, lam_in, lam_out) -> np.ndarray:
    """Elementwise log P(I - R = delta); -inf where the difference is impossible."""
    delta = np.asarray(delta, dtype=np.int64)
    _, total, _ = joint_log_grid(delta.ravel(), np.ravel(lam_in), np.ravel(lam_out))
    return total.reshape(delta.shape)


def _normalized(terms: np.ndarray, total: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        probs = np.exp(terms - total[:, None])
    probs[~np.isfinite(probs)] = 0.0
    return probs


def _truncation_index(probs: np.ndarray, tail_tol: float) -> np.ndarray:
    """Per row, the smallest column m whose mass beyond m is below tail_tol times the mass up to m."""
    head = np.cumsum(probs, axis=1)
    tail = np.cumsum(probs[:, ::-1], axis=1)[:, ::-1] - probs
    ok = tail < tail_tol * head
    return np.where(ok.any(axis=1), ok.argmax(axis=1), probs.shape[1] - 1)


def choose_imax(delta: int, params: SkellamParams, tail_tol: float = DEFAULT_TAIL_TOL) -> int:
    """Smallest truncation bound whose dropped tail is below tail_tol of the retained mass."""
    if not 0 < tail_tol < 1:
        raise ValueError("tail_tol must lie in (0, 1)")
    terms, total, _ = joint_log_grid(delta, params.lambda_in, params.lambda_out)
    if not np.isfinite(total[0]):
        return max(0, int(delta))
    index = _truncation_index(_normalized(terms, total), tail_tol)
    return max(0, int(delta)) + int(index[0])


def truncated_joint_pmf(delta: int, params: SkellamParams, i_max: int) -> TruncatedJointPmf:
    """Normalized joint mass of (I = i, R = i - delta) for i = max(0, delta)..i_max."""
    lower = max(0, int(delta))
    if i_max < lower:
        raise EmptySupportError(f"i_max {i_max} is below the smallest admissible inflow {lower}")
    terms = _log_terms(
        np.array([delta], dtype=np.int64),
        np.array([params.lambda_in], dtype=float),
        np.array([params.lambda_out], dtype=float),
        i_max - lower + 1,
    )[0]
    with np.errstate(divide="ignore"):
        total = logsumexp(terms)
    if not np.isfinite(total):
        raise EmptySupportError(f"No admissible mass for delta={delta} at the given intensities")
    return TruncatedJointPmf(delta, i_max, np.exp(terms - total))


def sample_conditional_batch(
    delta: np.ndarray,
    lam_in: np.ndarray,
    lam_out: np.ndarray,
    uniforms: np.ndarray,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse-CDF draws of (I, R) given I - R = delta, one per cell.

    Args:
        delta: Observed differences
        lam_in: Inflow intensities, floored at INTENSITY_FLOOR
        lam_out: Outflow intensities, floored at INTENSITY_FLOOR
        uniforms: One uniform in (0, 1] per cell
        tail_tol: Truncation tolerance of the joint mass

    Returns:
        Tuple of (inflow, outflow) integer arrays with inflow - outflow == delta
    """
    delta = np.atleast_1d(np.asarray(delta, dtype=np.int64))
    lam_in = np.maximum(np.atleast_1d(np.asarray(lam_in, dtype=float)), INTENSITY_FLOOR)
    lam_out = np.maximum(np.atleast_1d(np.asarray(lam_out, dtype=float)), INTENSITY_FLOOR)
    uniforms = np.atleast_1d(np.asarray(uniforms, dtype=float))

    terms, total, _ = joint_log_grid(delta, lam_in, lam_out)
    probs = _normalized(terms, total)
    cut = _truncation_index(probs, tail_tol)
    probs[np.arange(probs.shape[1])[None, :] > cut[:, None]] = 0.0
    cdf = np.cumsum(probs, axis=1)
    target = uniforms * cdf[np.arange(cdf.shape[0]), cut]
    index = np.minimum((cdf < target[:, None]).sum(axis=1), cut)

    inflow = np.maximum(0, delta) + index
    return inflow, inflow - delta


def sample_conditional(
    delta: int,
    params: SkellamParams,
    rng: np.random.Generator,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> Tuple[int, int]:
    """Draw one (inflow, outflow) pair with inflow - outflow == delta."""
    u = 1.0 - rng.random()
    inflow, outflow = sample_conditional_batch(
        np.array([delta]), np.array([params.lambda_in]), np.array([params.lambda_out]), np.array([u]), tail_tol
    )
    return int(inflow[0]), int(outflow[0])
