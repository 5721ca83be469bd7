"""
Exit-rate estimation on the probability simplex.
The outflow at t is Poisson with rate sum_l omega_l * I_(t-l); omega is fitted by
iterated quadratic approximation of the partial log-likelihood in the free parameters
omega_1..omega_(L-1), with omega_L = 1 - sum of the others.
"""

import logging
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.interpolate import make_smoothing_spline
from scipy.special import xlogy

from core.errors import ZeroRateError
from core.models import ExitRateStatus, ExitRateVector, LatentFlows, QpProblem
from estimation.skellam import INTENSITY_FLOOR
from optimization.qp import qp_solve

logger = logging.getLogger(__name__)

MAX_STEP_HALVINGS = 30
DEFAULT_QUANTILES = (0.5, 0.8, 0.9)


def outflow_rates(omega: np.ndarray, lagged: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Rates sum_l omega_l I_(t-l,d) from a (L, T, D) lag stack.

    With floor > 0, cells without any inflow in their lag window get rate `floor`
    instead of zero; their rate does not depend on omega.
    """
    rate = np.tensordot(np.asarray(omega, dtype=float), lagged, axes=1)
    if floor > 0:
        rate = np.where(np.any(lagged, axis=0), rate, floor)
    return rate


def _loglik(omega: np.ndarray, lagged: np.ndarray, outflow: np.ndarray, floor: float = 0.0) -> float:
    rate = outflow_rates(omega, lagged, floor)
    if np.any((rate <= 0) & (outflow > 0)):
        return -np.inf
    return float(np.sum(xlogy(outflow, rate) - rate))


def partial_loglik(omega: ExitRateVector, flows: LatentFlows) -> float:
    """Poisson log-likelihood of the outflows as a function of omega (constants dropped).

    Cells with zero rate and positive outflow make the likelihood -inf.
    """
    return _loglik(omega.omega, flows.lagged(omega.L), flows.outflow.astype(float))


def _score_fisher(omega: np.ndarray, lagged: np.ndarray, outflow: np.ndarray, floor: float = 0.0):
    L = omega.size
    rate = outflow_rates(omega, lagged, floor)
    if np.any((rate <= 0) & (outflow > 0)):
        raise ZeroRateError("Outflow rate is zero where outflows are positive")
    positive = rate > 0
    safe_rate = np.where(positive, rate, 1.0)
    ratio = np.where(positive, outflow / safe_rate, 0.0)
    weight = np.where(positive, outflow / safe_rate ** 2, 0.0)

    contrast = (lagged[:L - 1] - lagged[L - 1]).reshape(L - 1, -1)
    score = contrast @ ratio.ravel() - contrast.sum(axis=1)
    fisher = (contrast * weight.ravel()) @ contrast.T
    return score, 0.5 * (fisher + fisher.T)


def score_fisher(omega: ExitRateVector, flows: LatentFlows) -> QpProblem:
    """Score and observed information in the free parameters, at the current omega.

    Returns:
        QpProblem with gradient = score and hessian = information; its point is the current free vector
    """
    score, fisher = _score_fisher(omega.omega, flows.lagged(omega.L), flows.outflow.astype(float))
    return QpProblem(fisher, score, omega.free)


def newton_subproblem(local: QpProblem) -> QpProblem:
    """Quadratic model in absolute coordinates: maximize (s + F theta)'x - x'Fx/2."""
    return QpProblem(local.hessian, local.gradient + local.hessian @ local.point, local.point)


def _to_simplex(free: np.ndarray) -> np.ndarray:
    omega = np.maximum(np.append(free, 1.0 - free.sum()), 0.0)
    return omega / omega.sum()


def fit_exit_rates(
    flows: LatentFlows,
    L: int,
    init: Optional[ExitRateVector] = None,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> ExitRateVector:
    """Maximize the partial likelihood over the simplex by sequential QPs with step halving.

    Args:
        flows: Latent flows with at least L days of inflow history
        L: Maximum length of stay
        init: Feasible starting vector; uniform when omitted
        tol: Largest change in omega that counts as converged
        max_iter: Cap on QP iterations

    Returns:
        Fitted exit rates with status flag and observed information
    """
    if L == 1:
        return ExitRateVector([1.0], ExitRateStatus.CONVERGED, 0, np.zeros((0, 0)))

    init = init if init is not None and init.L == L else ExitRateVector.uniform(L)
    lagged = flows.lagged(L)
    outflow = flows.outflow.astype(float)

    if not np.any(lagged):
        logger.warning("No inflow history in any lag window; exit-rate likelihood is flat")
        return ExitRateVector(init.omega, ExitRateStatus.FLAT_LIKELIHOOD, 0, np.zeros((L - 1, L - 1)))

    omega = _to_simplex(init.free)
    loglik = _loglik(omega, lagged, outflow, INTENSITY_FLOOR)
    uniform = np.full(L, 1.0 / L)
    for _ in range(MAX_STEP_HALVINGS):
        if np.isfinite(loglik):
            break
        omega = 0.5 * (omega + uniform)
        loglik = _loglik(omega, lagged, outflow, INTENSITY_FLOOR)

    status = ExitRateStatus.NONCONVERGED
    iterations = 0
    for iterations in range(1, max_iter + 1):
        score, fisher = _score_fisher(omega, lagged, outflow, INTENSITY_FLOOR)
        free = omega[:-1]
        target = qp_solve(newton_subproblem(QpProblem(fisher, score, free)))
        direction = target - free

        step = 1.0
        accepted = None
        for _ in range(MAX_STEP_HALVINGS):
            candidate = _to_simplex(free + step * direction)
            candidate_loglik = _loglik(candidate, lagged, outflow, INTENSITY_FLOOR)
            if candidate_loglik >= loglik:
                accepted = candidate
                break
            step *= 0.5
        if accepted is None:
            status = ExitRateStatus.CONVERGED
            break

        change = float(np.max(np.abs(accepted - omega)))
        omega, loglik = accepted, candidate_loglik
        if change < tol:
            status = ExitRateStatus.CONVERGED
            break

    if status == ExitRateStatus.NONCONVERGED:
        logger.warning(f"Exit-rate fit did not converge in {max_iter} iterations")

    try:
        _, information = _score_fisher(omega, lagged, outflow, INTENSITY_FLOOR)
    except ZeroRateError:
        information = None
    return ExitRateVector(omega, status, iterations, information)


def los_summaries(omega: ExitRateVector, quantiles: Sequence[float] = DEFAULT_QUANTILES) -> Dict:
    """Mean stay, cumulative exit curve and the days by which given shares have left."""
    lags = np.arange(1, omega.L + 1)
    cumulative = np.cumsum(omega.omega)
    quantile_days = {
        float(q): int(min(np.searchsorted(cumulative, q - 1e-12) + 1, omega.L)) for q in quantiles
    }
    return {
        "mean_los": float(lags @ omega.omega),
        "cumulative_exit": cumulative,
        "quantile_days": quantile_days,
        "first_day_exit": float(omega.omega[0]),
    }


def smooth_exit_rates(omega: Sequence[float]) -> np.ndarray:
    """Smoothing-spline curve through the exit rates, clipped at zero and rescaled to sum to one."""
    values = np.asarray(omega, dtype=float)
    if values.size < 5:
        return values.copy()
    lags = np.arange(1, values.size + 1, dtype=float)
    smooth = np.maximum(make_smoothing_spline(lags, values)(lags), 0.0)
    total = smooth.sum()
    return smooth / total if total > 0 else values.copy()
