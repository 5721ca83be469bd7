"""
Quadratic programming over the capped simplex {x >= 0, sum(x) <= 1}.
This module provides a primal active-set solver for the exit-rate subproblem, with a
projected-gradient fallback when the active set cycles.
"""

import logging
from typing import List, Tuple

import numpy as np

from core.errors import NumericalFailureError
from core.models import QpProblem

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-12
MULTIPLIER_TOL = 1e-12
RIDGE = 1e-12


def project_capped_simplex(x: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) <= 1}."""
    clipped = np.maximum(x, 0.0)
    if clipped.sum() <= 1.0:
        return clipped
    ordered = np.sort(x)[::-1]
    cumulative = np.cumsum(ordered) - 1.0
    ranks = np.arange(1, x.size + 1)
    rho = np.nonzero(ordered - cumulative / ranks > 0)[0][-1]
    return np.maximum(x - cumulative[rho] / (rho + 1), 0.0)


def _constraints(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Rows a_i and bounds b_i of a_i x >= b_i: x_i >= 0 and -sum(x) >= -1."""
    A = np.vstack([np.eye(n), -np.ones((1, n))])
    b = np.append(np.zeros(n), -1.0)
    return A, b


def _solve_kkt(H: np.ndarray, A_w: np.ndarray, rhs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n, m = H.shape[0], A_w.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = H
    kkt[:n, n:] = A_w.T
    kkt[n:, :n] = A_w
    full_rhs = np.append(rhs, np.zeros(m))
    try:
        solution = np.linalg.solve(kkt, full_rhs)
    except np.linalg.LinAlgError:
        kkt[:n, :n] += RIDGE * max(1.0, np.trace(H) / n) * np.eye(n)
        solution = np.linalg.solve(kkt, full_rhs)
    return solution[:n], solution[n:]


def active_set_solve(problem: QpProblem, max_cycles: int = 0) -> Tuple[np.ndarray, bool]:
    """Primal active-set method for min 1/2 x'Hx - g'x on the capped simplex.

    Returns:
        Tuple of (solution, whether the method terminated with nonnegative multipliers)
    """
    n = problem.dimension
    H, g = problem.hessian, problem.gradient
    A, b = _constraints(n)
    max_cycles = max_cycles or 50 * (n + 1)

    x = project_capped_simplex(problem.point)
    working: List[int] = [i for i in range(n + 1) if abs(A[i] @ x - b[i]) <= FEASIBILITY_TOL]
    if len(working) > n:
        working = working[:n]

    for _ in range(max_cycles):
        A_w = A[working] if working else np.zeros((0, n))
        p, mu = _solve_kkt(H, A_w, g - H @ x)
        if not np.all(np.isfinite(p)):
            raise NumericalFailureError("Active-set step is not finite")

        if np.max(np.abs(p), initial=0.0) <= 1e-14:
            multipliers = -mu
            if multipliers.size == 0 or multipliers.min() >= -MULTIPLIER_TOL:
                return x, True
            working.pop(int(np.argmin(multipliers)))
            continue

        step, blocking = 1.0, None
        for i in range(n + 1):
            if i in working:
                continue
            slope = A[i] @ p
            if slope < -FEASIBILITY_TOL:
                ratio = (b[i] - A[i] @ x) / slope
                if ratio < step:
                    step, blocking = max(ratio, 0.0), i
        x = x + step * p
        if blocking is not None:
            if blocking < n:
                x[blocking] = 0.0
            working.append(blocking)
    return x, False


def projected_gradient_solve(problem: QpProblem, max_iter: int = 20000, tol: float = 1e-15) -> np.ndarray:
    """Projected gradient ascent with a 1/Lipschitz step."""
    H, g = problem.hessian, problem.gradient
    lipschitz = max(float(np.linalg.eigvalsh(H).max(initial=0.0)), 1e-12)
    x = project_capped_simplex(problem.point)
    for _ in range(max_iter):
        updated = project_capped_simplex(x + (g - H @ x) / lipschitz)
        if np.max(np.abs(updated - x)) < tol:
            return updated
        x = updated
    return x


def qp_solve(problem: QpProblem) -> np.ndarray:
    """Maximize g'x - x'Hx/2 subject to x >= 0 and sum(x) <= 1.

    Args:
        problem: Quadratic model with a feasible starting point

    Returns:
        Maximizing free-parameter vector
    """
    if problem.dimension == 0:
        return np.zeros(0)
    H = 0.5 * (problem.hessian + problem.hessian.T)
    problem = QpProblem(H, problem.gradient, problem.point)

    x, finished = active_set_solve(problem)
    if not finished:
        logger.warning("Active-set QP hit its cycle limit; falling back to projected gradient")
        x = projected_gradient_solve(problem)
    if not np.all(np.isfinite(x)):
        raise NumericalFailureError("QP solution is not finite")

    x = np.maximum(x, 0.0)
    total = x.sum()
    if total > 1.0:
        x = x / total
    return x
