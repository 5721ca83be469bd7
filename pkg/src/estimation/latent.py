"""
Latent flow sampling: burn-in inflows, the conditional E-step and the observed-data likelihood.
Districts are independent given the parameters; within a district the draws run forward in time
because the outflow rate at t depends on inflows drawn for earlier days.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence, Union

import numpy as np

from core.errors import DimensionMismatchError
from core.models import DeltaSeries, ExitRateVector, LatentFlows
from core.rng import RngStreams, StreamPhase
from estimation.skellam import DEFAULT_TAIL_TOL, INTENSITY_FLOOR, sample_conditional_batch, skellam_logpmf

logger = logging.getLogger(__name__)

GeneratorLike = Union[np.random.Generator, Sequence[np.random.Generator]]


def district_generators(
    streams: RngStreams, iteration: int, phase: StreamPhase, districts: Sequence[str]
) -> List[np.random.Generator]:
    return [streams.stream(iteration, phase, d) for d in districts]


def burn_in_inflows(intensity_at_t1: np.ndarray, L: int, rng: GeneratorLike) -> np.ndarray:
    """Poisson inflows for the L days before the panel, drawn at each district's t=1 intensity.

    Args:
        intensity_at_t1: One intensity per district
        L: Number of burn-in days
        rng: One generator for all districts, or one per district

    Returns:
        Integer array of shape (L, districts); row 0 is day 1 - L
    """
    lam = np.maximum(np.asarray(intensity_at_t1, dtype=float), 0.0)
    if isinstance(rng, np.random.Generator):
        return rng.poisson(lam, size=(L, lam.size)).astype(np.int64)
    if len(rng) != lam.size:
        raise DimensionMismatchError(f"{len(rng)} generators for {lam.size} districts")
    return np.column_stack([g.poisson(lam[d], size=L) for d, g in enumerate(rng)]).astype(np.int64)


def _lagged_rate(omega: np.ndarray, inflow: np.ndarray, row: int) -> np.ndarray:
    rate = np.zeros(inflow.shape[1])
    for lag in range(1, omega.size + 1):
        rate += omega[lag - 1] * inflow[row - lag]
    return rate


def e_step(
    deltas: DeltaSeries,
    intensity: np.ndarray,
    omega: ExitRateVector,
    burn_in: np.ndarray,
    rngs: Sequence[np.random.Generator],
    tail_tol: float = DEFAULT_TAIL_TOL,
    threads: int = 1,
) -> LatentFlows:
    """Draw (I, R) for every cell conditional on I - R = delta.

    Args:
        deltas: Observed differences, shape (T, D)
        intensity: Inflow intensities for the same cells
        omega: Current exit rates
        burn_in: Inflow history before day 1, at least omega.L rows
        rngs: One generator per district
        tail_tol: Truncation tolerance of the conditional law
        threads: Worker threads over district chunks

    Returns:
        Latent flows including the burn-in prefix
    """
    delta = deltas.delta
    n_times, n_districts = delta.shape
    burn_in = np.asarray(burn_in, dtype=np.int64)
    B = burn_in.shape[0]
    if intensity.shape != delta.shape or burn_in.shape[1] != n_districts:
        raise DimensionMismatchError("intensity and burn-in must match the difference panel")
    if B < omega.L:
        raise DimensionMismatchError(f"burn-in of {B} days is shorter than the maximum lag {omega.L}")
    if len(rngs) != n_districts:
        raise DimensionMismatchError(f"{len(rngs)} generators for {n_districts} districts")

    uniforms = np.column_stack([1.0 - g.random(n_times) for g in rngs]) if n_times else np.zeros((0, n_districts))
    weights = omega.omega

    def draw(columns: np.ndarray):
        inflow = np.zeros((B + n_times, columns.size), dtype=np.int64)
        inflow[:B] = burn_in[:, columns]
        outflow = np.zeros((n_times, columns.size), dtype=np.int64)
        for t in range(n_times):
            rate = _lagged_rate(weights, inflow, B + t)
            inflow[B + t], outflow[t] = sample_conditional_batch(
                delta[t, columns], intensity[t, columns], rate, uniforms[t, columns], tail_tol
            )
        return columns, inflow, outflow

    chunks = [c for c in np.array_split(np.arange(n_districts), max(1, threads)) if c.size]
    inflow = np.zeros((B + n_times, n_districts), dtype=np.int64)
    outflow = np.zeros((n_times, n_districts), dtype=np.int64)
    if len(chunks) == 1:
        results = [draw(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(draw, chunks))
    for columns, chunk_in, chunk_out in results:
        inflow[:, columns] = chunk_in
        outflow[:, columns] = chunk_out
    return LatentFlows(inflow, outflow, B, deltas.districts)


def observed_loglik(deltas: DeltaSeries, intensity: np.ndarray, omega: ExitRateVector, flows: LatentFlows) -> float:
    """Sum of log Skellam(delta; lambda_in, lambda_out) with outflow rates from the drawn inflow history.

    Both intensities are floored at INTENSITY_FLOOR so the value stays finite.
    """
    lam_out = np.tensordot(omega.omega, flows.lagged(omega.L), axes=1)
    lam_in = np.maximum(intensity, INTENSITY_FLOOR)
    lam_out = np.maximum(lam_out, INTENSITY_FLOOR)
    return float(np.sum(skellam_logpmf(deltas.delta, lam_in, lam_out)))
