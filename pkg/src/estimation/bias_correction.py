"""
Bias correction for exit rates.
The simplex constraint pulls estimated exit rates towards the uniform 1/L. The size of
that pull is measured by simulating from the fitted model, refitting, and regressing the
squared deviations of the refit on those of the estimate; the estimate is then pushed
back out by the inverse pull.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from core.config import SemConfig
from core.models import CorrectionEstimate, DeltaSeries, DesignMatrix, ExitRateVector, InflowFit, LatentFlows
from core.rng import RngStreams, StreamPhase
from estimation.exit_rates import fit_exit_rates
from estimation.inflow_glm import fit_poisson, intensity_matrix
from estimation.latent import burn_in_inflows, district_generators, e_step

logger = logging.getLogger(__name__)


def simulate_unconditional(
    intensity: np.ndarray,
    omega: ExitRateVector,
    rngs: Sequence[np.random.Generator],
    districts: Optional[Sequence[str]] = None,
) -> Tuple[LatentFlows, np.ndarray]:
    """Simulate inflows and outflows from the fitted model without conditioning on the data.

    Args:
        intensity: Inflow intensities, shape (T, D)
        omega: Exit rates used for the outflow intensity
        rngs: One generator per district
        districts: District ids carried into the flows

    Returns:
        Tuple of (simulated flows with a fresh burn-in, differences inflow - outflow)
    """
    n_times, n_districts = intensity.shape
    L = omega.L
    inflow = np.zeros((L + n_times, n_districts), dtype=np.int64)
    outflow = np.zeros((n_times, n_districts), dtype=np.int64)
    lam = np.maximum(intensity, 0.0)
    for d, g in enumerate(rngs):
        inflow[:L, d] = g.poisson(lam[0, d], size=L)
        inflow[L:, d] = g.poisson(lam[:, d])
        history = np.stack([inflow[L - lag:L - lag + n_times, d] for lag in range(1, L + 1)])
        outflow[:, d] = g.poisson(omega.omega @ history)
    flows = LatentFlows(inflow, outflow, L, districts)
    return flows, flows.net()


def inner_em_refit(
    deltas: DeltaSeries,
    intensity: np.ndarray,
    omega: ExitRateVector,
    burn_in_rngs: Sequence[np.random.Generator],
    e_step_rngs: Sequence[np.random.Generator],
    config: Optional[SemConfig] = None,
    threads: int = 1,
) -> ExitRateVector:
    """One conditional E-step on simulated differences followed by an exit-rate refit."""
    config = config or SemConfig()
    burn_in = burn_in_inflows(intensity[0], omega.L, burn_in_rngs)
    flows = e_step(deltas, intensity, omega, burn_in, e_step_rngs, config.tail_tol, threads)
    return fit_exit_rates(flows, omega.L, omega, config.exit_tol, config.exit_max_iter)


def estimate_c(omega_reference: ExitRateVector, omega_refit: ExitRateVector) -> float:
    """Least-squares ratio of squared deviations from 1/L, refit over reference.

    Returns 1.0 when the reference sits exactly on the uniform vector.
    """
    if omega_reference.L != omega_refit.L:
        raise ValueError("exit-rate vectors differ in length")
    uniform = 1.0 / omega_reference.L
    a = (omega_reference.omega - uniform) ** 2
    b = (omega_refit.omega - uniform) ** 2
    denominator = float(a @ a)
    if denominator == 0.0:
        logger.warning("Reference exit rates are uniform; correction factor is undefined")
        return 1.0
    return float(a @ b) / denominator


def correct_omega(omega_raw: ExitRateVector, factor: float) -> Tuple[ExitRateVector, np.ndarray]:
    """Scale squared deviations from 1/L by factor, keeping each lag on its side of 1/L.

    Returns:
        Tuple of (corrected vector on the simplex, flags of lags clipped at zero)
    """
    if factor < 0:
        raise ValueError("correction factor must be >= 0")
    uniform = 1.0 / omega_raw.L
    deviation = omega_raw.omega - uniform
    corrected = uniform + np.sign(deviation) * np.sqrt(factor * deviation ** 2)
    clipped = corrected < 0
    corrected = np.maximum(corrected, 0.0)
    corrected = corrected / corrected.sum()
    return ExitRateVector(corrected, omega_raw.status, omega_raw.iterations, omega_raw.information), clipped


def applied_factor(c_hat: float, config: SemConfig) -> Tuple[float, bool]:
    """Cap c_hat and turn it into the factor applied to squared deviations."""
    capped_c = float(np.clip(c_hat, config.c_min, config.c_max))
    capped = capped_c != c_hat
    if capped:
        logger.warning(f"Correction factor {c_hat:.4g} capped to {capped_c:.4g}")
    factor = 1.0 / capped_c if config.correction_direction == "expand" else capped_c
    return factor, capped


def corrected_iteration(
    deltas: DeltaSeries,
    design: DesignMatrix,
    fit: InflowFit,
    omega_raw: ExitRateVector,
    streams: RngStreams,
    iteration: int,
    config: Optional[SemConfig] = None,
    threads: int = 1,
) -> Tuple[InflowFit, ExitRateVector, CorrectionEstimate, LatentFlows]:
    """Simulate, refit, correct omega, then redraw on the observed data and refit the inflow model.

    Returns:
        Tuple of (corrected inflow fit, corrected exit rates, correction details, flows drawn with the corrected rates)
    """
    config = config or SemConfig()
    districts = deltas.districts
    intensity = intensity_matrix(fit, design)

    _, simulated = simulate_unconditional(
        intensity, omega_raw, district_generators(streams, iteration, StreamPhase.SIMULATE, districts), districts
    )
    omega_refit = inner_em_refit(
        DeltaSeries(simulated, deltas.dates, districts),
        intensity,
        omega_raw,
        district_generators(streams, iteration, StreamPhase.INNER_BURN_IN, districts),
        district_generators(streams, iteration, StreamPhase.INNER_E_STEP, districts),
        config,
        threads,
    )

    degenerate = not np.any(omega_raw.omega - 1.0 / omega_raw.L)
    c_hat = estimate_c(omega_raw, omega_refit)
    if degenerate:
        factor, capped = 1.0, False
    else:
        factor, capped = applied_factor(c_hat, config)
    omega_corrected, clipped = correct_omega(omega_raw, factor)
    logger.debug(f"Iteration {iteration}: c_hat={c_hat:.4f}, factor={factor:.4f}, clipped={int(clipped.sum())}")

    burn_in = burn_in_inflows(
        intensity[0], omega_raw.L, district_generators(streams, iteration, StreamPhase.CORRECTED_BURN_IN, districts)
    )
    flows = e_step(
        deltas,
        intensity,
        omega_corrected,
        burn_in,
        district_generators(streams, iteration, StreamPhase.CORRECTED_E_STEP, districts),
        config.tail_tol,
        threads,
    )
    fit_corrected = fit_poisson(
        design,
        flows.observed_inflow.ravel(),
        start=fit.coefficients,
        penalty_weights=fit.penalty_weights,
        tol=config.irls_tol,
        max_iter=config.irls_max_iter,
    )
    estimate = CorrectionEstimate(c_hat, omega_raw, omega_corrected, clipped, degenerate, capped)
    return fit_corrected, omega_corrected, estimate, flows
